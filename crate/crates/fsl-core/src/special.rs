//! Special functions: log-gamma, regularized incomplete gamma, and
//! Gauss-Legendre quadrature rules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum iterations for the incomplete-gamma series / continued fraction.
const MAX_ITER: usize = 500;

/// Lanczos approximation, g = 7, 9 coefficients.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma<S: Scalar>(x: S) -> S {
    if x < S::cst(0.5) {
        // reflection: ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x)
        let pi = S::PI();
        (pi / (pi * x).sin()).ln() - ln_gamma(S::one() - x)
    } else {
        let z = x - S::one();
        let mut acc = S::cst(LANCZOS[0]);
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            acc += S::cst(c) / (z + S::of_usize(i));
        }
        let t = z + S::cst(LANCZOS_G + 0.5);
        S::cst(0.5) * (S::cst(2.0) * S::PI()).ln() + (z + S::cst(0.5)) * t.ln() - t + acc.ln()
    }
}

/// Gamma function for x > 0.
pub fn gamma<S: Scalar>(x: S) -> S {
    ln_gamma(x).exp()
}

/// Both regularized incomplete gamma functions, P(a, x) and Q(a, x) = 1 − P.
///
/// P(a, x) = γ(a, x) / Γ(a). Series expansion for x < a + 1, Lentz continued
/// fraction otherwise, so whichever of the pair is small is computed directly
/// without cancellation.
pub fn gamma_pq<S: Scalar>(a: S, x: S) -> Result<(S, S)> {
    if a <= S::zero() || x < S::zero() {
        return Err(Error::Domain(format!(
            "gamma_pq requires a > 0 and x >= 0, got a = {a}, x = {x}"
        )));
    }
    if x == S::zero() {
        return Ok((S::zero(), S::one()));
    }
    // prefactor x^a e^{-x} / Γ(a)
    let prefactor = (a * x.ln() - x - ln_gamma(a)).exp();
    if x < a + S::one() {
        let p = lower_series(a, x)? * prefactor;
        Ok((p, S::one() - p))
    } else {
        let q = upper_cf(a, x)? * prefactor;
        Ok((S::one() - q, q))
    }
}

/// P(a, x) = prefactor · Σ_{n≥0} x^n / (a (a+1) ⋯ (a+n)), without the prefactor.
fn lower_series<S: Scalar>(a: S, x: S) -> Result<S> {
    let mut term = S::one() / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += S::one();
        term = term * x / ap;
        sum += term;
        if term.abs() < sum.abs() * S::epsilon() {
            return Ok(sum);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete gamma series failed to converge at a = {a}, x = {x}"
    )))
}

/// Q(a, x) continued fraction by the modified Lentz algorithm, without the
/// prefactor: 1 / (x + 1 − a + K_{n≥1} n(a − n) / (x + 2n + 1 − a)).
fn upper_cf<S: Scalar>(a: S, x: S) -> Result<S> {
    let tiny = S::cst(1e-30);
    let b0 = x + S::one() - a;
    let mut f = if b0.abs() < tiny { tiny } else { b0 };
    let mut c = f;
    let mut d = S::zero();
    for n in 1..=MAX_ITER {
        let nf = S::of_usize(n);
        let an = nf * (a - nf);
        let bn = x + S::of_usize(2 * n + 1) - a;
        d = bn + an * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = S::one() / d;
        c = bn + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - S::one()).abs() < S::epsilon() {
            return Ok(f.recip());
        }
    }
    Err(Error::Numeric(format!(
        "incomplete gamma continued fraction failed to converge at a = {a}, x = {x}"
    )))
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; nodes accurate to machine
/// precision for the orders used here (n <= 64).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x) by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integrate `f` over [lo, hi] with one fixed-order Gauss-Legendre panel.
pub fn gl_panel<S: Scalar, F: Fn(S) -> S>(
    nodes: &[f64],
    weights: &[f64],
    lo: S,
    hi: S,
    f: F,
) -> S {
    let half = (hi - lo) * S::cst(0.5);
    let mid = (hi + lo) * S::cst(0.5);
    let mut acc = S::zero();
    for (&x, &w) in nodes.iter().zip(weights) {
        acc += S::cst(w) * f(mid + half * S::cst(x));
    }
    acc * half
}
