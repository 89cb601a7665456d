//! The g-function family g_a(t) = ∫_{M^{-β}}^1 u^{a-1} e^{-2ut} du and its
//! M = ∞ limit G_a(t), together with the forgetting kernel and the
//! risk-decay curve that are special cases of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special;
use crate::task::Extent;

/// Quadrature settings for the small-t evaluation route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature<S: Scalar> {
    /// Gauss-Legendre order per panel.
    pub panel_order: usize,
    /// Agreement tolerance between the two evaluation routes.
    pub tol: S,
}

impl<S: Scalar> Default for Quadrature<S> {
    fn default() -> Self {
        Quadrature {
            panel_order: 24,
            tol: S::cst(1e-10),
        }
    }
}

/// Evaluation context for the g-family: model size (possibly infinite),
/// capacity exponent, and quadrature settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GContext<S: Scalar> {
    #[serde(rename = "M")]
    pub model_size: Extent,
    pub beta: S,
    #[serde(default)]
    pub quadrature: Quadrature<S>,
}

/// The two branches switch where 2t = 1; the gamma identity loses precision
/// to cancellation at smaller t.
pub const T_SWITCH_2T: f64 = 1.0;

impl<S: Scalar> GContext<S> {
    pub fn new(model_size: Extent, beta: S) -> Result<Self> {
        if beta <= S::one() || !beta.is_finite() {
            return Err(Error::InvalidSpec(format!("beta must be > 1, got {beta}")));
        }
        if let Extent::Finite(0) = model_size {
            return Err(Error::InvalidSpec("model size must be >= 1".into()));
        }
        Ok(GContext {
            model_size,
            beta,
            quadrature: Quadrature::default(),
        })
    }

    pub fn finite(m: usize, beta: S) -> Result<Self> {
        Self::new(Extent::Finite(m), beta)
    }

    pub fn infinite(beta: S) -> Result<Self> {
        Self::new(Extent::Infinite, beta)
    }

    /// Context matching a task: same β, lower limit from the student size.
    pub fn for_task(task: &crate::task::TaskSpec<S>) -> Result<Self> {
        Self::finite(task.model_size, task.beta)
    }

    /// Lower integration limit M^{-β} (zero for infinite M).
    pub fn lower_limit(&self) -> S {
        match self.model_size {
            Extent::Finite(m) => S::of_usize(m).powf(-self.beta),
            Extent::Infinite => S::zero(),
        }
    }

    /// g_a(t), dispatching between the direct route for 2t < 1 and the
    /// incomplete-gamma identity for 2t >= 1.
    pub fn g(&self, a: S, t: S) -> Result<S> {
        self.check_args(a, t)?;
        if t + t < S::cst(T_SWITCH_2T) {
            self.g_direct(a, t)
        } else {
            self.g_via_gamma(a, t)
        }
    }

    /// Direct small-t route: composite fixed-order Gauss-Legendre on
    /// geometric panels of [M^{-β}, 1] for finite M, and the alternating
    /// power series Σ_n (-2t)^n / (n! (n+a)) for M = ∞ where the integrand
    /// is singular at the lower limit.
    pub fn g_direct(&self, a: S, t: S) -> Result<S> {
        self.check_args(a, t)?;
        let lower = self.lower_limit();
        if lower == S::zero() {
            return series_from_zero(a, t);
        }
        let (nodes, weights) = special::gauss_legendre(self.quadrature.panel_order);
        let mut acc = S::zero();
        let mut lo = lower;
        // geometric panels tame the u^{a-1} spike near the lower limit
        while lo < S::one() {
            let hi = (lo + lo).min(S::one());
            acc += special::gl_panel(&nodes, &weights, lo, hi, |u: S| {
                u.powf(a - S::one()) * (-S::cst(2.0) * u * t).exp()
            });
            lo = hi;
        }
        Ok(acc)
    }

    /// Incomplete-gamma route:
    /// g_a(t) = (2t)^{-a} Γ(a) [P(a, 2t) − P(a, 2t M^{-β})], evaluated through
    /// whichever of the regularized pair avoids cancellation.
    pub fn g_via_gamma(&self, a: S, t: S) -> Result<S> {
        self.check_args(a, t)?;
        if t == S::zero() {
            return self.g_direct(a, t);
        }
        let two_t = t + t;
        let x_hi = two_t;
        let x_lo = two_t * self.lower_limit();
        let (p_hi, q_hi) = special::gamma_pq(a, x_hi)?;
        let (p_lo, q_lo) = if x_lo == S::zero() {
            (S::zero(), S::one())
        } else {
            special::gamma_pq(a, x_lo)?
        };
        // P(a,x_hi) − P(a,x_lo) = Q(a,x_lo) − Q(a,x_hi); pick the side whose
        // operands are not both near one
        let diff = if x_lo > a + S::one() {
            q_lo - q_hi
        } else {
            p_hi - p_lo
        };
        let value = special::gamma(a) * diff.max(S::zero()) * two_t.powf(-a);
        Ok(value)
    }

    /// Relative gap between the two evaluation routes at the switch point,
    /// checked against the configured quadrature tolerance.
    pub fn branch_agreement(&self, a: S) -> Result<S> {
        let t = S::cst(T_SWITCH_2T * 0.5);
        let direct = self.g_direct(a, t)?;
        let via_gamma = self.g_via_gamma(a, t)?;
        let gap = (direct - via_gamma).abs() / direct.abs().max(S::cst(1e-300));
        if gap > self.quadrature.tol {
            return Err(Error::Numeric(format!(
                "evaluation routes disagree at the switch point: gap {gap:e}                  exceeds tolerance {:e} at a = {a}",
                self.quadrature.tol
            )));
        }
        Ok(gap)
    }

    /// Forgetting kernel K(t) = g_{2 − 1/β}(t).
    pub fn forgetting_kernel(&self, t: S) -> Result<S> {
        self.g(S::cst(2.0) - S::one() / self.beta, t)
    }

    /// Risk-decay curve e(t) = g_s(t).
    pub fn risk_decay(&self, s: S, t: S) -> Result<S> {
        self.g(s, t)
    }

    /// M^{-sβ} approximation term (zero for infinite M).
    pub fn approximation_term(&self, s: S) -> S {
        match self.model_size {
            Extent::Finite(m) => S::of_usize(m).powf(-s * self.beta),
            Extent::Infinite => S::zero(),
        }
    }

    fn check_args(&self, a: S, t: S) -> Result<()> {
        if a <= S::zero() || !a.is_finite() {
            return Err(Error::Domain(format!("g requires exponent a > 0, got {a}")));
        }
        if t < S::zero() || !t.is_finite() {
            return Err(Error::Domain(format!("g requires t >= 0, got {t}")));
        }
        Ok(())
    }
}

/// G_a(t) = ∫_0^1 u^{a-1} e^{-2ut} du via Σ_n (-2t)^n / (n! (n+a)),
/// accurate for 2t < 1 where the terms are factorially damped.
fn series_from_zero<S: Scalar>(a: S, t: S) -> Result<S> {
    let x = -(t + t);
    let mut power = S::one(); // x^n / n!
    let mut acc = S::one() / a;
    for n in 1..200 {
        power = power * x / S::of_usize(n);
        let term = power / (a + S::of_usize(n));
        acc += term;
        if term.abs() < acc.abs() * S::epsilon() {
            return Ok(acc);
        }
    }
    Err(Error::Numeric(format!(
        "g series failed to converge at a = {a}, t = {t}"
    )))
}
