//! Teacher-student kernel-regression task: power-law spectrum, target
//! coefficients, projector, and exact population/excess risk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// A count that may be infinite. Serializes as a number or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Finite(usize),
    Infinite,
}

impl Extent {
    pub fn finite(&self) -> Option<usize> {
        match self {
            Extent::Finite(n) => Some(*n),
            Extent::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Extent::Infinite)
    }
}

impl Serialize for Extent {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        match self {
            Extent::Finite(n) => serializer.serialize_u64(*n as u64),
            Extent::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Extent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(n) => Ok(Extent::Finite(n as usize)),
            Raw::Text(s) if s == "inf" || s == "infinity" => Ok(Extent::Infinite),
            Raw::Text(s) => Err(D::Error::custom(format!(
                "expected a count or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Projector from the ambient feature space to the student's M coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    /// Identity on the first M eigencoordinates.
    TopM,
    /// M x N entries i.i.d. Normal(0, 1/M), sampled from the task seed.
    RandomFeatures,
}

/// Teacher-student problem specification.
///
/// Eigenvalues decay as λ_j = j^{-β} and target coefficients follow
/// θ*_j = j^{-1/2} λ_j^{(s-1)/2} = j^{-(1+sβ-β)/2}, all proportionality
/// constants set to one, so that λ_j θ*_j² = j^{-(sβ+1)}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec<S: Scalar> {
    /// Relative difficulty exponent, s > 0.
    pub s: S,
    /// Capacity exponent, β > 1.
    pub beta: S,
    /// Student model size.
    #[serde(rename = "M")]
    pub model_size: usize,
    /// Ambient feature count (finite, or "inf" for closed-form-only use).
    #[serde(rename = "N")]
    pub ambient: Extent,
    /// Label-noise standard deviation, σ >= 0.
    pub sigma: S,
    pub projector: ProjectorKind,
    /// Seed for the random-features projector.
    #[serde(default)]
    pub seed: u64,
}

impl<S: Scalar> TaskSpec<S> {
    pub fn top_m(s: S, beta: S, model_size: usize, ambient: usize, sigma: S) -> Result<Self> {
        let t = TaskSpec {
            s,
            beta,
            model_size,
            ambient: Extent::Finite(ambient),
            sigma,
            projector: ProjectorKind::TopM,
            seed: 0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn random_features(
        s: S,
        beta: S,
        model_size: usize,
        ambient: usize,
        sigma: S,
        seed: u64,
    ) -> Result<Self> {
        let t = TaskSpec {
            s,
            beta,
            model_size,
            ambient: Extent::Finite(ambient),
            sigma,
            projector: ProjectorKind::RandomFeatures,
            seed,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s <= S::zero() || !self.s.is_finite() {
            return Err(Error::InvalidSpec(format!("s must be > 0, got {}", self.s)));
        }
        if self.beta <= S::one() || !self.beta.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "beta must be > 1, got {}",
                self.beta
            )));
        }
        if self.model_size == 0 {
            return Err(Error::InvalidSpec("model size M must be >= 1".into()));
        }
        if let Extent::Finite(n) = self.ambient {
            if self.model_size > n {
                return Err(Error::InvalidSpec(format!(
                    "M = {} must not exceed N = {n}",
                    self.model_size
                )));
            }
        }
        if self.sigma < S::zero() {
            return Err(Error::InvalidSpec(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// θ*_j = j^{-(1+sβ-β)/2}; decreasing in j exactly when the task is in
    /// the easy regime s >= 1 − 1/β.
    pub fn theta_exponent(&self) -> S {
        -(S::one() + self.s * self.beta - self.beta) * S::cst(0.5)
    }

    /// Tail sum ½ Σ_{j>M}^N j^{-sβ-1}; zero when M >= N.
    pub fn approximation_error(&self) -> S {
        let n = match self.ambient {
            Extent::Finite(n) => n,
            Extent::Infinite => {
                // tail of the infinite series, bounded via direct summation to
                // convergence (exponent sβ+1 > 1)
                return self.approximation_error_to(usize::MAX);
            }
        };
        if self.model_size >= n {
            return S::zero();
        }
        let expo = -(self.s * self.beta + S::one());
        let mut acc = S::zero();
        for j in (self.model_size + 1)..=n {
            acc += S::of_usize(j).powf(expo);
        }
        acc * S::cst(0.5)
    }

    fn approximation_error_to(&self, n: usize) -> S {
        let expo = -(self.s * self.beta + S::one());
        let mut acc = S::zero();
        let mut j = self.model_size + 1;
        while j <= n {
            let term = S::of_usize(j).powf(expo);
            acc += term;
            if term < acc * S::epsilon() {
                break;
            }
            j += 1;
        }
        acc * S::cst(0.5)
    }
}

/// Concrete spectrum, target, and projector realization of a task.
#[derive(Debug, Clone)]
pub struct SpectrumInstance<S: Scalar> {
    pub task: TaskSpec<S>,
    /// λ_j = j^{-β}, j = 1..N (strictly decreasing).
    pub lambdas: Vec<S>,
    /// θ*_j = j^{-(1+sβ-β)/2}, positive; strictly decreasing for easy
    /// tasks (s >= 1 − 1/β).
    pub thetas: Vec<S>,
    projector: Projector<S>,
}

#[derive(Debug, Clone)]
enum Projector<S> {
    TopM,
    /// Row-major M x N matrix.
    Random(Vec<S>),
}

/// Excess and population risk of a student weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport<S: Scalar> {
    /// E(v) = ½ ‖W^T v − θ*‖²_H.
    pub excess: S,
    /// R(v) = E(v) + σ²/2.
    pub population: S,
}

/// Build the spectrum, target coefficients, and projector for a task.
///
/// The random-features projector is sampled deterministically from the task
/// seed; it requires a finite ambient dimension.
pub fn build_spectrum<S: Scalar>(task: &TaskSpec<S>) -> Result<SpectrumInstance<S>> {
    task.validate()?;
    let n = match task.ambient {
        Extent::Finite(n) => n,
        Extent::Infinite => {
            return Err(Error::Unsupported(
                "building an explicit spectrum requires finite N; \
                 the infinite case is served by the closed-form g-functions"
                    .into(),
            ))
        }
    };
    let theta_expo = task.theta_exponent();
    let mut lambdas = Vec::with_capacity(n);
    let mut thetas = Vec::with_capacity(n);
    for j in 1..=n {
        let jf = S::of_usize(j);
        lambdas.push(jf.powf(-task.beta));
        thetas.push(jf.powf(theta_expo));
    }
    let projector = match task.projector {
        ProjectorKind::TopM => Projector::TopM,
        ProjectorKind::RandomFeatures => {
            let m = task.model_size;
            let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
            let scale = (S::one() / S::of_usize(m)).sqrt();
            let w: Vec<S> = (0..m * n)
                .map(|_| S::standard_normal(&mut rng) * scale)
                .collect();
            Projector::Random(w)
        }
    };
    Ok(SpectrumInstance {
        task: task.clone(),
        lambdas,
        thetas,
        projector,
    })
}

impl<S: Scalar> SpectrumInstance<S> {
    pub fn ambient_dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn model_dim(&self) -> usize {
        self.task.model_size
    }

    /// W^T v: embed the student weights back into the ambient space.
    pub fn embed(&self, v: &[S]) -> Result<Vec<S>> {
        let (m, n) = (self.model_dim(), self.ambient_dim());
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: v.len(),
            });
        }
        Ok(match &self.projector {
            Projector::TopM => {
                let mut out = vec![S::zero(); n];
                out[..m].copy_from_slice(v);
                out
            }
            Projector::Random(w) => {
                let mut out = vec![S::zero(); n];
                for (i, &vi) in v.iter().enumerate() {
                    let row = &w[i * n..(i + 1) * n];
                    for (o, &wij) in out.iter_mut().zip(row) {
                        *o += vi * wij;
                    }
                }
                out
            }
        })
    }

    /// W x: project an ambient feature vector to the student coordinates.
    pub fn project(&self, x: &[S]) -> Result<Vec<S>> {
        let (m, n) = (self.model_dim(), self.ambient_dim());
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        Ok(match &self.projector {
            Projector::TopM => x[..m].to_vec(),
            Projector::Random(w) => (0..m)
                .map(|i| {
                    let row = &w[i * n..(i + 1) * n];
                    row.iter().zip(x).map(|(&wij, &xj)| wij * xj).sum()
                })
                .collect(),
        })
    }

    /// Squared norms of the projector rows (diagnostic for sampling checks).
    pub fn projector_row_sq_norms(&self) -> Vec<S> {
        let (m, n) = (self.model_dim(), self.ambient_dim());
        match &self.projector {
            Projector::TopM => vec![S::one(); m],
            Projector::Random(w) => (0..m)
                .map(|i| w[i * n..(i + 1) * n].iter().map(|&x| x * x).sum())
                .collect(),
        }
    }

    /// Exact excess and population risk of student weights v.
    pub fn excess_risk(&self, v: &[S]) -> Result<RiskReport<S>> {
        let embedded = self.embed(v)?;
        let mut acc = S::zero();
        for ((&lam, &theta), &e) in self.lambdas.iter().zip(&self.thetas).zip(&embedded) {
            let d = e - theta;
            acc += lam * d * d;
        }
        let excess = acc * S::cst(0.5);
        Ok(RiskReport {
            excess,
            population: excess + self.task.sigma * self.task.sigma * S::cst(0.5),
        })
    }

    /// The residual u = W^T v − θ* in ambient coordinates.
    pub fn residual(&self, v: &[S]) -> Result<Vec<S>> {
        let mut e = self.embed(v)?;
        for (ei, &theta) in e.iter_mut().zip(&self.thetas) {
            *ei -= theta;
        }
        Ok(e)
    }

    /// W H W^T as a dense M x M matrix.
    pub fn projected_covariance(&self) -> Vec<S> {
        let (m, n) = (self.model_dim(), self.ambient_dim());
        match &self.projector {
            Projector::TopM => {
                let mut out = vec![S::zero(); m * m];
                for i in 0..m {
                    out[i * m + i] = self.lambdas[i];
                }
                out
            }
            Projector::Random(w) => {
                let mut out = vec![S::zero(); m * m];
                for i in 0..m {
                    for j in 0..=i {
                        let mut acc = S::zero();
                        for k in 0..n {
                            acc += w[i * n + k] * self.lambdas[k] * w[j * n + k];
                        }
                        out[i * m + j] = acc;
                        out[j * m + i] = acc;
                    }
                }
                out
            }
        }
    }
}

/// Monte-Carlo estimate of the per-sample gradient-noise covariance Σ(v).
#[derive(Debug, Clone)]
pub struct NoiseCovariance<S: Scalar> {
    /// Row-major M x M covariance estimate.
    pub mean: Vec<S>,
    /// Per-entry standard error of the estimate.
    pub stderr: Vec<S>,
    pub samples: usize,
}

/// Bracket diagnostic: generalized eigenvalues of the estimated Σ(v)
/// relative to (2 E(v) + σ²) · W H W^T.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceBracket<S: Scalar> {
    pub min_ratio: S,
    pub max_ratio: S,
    pub samples: usize,
    /// Set when fewer than 100 samples were requested.
    pub low_sample_warning: bool,
}

/// Draw `samples` single-sample gradients at v and estimate their covariance.
pub fn estimate_noise_covariance<S: Scalar>(
    inst: &SpectrumInstance<S>,
    v: &[S],
    samples: usize,
    seed: u64,
) -> Result<NoiseCovariance<S>> {
    if samples < 2 {
        return Err(Error::InvalidSpec("need at least 2 samples".into()));
    }
    let (m, n) = (inst.model_dim(), inst.ambient_dim());
    let u = inst.residual(v)?;
    // mean gradient ∇R = W H u
    let hu: Vec<S> = inst.lambdas.iter().zip(&u).map(|(&l, &ui)| l * ui).collect();
    let mean_grad = inst.project(&hu)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_lam: Vec<S> = inst.lambdas.iter().map(|l| l.sqrt()).collect();
    let mut sum = vec![S::zero(); m * m];
    let mut sum_sq = vec![S::zero(); m * m];
    let mut phi = vec![S::zero(); n];
    for _ in 0..samples {
        for (p, &sl) in phi.iter_mut().zip(&sqrt_lam) {
            *p = S::standard_normal(&mut rng) * sl;
        }
        let eps = S::standard_normal(&mut rng) * inst.task.sigma;
        // residual of the sample: ⟨φ, u⟩ − ε
        let r: S = phi.iter().zip(&u).map(|(&p, &ui)| p * ui).sum::<S>() - eps;
        let wphi = inst.project(&phi)?;
        // noise ξ = W φ r − ∇R
        let xi: Vec<S> = wphi
            .iter()
            .zip(&mean_grad)
            .map(|(&wp, &mg)| wp * r - mg)
            .collect();
        for i in 0..m {
            for j in 0..m {
                let prod = xi[i] * xi[j];
                sum[i * m + j] += prod;
                sum_sq[i * m + j] += prod * prod;
            }
        }
    }
    let ns = S::of_usize(samples);
    let mean: Vec<S> = sum.iter().map(|&s| s / ns).collect();
    let stderr: Vec<S> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &mu)| {
            let var = (sq / ns - mu * mu).max(S::zero());
            (var / ns).sqrt()
        })
        .collect();
    Ok(NoiseCovariance {
        mean,
        stderr,
        samples,
    })
}

/// Closed-form Σ(v) for Gaussian features:
/// W (tr(H A) H + H A H) W^T + σ² W H W^T with A = u u^T.
pub fn noise_covariance_closed_form<S: Scalar>(
    inst: &SpectrumInstance<S>,
    v: &[S],
) -> Result<Vec<S>> {
    let m = inst.model_dim();
    let u = inst.residual(v)?;
    let tr_ha: S = inst
        .lambdas
        .iter()
        .zip(&u)
        .map(|(&l, &ui)| l * ui * ui)
        .sum();
    let sigma_sq = inst.task.sigma * inst.task.sigma;
    let whw = inst.projected_covariance();
    // W H u in student coordinates
    let hu: Vec<S> = inst.lambdas.iter().zip(&u).map(|(&l, &ui)| l * ui).collect();
    let whu = inst.project(&hu)?;
    let mut out = vec![S::zero(); m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = (tr_ha + sigma_sq) * whw[i * m + j] + whu[i] * whu[j];
        }
    }
    Ok(out)
}

/// Sandwich-bound diagnostic: estimate Σ(v) by Monte Carlo and report its
/// smallest and largest generalized eigenvalue relative to
/// (2 E(v) + σ²) · W H W^T.
pub fn noise_covariance_check<S: Scalar>(
    inst: &SpectrumInstance<S>,
    v: &[S],
    samples: usize,
    seed: u64,
) -> Result<CovarianceBracket<S>> {
    let est = estimate_noise_covariance(inst, v, samples, seed)?;
    let m = inst.model_dim();
    let excess = inst.excess_risk(v)?.excess;
    let scale = S::cst(2.0) * excess + inst.task.sigma * inst.task.sigma;
    if scale <= S::zero() {
        return Err(Error::Domain(
            "bracket reference matrix vanishes: zero risk and zero label noise".into(),
        ));
    }
    let mut reference = inst.projected_covariance();
    for r in reference.iter_mut() {
        *r *= scale;
    }
    let l = linalg::cholesky(&reference, m)?;
    let c = linalg::congruence_by_inverse_cholesky(&l, &est.mean, m);
    let eigs = linalg::jacobi_eigenvalues(&c, m);
    let mut min_ratio = S::infinity();
    let mut max_ratio = S::neg_infinity();
    for &e in &eigs {
        min_ratio = min_ratio.min(e);
        max_ratio = max_ratio.max(e);
    }
    Ok(CovarianceBracket {
        min_ratio,
        max_ratio,
        samples,
        low_sample_warning: samples < 100,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_task() -> TaskSpec<f64> {
        TaskSpec::top_m(1.0, 2.0, 2, 4, 0.0).unwrap()
    }

    #[test]
    fn spectrum_values_match_power_laws() {
        let t = TaskSpec::<f64>::top_m(1.0, 2.0, 4, 4, 0.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let expect_lambda = [1.0, 0.25, 1.0 / 9.0, 0.0625];
        // s = 1, β = 2: θ*_j = j^{-1/2} λ_j^0 = j^{-1/2}
        let expect_theta = [1.0, 2f64.powf(-0.5), 3f64.powf(-0.5), 4f64.powf(-0.5)];
        for j in 0..4 {
            assert!((inst.lambdas[j] - expect_lambda[j]).abs() < 1e-15);
            assert!((inst.thetas[j] - expect_theta[j]).abs() < 1e-15);
        }
        assert_eq!(inst.lambdas[0], 1.0);
        assert_eq!(inst.thetas[0], 1.0);
    }

    #[test]
    fn spectrum_strictly_decreasing() {
        let t = TaskSpec::top_m(0.7, 1.5, 8, 32, 1.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        for w in inst.lambdas.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in inst.thetas.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn zero_weights_risk_is_initial_risk() {
        let t = TaskSpec::<f64>::top_m(1.0, 2.0, 2, 2, 0.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let report = inst.excess_risk(&[0.0, 0.0]).unwrap();
        // ½ Σ_j λ_j θ*_j² = ½ (1 + 2^{-3}) since λ_j θ*_j² = j^{-(sβ+1)}
        assert!((report.excess - 0.5625).abs() < 1e-15);
        assert_eq!(report.population, report.excess);
    }

    #[test]
    fn perfect_in_subspace_fit_leaves_tail() {
        let t = demo_task();
        let inst = build_spectrum(&t).unwrap();
        let v: Vec<f64> = inst.thetas[..2].to_vec();
        let report = inst.excess_risk(&v).unwrap();
        let tail = t.approximation_error();
        assert!((report.excess - tail).abs() < 1e-16);
    }

    #[test]
    fn population_excess_identity_is_exact() {
        let t = TaskSpec::top_m(0.8, 2.5, 3, 6, 3.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let report = inst.excess_risk(&[0.1, -0.2, 0.05]).unwrap();
        assert_eq!(report.population - report.excess, 4.5);
    }

    #[test]
    fn approximation_error_edge_cases() {
        let full = TaskSpec::top_m(1.0, 2.0, 4, 4, 0.0).unwrap();
        assert_eq!(full.approximation_error(), 0.0);
        let t = TaskSpec::top_m(1.0, 2.0, 64, 4096, 0.0).unwrap();
        let val = t.approximation_error();
        // tail behaves like ∫_M^N x^{-3} dx / 2 = (M^{-2} − N^{-2})/4
        let lower = 0.25 * (65f64.powi(-2) - 4097f64.powi(-2));
        let upper = 0.25 * (64f64.powi(-2) - 4096f64.powi(-2));
        assert!(val > lower && val < upper, "val = {val}");
    }

    #[test]
    fn approximation_error_halving_rate() {
        let t64 = TaskSpec::<f64>::top_m(1.0, 2.0, 64, 4096, 0.0).unwrap();
        let t128 = TaskSpec::top_m(1.0, 2.0, 128, 4096, 0.0).unwrap();
        let ratio = t64.approximation_error() / t128.approximation_error();
        assert!((ratio - 4.0).abs() / 4.0 < 0.05, "ratio = {ratio}");
    }

    #[test]
    fn random_features_requires_finite_ambient() {
        let t = TaskSpec::<f64> {
            s: 1.0,
            beta: 2.0,
            model_size: 4,
            ambient: Extent::Infinite,
            sigma: 0.0,
            projector: ProjectorKind::RandomFeatures,
            seed: 1,
        };
        assert!(matches!(build_spectrum(&t), Err(Error::Unsupported(_))));
    }

    #[test]
    fn projector_deterministic_from_seed() {
        let t = TaskSpec::random_features(1.0, 2.0, 4, 16, 0.0, 7).unwrap();
        let a = build_spectrum(&t).unwrap();
        let b = build_spectrum(&t).unwrap();
        assert_eq!(a.projector_row_sq_norms(), b.projector_row_sq_norms());
    }

    #[test]
    fn top_m_full_rank_projector_is_identity() {
        let t = TaskSpec::top_m(1.0, 2.0, 4, 4, 0.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let v = vec![0.3, -0.1, 0.7, 0.2];
        assert_eq!(inst.embed(&v).unwrap(), v);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let inst = build_spectrum(&demo_task()).unwrap();
        assert!(matches!(
            inst.excess_risk(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn task_json_round_trip() {
        let t = TaskSpec::random_features(1.0, 2.0, 64, 128, 3.0, 42).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"M\":64"));
        let back: TaskSpec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
        let inf: TaskSpec<f64> =
            serde_json::from_str(r#"{"s":1.0,"beta":2.0,"M":4,"N":"inf","sigma":0.0,"projector":"top_m"}"#)
                .unwrap();
        assert!(inf.ambient.is_infinite());
        // unknown keys rejected
        assert!(serde_json::from_str::<TaskSpec<f64>>(
            r#"{"s":1.0,"beta":2.0,"M":4,"N":8,"sigma":0.0,"projector":"top_m","extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn zero_risk_noise_covariance_vanishes() {
        let t = TaskSpec::top_m(1.0, 2.0, 2, 2, 0.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let v: Vec<f64> = inst.thetas.clone();
        let est = estimate_noise_covariance(&inst, &v, 500, 3).unwrap();
        for (&m, &se) in est.mean.iter().zip(&est.stderr) {
            assert!(m.abs() <= 10.0 * se.max(1e-12), "entry {m} vs se {se}");
        }
    }

    #[test]
    fn monte_carlo_matches_closed_form_small_case() {
        let t = TaskSpec::<f64>::top_m(1.0, 2.0, 2, 2, 0.5).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let v = vec![0.3, -0.4];
        let est = estimate_noise_covariance(&inst, &v, 200_000, 11).unwrap();
        let exact = noise_covariance_closed_form(&inst, &v).unwrap();
        for i in 0..4 {
            let dev = (est.mean[i] - exact[i]).abs();
            assert!(
                dev <= 3.0 * est.stderr[i],
                "entry {i}: dev {dev} > 3 se {}",
                est.stderr[i]
            );
        }
    }

    #[test]
    fn bracket_ratio_within_gaussian_bounds() {
        let t = TaskSpec::top_m(1.0, 2.0, 2, 2, 0.5).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let v = vec![0.3, -0.4];
        let bracket = noise_covariance_check(&inst, &v, 200_000, 5).unwrap();
        assert!(!bracket.low_sample_warning);
        assert!(
            bracket.min_ratio > 0.9 && bracket.max_ratio < 3.0,
            "bracket [{}, {}]",
            bracket.min_ratio,
            bracket.max_ratio
        );
    }

    #[test]
    fn low_sample_warning_flag() {
        let t = TaskSpec::top_m(1.0, 2.0, 2, 2, 1.0).unwrap();
        let inst = build_spectrum(&t).unwrap();
        let bracket = noise_covariance_check(&inst, &[0.1, 0.1], 50, 5).unwrap();
        assert!(bracket.low_sample_warning);
    }
}
