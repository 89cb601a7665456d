//! The practical nine-parameter loss-curve ansatz
//!
//! R_k = L0 + c1/T(k)^s + c2·M^{-s·β}
//!       − c3 Σ_{i=2}^k (η_{i-1} − η_i)(c4 + 1/T(i)^s)(1 − (1 + c5(T(k) − T(i)))^{-γ}),
//!
//! with T the cumulative learning-rate sum, together with the Huber-on-log
//! objective and a two-group adaptive-moment fitter with analytic gradients.

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::ScheduleSpec;

/// Huber transition width on log residuals.
pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

/// Quadratic out-of-domain penalty weight.
const BARRIER_WEIGHT: f64 = 1e6;

/// The nine fitted constants. `beta` enters only through the M^{-s·β} term
/// and is inert when no model size is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzParams<S: Scalar> {
    #[serde(rename = "L0")]
    pub l0: S,
    pub c1: S,
    pub c2: S,
    pub c3: S,
    pub c4: S,
    pub c5: S,
    pub s: S,
    pub beta: S,
    pub gamma: S,
}

/// Parameter names in gradient order.
pub const PARAM_NAMES: [&str; 9] = ["L0", "c1", "c2", "c3", "c4", "c5", "s", "beta", "gamma"];

impl<S: Scalar> AnsatzParams<S> {
    pub fn as_array(&self) -> [S; 9] {
        [
            self.l0, self.c1, self.c2, self.c3, self.c4, self.c5, self.s, self.beta, self.gamma,
        ]
    }

    pub fn from_array(a: [S; 9]) -> Self {
        AnsatzParams {
            l0: a[0],
            c1: a[1],
            c2: a[2],
            c3: a[3],
            c4: a[4],
            c5: a[5],
            s: a[6],
            beta: a[7],
            gamma: a[8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            (self.c1, "c1"),
            (self.c3, "c3"),
            (self.c5, "c5"),
            (self.s, "s"),
            (self.gamma, "gamma"),
        ];
        for (v, name) in pos {
            if v <= S::zero() || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be > 0, got {v}")));
            }
        }
        let nonneg = [(self.l0, "L0"), (self.c2, "c2"), (self.c4, "c4")];
        for (v, name) in nonneg {
            if v < S::zero() || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A loss curve to fit: per-step learning rates and losses, with the first
/// retained step recorded after warmup trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve<S: Scalar> {
    pub steps: Vec<usize>,
    pub lrs: Vec<S>,
    pub losses: Vec<S>,
    pub warmup_trim: usize,
}

impl<S: Scalar> LossCurve<S> {
    pub fn new(steps: Vec<usize>, lrs: Vec<S>, losses: Vec<S>) -> Result<Self> {
        let c = LossCurve {
            steps,
            lrs,
            losses,
            warmup_trim: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.lrs.len() || self.steps.len() != self.losses.len() {
            return Err(Error::InvalidSpec(
                "curve columns must have equal length".into(),
            ));
        }
        if self.steps.is_empty() {
            return Err(Error::InvalidSpec("curve is empty".into()));
        }
        let mut prev = 0usize;
        for &s in &self.steps {
            if s <= prev {
                return Err(Error::InvalidSpec(
                    "curve steps must be strictly increasing and >= 1".into(),
                ));
            }
            prev = s;
        }
        if self.losses.iter().any(|l| *l <= S::zero() || !l.is_finite()) {
            return Err(Error::InvalidSpec(
                "losses must be positive (their log is taken during fitting)".into(),
            ));
        }
        if self.lrs.iter().any(|l| *l < S::zero() || !l.is_finite()) {
            return Err(Error::InvalidSpec("learning rates must be >= 0".into()));
        }
        Ok(())
    }

    /// Drop all points before `first_step` and record the trim.
    pub fn trim_warmup(mut self, first_step: usize) -> Result<Self> {
        let keep = self.steps.iter().position(|&s| s >= first_step);
        let Some(idx) = keep else {
            return Err(Error::InvalidSpec(format!(
                "warmup trim at step {first_step} leaves no data"
            )));
        };
        self.steps.drain(..idx);
        self.lrs.drain(..idx);
        self.losses.drain(..idx);
        self.warmup_trim = first_step;
        Ok(self)
    }

    /// Reconstruct a dense per-step schedule: each gap (prev, cur] takes the
    /// rate recorded at cur.
    pub fn to_schedule(&self) -> Result<ScheduleSpec<S>> {
        let horizon = *self.steps.last().unwrap();
        let mut rates = Vec::with_capacity(horizon);
        let mut idx = 0usize;
        for step in 1..=horizon {
            while idx + 1 < self.steps.len() && self.steps[idx] < step {
                idx += 1;
            }
            rates.push(self.lrs[idx]);
        }
        ScheduleSpec::tabulated(rates)
    }

    /// Read from CSV with header `step,lr,loss`; a `mean_risk` column is
    /// accepted in place of `loss` so simulator trajectories feed in
    /// directly.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let step_idx = col("step").ok_or_else(|| Error::Csv("missing column `step`".into()))?;
        let lr_idx = col("lr").ok_or_else(|| Error::Csv("missing column `lr`".into()))?;
        let loss_idx = col("loss")
            .or_else(|| col("mean_risk"))
            .ok_or_else(|| Error::Csv("missing column `loss` (or `mean_risk`)".into()))?;
        let mut steps = Vec::new();
        let mut lrs = Vec::new();
        let mut losses = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |idx: usize, what: &str| -> Result<f64> {
                record
                    .get(idx)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Csv(format!("row {}: bad {what} value", row + 1)))
            };
            steps.push(parse(step_idx, "step")? as usize);
            lrs.push(S::cst(parse(lr_idx, "lr")?));
            losses.push(S::cst(parse(loss_idx, "loss")?));
        }
        LossCurve::new(steps, lrs, losses)
    }

    pub fn from_csv_path<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// Write as CSV `step,lr,loss`.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["step", "lr", "loss"])?;
        for i in 0..self.steps.len() {
            wtr.write_record([
                format!("{}", self.steps[i]),
                format!("{:.17e}", self.lrs[i]),
                format!("{:.17e}", self.losses[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evaluate the ansatz at the requested checkpoint steps under a schedule.
///
/// The model-size term is dropped when `model_size` is `None` (its constant
/// folds into L0). Cost is O(K · #checkpoints) through an incremental inner
/// sum over the nonzero rate decrements.
pub fn ansatz_eval<S: Scalar>(
    params: &AnsatzParams<S>,
    schedule: &ScheduleSpec<S>,
    model_size: Option<usize>,
    checkpoints: &[usize],
) -> Result<Vec<S>> {
    let eval = Evaluator::from_schedule(schedule, model_size, checkpoints)?;
    Ok(eval.predictions(params).0)
}

/// Huber loss value and barrier diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<S: Scalar> {
    pub value: S,
    /// Checkpoints whose prediction was non-positive and hit the penalty.
    pub barrier_hits: usize,
}

/// Σ_k Huber_δ(log R_Θ(k) − log L_gt(k)) against the curve's own schedule.
pub fn huber_objective<S: Scalar>(
    params: &AnsatzParams<S>,
    curve: &LossCurve<S>,
    model_size: Option<usize>,
) -> Result<Objective<S>> {
    let problem = FitProblem::from_curve(curve, model_size, 1)?;
    let (value, _, barrier_hits) = problem.objective_and_gradient(params, false);
    Ok(Objective {
        value,
        barrier_hits,
    })
}

/// Analytic gradient of the Huber objective with respect to the nine natural
/// parameters.
pub fn huber_gradient<S: Scalar>(
    params: &AnsatzParams<S>,
    curve: &LossCurve<S>,
    model_size: Option<usize>,
) -> Result<[S; 9]> {
    let problem = FitProblem::from_curve(curve, model_size, 1)?;
    let (_, grad, _) = problem.objective_and_gradient(params, true);
    Ok(grad)
}

/// The Huber function: r²/2 inside |r| <= δ, δ(|r| − δ/2) outside.
pub fn huber<S: Scalar>(r: S, delta: S) -> S {
    if r.abs() <= delta {
        r * r * S::cst(0.5)
    } else {
        delta * (r.abs() - delta * S::cst(0.5))
    }
}

fn huber_derivative<S: Scalar>(r: S, delta: S) -> S {
    if r.abs() <= delta {
        r
    } else if r > S::zero() {
        delta
    } else {
        -delta
    }
}

/// Precomputed schedule geometry shared by objective evaluations.
struct Evaluator<S: Scalar> {
    /// T_1..T_K cumulative rates (index i-1 holds T_i).
    t: Vec<S>,
    /// (i, η_{i-1} − η_i) for i >= 2 with nonzero decrement, ascending in i.
    diffs: Vec<(usize, S)>,
    checkpoints: Vec<usize>,
    model_size: Option<usize>,
}

impl<S: Scalar> Evaluator<S> {
    fn from_schedule(
        schedule: &ScheduleSpec<S>,
        model_size: Option<usize>,
        checkpoints: &[usize],
    ) -> Result<Self> {
        schedule.validate()?;
        let horizon = schedule.horizon();
        for &c in checkpoints {
            if c == 0 || c > horizon {
                return Err(Error::StepOutOfRange {
                    step: c,
                    horizon,
                });
            }
        }
        let rates = schedule.rates();
        let mut t = Vec::with_capacity(horizon);
        let mut acc = S::zero();
        for &eta in &rates {
            acc += eta;
            t.push(acc);
        }
        if t.first().copied().unwrap_or(S::zero()) <= S::zero() {
            return Err(Error::Domain(
                "ansatz requires T(i) > 0 for all i >= 1 (first rate must be positive)".into(),
            ));
        }
        let mut diffs = Vec::new();
        for i in 2..=horizon {
            let d = rates[i - 2] - rates[i - 1];
            if d != S::zero() {
                diffs.push((i, d));
            }
        }
        Ok(Evaluator {
            t,
            diffs,
            checkpoints: checkpoints.to_vec(),
            model_size,
        })
    }

    fn model_pow(&self, params: &AnsatzParams<S>) -> S {
        match self.model_size {
            Some(m) => S::of_usize(m).powf(-params.s * params.beta),
            None => S::zero(),
        }
    }

    /// Predictions at the checkpoints plus the count of non-positive values.
    fn predictions(&self, params: &AnsatzParams<S>) -> (Vec<S>, usize) {
        let mpow = self.model_pow(params);
        let tpow: Vec<S> = self
            .diffs
            .iter()
            .map(|&(i, _)| self.t[i - 1].powf(-params.s))
            .collect();
        let preds: Vec<S> = self
            .checkpoints
            .par_iter()
            .map(|&k| {
                let tk = self.t[k - 1];
                let mut lrd = S::zero();
                for (&(i, d), &tip) in self.diffs.iter().zip(&tpow) {
                    if i > k {
                        break;
                    }
                    let delta_t = tk - self.t[i - 1];
                    let q = (-params.gamma * (params.c5 * delta_t).ln_1p()).exp();
                    lrd += d * (params.c4 + tip) * (S::one() - q);
                }
                params.l0 + params.c1 * tk.powf(-params.s) + params.c2 * mpow - params.c3 * lrd
            })
            .collect();
        let hits = preds.iter().filter(|p| **p <= S::zero()).count();
        (preds, hits)
    }
}

/// An ansatz-fitting problem: schedule geometry plus log targets.
pub struct FitProblem<S: Scalar> {
    eval: Evaluator<S>,
    log_targets: Vec<S>,
    pub delta: S,
}

impl<S: Scalar> FitProblem<S> {
    /// Build from a curve, taking every `subsample`-th checkpoint (the final
    /// one always kept).
    pub fn from_curve(
        curve: &LossCurve<S>,
        model_size: Option<usize>,
        subsample: usize,
    ) -> Result<Self> {
        curve.validate()?;
        let schedule = curve.to_schedule()?;
        let stride = subsample.max(1);
        let mut checkpoints = Vec::new();
        let mut log_targets = Vec::new();
        let last = curve.steps.len() - 1;
        for idx in (0..curve.steps.len()).step_by(stride) {
            checkpoints.push(curve.steps[idx]);
            log_targets.push(curve.losses[idx].ln());
        }
        if *checkpoints.last().unwrap() != curve.steps[last] {
            checkpoints.push(curve.steps[last]);
            log_targets.push(curve.losses[last].ln());
        }
        let eval = Evaluator::from_schedule(&schedule, model_size, &checkpoints)?;
        Ok(FitProblem {
            eval,
            log_targets,
            delta: S::cst(DEFAULT_HUBER_DELTA),
        })
    }

    pub fn checkpoint_count(&self) -> usize {
        self.eval.checkpoints.len()
    }

    /// Objective and (optionally) its analytic gradient in the natural
    /// parameters, plus the barrier-hit count.
    pub fn objective_and_gradient(
        &self,
        params: &AnsatzParams<S>,
        with_gradient: bool,
    ) -> (S, [S; 9], usize) {
        let p = params;
        let mpow = self.eval.model_pow(p);
        let ln_m = match self.eval.model_size {
            Some(m) => S::of_usize(m).ln(),
            None => S::zero(),
        };
        // per-decrement powers, shared across checkpoints
        let tpow: Vec<S> = self
            .eval
            .diffs
            .iter()
            .map(|&(i, _)| self.eval.t[i - 1].powf(-p.s))
            .collect();
        let tpow_ln: Vec<S> = self
            .eval
            .diffs
            .iter()
            .zip(&tpow)
            .map(|(&(i, _), &tp)| tp * self.eval.t[i - 1].ln())
            .collect();

        struct Partial<S> {
            value: S,
            grad: [S; 9],
            hits: usize,
        }

        let reduce = |acc: &mut Partial<S>, other: Partial<S>| {
            acc.value += other.value;
            acc.hits += other.hits;
            for j in 0..9 {
                acc.grad[j] += other.grad[j];
            }
        };

        let partials: Vec<Partial<S>> = self
            .eval
            .checkpoints
            .par_iter()
            .zip(&self.log_targets)
            .map(|(&k, &log_y)| {
                let tk = self.eval.t[k - 1];
                let tk_pow = tk.powf(-p.s);
                // inner sums over decrements i <= k
                let mut s_lrd = S::zero(); // Σ d (c4 + T_i^{-s}) w
                let mut s_c4 = S::zero(); // Σ d w
                let mut s_c5 = S::zero(); // Σ d (c4 + T_i^{-s}) γ Δ q /(1+c5Δ)
                let mut s_gamma = S::zero(); // Σ d (c4 + T_i^{-s}) q ln(1+c5Δ)
                let mut s_s = S::zero(); // Σ d T_i^{-s} ln T_i · w
                for (idx, &(i, d)) in self.eval.diffs.iter().enumerate() {
                    if i > k {
                        break;
                    }
                    let delta_t = tk - self.eval.t[i - 1];
                    let u = p.c5 * delta_t;
                    let l1p = u.ln_1p();
                    let q = (-p.gamma * l1p).exp();
                    let w = S::one() - q;
                    let base = p.c4 + tpow[idx];
                    s_lrd += d * base * w;
                    if with_gradient {
                        s_c4 += d * w;
                        s_c5 += d * base * p.gamma * delta_t * q / (S::one() + u);
                        s_gamma += d * base * q * l1p;
                        s_s += d * tpow_ln[idx] * w;
                    }
                }
                let pred = p.l0 + p.c1 * tk_pow + p.c2 * mpow - p.c3 * s_lrd;
                let mut grad = [S::zero(); 9];
                if pred <= S::zero() || !pred.is_finite() {
                    // quadratic push back into the positive domain
                    let big = S::cst(BARRIER_WEIGHT);
                    let gap = S::cst(1e-12) - pred;
                    let value = big * gap * gap;
                    if with_gradient {
                        let dv = -S::cst(2.0) * big * gap; // d value / d pred
                        grad = Self::chain_pred_gradient(
                            p, tk, tk_pow, mpow, ln_m, s_lrd, s_c4, s_c5, s_gamma, s_s, dv,
                        );
                    }
                    return Partial {
                        value,
                        grad,
                        hits: 1,
                    };
                }
                let r = pred.ln() - log_y;
                let value = huber(r, self.delta);
                if with_gradient {
                    let dv = huber_derivative(r, self.delta) / pred;
                    grad = Self::chain_pred_gradient(
                        p, tk, tk_pow, mpow, ln_m, s_lrd, s_c4, s_c5, s_gamma, s_s, dv,
                    );
                }
                Partial {
                    value,
                    grad,
                    hits: 0,
                }
            })
            .collect();

        let mut total = Partial {
            value: S::zero(),
            grad: [S::zero(); 9],
            hits: 0,
        };
        for part in partials {
            reduce(&mut total, part);
        }
        (total.value, total.grad, total.hits)
    }

    /// Chain rule: multiply ∂pred/∂θ by dv = ∂objective/∂pred.
    #[allow(clippy::too_many_arguments)]
    fn chain_pred_gradient(
        p: &AnsatzParams<S>,
        tk: S,
        tk_pow: S,
        mpow: S,
        ln_m: S,
        s_lrd: S,
        s_c4: S,
        s_c5: S,
        s_gamma: S,
        s_s: S,
        dv: S,
    ) -> [S; 9] {
        let mut g = [S::zero(); 9];
        g[0] = dv; // L0
        g[1] = dv * tk_pow; // c1
        g[2] = dv * mpow; // c2
        g[3] = -dv * s_lrd; // c3
        g[4] = -dv * p.c3 * s_c4; // c4
        g[5] = -dv * p.c3 * s_c5; // c5
        g[6] = dv
            * (-p.c1 * tk_pow * tk.ln() - p.c2 * mpow * p.beta * ln_m + p.c3 * s_s); // s
        g[7] = -dv * p.c2 * mpow * p.s * ln_m; // beta
        g[8] = -dv * p.c3 * s_gamma; // gamma
        g
    }

    /// Predictions at the problem's checkpoints.
    pub fn predictions(&self, params: &AnsatzParams<S>) -> Vec<S> {
        self.eval.predictions(params).0
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.eval.checkpoints
    }

    pub fn log_targets(&self) -> &[S] {
        &self.log_targets
    }
}

/// Fit options. Learning rates follow the two-group split: index parameters
/// (s, β, γ) move faster than the coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions<S: Scalar> {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr_exponents")]
    pub lr_exponents: S,
    #[serde(default = "default_lr_coefficients")]
    pub lr_coefficients: S,
    /// Checkpoint stride; `None` picks every 10th point for curves longer
    /// than 5000 points and 1 otherwise.
    #[serde(default)]
    pub subsample: Option<usize>,
    /// Model size for the M^{-sβ} term; `None` folds it into L0.
    #[serde(default)]
    pub model_size: Option<usize>,
    #[serde(default = "default_delta")]
    pub huber_delta: S,
}

fn default_steps() -> usize {
    10_000
}
fn default_lr_exponents<S: Scalar>() -> S {
    S::cst(5e-2)
}
fn default_lr_coefficients<S: Scalar>() -> S {
    S::cst(5e-3)
}
fn default_delta<S: Scalar>() -> S {
    S::cst(DEFAULT_HUBER_DELTA)
}

impl<S: Scalar> Default for FitOptions<S> {
    fn default() -> Self {
        FitOptions {
            steps: default_steps(),
            lr_exponents: default_lr_exponents(),
            lr_coefficients: default_lr_coefficients(),
            subsample: None,
            model_size: None,
            huber_delta: default_delta(),
        }
    }
}

/// Fit outcome: parameters, objective, per-checkpoint log residuals, and the
/// coefficient of determination on the log losses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport<S: Scalar> {
    pub params: AnsatzParams<S>,
    pub objective: S,
    pub residuals: Vec<S>,
    pub r2_log: S,
    pub optimizer_steps: usize,
    pub barrier_hits: usize,
}

/// Scale-aware default initialization.
pub fn default_init<S: Scalar>(curve: &LossCurve<S>, model_size: Option<usize>) -> AnsatzParams<S> {
    let min = curve
        .losses
        .iter()
        .copied()
        .fold(S::infinity(), |a, b| a.min(b));
    let max = curve
        .losses
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| a.max(b));
    AnsatzParams {
        l0: min * S::cst(0.9),
        c1: (max - min).max(S::cst(1e-3)),
        c2: if model_size.is_some() {
            S::cst(1e-3)
        } else {
            S::cst(1e-8)
        },
        c3: S::one(),
        c4: S::cst(0.1),
        c5: S::one(),
        s: S::cst(0.5),
        beta: S::cst(2.0),
        gamma: S::cst(0.5),
    }
}

/// Fit the ansatz by adaptive-moment descent on log-parameters.
///
/// All nine parameters are optimized in log space (positivity by
/// construction); gradients are analytic. Deterministic given the
/// initialization. Aborts with the offending parameter named if a gradient
/// turns non-finite.
pub fn fit<S: Scalar>(
    curve: &LossCurve<S>,
    init: &AnsatzParams<S>,
    options: &FitOptions<S>,
) -> Result<FitReport<S>> {
    init.validate()?;
    let stride = options
        .subsample
        .unwrap_or(if curve.steps.len() > 5_000 { 10 } else { 1 });
    let mut problem = FitProblem::from_curve(curve, options.model_size, stride)?;
    problem.delta = options.huber_delta;
    if problem.checkpoint_count() < 20 {
        return Err(Error::InvalidSpec(format!(
            "need at least 20 checkpoints after trim/subsampling, got {}",
            problem.checkpoint_count()
        )));
    }

    // log-parameterization: u = ln θ, dL/du = θ · dL/dθ
    let floor = S::cst(1e-30);
    let mut u: [S; 9] = init.as_array().map(|v| v.max(floor).ln());
    let beta1 = S::cst(0.9);
    let beta2 = S::cst(0.999);
    let eps = S::cst(1e-8);
    // groups: exponents (s, beta, gamma) vs coefficients (L0, c1..c5)
    let lr = |j: usize| {
        if j >= 6 {
            options.lr_exponents
        } else {
            options.lr_coefficients
        }
    };

    let mut best_params = *init;
    let mut best_objective = S::infinity();
    let mut last_hits = 0usize;
    // main run at the configured rates, then short restart-from-best stages
    // at geometrically decayed rates to polish the trailing digits
    let polish = (options.steps / 10).max(1);
    let stages: [(usize, f64); 5] = [
        (options.steps, 1.0),
        (polish, 1e-1),
        (polish, 1e-2),
        (polish, 1e-3),
        (polish, 1e-4),
    ];
    for (stage_steps, scale) in stages {
        if best_objective.is_finite() {
            u = best_params.as_array().map(|v| v.max(floor).ln());
        }
        let mut m_state = [S::zero(); 9];
        let mut v_state = [S::zero(); 9];
        let scale = S::cst(scale);
        for step in 1..=stage_steps {
            let params = AnsatzParams::from_array(u.map(|x| x.exp()));
            let (value, grad_nat, hits) = problem.objective_and_gradient(&params, true);
            last_hits = hits;
            if value < best_objective && hits == 0 {
                best_objective = value;
                best_params = params;
            }
            let theta = params.as_array();
            let b1t = S::one() - beta1.powi(step as i32);
            let b2t = S::one() - beta2.powi(step as i32);
            for j in 0..9 {
                let g = grad_nat[j] * theta[j];
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {} at optimizer step {step}",
                        PARAM_NAMES[j]
                    )));
                }
                m_state[j] = beta1 * m_state[j] + (S::one() - beta1) * g;
                v_state[j] = beta2 * v_state[j] + (S::one() - beta2) * g * g;
                let m_hat = m_state[j] / b1t;
                let v_hat = v_state[j] / b2t;
                u[j] -= scale * lr(j) * m_hat / (v_hat.sqrt() + eps);
            }
        }
        // the stage's last iterate may beat the tracked best
        let final_params = AnsatzParams::from_array(u.map(|x| x.exp()));
        let (final_value, _, final_hits) = problem.objective_and_gradient(&final_params, false);
        if final_value < best_objective && final_hits == 0 {
            best_objective = final_value;
            best_params = final_params;
        }
    }

    let preds = problem.predictions(&best_params);
    let residuals: Vec<S> = preds
        .iter()
        .zip(problem.log_targets())
        .map(|(&p, &ly)| {
            if p > S::zero() {
                p.ln() - ly
            } else {
                S::infinity()
            }
        })
        .collect();
    let log_targets = problem.log_targets();
    let mean_y = log_targets.iter().copied().sum::<S>() / S::of_usize(log_targets.len());
    let ss_tot: S = log_targets.iter().map(|&y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: S = residuals.iter().map(|&r| r * r).sum();
    let r2_log = if ss_tot > S::zero() {
        S::one() - ss_res / ss_tot
    } else {
        S::nan()
    };
    Ok(FitReport {
        params: best_params,
        objective: best_objective,
        residuals,
        r2_log,
        optimizer_steps: options.steps + 4 * polish,
        barrier_hits: last_hits,
    })
}

/// Evaluate fitted parameters under a new schedule at the given checkpoints.
pub fn predict_unseen<S: Scalar>(
    params: &AnsatzParams<S>,
    schedule: &ScheduleSpec<S>,
    model_size: Option<usize>,
    checkpoints: &[usize],
) -> Result<Vec<S>> {
    ansatz_eval(params, schedule, model_size, checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> AnsatzParams<f64> {
        AnsatzParams {
            l0: 1.0,
            c1: 1.0,
            c2: 0.0,
            c3: 1.0,
            c4: 0.0,
            c5: 1.0,
            s: 1.0,
            beta: 2.0,
            gamma: 1.0,
        }
    }

    #[test]
    fn toy_tabulated_regression_value() {
        // K = 3, η = [0.1, 0.05, 0.05]: T = [0.1, 0.15, 0.2];
        // LRD(3) = 0.05 · (1/0.15) · (1 − 1/1.05) = 1/63;
        // R_3 = 1 + 1/0.2 − 1/63
        let schedule = ScheduleSpec::tabulated(vec![0.1, 0.05, 0.05]).unwrap();
        let got = ansatz_eval(&toy_params(), &schedule, None, &[3]).unwrap()[0];
        let lrd = 1.0 / 63.0;
        let expect = 1.0 + 5.0 - lrd;
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn constant_schedule_has_no_decay_sum() {
        let schedule = ScheduleSpec::constant(0.05, 100).unwrap();
        let mut p = toy_params();
        p.c3 = 42.0; // inert when all decrements vanish
        let got = ansatz_eval(&p, &schedule, None, &[10, 100]).unwrap();
        assert!((got[0] - (1.0 + 1.0 / 0.5)).abs() < 1e-12);
        assert!((got[1] - (1.0 + 1.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn model_term_added_when_size_given() {
        let schedule = ScheduleSpec::constant(0.05, 30).unwrap();
        let mut p = toy_params();
        p.c2 = 2.0;
        let without = ansatz_eval(&p, &schedule, None, &[30]).unwrap()[0];
        let with = ansatz_eval(&p, &schedule, Some(4), &[30]).unwrap()[0];
        // m^{-sβ} = 4^{-2} = 1/16
        assert!((with - without - 2.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn incremental_matches_naive_double_sum() {
        let schedule = ScheduleSpec::cosine(0.1, 200).unwrap();
        let p = AnsatzParams {
            l0: 0.7,
            c1: 1.3,
            c2: 0.0,
            c3: 0.8,
            c4: 0.2,
            c5: 2.0,
            s: 0.6,
            beta: 2.0,
            gamma: 0.8,
        };
        let rates = schedule.rates();
        let naive = |k: usize| -> f64 {
            let t = |i: usize| -> f64 { rates[..i].iter().sum() };
            let mut lrd = 0.0;
            for i in 2..=k {
                let d = rates[i - 2] - rates[i - 1];
                let w = 1.0 - (1.0 + p.c5 * (t(k) - t(i))).powf(-p.gamma);
                lrd += d * (p.c4 + t(i).powf(-p.s)) * w;
            }
            p.l0 + p.c1 * t(k).powf(-p.s) - p.c3 * lrd
        };
        let cps = [2usize, 17, 100, 200];
        let got = ansatz_eval(&p, &schedule, None, &cps).unwrap();
        for (idx, &k) in cps.iter().enumerate() {
            let expect = naive(k);
            assert!(
                (got[idx] - expect).abs() <= 1e-12 * expect.abs(),
                "k = {k}: {} vs {expect}",
                got[idx]
            );
        }
    }

    #[test]
    fn lrd_monotone_in_c5() {
        let schedule = ScheduleSpec::exp_decay(0.1, 0.01, 50).unwrap();
        let mut lo = toy_params();
        lo.c5 = 0.5;
        let mut hi = toy_params();
        hi.c5 = 5.0;
        let cps: Vec<usize> = (1..=50).collect();
        let r_lo = ansatz_eval(&lo, &schedule, None, &cps).unwrap();
        let r_hi = ansatz_eval(&hi, &schedule, None, &cps).unwrap();
        for (a, b) in r_lo.iter().zip(&r_hi) {
            // more forgetting ⇒ larger realized loss drop ⇒ smaller R
            assert!(b <= a);
        }
    }

    #[test]
    fn huber_branch_values() {
        let delta = 1e-3f64;
        assert_eq!(huber(0.0, delta), 0.0);
        assert!((huber(delta, delta) - 5e-7).abs() < 1e-20);
        assert!((huber(2.0 * delta, delta) - 1.5e-6).abs() < 1e-18);
        // C¹ continuity at the boundary
        let eps = 1e-10;
        let below = huber(delta - eps, delta);
        let above = huber(delta + eps, delta);
        assert!((below - above).abs() < 1e-12);
        let d_below = huber_derivative(delta - eps, delta);
        let d_above = huber_derivative(delta + eps, delta);
        assert!((d_below - d_above).abs() < 1e-9);
    }

    #[test]
    fn perfect_fit_objective_zero() {
        let schedule = ScheduleSpec::exp_decay(0.1, 0.01, 60).unwrap();
        let p = toy_params();
        let cps: Vec<usize> = (1..=60).collect();
        let losses = ansatz_eval(&p, &schedule, None, &cps).unwrap();
        let curve = LossCurve::new(cps, schedule.rates(), losses).unwrap();
        let obj = huber_objective(&p, &curve, None).unwrap();
        assert!(obj.value < 1e-24);
        assert_eq!(obj.barrier_hits, 0);
    }

    #[test]
    fn nonpositive_first_rate_rejected() {
        let schedule = ScheduleSpec::tabulated(vec![0.0, 0.1]).unwrap();
        assert!(matches!(
            ansatz_eval(&toy_params(), &schedule, None, &[2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn predict_unseen_reproduces_in_sample() {
        let schedule = ScheduleSpec::wsd(0.1, 0.01, 30, 30).unwrap();
        let p = toy_params();
        let cps: Vec<usize> = (1..=60).collect();
        let direct = ansatz_eval(&p, &schedule, None, &cps).unwrap();
        let again = predict_unseen(&p, &schedule, None, &cps).unwrap();
        assert_eq!(direct, again);
    }

    #[test]
    fn constant_prediction_monotone_nonincreasing() {
        let schedule = ScheduleSpec::constant(0.02, 400).unwrap();
        let p = toy_params();
        let cps: Vec<usize> = (1..=400).collect();
        let preds = ansatz_eval(&p, &schedule, None, &cps).unwrap();
        for w in preds.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn curve_csv_round_trip_and_warmup_trim() {
        let curve = LossCurve::new(
            vec![1, 2, 3, 4],
            vec![0.1, 0.1, 0.05, 0.05],
            vec![4.0, 3.0, 2.5, 2.2],
        )
        .unwrap();
        let mut buf = Vec::new();
        curve.to_csv(&mut buf).unwrap();
        let back = LossCurve::<f64>::from_csv(buf.as_slice()).unwrap();
        assert_eq!(curve, back);
        let trimmed = back.trim_warmup(3).unwrap();
        assert_eq!(trimmed.steps, vec![3, 4]);
        assert_eq!(trimmed.warmup_trim, 3);
        // trajectory CSV column name accepted
        let alt = "step,lr,mean_risk,stderr\n1,0.1,2.0,0.1\n2,0.1,1.5,0.1\n";
        let c = LossCurve::<f64>::from_csv(alt.as_bytes()).unwrap();
        assert_eq!(c.losses, vec![2.0, 1.5]);
        // missing loss column is named in the error
        let bad = "step,lr\n1,0.1\n";
        let err = LossCurve::<f64>::from_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("loss"));
    }

    #[test]
    fn fit_deterministic() {
        let schedule = ScheduleSpec::exp_decay(0.1, 0.02, 80).unwrap();
        let cps: Vec<usize> = (1..=80).collect();
        let truth = toy_params();
        let losses = ansatz_eval(&truth, &schedule, None, &cps).unwrap();
        let curve = LossCurve::new(cps, schedule.rates(), losses).unwrap();
        let init = default_init(&curve, None);
        let opts = FitOptions {
            steps: 50,
            ..FitOptions::default()
        };
        let a = fit(&curve, &init, &opts).unwrap();
        let b = fit(&curve, &init, &opts).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
    }
}
