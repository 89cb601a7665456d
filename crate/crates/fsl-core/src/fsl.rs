//! Functional scaling-law evaluation: the convolution-type noise functional,
//! the full prediction with its component decomposition, the gradient-flow
//! reference curve, and least-squares weight fitting against measured
//! trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfun::GContext;
use crate::scalar::Scalar;
use crate::schedules::{BatchSchedule, ScheduleSpec};
use crate::task::TaskSpec;

/// Component weights of the prediction; all ones reproduces the
/// constants-set-to-one theory mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FslWeights<S: Scalar> {
    /// Weight of the full-batch term e(T(k)).
    pub full: S,
    /// Weight of the fit-dependent e(r) factor inside the noise integral.
    pub fit_noise: S,
    /// Weight of the label-noise σ² factor inside the noise integral.
    pub label_noise: S,
    /// Weight of the M^{-sβ} approximation term.
    pub approx: S,
}

impl<S: Scalar> Default for FslWeights<S> {
    fn default() -> Self {
        FslWeights {
            full: S::one(),
            fit_noise: S::one(),
            label_noise: S::one(),
            approx: S::one(),
        }
    }
}

/// Per-step prediction with its component decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FslEvaluation<S: Scalar> {
    /// Recorded step indices.
    pub steps: Vec<usize>,
    /// Intrinsic-time grid values at the recorded steps.
    pub times: Vec<S>,
    /// Weighted full-batch component.
    pub full_batch: Vec<S>,
    /// Weighted noise component.
    pub noise: Vec<S>,
    /// Weighted approximation component.
    pub approx: Vec<S>,
    /// Sum of the three components.
    pub total: Vec<S>,
    /// Scope notes attached during evaluation.
    pub warnings: Vec<String>,
}

impl<S: Scalar> FslEvaluation<S> {
    pub fn final_total(&self) -> S {
        *self.total.last().expect("evaluation has at least one step")
    }

    /// CSV export `step,pred_risk,full_batch,noise,approx`.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["step", "pred_risk", "full_batch", "noise", "approx"])?;
        for i in 0..self.steps.len() {
            wtr.write_record([
                format!("{}", self.steps[i]),
                format!("{:.17e}", self.total[i]),
                format!("{:.17e}", self.full_batch[i]),
                format!("{:.17e}", self.noise[i]),
                format!("{:.17e}", self.approx[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evaluate the noise convolution N(t_c) = ∫_0^{t_c} K(t_c − r) w(r) γ(r) dr
/// at each requested checkpoint, with w(r) = fit·e(r) + label·σ².
///
/// The integral is a trapezoid rule on the schedule's own step boundaries
/// t_k = Σ_{j<=k} η_j. The noise intensity γ is the step function η_k/B_k
/// (the h in γ = h·φ/b cancels against φ = η/h for per-step schedules), so
/// each interval carries its own exact γ_k while the smooth factor
/// K(t_c − r)(fit·e(r) + label·σ²) is trapezoidal on the interval endpoints.
#[allow(clippy::too_many_arguments)]
pub fn noise_functional<S: Scalar>(
    ctx: &GContext<S>,
    s: S,
    schedule: &ScheduleSpec<S>,
    batch: &BatchSchedule,
    fit_weight: S,
    label_weight: S,
    sigma: S,
    checkpoints: &[usize],
) -> Result<Vec<S>> {
    let horizon = schedule.horizon();
    if horizon < 2 {
        return Err(Error::InvalidSpec(
            "noise functional needs a grid of at least 2 steps".into(),
        ));
    }
    for &c in checkpoints {
        if c == 0 || c > horizon {
            return Err(Error::StepOutOfRange {
                step: c,
                horizon,
            });
        }
    }
    let rates = schedule.rates();
    let times = schedule.cumulative_times();
    let sigma_sq = sigma * sigma;

    // smooth node values w_k = fit·e(t_k) + label·σ²
    let mut smooth = vec![S::zero(); horizon + 1];
    for k in 0..=horizon {
        let fit_term = if fit_weight == S::zero() {
            S::zero()
        } else {
            fit_weight * ctx.risk_decay(s, times[k])?
        };
        smooth[k] = fit_term + label_weight * sigma_sq;
    }

    checkpoints
        .par_iter()
        .map(|&c| {
            let t_end = times[c];
            let mut acc = S::zero();
            let mut prev = ctx.forgetting_kernel(t_end)? * smooth[0];
            for k in 1..=c {
                let cur = ctx.forgetting_kernel(t_end - times[k])? * smooth[k];
                let gamma = rates[k - 1] / S::of_usize(batch.batch_at(k));
                acc += gamma * (times[k] - times[k - 1]) * (prev + cur) * S::cst(0.5);
                prev = cur;
            }
            Ok(acc)
        })
        .collect()
}

/// Full prediction at the requested checkpoints: weighted approximation,
/// full-batch, and noise components plus their sum.
pub fn fsl_predict<S: Scalar>(
    ctx: &GContext<S>,
    task: &TaskSpec<S>,
    schedule: &ScheduleSpec<S>,
    batch: &BatchSchedule,
    weights: &FslWeights<S>,
    checkpoints: &[usize],
) -> Result<FslEvaluation<S>> {
    task.validate()?;
    schedule.validate()?;
    batch.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::InvalidSpec("no checkpoints requested".into()));
    }
    let mut warnings = Vec::new();
    let scope_limit = S::cst(2.0) - S::one() / task.beta;
    if task.s > scope_limit {
        warnings.push(format!(
            "s = {} exceeds the guaranteed scope (0, 2 - 1/beta] = (0, {scope_limit}]; \
             the formula is evaluated anyway",
            task.s
        ));
    }
    if matches!(task.projector, crate::task::ProjectorKind::RandomFeatures) && task.s > S::one() {
        warnings.push(format!(
            "random-features validity window is s in [0, 1]; got s = {}",
            task.s
        ));
    }

    let times = schedule.cumulative_times();
    let noise = noise_functional(
        ctx,
        task.s,
        schedule,
        batch,
        weights.fit_noise,
        weights.label_noise,
        task.sigma,
        checkpoints,
    )?;
    let approx_value = weights.approx * ctx.approximation_term(task.s);
    let mut full_batch = Vec::with_capacity(checkpoints.len());
    let mut approx = Vec::with_capacity(checkpoints.len());
    let mut total = Vec::with_capacity(checkpoints.len());
    let mut grid = Vec::with_capacity(checkpoints.len());
    for (i, &c) in checkpoints.iter().enumerate() {
        let fb = weights.full * ctx.risk_decay(task.s, times[c])?;
        full_batch.push(fb);
        approx.push(approx_value);
        total.push(fb + approx_value + noise[i]);
        grid.push(times[c]);
    }
    Ok(FslEvaluation {
        steps: checkpoints.to_vec(),
        times: grid,
        full_batch,
        noise,
        approx,
        total,
        warnings,
    })
}

/// Infinitesimal-learning-rate reference: the gradient-flow excess risk
/// ½ Σ_{j<=M} λ_j θ*_j² e^{-2 λ_j t} plus the approximation tail.
pub fn gradient_flow_risk<S: Scalar>(task: &TaskSpec<S>, t: S) -> Result<S> {
    task.validate()?;
    if !matches!(task.projector, crate::task::ProjectorKind::TopM) {
        return Err(Error::Unsupported(
            "gradient-flow reference assumes the top-M projector".into(),
        ));
    }
    if task.ambient.is_infinite() {
        return Err(Error::Unsupported(
            "gradient-flow reference requires finite N".into(),
        ));
    }
    let theta_expo = task.theta_exponent();
    let mut acc = S::zero();
    for j in 1..=task.model_size {
        let jf = S::of_usize(j);
        let lam = jf.powf(-task.beta);
        let theta = jf.powf(theta_expo);
        acc += lam * theta * theta * (-S::cst(2.0) * lam * t).exp();
    }
    Ok(acc * S::cst(0.5) + task.approximation_error())
}

/// Result of fitting the per-component weights to a measured risk curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFit<S: Scalar> {
    pub weights: FslWeights<S>,
    /// Coefficient of determination on the log of the risk.
    pub r2_log: S,
    /// Coefficient of determination on the raw risk.
    pub r2_linear: S,
}

/// Fit the three-constant physical-time prediction to a measured curve by
/// least squares over the bases [e(T(k)), fit-noise integral, label-noise
/// integral]. Rows are scaled by 1/risk so the solve minimizes relative
/// residuals (the first-order form of the log objective the fit is judged
/// on); negative coefficients are clipped to zero and the system re-solved
/// on the surviving bases. The approximation weight is left at zero
/// (fitting targets are full-rank tasks).
pub fn fit_weights<S: Scalar>(
    ctx: &GContext<S>,
    s: S,
    sigma: S,
    schedule: &ScheduleSpec<S>,
    batch: &BatchSchedule,
    steps: &[usize],
    risks: &[S],
) -> Result<WeightsFit<S>> {
    if steps.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            expected: steps.len(),
            got: risks.len(),
        });
    }
    if steps.len() < 4 {
        return Err(Error::InvalidSpec(
            "weight fitting needs at least 4 points".into(),
        ));
    }
    if risks.iter().any(|r| *r <= S::zero() || !r.is_finite()) {
        return Err(Error::Domain(
            "weight fitting requires positive risks".into(),
        ));
    }
    let times = schedule.cumulative_times();
    let b_full: Vec<S> = steps
        .iter()
        .map(|&k| ctx.risk_decay(s, times[k]))
        .collect::<Result<_>>()?;
    let one = S::one();
    let zero = S::zero();
    let b_fit = noise_functional(ctx, s, schedule, batch, one, zero, sigma, steps)?;
    let b_label = noise_functional(ctx, s, schedule, batch, zero, one, sigma, steps)?;

    let bases = [b_full, b_fit, b_label];
    // relative-error weighting: scale each row by 1/risk
    let mut scaled = bases.clone();
    for basis in scaled.iter_mut() {
        for (v, &r) in basis.iter_mut().zip(risks) {
            *v /= r;
        }
    }
    let ones = vec![one; risks.len()];
    let mut active = [true; 3];
    let coefs = loop {
        let coefs = solve_ols(&scaled, &active, &ones)?;
        match coefs
            .iter()
            .enumerate()
            .filter(|&(i, &c)| active[i] && c < zero)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            Some((worst, _)) => active[worst] = false,
            None => break coefs,
        }
        if active.iter().all(|a| !a) {
            break [zero; 3];
        }
    };

    let predict = |i: usize| -> S {
        coefs[0] * bases[0][i] + coefs[1] * bases[1][i] + coefs[2] * bases[2][i]
    };
    let preds: Vec<S> = (0..steps.len()).map(predict).collect();
    let r2_linear = r_squared(risks, &preds, false);
    let r2_log = r_squared(risks, &preds, true);
    Ok(WeightsFit {
        weights: FslWeights {
            full: coefs[0],
            fit_noise: coefs[1],
            label_noise: coefs[2],
            approx: zero,
        },
        r2_log,
        r2_linear,
    })
}

/// Least squares against the active subset of (up to three) bases via
/// normal equations; inactive coefficients come back zero.
fn solve_ols<S: Scalar>(bases: &[Vec<S>; 3], active: &[bool; 3], y: &[S]) -> Result<[S; 3]> {
    let idx: Vec<usize> = (0..3).filter(|&i| active[i]).collect();
    let d = idx.len();
    if d == 0 {
        return Ok([S::zero(); 3]);
    }
    let mut ata = vec![S::zero(); d * d];
    let mut aty = vec![S::zero(); d];
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            ata[r * d + c] = dot(&bases[i], &bases[j]);
        }
        aty[r] = dot(&bases[i], y);
    }
    let sol = solve_dense(&mut ata, &mut aty, d)?;
    let mut out = [S::zero(); 3];
    for (r, &i) in idx.iter().enumerate() {
        out[i] = sol[r];
    }
    Ok(out)
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a tiny system.
fn solve_dense<S: Scalar>(a: &mut [S], b: &mut [S], n: usize) -> Result<Vec<S>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot * n + col].abs() < S::cst(1e-300) {
            return Err(Error::Numeric("singular normal equations".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
            let bv = b[col];
            b[row] -= f * bv;
        }
    }
    let mut x = vec![S::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// R² of predictions against targets, optionally on the log scale
/// (non-positive pairs are skipped there).
pub fn r_squared<S: Scalar>(targets: &[S], preds: &[S], log_scale: bool) -> S {
    let pairs: Vec<(S, S)> = targets
        .iter()
        .zip(preds)
        .filter_map(|(&y, &p)| {
            if log_scale {
                if y > S::zero() && p > S::zero() {
                    Some((y.ln(), p.ln()))
                } else {
                    None
                }
            } else {
                Some((y, p))
            }
        })
        .collect();
    if pairs.len() < 2 {
        return S::nan();
    }
    let n = S::of_usize(pairs.len());
    let mean_y = pairs.iter().map(|&(y, _)| y).sum::<S>() / n;
    let ss_tot: S = pairs.iter().map(|&(y, _)| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: S = pairs.iter().map(|&(y, p)| (y - p) * (y - p)).sum();
    if ss_tot == S::zero() {
        return S::nan();
    }
    S::one() - ss_res / ss_tot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfun::GContext;
    use crate::task::TaskSpec;

    fn ctx128() -> GContext<f64> {
        GContext::finite(128, 2.0).unwrap()
    }

    #[test]
    fn zero_rate_noise_vanishes() {
        let ctx = ctx128();
        let schedule = ScheduleSpec::constant(0.0, 50).unwrap();
        let batch = BatchSchedule::default();
        let n =
            noise_functional(&ctx, 1.0, &schedule, &batch, 1.0, 1.0, 3.0, &[10, 50]).unwrap();
        assert!(n.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_schedule_stationary_label_noise() {
        // σ² dominant, large t: N ≈ (η/B) σ² ∫_0^∞ K
        let ctx = ctx128();
        let eta = 0.05;
        let sigma = 3.0;
        let k = 20_000;
        let schedule = ScheduleSpec::constant(eta, k).unwrap();
        let batch = BatchSchedule::default();
        let n = noise_functional(&ctx, 1.0, &schedule, &batch, 0.0, 1.0, sigma, &[k]).unwrap()[0];
        // ∫_0^∞ K = ∫_L^1 u^{1-1/β} / (2u) du = (1 − L^{1-1/β})·β/(2(β−1))
        let l = 128f64.powf(-2.0);
        let integral = (1.0 - l.powf(0.5)) * 2.0 / 2.0;
        let expect = eta * sigma * sigma * integral;
        assert!(
            (n - expect).abs() / expect < 0.05,
            "N = {n} vs stationary {expect}"
        );
    }

    #[test]
    fn coarse_grid_needs_two_points() {
        let ctx = ctx128();
        let schedule = ScheduleSpec::constant(0.05, 1).unwrap();
        let batch = BatchSchedule::default();
        assert!(
            noise_functional(&ctx, 1.0, &schedule, &batch, 1.0, 1.0, 1.0, &[1]).is_err()
        );
    }

    #[test]
    fn predict_decomposition_exact() {
        let ctx = ctx128();
        let task = TaskSpec::top_m(1.0, 2.0, 128, 128, 3.0).unwrap();
        let schedule = ScheduleSpec::cosine(0.05, 200).unwrap();
        let batch = BatchSchedule::default();
        let cps: Vec<usize> = (20..=200).step_by(20).collect();
        let eval = fsl_predict(&ctx, &task, &schedule, &batch, &FslWeights::default(), &cps)
            .unwrap();
        for i in 0..cps.len() {
            assert_eq!(
                eval.total[i],
                eval.full_batch[i] + eval.noise[i] + eval.approx[i]
            );
            assert!(eval.total[i] >= 0.0);
        }
    }

    #[test]
    fn predict_scope_warning() {
        let ctx = ctx128();
        let task = TaskSpec::top_m(1.9, 2.0, 128, 128, 0.0).unwrap();
        let schedule = ScheduleSpec::constant(0.05, 10).unwrap();
        let eval = fsl_predict(
            &ctx,
            &task,
            &schedule,
            &BatchSchedule::default(),
            &FslWeights::default(),
            &[10],
        )
        .unwrap();
        assert!(!eval.warnings.is_empty());
    }

    #[test]
    fn gradient_flow_endpoints() {
        let task = TaskSpec::<f64>::top_m(1.0, 2.0, 2, 2, 0.0).unwrap();
        let at0 = gradient_flow_risk(&task, 0.0).unwrap();
        assert!((at0 - 0.5625).abs() < 1e-15);
        let late = gradient_flow_risk(&task, 1e9).unwrap();
        assert!((late - task.approximation_error()).abs() < 1e-15);
        // t = 1: ½ (λ1 θ1² e^{-2λ1} + λ2 θ2² e^{-2λ2}) with λθ² = j^{-3}
        let at1 = gradient_flow_risk(&task, 1.0).unwrap();
        let expect = 0.5 * ((-2.0f64).exp() + 0.125 * (-0.5f64).exp());
        assert!((at1 - expect).abs() < 1e-15);
    }

    #[test]
    fn weight_fit_recovers_planted_weights() {
        let ctx = ctx128();
        let task = TaskSpec::top_m(1.0, 2.0, 128, 128, 3.0).unwrap();
        let schedule = ScheduleSpec::exp_decay(0.05, 0.005, 400).unwrap();
        let batch = BatchSchedule::default();
        let cps: Vec<usize> = (10..=400).step_by(10).collect();
        let planted = FslWeights {
            full: 1.3,
            fit_noise: 0.7,
            label_noise: 2.1,
            approx: 0.0,
        };
        let eval = fsl_predict(&ctx, &task, &schedule, &batch, &planted, &cps).unwrap();
        let fit = fit_weights(
            &ctx,
            1.0,
            3.0,
            &schedule,
            &batch,
            &cps,
            &eval.total,
        )
        .unwrap();
        assert!((fit.weights.full - 1.3).abs() < 1e-6);
        assert!((fit.weights.fit_noise - 0.7).abs() < 1e-4);
        assert!((fit.weights.label_noise - 2.1).abs() < 1e-6);
        assert!(fit.r2_log > 0.999999);
    }

    #[test]
    fn r_squared_perfect_and_flat() {
        let y = [1.0f64, 2.0, 3.0];
        assert!((r_squared(&y, &y, false) - 1.0).abs() < 1e-15);
        assert!(r_squared(&[1.0f64, 1.0], &[1.0, 1.0], false).is_nan());
    }
}
