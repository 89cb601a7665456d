//! Learning-rate and batch-size schedules, and the intrinsic-time transform
//! that converts physical steps into cumulative learning-rate mass.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A learning-rate schedule over a finite horizon of steps, indexed 1..=K.
///
/// Rates are dimensionless positive reals. Analytic kinds (constant,
/// exponential decay, warmup-stable-decay, cosine) expose exact intrinsic-time
/// transforms; tabulated and multi-step kinds use cumulative summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec<S: Scalar> {
    /// Fixed rate for `steps` steps.
    Constant { rate: S, steps: usize },
    /// η_k = peak · exp(−λ k) with λ = ln(peak/floor)/K, so η_K = floor.
    ExpDecay { peak: S, floor: S, steps: usize },
    /// Stable phase at `peak` for `stable_steps`, then exponential decay to
    /// `floor` over `decay_steps`.
    Wsd {
        peak: S,
        floor: S,
        stable_steps: usize,
        decay_steps: usize,
    },
    /// η_k = (1+ρ)/2 · peak + (1−ρ)/2 · peak · cos(π (k−1)/(K−1)), ending at
    /// ρ · peak. `min_ratio` is ρ, conventionally 0.1.
    Cosine { peak: S, min_ratio: S, steps: usize },
    /// Piecewise-constant stages: `boundaries` are the stage end steps
    /// (strictly increasing, last one is the horizon), `rates` the per-stage
    /// rates (non-increasing).
    MultiStep {
        boundaries: Vec<usize>,
        rates: Vec<S>,
    },
    /// Explicit per-step rates η_1..η_K.
    Tabulated { rates: Vec<S> },
}

/// Default cosine floor ratio ρ, giving a minimum rate of peak/10.
pub const COSINE_DEFAULT_MIN_RATIO: f64 = 0.1;

impl<S: Scalar> ScheduleSpec<S> {
    pub fn constant(rate: S, steps: usize) -> Result<Self> {
        let s = ScheduleSpec::Constant { rate, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn exp_decay(peak: S, floor: S, steps: usize) -> Result<Self> {
        let s = ScheduleSpec::ExpDecay { peak, floor, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn wsd(peak: S, floor: S, stable_steps: usize, decay_steps: usize) -> Result<Self> {
        let s = ScheduleSpec::Wsd {
            peak,
            floor,
            stable_steps,
            decay_steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// Cosine schedule with the conventional ρ = 0.1 floor.
    pub fn cosine(peak: S, steps: usize) -> Result<Self> {
        Self::cosine_with_ratio(peak, S::cst(COSINE_DEFAULT_MIN_RATIO), steps)
    }

    pub fn cosine_with_ratio(peak: S, min_ratio: S, steps: usize) -> Result<Self> {
        let s = ScheduleSpec::Cosine {
            peak,
            min_ratio,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn multi_step(boundaries: Vec<usize>, rates: Vec<S>) -> Result<Self> {
        let s = ScheduleSpec::MultiStep { boundaries, rates };
        s.validate()?;
        Ok(s)
    }

    pub fn tabulated(rates: Vec<S>) -> Result<Self> {
        let s = ScheduleSpec::Tabulated { rates };
        s.validate()?;
        Ok(s)
    }

    /// The 8-1-1 multi-step schedule: peak rate for 80% of steps, then
    /// peak/sqrt(10) until 90%, then peak/10.
    pub fn multi_step_811(peak: S, steps: usize) -> Result<Self> {
        let k1 = steps * 8 / 10;
        let k2 = steps * 9 / 10;
        let r10 = S::cst(10.0).sqrt();
        Self::multi_step(
            vec![k1, k2, steps],
            vec![peak, peak / r10, peak / S::cst(10.0)],
        )
    }

    /// Check the structural invariants of the schedule.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            ScheduleSpec::Constant { rate, steps } => {
                if !rate.is_finite() || *rate < S::zero() {
                    return fail(format!("constant rate must be >= 0, got {rate}"));
                }
                if *steps == 0 {
                    return fail("horizon must be at least one step".into());
                }
            }
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                if !(peak.is_finite() && floor.is_finite()) || *floor <= S::zero() || peak < floor
                {
                    return fail(format!(
                        "exp decay requires peak >= floor > 0, got peak = {peak}, floor = {floor}"
                    ));
                }
                if *steps == 0 {
                    return fail("horizon must be at least one step".into());
                }
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                decay_steps,
                ..
            } => {
                if !(peak.is_finite() && floor.is_finite()) || *floor <= S::zero() || peak < floor
                {
                    return fail(format!(
                        "wsd requires peak >= floor > 0, got peak = {peak}, floor = {floor}"
                    ));
                }
                if *decay_steps == 0 {
                    return fail("wsd decay phase must have at least one step".into());
                }
            }
            ScheduleSpec::Cosine {
                peak,
                min_ratio,
                steps,
            } => {
                if !peak.is_finite() || *peak <= S::zero() {
                    return fail(format!("cosine peak must be > 0, got {peak}"));
                }
                if *min_ratio < S::zero() || *min_ratio > S::one() {
                    return fail(format!("cosine min ratio must lie in [0, 1], got {min_ratio}"));
                }
                if *steps == 0 {
                    return fail("horizon must be at least one step".into());
                }
            }
            ScheduleSpec::MultiStep { boundaries, rates } => {
                if boundaries.is_empty() || boundaries.len() != rates.len() {
                    return fail("multi-step boundaries and rates must be equal-length and nonempty".into());
                }
                let mut prev = 0usize;
                for &b in boundaries {
                    if b <= prev {
                        return fail("multi-step boundaries must be strictly increasing".into());
                    }
                    prev = b;
                }
                for w in rates.windows(2) {
                    if w[1] > w[0] {
                        return fail("multi-step rates must be non-increasing".into());
                    }
                }
                if rates.iter().any(|r| !r.is_finite() || *r < S::zero()) {
                    return fail("multi-step rates must be finite and >= 0".into());
                }
            }
            ScheduleSpec::Tabulated { rates } => {
                if rates.is_empty() {
                    return fail("tabulated schedule must have at least one step".into());
                }
                if rates.iter().any(|r| !r.is_finite() || *r < S::zero()) {
                    return fail("tabulated rates must be finite and >= 0".into());
                }
            }
        }
        Ok(())
    }

    /// Total number of steps K.
    pub fn horizon(&self) -> usize {
        match self {
            ScheduleSpec::Constant { steps, .. }
            | ScheduleSpec::ExpDecay { steps, .. }
            | ScheduleSpec::Cosine { steps, .. } => *steps,
            ScheduleSpec::Wsd {
                stable_steps,
                decay_steps,
                ..
            } => stable_steps + decay_steps,
            ScheduleSpec::MultiStep { boundaries, .. } => *boundaries.last().unwrap(),
            ScheduleSpec::Tabulated { rates } => rates.len(),
        }
    }

    /// Learning rate at step k (1-based).
    pub fn eta_at(&self, k: usize) -> Result<S> {
        let horizon = self.horizon();
        if k == 0 || k > horizon {
            return Err(Error::StepOutOfRange { step: k, horizon });
        }
        Ok(match self {
            ScheduleSpec::Constant { rate, .. } => *rate,
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                let lambda = decay_lambda(*peak, *floor, *steps);
                *peak * (-lambda * S::of_usize(k)).exp()
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                stable_steps,
                decay_steps,
            } => {
                if k <= *stable_steps {
                    *peak
                } else {
                    let lambda = decay_lambda(*peak, *floor, *decay_steps);
                    *peak * (-lambda * S::of_usize(k - stable_steps)).exp()
                }
            }
            ScheduleSpec::Cosine {
                peak,
                min_ratio,
                steps,
            } => {
                if *steps == 1 {
                    *peak
                } else {
                    let half = S::cst(0.5);
                    let phase = S::PI() * S::of_usize(k - 1) / S::of_usize(steps - 1);
                    half * (S::one() + *min_ratio) * *peak
                        + half * (S::one() - *min_ratio) * *peak * phase.cos()
                }
            }
            ScheduleSpec::MultiStep { boundaries, rates } => {
                let stage = boundaries.partition_point(|&b| b < k);
                rates[stage]
            }
            ScheduleSpec::Tabulated { rates } => rates[k - 1],
        })
    }

    /// All rates η_1..η_K.
    pub fn rates(&self) -> Vec<S> {
        (1..=self.horizon())
            .map(|k| self.eta_at(k).expect("k within horizon"))
            .collect()
    }

    /// Cumulative sums t_k = Σ_{j<=k} η_j with t_0 = 0; length K + 1.
    ///
    /// These are the intrinsic-time grid nodes the discrete-step machinery
    /// (convolution evaluation, ansatz) works on.
    pub fn cumulative_times(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.horizon() + 1);
        let mut acc = S::zero();
        out.push(acc);
        for eta in self.rates() {
            acc += eta;
            out.push(acc);
        }
        out
    }

    /// Continuous rate function φ at physical position τ (in step units).
    ///
    /// Analytic kinds use their closed forms; step-wise kinds hold the rate of
    /// the step in effect, φ(τ) = η_⌈τ⌉.
    pub fn phi(&self, tau: S) -> Result<S> {
        if tau < S::zero() || tau > S::of_usize(self.horizon()) {
            return Err(Error::Domain(format!(
                "position {tau} outside schedule horizon {}",
                self.horizon()
            )));
        }
        Ok(match self {
            ScheduleSpec::Constant { rate, .. } => *rate,
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                let lambda = decay_lambda(*peak, *floor, *steps);
                *peak * (-lambda * tau).exp()
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                stable_steps,
                decay_steps,
            } => {
                let t1 = S::of_usize(*stable_steps);
                if tau <= t1 {
                    *peak
                } else {
                    let lambda = decay_lambda(*peak, *floor, *decay_steps);
                    *peak * (-lambda * (tau - t1)).exp()
                }
            }
            ScheduleSpec::Cosine { .. } | ScheduleSpec::MultiStep { .. } | ScheduleSpec::Tabulated { .. } => {
                let k = step_in_effect(tau, self.horizon());
                self.eta_at(k)?
            }
        })
    }

    /// Total intrinsic time T(K) = ∫_0^K φ.
    ///
    /// Closed forms: constant ηK; exp decay (a−b)K/ln(a/b), degenerating to
    /// aK at a = b; WSD aK1 + (a−b)K2/ln(a/b); cosine integrates its formula.
    /// Step-wise kinds sum their rates.
    pub fn total_intrinsic_time(&self) -> S {
        match self {
            ScheduleSpec::Constant { rate, steps } => *rate * S::of_usize(*steps),
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                decay_phase_time(*peak, *floor, *steps)
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                stable_steps,
                decay_steps,
            } => *peak * S::of_usize(*stable_steps) + decay_phase_time(*peak, *floor, *decay_steps),
            ScheduleSpec::Cosine { steps, .. } => {
                self.cosine_integral(S::of_usize(*steps)).unwrap()
            }
            ScheduleSpec::MultiStep { .. } | ScheduleSpec::Tabulated { .. } => {
                self.rates().into_iter().sum()
            }
        }
    }

    /// ∫_0^τ of the continuous cosine rate; only valid for the cosine kind.
    fn cosine_integral(&self, tau: S) -> Result<S> {
        let ScheduleSpec::Cosine {
            peak,
            min_ratio,
            steps,
        } = self
        else {
            return Err(Error::Unsupported("cosine integral on non-cosine schedule".into()));
        };
        if *steps == 1 {
            return Ok(*peak * tau);
        }
        let half = S::cst(0.5);
        let span = S::of_usize(steps - 1);
        let base = half * (S::one() + *min_ratio) * *peak * tau;
        // ∫ cos(π (r−1)/span) dr = span/π [sin(π (τ−1)/span) − sin(−π/span)]
        let pi = S::PI();
        let osc = half * (S::one() - *min_ratio) * *peak * span / pi
            * ((pi * (tau - S::one()) / span).sin() - (-pi / span).sin());
        Ok(base + osc)
    }
}

/// λ = ln(peak/floor)/K; zero when peak == floor.
fn decay_lambda<S: Scalar>(peak: S, floor: S, steps: usize) -> S {
    if peak == floor {
        S::zero()
    } else {
        (peak / floor).ln() / S::of_usize(steps)
    }
}

/// Intrinsic time of a pure exponential-decay phase, (a−b)K/ln(a/b).
fn decay_phase_time<S: Scalar>(peak: S, floor: S, steps: usize) -> S {
    if peak == floor {
        peak * S::of_usize(steps)
    } else {
        (peak - floor) * S::of_usize(steps) / (peak / floor).ln()
    }
}

/// Index of the step in effect at continuous position τ: ⌈τ⌉ clamped to 1..=K.
fn step_in_effect<S: Scalar>(tau: S, horizon: usize) -> usize {
    let k = tau.ceil().to_usize().unwrap_or(1);
    k.clamp(1, horizon)
}

/// Per-step batch sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchSchedule {
    /// Fixed batch size.
    ConstantB { batch: usize },
    /// Explicit per-step batch sizes B_1..B_K.
    Tabulated { batches: Vec<usize> },
}

impl BatchSchedule {
    pub fn constant(batch: usize) -> Result<Self> {
        let b = BatchSchedule::ConstantB { batch };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            BatchSchedule::ConstantB { batch } => *batch >= 1,
            BatchSchedule::Tabulated { batches } => {
                !batches.is_empty() && batches.iter().all(|&b| b >= 1)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("batch sizes must be >= 1".into()))
        }
    }

    /// Batch size at step k (1-based). Tabulated schedules clamp to their
    /// last entry past the end.
    pub fn batch_at(&self, k: usize) -> usize {
        match self {
            BatchSchedule::ConstantB { batch } => *batch,
            BatchSchedule::Tabulated { batches } => {
                let idx = k.saturating_sub(1).min(batches.len() - 1);
                batches[idx]
            }
        }
    }
}

impl Default for BatchSchedule {
    fn default() -> Self {
        BatchSchedule::ConstantB { batch: 1 }
    }
}

/// A schedule together with the discretization step size h.
///
/// Physical time τ advances by h per step; with schedules specified per step,
/// intrinsic time depends only on τ/h, so h = 1 (the default) makes intrinsic
/// time the cumulative learning-rate sum on the step grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicClock<S: Scalar> {
    pub schedule: ScheduleSpec<S>,
    pub h: S,
}

impl<S: Scalar> IntrinsicClock<S> {
    pub fn new(schedule: ScheduleSpec<S>) -> Self {
        IntrinsicClock {
            schedule,
            h: S::one(),
        }
    }

    pub fn with_h(schedule: ScheduleSpec<S>, h: S) -> Result<Self> {
        if h <= S::zero() || !h.is_finite() {
            return Err(Error::InvalidSpec(format!("step size h must be > 0, got {h}")));
        }
        Ok(IntrinsicClock { schedule, h })
    }

    /// T(τ) = ∫_0^τ φ(r) dr for physical time τ ∈ [0, K·h].
    pub fn intrinsic_time(&self, tau: S) -> Result<S> {
        if tau < S::zero() || !tau.is_finite() {
            return Err(Error::Domain(format!("physical time must be >= 0, got {tau}")));
        }
        let x = tau / self.h; // step coordinate
        let horizon = S::of_usize(self.schedule.horizon());
        if x > horizon * (S::one() + S::epsilon() * S::cst(16.0)) {
            return Err(Error::Domain(format!(
                "physical time {tau} beyond schedule horizon"
            )));
        }
        let x = x.min(horizon);
        Ok(match &self.schedule {
            ScheduleSpec::Constant { rate, .. } => *rate * x,
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                let lambda = decay_lambda(*peak, *floor, *steps);
                if lambda == S::zero() {
                    *peak * x
                } else {
                    *peak / lambda * (S::one() - (-lambda * x).exp())
                }
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                stable_steps,
                decay_steps,
            } => {
                let t1 = S::of_usize(*stable_steps);
                if x <= t1 {
                    *peak * x
                } else {
                    let lambda = decay_lambda(*peak, *floor, *decay_steps);
                    let decay = if lambda == S::zero() {
                        *peak * (x - t1)
                    } else {
                        *peak / lambda * (S::one() - (-lambda * (x - t1)).exp())
                    };
                    *peak * t1 + decay
                }
            }
            ScheduleSpec::Cosine { .. } => self.schedule.cosine_integral(x)?,
            ScheduleSpec::MultiStep { .. } | ScheduleSpec::Tabulated { .. } => {
                let whole = x.floor();
                let k = whole.to_usize().unwrap();
                let mut acc = S::zero();
                for j in 1..=k {
                    acc += self.schedule.eta_at(j)?;
                }
                if x > whole {
                    acc += (x - whole) * self.schedule.phi(x)?;
                }
                acc
            }
        })
    }

    /// Total intrinsic time T(K·h).
    pub fn total_intrinsic_time(&self) -> S {
        self.schedule.total_intrinsic_time()
    }

    /// Inverse transform: the physical time τ with T(τ) = t.
    ///
    /// Exact for constant, exponential decay, WSD, and the step-wise kinds;
    /// bisection on the monotone map for cosine.
    pub fn inverse_intrinsic_time(&self, t: S) -> Result<S> {
        if t < S::zero() || !t.is_finite() {
            return Err(Error::Domain(format!("intrinsic time must be >= 0, got {t}")));
        }
        let total = self.total_intrinsic_time();
        if t > total * (S::one() + S::cst(1e-12)) {
            return Err(Error::Domain(format!(
                "intrinsic time {t} beyond schedule total {total}"
            )));
        }
        let t = t.min(total);
        let x = match &self.schedule {
            ScheduleSpec::Constant { rate, .. } => {
                if *rate == S::zero() {
                    S::zero()
                } else {
                    t / *rate
                }
            }
            ScheduleSpec::ExpDecay { peak, floor, steps } => {
                let lambda = decay_lambda(*peak, *floor, *steps);
                if lambda == S::zero() {
                    t / *peak
                } else {
                    -(ct_ln_1p(-lambda * t / *peak)) / lambda
                }
            }
            ScheduleSpec::Wsd {
                peak,
                floor,
                stable_steps,
                decay_steps,
            } => {
                let t1 = *peak * S::of_usize(*stable_steps);
                if t <= t1 {
                    t / *peak
                } else {
                    let lambda = decay_lambda(*peak, *floor, *decay_steps);
                    let rem = t - t1;
                    let offset = if lambda == S::zero() {
                        rem / *peak
                    } else {
                        -(ct_ln_1p(-lambda * rem / *peak)) / lambda
                    };
                    S::of_usize(*stable_steps) + offset
                }
            }
            ScheduleSpec::MultiStep { .. } | ScheduleSpec::Tabulated { .. } => {
                let times = self.schedule.cumulative_times();
                // first k with t_k >= t
                let k = times.partition_point(|&tk| tk < t);
                if k == 0 {
                    S::zero()
                } else {
                    let eta = self.schedule.eta_at(k)?;
                    let frac = if eta == S::zero() {
                        S::one()
                    } else {
                        (t - times[k - 1]) / eta
                    };
                    S::of_usize(k - 1) + frac.min(S::one())
                }
            }
            ScheduleSpec::Cosine { steps, .. } => {
                let mut lo = S::zero();
                let mut hi = S::of_usize(*steps);
                for _ in 0..200 {
                    let mid = (lo + hi) * S::cst(0.5);
                    if self.schedule.cosine_integral(mid)? < t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= S::epsilon() * hi.max(S::one()) {
                        break;
                    }
                }
                (lo + hi) * S::cst(0.5)
            }
        };
        Ok(x * self.h)
    }

    /// Effective gradient-noise intensity at intrinsic time t:
    /// γ(t) = h·φ(T⁻¹(t)) / b(T⁻¹(t)), which is η/B at the step in effect.
    pub fn gamma_adjust(&self, batch: &BatchSchedule, t: S) -> Result<S> {
        let tau = self.inverse_intrinsic_time(t)?;
        let x = tau / self.h;
        let eta = self.h * self.schedule.phi(x)?; // h·φ = η in step coordinates
        let k = step_in_effect(x, self.schedule.horizon());
        Ok(eta / S::of_usize(batch.batch_at(k)))
    }
}

/// Load a tabulated schedule from CSV with header `step,lr`, steps ascending
/// from 1 without gaps.
pub fn tabulated_from_csv<S: Scalar, R: Read>(reader: R) -> Result<ScheduleSpec<S>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let step_idx = headers
        .iter()
        .position(|h| h == "step")
        .ok_or_else(|| Error::Csv("missing column `step`".into()))?;
    let lr_idx = headers
        .iter()
        .position(|h| h == "lr")
        .ok_or_else(|| Error::Csv("missing column `lr`".into()))?;
    let mut rates = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let step: usize = record
            .get(step_idx)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Csv(format!("row {}: bad step value", row + 1)))?;
        if step != row + 1 {
            return Err(Error::Csv(format!(
                "row {}: steps must ascend from 1 without gaps, got {step}",
                row + 1
            )));
        }
        let lr: f64 = record
            .get(lr_idx)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Csv(format!("row {}: bad lr value", row + 1)))?;
        rates.push(S::cst(lr));
    }
    ScheduleSpec::tabulated(rates)
}

/// Load a tabulated schedule from a CSV file path.
pub fn tabulated_from_csv_path<S: Scalar, P: AsRef<Path>>(path: P) -> Result<ScheduleSpec<S>> {
    tabulated_from_csv(std::fs::File::open(path)?)
}

/// Write any schedule as tabulated CSV `step,lr`.
pub fn schedule_to_csv<S: Scalar, W: std::io::Write>(
    schedule: &ScheduleSpec<S>,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["step", "lr"])?;
    for (k, eta) in schedule.rates().iter().enumerate() {
        wtr.write_record([format!("{}", k + 1), format!("{eta:.17e}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// ln(1 + x) with the naming kept away from the std method for clarity in
/// the generic context.
fn ct_ln_1p<S: Scalar>(x: S) -> S {
    x.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock(s: ScheduleSpec<f64>) -> IntrinsicClock<f64> {
        IntrinsicClock::new(s)
    }

    #[test]
    fn constant_eta_and_time() {
        let s = ScheduleSpec::constant(0.05, 1000).unwrap();
        assert_eq!(s.eta_at(7).unwrap(), 0.05);
        let c = clock(s);
        assert_eq!(c.intrinsic_time(0.0).unwrap(), 0.0);
        assert!((c.intrinsic_time(1000.0).unwrap() - 50.0).abs() < 1e-12);
        assert!((c.inverse_intrinsic_time(50.0).unwrap() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn exp_decay_hits_floor_at_horizon() {
        let s = ScheduleSpec::<f64>::exp_decay(0.1, 0.001, 1000).unwrap();
        assert!((s.eta_at(1000).unwrap() - 0.001).abs() < 1e-15);
        let expected = (0.1 - 0.001) * 1000.0 / (0.1f64 / 0.001).ln();
        assert!((s.total_intrinsic_time() - expected).abs() < 1e-12);
    }

    #[test]
    fn exp_decay_equal_rates_degenerates_to_constant() {
        let s = ScheduleSpec::<f64>::exp_decay(0.05, 0.05, 200).unwrap();
        assert_eq!(s.eta_at(37).unwrap(), 0.05);
        assert!((s.total_intrinsic_time() - 10.0).abs() < 1e-14);
    }

    #[test]
    fn wsd_stable_phase_holds_peak() {
        let s = ScheduleSpec::<f64>::wsd(0.1, 0.001, 800, 200).unwrap();
        assert_eq!(s.eta_at(400).unwrap(), 0.1);
        assert!((s.eta_at(1000).unwrap() - 0.001).abs() < 1e-15);
        // stable-phase intrinsic time
        let c = clock(s);
        assert!((c.intrinsic_time(800.0).unwrap() - 80.0).abs() < 1e-12);
    }

    #[test]
    fn wsd_with_empty_stable_phase_matches_exp_decay() {
        let w = ScheduleSpec::<f64>::wsd(0.1, 0.001, 0, 200).unwrap();
        let e = ScheduleSpec::exp_decay(0.1, 0.001, 200).unwrap();
        assert!((w.total_intrinsic_time() - e.total_intrinsic_time()).abs() < 1e-14);
    }

    #[test]
    fn cosine_endpoints() {
        let s = ScheduleSpec::<f64>::cosine(0.05, 100).unwrap();
        assert!((s.eta_at(1).unwrap() - 0.05).abs() < 1e-15);
        assert!((s.eta_at(100).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn multi_step_811_stages() {
        let s = ScheduleSpec::<f64>::multi_step_811(0.1, 1000).unwrap();
        assert_eq!(s.eta_at(800).unwrap(), 0.1);
        assert!((s.eta_at(801).unwrap() - 0.1 / 10f64.sqrt()).abs() < 1e-15);
        assert!((s.eta_at(950).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn tabulated_inverse_on_cumulative_sums() {
        let s = ScheduleSpec::tabulated(vec![0.1, 0.2, 0.3]).unwrap();
        let c = clock(s);
        assert!((c.inverse_intrinsic_time(0.3).unwrap() - 2.0).abs() < 1e-12);
        assert!((c.inverse_intrinsic_time(0.6).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eta_out_of_range() {
        let s = ScheduleSpec::constant(0.05, 10).unwrap();
        assert!(matches!(s.eta_at(0), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.eta_at(11), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn negative_times_rejected() {
        let c = clock(ScheduleSpec::constant(0.05, 10).unwrap());
        assert!(c.intrinsic_time(-1.0).is_err());
        assert!(c.inverse_intrinsic_time(-0.5).is_err());
        assert!(c.inverse_intrinsic_time(1.0).is_err()); // beyond total 0.5
    }

    #[test]
    fn gamma_adjust_constant_is_eta_over_batch() {
        let c = clock(ScheduleSpec::constant(0.08, 100).unwrap());
        let b = BatchSchedule::constant(4).unwrap();
        for t in [0.0, 1.0, 5.0, 7.9] {
            assert!((c.gamma_adjust(&b, t).unwrap() - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn gamma_adjust_exp_decay_is_linear_in_intrinsic_time() {
        // γ(t) = a − λ t for exponential decay
        let (a, b, k) = (0.1f64, 0.001f64, 1000usize);
        let s = ScheduleSpec::exp_decay(a, b, k).unwrap();
        let lambda = (a / b).ln() / k as f64;
        let c = clock(s);
        let batch = BatchSchedule::default();
        for t in [0.0, 5.0, 12.0, 20.0] {
            let got = c.gamma_adjust(&batch, t).unwrap();
            assert!((got - (a - lambda * t)).abs() < 1e-12, "t={t}: {got}");
        }
    }

    #[test]
    fn batch_scaling_halves_gamma() {
        let s = ScheduleSpec::exp_decay(0.1, 0.01, 100).unwrap();
        let c = clock(s);
        let b1 = BatchSchedule::constant(1).unwrap();
        let b4 = BatchSchedule::constant(4).unwrap();
        for t in [0.0, 1.0, 3.0] {
            let g1 = c.gamma_adjust(&b1, t).unwrap();
            let g4 = c.gamma_adjust(&b4, t).unwrap();
            assert!((g4 - g1 / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = ScheduleSpec::cosine(0.05, 20).unwrap();
        let mut buf = Vec::new();
        schedule_to_csv(&s, &mut buf).unwrap();
        let back: ScheduleSpec<f64> = tabulated_from_csv(buf.as_slice()).unwrap();
        for k in 1..=20 {
            assert!((s.eta_at(k).unwrap() - back.eta_at(k).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_rejects_gaps_and_missing_columns() {
        let bad = "step,lr\n1,0.1\n3,0.2\n";
        assert!(tabulated_from_csv::<f64, _>(bad.as_bytes()).is_err());
        let missing = "step,rate\n1,0.1\n";
        let err = tabulated_from_csv::<f64, _>(missing.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("lr"));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ScheduleSpec::exp_decay(0.001, 0.1, 10).is_err());
        assert!(ScheduleSpec::exp_decay(0.1, 0.0, 10).is_err());
        assert!(ScheduleSpec::constant(-0.1, 10).is_err());
        assert!(ScheduleSpec::multi_step(vec![5, 3], vec![0.1, 0.2]).is_err());
        assert!(ScheduleSpec::multi_step(vec![3, 5], vec![0.1, 0.2]).is_err());
        assert!(ScheduleSpec::tabulated(Vec::<f64>::new()).is_err());
    }

    #[test]
    fn serde_schedule_json() {
        let s = ScheduleSpec::exp_decay(0.1, 0.001, 50).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: ScheduleSpec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        // unknown keys inside a variant are rejected
        let bad = r#"{"exp_decay":{"peak":0.1,"floor":0.001,"steps":50,"warmup":5}}"#;
        assert!(serde_json::from_str::<ScheduleSpec<f64>>(bad).is_err());
    }
}
