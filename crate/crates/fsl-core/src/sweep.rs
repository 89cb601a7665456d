//! Data-limited sweep protocol: peak-rate scaling rules, per-budget schedule
//! construction, and log-log slope estimation.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{data_optimal, ScheduleFamily};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::ScheduleSpec;

/// Base constant of the peak-rate rule η_max = base · D^{-r}.
pub const DEFAULT_SWEEP_BASE: f64 = 0.05;

/// Default WSD decay fraction used in sweeps. Any interior fraction attains
/// the optimal rate in the easy regime; a large one keeps the decay-phase
/// intrinsic time out of the pre-asymptotic region at small budgets.
pub const DEFAULT_DECAY_FRACTION: f64 = 0.5;

/// Sweep settings for one schedule family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan<S: Scalar> {
    pub family: ScheduleFamily,
    /// Budgets D (steps at batch size 1).
    pub budgets: Vec<u64>,
    /// Base constant of the peak-rate rule.
    #[serde(default = "default_base")]
    pub base: S,
    /// WSD decay fraction K2/K.
    #[serde(default = "default_decay_fraction")]
    pub decay_fraction: S,
}

fn default_base<S: Scalar>() -> S {
    S::cst(DEFAULT_SWEEP_BASE)
}

fn default_decay_fraction<S: Scalar>() -> S {
    S::cst(DEFAULT_DECAY_FRACTION)
}

/// Peak-rate exponent r of η_max = base · D^{-r}: the magnitude of the
/// regime-appropriate optimal effective-learning-rate exponent (log factors
/// dropped). Constant schedules give r = s/(1+s); decaying schedules give
/// r = (1+sβ−β)/(1+sβ) in the easy regime and r = 0 in the hard regime.
pub fn peak_rate_exponent<S: Scalar>(family: ScheduleFamily, s: S, beta: S) -> Result<S> {
    let pred = data_optimal(family, s, beta)?;
    Ok(-pred.gamma_opt.exponent)
}

/// Peak rate η_max = base · D^{-r} for budget D.
pub fn peak_rate<S: Scalar>(family: ScheduleFamily, s: S, beta: S, base: S, d: u64) -> Result<S> {
    let r = peak_rate_exponent(family, s, beta)?;
    Ok(base * S::cst(d as f64).powf(-r))
}

/// Build the family's schedule for budget D at batch size one: K = D steps,
/// peak rate from the scaling rule, and for the decaying families a floor of
/// peak/K (so the decay ratio shrinks linearly in the budget).
pub fn sweep_schedule<S: Scalar>(plan: &SweepPlan<S>, s: S, beta: S, d: u64) -> Result<ScheduleSpec<S>> {
    if d < 2 {
        return Err(Error::InvalidSpec("sweep budgets must be >= 2".into()));
    }
    let k = d as usize;
    let peak = peak_rate(plan.family, s, beta, plan.base, d)?;
    match plan.family {
        ScheduleFamily::Constant => ScheduleSpec::constant(peak, k),
        ScheduleFamily::ExpDecay => ScheduleSpec::exp_decay(peak, peak / S::cst(d as f64), k),
        ScheduleFamily::Wsd => {
            let k2 = ((S::cst(d as f64) * plan.decay_fraction)
                .round()
                .to_usize()
                .unwrap_or(1))
            .clamp(1, k - 1);
            ScheduleSpec::wsd(peak, peak / S::cst(d as f64), k - k2, k2)
        }
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_loglog_slope<S: Scalar>(points: &[(S, S)]) -> Result<S> {
    if points.len() < 2 {
        return Err(Error::InvalidSpec("slope fit needs at least 2 points".into()));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if x <= S::zero() || y <= S::zero() {
            return Err(Error::Domain(
                "log-log slope requires positive coordinates".into(),
            ));
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    let n = S::of_usize(points.len());
    let mx = xs.iter().copied().sum::<S>() / n;
    let my = ys.iter().copied().sum::<S>() / n;
    let mut num = S::zero();
    let mut den = S::zero();
    for (x, y) in xs.iter().zip(&ys) {
        num += (*x - mx) * (*y - my);
        den += (*x - mx) * (*x - mx);
    }
    if den == S::zero() {
        return Err(Error::Domain("slope fit needs distinct x values".into()));
    }
    Ok(num / den)
}
