//! Closed-form scaling-law calculators: regime classification, final-risk
//! formulas for the three analyzed schedule families, and the data- and
//! compute-optimal exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::ScheduleSpec;
use crate::task::Extent;

/// Learning-regime label. Easy iff s >= 1 − 1/β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Easy,
    Hard,
}

/// Schedule family the closed forms are derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Constant,
    ExpDecay,
    Wsd,
}

impl ScheduleFamily {
    pub const ALL: [ScheduleFamily; 3] = [
        ScheduleFamily::Constant,
        ScheduleFamily::ExpDecay,
        ScheduleFamily::Wsd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleFamily::Constant => "constant",
            ScheduleFamily::ExpDecay => "exp_decay",
            ScheduleFamily::Wsd => "wsd",
        }
    }
}

/// Classify the learning regime; the boundary s = 1 − 1/β counts as easy.
pub fn classify_regime<S: Scalar>(s: S, beta: S) -> Regime {
    if s >= S::one() - S::one() / beta {
        Regime::Easy
    } else {
        Regime::Hard
    }
}

/// A power law with an explicit log factor: value ∝ X^exponent · (log X)^log_exponent.
///
/// Log factors are kept symbolic rather than folded into numerics, so slope
/// tests can tolerate them explicitly. `(X/log X)^e` is represented as
/// exponent e with log_exponent −e.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw<S: Scalar> {
    pub exponent: S,
    pub log_exponent: S,
}

impl<S: Scalar> PowerLaw<S> {
    pub fn plain(exponent: S) -> Self {
        PowerLaw {
            exponent,
            log_exponent: S::zero(),
        }
    }

    /// X^e (log X)^{-e}, i.e. (X/log X)^e.
    pub fn over_log(exponent: S) -> Self {
        PowerLaw {
            exponent,
            log_exponent: -exponent,
        }
    }

    pub fn with_log(exponent: S, log_exponent: S) -> Self {
        PowerLaw {
            exponent,
            log_exponent,
        }
    }

    /// Constant order: X^0.
    pub fn order_one() -> Self {
        PowerLaw::plain(S::zero())
    }

    /// Evaluate at budget X (X > 1 so the log factor is positive).
    pub fn eval(&self, x: S) -> S {
        x.powf(self.exponent) * x.ln().powf(self.log_exponent)
    }
}

/// Optimal model size as a function of the budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalModelSize<S: Scalar> {
    /// Any sufficiently large M; the formulas saturate at M = ∞.
    Infinite,
    /// M_opt ∝ the given power law.
    Power(PowerLaw<S>),
    /// Lower bound: M ≳ the given power law suffices.
    AtLeast(PowerLaw<S>),
}

/// Optimal decay fraction r = K2/K for WSD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFraction<S: Scalar> {
    /// Any fixed fraction in (0, 1) attains the rate.
    Interior,
    /// r ≳ the given power law suffices (shrinking with the budget).
    AtLeast(PowerLaw<S>),
}

/// Budget the prediction is optimal for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Data,
    Compute,
}

/// Optimal scaling of risk and hyperparameters under a budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPrediction<S: Scalar> {
    pub family: ScheduleFamily,
    pub budget: Budget,
    pub regime: Regime,
    /// Optimal excess risk as a power of the budget (exponent < 0).
    pub risk: PowerLaw<S>,
    /// Optimal effective learning rate γ = η/B (or peak rate a/B).
    pub gamma_opt: PowerLaw<S>,
    pub model_size_opt: OptimalModelSize<S>,
    /// Optimal data size (compute budget only).
    pub data_opt: Option<PowerLaw<S>>,
    /// Optimal decay fraction (WSD only).
    pub decay_fraction: Option<DecayFraction<S>>,
}

/// Data-optimal scaling under budget D = B·K.
pub fn data_optimal<S: Scalar>(family: ScheduleFamily, s: S, beta: S) -> Result<ScalingPrediction<S>> {
    check_exponents(s, beta)?;
    let regime = classify_regime(s, beta);
    let one = S::one();
    let sb = s * beta;
    let pred = match (family, regime) {
        (ScheduleFamily::Constant, _) => {
            let e = -s / (s + one);
            ScalingPrediction {
                family,
                budget: Budget::Data,
                regime,
                risk: PowerLaw::plain(e),
                gamma_opt: PowerLaw::plain(e),
                model_size_opt: OptimalModelSize::AtLeast(PowerLaw::plain(
                    one / ((one + s) * beta),
                )),
                data_opt: None,
                decay_fraction: None,
            }
        }
        (ScheduleFamily::ExpDecay, Regime::Easy) => ScalingPrediction {
            family,
            budget: Budget::Data,
            regime,
            risk: PowerLaw::over_log(-sb / (one + sb)),
            gamma_opt: PowerLaw::over_log(-(one + sb - beta) / (one + sb)),
            model_size_opt: OptimalModelSize::Infinite,
            data_opt: None,
            decay_fraction: None,
        },
        (ScheduleFamily::ExpDecay, Regime::Hard) => ScalingPrediction {
            family,
            budget: Budget::Data,
            regime,
            risk: PowerLaw::over_log(-s),
            gamma_opt: PowerLaw::order_one(),
            model_size_opt: OptimalModelSize::Infinite,
            data_opt: None,
            decay_fraction: None,
        },
        (ScheduleFamily::Wsd, Regime::Easy) => ScalingPrediction {
            family,
            budget: Budget::Data,
            regime,
            risk: PowerLaw::with_log(-sb / (one + sb), (sb - s) / (one + sb)),
            gamma_opt: PowerLaw::with_log(
                -(one + sb - beta) / (one + sb),
                (beta - one) / (one + sb),
            ),
            model_size_opt: OptimalModelSize::Infinite,
            data_opt: None,
            decay_fraction: Some(DecayFraction::Interior),
        },
        (ScheduleFamily::Wsd, Regime::Hard) => ScalingPrediction {
            family,
            budget: Budget::Data,
            regime,
            risk: PowerLaw::plain(-s),
            gamma_opt: PowerLaw::order_one(),
            model_size_opt: OptimalModelSize::Infinite,
            data_opt: None,
            decay_fraction: Some(DecayFraction::AtLeast(PowerLaw::with_log(
                -(beta - one - sb) / (beta - one),
                one,
            ))),
        },
    };
    Ok(pred)
}

/// Compute-optimal scaling under budget C = M·D.
pub fn compute_optimal<S: Scalar>(
    family: ScheduleFamily,
    s: S,
    beta: S,
) -> Result<ScalingPrediction<S>> {
    check_exponents(s, beta)?;
    let regime = classify_regime(s, beta);
    let one = S::one();
    let sb = s * beta;
    let pred = match (family, regime) {
        (ScheduleFamily::Constant, _) => {
            let denom = one + sb + beta;
            ScalingPrediction {
                family,
                budget: Budget::Compute,
                regime,
                risk: PowerLaw::plain(-sb / denom),
                gamma_opt: PowerLaw::plain(-sb / denom),
                model_size_opt: OptimalModelSize::Power(PowerLaw::plain(one / denom)),
                data_opt: Some(PowerLaw::plain((s + one) * beta / denom)),
                decay_fraction: None,
            }
        }
        (ScheduleFamily::ExpDecay, Regime::Easy) => {
            let denom = S::cst(2.0) + sb;
            ScalingPrediction {
                family,
                budget: Budget::Compute,
                regime,
                risk: PowerLaw::over_log(-sb / denom),
                gamma_opt: PowerLaw::over_log(-(one + sb - beta) / denom),
                model_size_opt: OptimalModelSize::Power(PowerLaw::over_log(one / denom)),
                data_opt: Some(PowerLaw::with_log((one + sb) / denom, one / denom)),
                decay_fraction: None,
            }
        }
        (ScheduleFamily::ExpDecay, Regime::Hard) => {
            let denom = one + beta;
            ScalingPrediction {
                family,
                budget: Budget::Compute,
                regime,
                risk: PowerLaw::over_log(-sb / denom),
                gamma_opt: PowerLaw::order_one(),
                model_size_opt: OptimalModelSize::Power(PowerLaw::over_log(one / denom)),
                data_opt: Some(PowerLaw::with_log(beta / denom, one / denom)),
                decay_fraction: None,
            }
        }
        (ScheduleFamily::Wsd, Regime::Easy) => {
            let denom = S::cst(2.0) + sb;
            ScalingPrediction {
                family,
                budget: Budget::Compute,
                regime,
                risk: PowerLaw::with_log(-sb / denom, (sb - s) / denom),
                gamma_opt: PowerLaw::over_log(-(one + sb - beta) / denom),
                model_size_opt: OptimalModelSize::Power(PowerLaw::over_log(one / denom)),
                data_opt: Some(PowerLaw::with_log((one + sb) / denom, one / denom)),
                decay_fraction: Some(DecayFraction::Interior),
            }
        }
        (ScheduleFamily::Wsd, Regime::Hard) => {
            let denom = one + beta;
            ScalingPrediction {
                family,
                budget: Budget::Compute,
                regime,
                risk: PowerLaw::plain(-sb / denom),
                gamma_opt: PowerLaw::order_one(),
                model_size_opt: OptimalModelSize::Power(PowerLaw::plain(one / denom)),
                data_opt: Some(PowerLaw::plain(beta / denom)),
                decay_fraction: Some(DecayFraction::AtLeast(PowerLaw::with_log(
                    -(beta - one - sb) / (beta - one),
                    one,
                ))),
            }
        }
    };
    Ok(pred)
}

fn check_exponents<S: Scalar>(s: S, beta: S) -> Result<()> {
    if s <= S::zero() || !s.is_finite() {
        return Err(Error::Domain(format!("s must be > 0, got {s}")));
    }
    if beta <= S::one() || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be > 1, got {beta}")));
    }
    Ok(())
}

/// Closed-form final excess risk with its component decomposition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RiskFormula<S: Scalar> {
    pub total: S,
    pub approx: S,
    pub full_batch: S,
    pub noise: S,
    /// Set when s lies outside the guaranteed scope (0, 2 − 1/β].
    pub scope_warning: bool,
}

/// Evaluate the closed-form final-risk expression for a constant,
/// exponential-decay, or WSD schedule, all constants set to one.
///
/// - constant: M^{-sβ} + (ηK)^{-s} + (η/B)(σ² + (ηK)^{-(2-1/β)})
/// - exp decay: M^{-sβ} + T^{-s} + σ²(b/B + (a−b)·min{M, T^{1/β}}/(B T))
/// - WSD: M^{-sβ} + (T1+T2)^{-s} + σ²(b/B + (a−b)·min{M, T2^{1/β}}/(B T2))
pub fn risk_formula<S: Scalar>(
    schedule: &ScheduleSpec<S>,
    s: S,
    beta: S,
    model_size: Extent,
    batch: usize,
    sigma: S,
) -> Result<RiskFormula<S>> {
    check_exponents(s, beta)?;
    if batch == 0 {
        return Err(Error::InvalidSpec("batch must be >= 1".into()));
    }
    let one = S::one();
    let b_f = S::of_usize(batch);
    let sigma_sq = sigma * sigma;
    let approx = match model_size {
        Extent::Finite(m) => S::of_usize(m).powf(-s * beta),
        Extent::Infinite => S::zero(),
    };
    let min_m_t = |t: S| -> S {
        let t_pow = t.powf(one / beta);
        match model_size {
            Extent::Finite(m) => S::of_usize(m).min(t_pow),
            Extent::Infinite => t_pow,
        }
    };
    let (full_batch, noise) = match schedule {
        ScheduleSpec::Constant { rate, steps } => {
            let t = *rate * S::of_usize(*steps);
            let fb = t.powf(-s);
            let fit = t.powf(-(S::cst(2.0) - one / beta));
            (fb, *rate / b_f * (sigma_sq + fit))
        }
        ScheduleSpec::ExpDecay { peak, floor, .. } => {
            let t = schedule.total_intrinsic_time();
            let fb = t.powf(-s);
            let noise = sigma_sq * (*floor / b_f + (*peak - *floor) * min_m_t(t) / (b_f * t));
            (fb, noise)
        }
        ScheduleSpec::Wsd {
            peak,
            floor,
            stable_steps,
            decay_steps,
        } => {
            let t1 = *peak * S::of_usize(*stable_steps);
            let decay_only = ScheduleSpec::ExpDecay {
                peak: *peak,
                floor: *floor,
                steps: *decay_steps,
            };
            let t2 = decay_only.total_intrinsic_time();
            let fb = (t1 + t2).powf(-s);
            let noise = sigma_sq * (*floor / b_f + (*peak - *floor) * min_m_t(t2) / (b_f * t2));
            (fb, noise)
        }
        _ => {
            return Err(Error::Unsupported(
                "closed-form risk exists for constant, exp-decay, and wsd schedules only".into(),
            ))
        }
    };
    let scope_warning = s > S::cst(2.0) - one / beta;
    Ok(RiskFormula {
        total: approx + full_batch + noise,
        approx,
        full_batch,
        noise,
        scope_warning,
    })
}

/// One row of the exponent table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow<S: Scalar> {
    pub s: S,
    pub beta: S,
    pub regime: Regime,
    pub family: ScheduleFamily,
    pub budget: Budget,
    pub risk_exponent: S,
    pub risk_log_exponent: S,
}

/// All six (family, budget) cells for one (s, β).
pub fn table_rows<S: Scalar>(s: S, beta: S) -> Result<Vec<TableRow<S>>> {
    let mut rows = Vec::with_capacity(6);
    for family in ScheduleFamily::ALL {
        for budget in [Budget::Data, Budget::Compute] {
            let pred = match budget {
                Budget::Data => data_optimal(family, s, beta)?,
                Budget::Compute => compute_optimal(family, s, beta)?,
            };
            rows.push(TableRow {
                s,
                beta,
                regime: pred.regime,
                family,
                budget,
                risk_exponent: pred.risk.exponent,
                risk_log_exponent: pred.risk.log_exponent,
            });
        }
    }
    Ok(rows)
}
