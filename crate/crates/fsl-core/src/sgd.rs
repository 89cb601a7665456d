//! Online minibatch SGD ensembles on the teacher-student task, producing
//! mean excess-risk trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::{BatchSchedule, ScheduleSpec};
use crate::task::{build_spectrum, SpectrumInstance, TaskSpec};

/// A run whose recorded excess risk exceeds this is flagged diverged and
/// excluded from the ensemble mean.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Default cap on steps x ambient-dimension, refusing accidental
/// desk-melting configurations before they start.
pub const DEFAULT_CELL_CAP: u64 = 1 << 33;

/// Ensemble simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig<S: Scalar> {
    pub task: TaskSpec<S>,
    pub schedule: ScheduleSpec<S>,
    #[serde(default)]
    pub batch: BatchSchedule,
    /// Steps to run; defaults to the schedule horizon.
    #[serde(default)]
    pub steps: Option<usize>,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record stride; the final step is always recorded.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Override for the K·N resource guard.
    #[serde(default)]
    pub cell_cap: Option<u64>,
}

fn default_record_every() -> usize {
    1
}

impl<S: Scalar> SimConfig<S> {
    pub fn new(task: TaskSpec<S>, schedule: ScheduleSpec<S>, runs: usize, seed: u64) -> Self {
        SimConfig {
            task,
            schedule,
            batch: BatchSchedule::default(),
            steps: None,
            runs,
            seed,
            record_every: 1,
            cell_cap: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.schedule.horizon())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.schedule.validate()?;
        self.batch.validate()?;
        let k = self.steps();
        if k == 0 || k > self.schedule.horizon() {
            return Err(Error::InvalidSpec(format!(
                "steps {k} must lie in 1..={}",
                self.schedule.horizon()
            )));
        }
        if self.runs == 0 {
            return Err(Error::InvalidSpec("runs must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidSpec("record stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ensemble-mean excess-risk trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S: Scalar> {
    /// Recorded step indices.
    pub steps: Vec<usize>,
    /// Learning rate at each recorded step.
    pub lrs: Vec<S>,
    /// Mean excess risk across the surviving runs.
    pub risks: Vec<S>,
    /// Standard error of the mean at each recorded point.
    pub stderr: Vec<S>,
    /// Runs excluded by the divergence guard.
    pub diverged_runs: usize,
}

impl<S: Scalar> Trajectory<S> {
    pub fn final_risk(&self) -> S {
        *self.risks.last().expect("trajectory has at least one point")
    }

    /// Write as CSV `step,lr,mean_risk,stderr` in full double precision.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["step", "lr", "mean_risk", "stderr"])?;
        for i in 0..self.steps.len() {
            wtr.write_record([
                format!("{}", self.steps[i]),
                format!("{:.17e}", self.lrs[i]),
                format!("{:.17e}", self.risks[i]),
                format!("{:.17e}", self.stderr[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One SGD update: v ← v − (η/B) Σ_{z in batch} Wφ(x) (⟨v, Wφ(x)⟩ − y),
/// drawing B fresh samples from `rng`. Returns nothing; `v`, `phi` are
/// mutated in place (`phi` is scratch space of ambient dimension).
pub fn sgd_step<S: Scalar, R: Rng + ?Sized>(
    inst: &SpectrumInstance<S>,
    v: &mut [S],
    eta: S,
    batch: usize,
    rng: &mut R,
    phi: &mut [S],
    grad: &mut [S],
) -> Result<()> {
    let sigma = inst.task.sigma;
    grad.iter_mut().for_each(|g| *g = S::zero());
    for _ in 0..batch {
        for (p, lam) in phi.iter_mut().zip(&inst.lambdas) {
            *p = S::standard_normal(rng) * lam.sqrt();
        }
        let y: S = phi
            .iter()
            .zip(&inst.thetas)
            .map(|(&p, &th)| p * th)
            .sum::<S>()
            + S::standard_normal(rng) * sigma;
        let wphi = inst.project(phi)?;
        let pred: S = v.iter().zip(&wphi).map(|(&vi, &wi)| vi * wi).sum();
        let resid = pred - y;
        for (g, &wi) in grad.iter_mut().zip(&wphi) {
            *g += wi * resid;
        }
    }
    let scale = eta / S::of_usize(batch);
    for (vi, &g) in v.iter_mut().zip(grad.iter()) {
        *vi -= scale * g;
    }
    Ok(())
}

/// Result of a single run: recorded excess risks, or a divergence flag.
struct RunOutcome<S> {
    risks: Vec<S>,
    diverged: bool,
}

/// Run R independent SGD trajectories from v0 = 0 and average their exact
/// per-step excess risks at the recorded steps.
///
/// Deterministic given the seed: run r draws from ChaCha stream r of the
/// seeded generator, and the ensemble reduction is an ordered fold over run
/// index, so parallel and serial execution agree bit for bit.
pub fn run_ensemble<S: Scalar>(cfg: &SimConfig<S>) -> Result<Trajectory<S>> {
    cfg.validate()?;
    let k = cfg.steps();
    let inst = build_spectrum(&cfg.task)?;
    let n = inst.ambient_dim();
    let cap = cfg.cell_cap.unwrap_or(DEFAULT_CELL_CAP);
    let cells = (k as u64).saturating_mul(n as u64);
    if cells > cap {
        return Err(Error::Resource(format!(
            "steps x ambient dimension = {cells} exceeds the configured cap {cap}"
        )));
    }

    let recorded: Vec<usize> = recorded_steps(k, cfg.record_every);
    let rates = cfg.schedule.rates();
    let threshold = S::cst(DIVERGENCE_THRESHOLD);

    let outcomes: Vec<RunOutcome<S>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(run as u64);
            let m = inst.model_dim();
            let mut v = vec![S::zero(); m];
            let mut phi = vec![S::zero(); n];
            let mut grad = vec![S::zero(); m];
            let mut risks = Vec::with_capacity(recorded.len());
            let mut diverged = false;
            let mut next_record = 0usize;
            for step in 1..=k {
                let eta = rates[step - 1];
                let b = cfg.batch.batch_at(step);
                sgd_step(&inst, &mut v, eta, b, &mut rng, &mut phi, &mut grad)
                    .expect("dimensions fixed by construction");
                if next_record < recorded.len() && recorded[next_record] == step {
                    let excess = inst
                        .excess_risk(&v)
                        .expect("dimensions fixed by construction")
                        .excess;
                    if !excess.is_finite() || excess > threshold {
                        diverged = true;
                        break;
                    }
                    risks.push(excess);
                    next_record += 1;
                }
            }
            RunOutcome { risks, diverged }
        })
        .collect();

    let mut diverged_runs = 0usize;
    let mut sums = vec![S::zero(); recorded.len()];
    let mut sq_sums = vec![S::zero(); recorded.len()];
    for outcome in &outcomes {
        if outcome.diverged {
            diverged_runs += 1;
            continue;
        }
        for (i, &r) in outcome.risks.iter().enumerate() {
            sums[i] += r;
            sq_sums[i] += r * r;
        }
    }
    let used = cfg.runs - diverged_runs;
    if used == 0 {
        return Err(Error::Numeric(
            "all runs diverged; lower the learning rate".into(),
        ));
    }
    let nf = S::of_usize(used);
    let risks: Vec<S> = sums.iter().map(|&s| s / nf).collect();
    let stderr: Vec<S> = sq_sums
        .iter()
        .zip(&risks)
        .map(|(&sq, &mu)| {
            if used < 2 {
                S::zero()
            } else {
                let var = ((sq / nf - mu * mu) * nf / (nf - S::one())).max(S::zero());
                (var / nf).sqrt()
            }
        })
        .collect();
    let lrs: Vec<S> = recorded.iter().map(|&s| rates[s - 1]).collect();
    Ok(Trajectory {
        steps: recorded,
        lrs,
        risks,
        stderr,
        diverged_runs,
    })
}

fn recorded_steps(k: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (stride..=k).step_by(stride).collect();
    if out.last() != Some(&k) {
        out.push(k);
    }
    out
}

/// Data-limited sweep: run each config and report (D = Σ batch sizes, final
/// mean excess risk).
pub fn final_risk_sweep<S: Scalar>(cfgs: &[SimConfig<S>]) -> Result<Vec<(u64, S)>> {
    if cfgs.is_empty() {
        return Err(Error::InvalidSpec("sweep needs at least one config".into()));
    }
    let mut out = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let traj = run_ensemble(cfg)?;
        let d: u64 = (1..=cfg.steps()).map(|k| cfg.batch.batch_at(k) as u64).sum();
        out.push((d, traj.final_risk()));
    }
    Ok(out)
}
