//! JSON config documents for the CLI commands. All documents reject unknown
//! keys.

use serde::{Deserialize, Serialize};

use fsl_core::ansatz::{AnsatzParams, FitOptions};
use fsl_core::asymptotics::ScheduleFamily;
use fsl_core::fsl::FslWeights;
use fsl_core::schedules::{BatchSchedule, ScheduleSpec};
use fsl_core::task::TaskSpec;

/// `fsl predict` document: exactly one mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictConfig {
    /// Theory-mode functional scaling law with component decomposition.
    Theory(TheoryPredict),
    /// Evaluate fitted ansatz parameters under a schedule.
    Ansatz(AnsatzPredict),
    /// Data-budget sweep of final theory-mode risks plus a fitted slope.
    Sweep(SweepPredict),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryPredict {
    pub task: TaskSpec<f64>,
    pub schedule: ScheduleSpec<f64>,
    #[serde(default)]
    pub batch: BatchSchedule,
    #[serde(default)]
    pub weights: Option<FslWeights<f64>>,
    #[serde(default = "default_stride")]
    pub record_every: usize,
    /// Override for the g-function model size (e.g. "inf"); defaults to the
    /// task's M.
    #[serde(default)]
    pub g_model: Option<fsl_core::task::Extent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzPredict {
    pub params: AnsatzParams<f64>,
    /// Either an inline schedule or a tabulated CSV path.
    #[serde(default)]
    pub schedule: Option<ScheduleSpec<f64>>,
    #[serde(default)]
    pub schedule_csv: Option<std::path::PathBuf>,
    #[serde(rename = "M", default)]
    pub model_size: Option<usize>,
    #[serde(default = "default_stride")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPredict {
    pub task: TaskSpec<f64>,
    pub family: ScheduleFamily,
    pub budgets: Vec<u64>,
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_decay_fraction")]
    pub decay_fraction: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_stride() -> usize {
    1
}

fn default_base() -> f64 {
    fsl_core::sweep::DEFAULT_SWEEP_BASE
}

fn default_decay_fraction() -> f64 {
    fsl_core::sweep::DEFAULT_DECAY_FRACTION
}

fn default_batch() -> usize {
    1
}

/// `fsl fit` options document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(flatten)]
    pub options: FitOptions<f64>,
    /// Drop curve points before this step.
    #[serde(default)]
    pub warmup_trim: Option<usize>,
    /// Initialization override (defaults are scale-aware).
    #[serde(default)]
    pub init: Option<AnsatzParams<f64>>,
}

/// `fsl optimize` options document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default)]
    pub rate: Option<fsl_core::lrs_opt::PgdRate<f64>>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub control_points: Option<usize>,
    #[serde(rename = "M", default)]
    pub model_size: Option<usize>,
}

/// Accept either a full fit report or bare parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ParamsDocument {
    Report { params: AnsatzParams<f64> },
    Bare(AnsatzParams<f64>),
}

impl ParamsDocument {
    pub fn into_params(self) -> AnsatzParams<f64> {
        match self {
            ParamsDocument::Report { params } => params,
            ParamsDocument::Bare(p) => p,
        }
    }
}
