//! Risk dynamics of online SGD on teacher-student kernel regression under
//! arbitrary learning-rate schedules.
//!
//! The crate covers the full pipeline:
//!
//! - [`schedules`]: learning-rate / batch-size schedules and the
//!   intrinsic-time transform (cumulative learning-rate mass).
//! - [`task`]: the power-law teacher-student problem and exact risk
//!   evaluation.
//! - [`sgd`]: online minibatch SGD ensembles producing mean risk
//!   trajectories.
//! - [`gfun`]: the g-function family g_a(t) = ∫_{M^{-β}}^1 u^{a-1} e^{-2ut} du
//!   underlying both the risk-decay curve and the forgetting kernel.
//! - [`fsl`]: the functional scaling-law prediction — approximation,
//!   full-batch, and convolution-type noise terms — plus weight fitting.
//! - [`asymptotics`]: closed-form data- and compute-optimal scaling
//!   exponents for constant, exponential-decay, and WSD schedules.
//! - [`ansatz`]: the nine-parameter practical loss-curve ansatz, Huber-loss
//!   fitting, and extrapolation to unseen schedules.
//! - [`lrs_opt`]: projected gradient descent over decrement-parameterized
//!   schedules, synthesizing the ansatz-optimal learning-rate schedule.
//!
//! All numerics are generic over a [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix `f64`, which is what the CLI and the test suites
//! use.

pub mod ansatz;
pub mod asymptotics;
pub mod error;
pub mod fsl;
pub mod gfun;
mod linalg;
pub mod lrs_opt;
pub mod scalar;
pub mod schedules;
pub mod sgd;
pub mod special;
pub mod sweep;
pub mod task;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` aliases for the core domain types.
pub type Schedule = schedules::ScheduleSpec<f64>;
pub type Clock = schedules::IntrinsicClock<f64>;
pub type Task = task::TaskSpec<f64>;
pub type Spectrum = task::SpectrumInstance<f64>;
pub type SimConfig64 = sgd::SimConfig<f64>;
pub type Trajectory64 = sgd::Trajectory<f64>;
pub type GContext64 = gfun::GContext<f64>;
pub type FslWeights64 = fsl::FslWeights<f64>;
pub type AnsatzParams64 = ansatz::AnsatzParams<f64>;
pub type LossCurve64 = ansatz::LossCurve<f64>;
pub type FitReport64 = ansatz::FitReport<f64>;
