//! `fsl`: reproducible scaling-law experiments from JSON configs to CSV.
//!
//! Subcommands: `simulate` (SGD ensembles), `predict` (theory / fitted-ansatz
//! curves and data-budget sweeps), `fit` (nine-parameter ansatz fitting),
//! `optimize` (schedule synthesis by projected gradient descent), `table1`
//! (closed-form exponent grid). Every output file gets a `.meta.json`
//! sidecar with the config hash, tool version, and wall time.

mod commands;
mod config;
mod sidecar;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 resource guard.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_RESOURCE: u8 = 4;

#[derive(Parser)]
#[command(name = "fsl", version, about = "Scaling-law toolkit for SGD on teacher-student kernel regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: std::path::PathBuf,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an SGD ensemble and write its mean risk trajectory.
    Simulate {
        /// JSON config (task, schedule, batch, runs, seed, record_every).
        #[arg(long)]
        config: std::path::PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate predictions: theory mode, fitted-ansatz mode, or a sweep.
    Predict {
        #[arg(long)]
        config: std::path::PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the nine-parameter ansatz to a loss curve.
    Fit {
        /// Curve CSV with header step,lr,loss (mean_risk accepted for loss).
        #[arg(long)]
        curve: std::path::PathBuf,
        /// Fit options JSON (steps, learning rates, subsample, model size,
        /// warmup trim, init overrides).
        #[arg(long)]
        options: Option<std::path::PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthesize the ansatz-optimal schedule by projected gradient descent.
    Optimize {
        /// Fitted parameters: a fit report JSON or a bare parameter JSON.
        #[arg(long)]
        params: std::path::PathBuf,
        /// Schedule length K.
        #[arg(long)]
        horizon: usize,
        /// Peak learning rate η0.
        #[arg(long)]
        eta0: f64,
        /// Optimizer options JSON (rate, iterations, control_points, model_size).
        #[arg(long)]
        options: Option<std::path::PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write the closed-form scaling-exponent grid.
    Table1 {
        /// Comma-separated s values.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1.0,1.25,1.5")]
        s_values: Vec<f64>,
        /// Comma-separated beta values.
        #[arg(long, value_delimiter = ',', default_value = "1.5,2.0,3.0,4.0,5.0")]
        beta_values: Vec<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// CLI-level error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: msg.into(),
        }
    }
}

impl From<fsl_core::Error> for CliError {
    fn from(e: fsl_core::Error) -> Self {
        use fsl_core::Error::*;
        let code = match &e {
            InvalidSpec(_) | StepOutOfRange { .. } | DimensionMismatch { .. }
            | Unsupported(_) | Csv(_) | Json(_) | Io(_) => EXIT_CONFIG,
            Resource(_) => EXIT_RESOURCE,
            Domain(_) | Numeric(_) => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(format!("json: {e}"))
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // a second invocation in-process would fail; the global pool is
        // process-wide so ignore that case
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            common,
        } => {
            init_threads(common.threads);
            commands::simulate(&config, seed, &common.out)
        }
        Command::Predict { config, common } => {
            init_threads(common.threads);
            commands::predict(&config, &common.out)
        }
        Command::Fit {
            curve,
            options,
            common,
        } => {
            init_threads(common.threads);
            commands::fit(&curve, options.as_deref(), &common.out)
        }
        Command::Optimize {
            params,
            horizon,
            eta0,
            options,
            common,
        } => {
            init_threads(common.threads);
            commands::optimize(&params, horizon, eta0, options.as_deref(), &common.out)
        }
        Command::Table1 {
            s_values,
            beta_values,
            common,
        } => commands::table1(&s_values, &beta_values, &common.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
