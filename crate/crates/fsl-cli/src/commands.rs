//! Command implementations.

use std::fs;
use std::path::Path;

use serde_json::json;

use fsl_core::ansatz::{self, LossCurve};
use fsl_core::asymptotics;
use fsl_core::fsl::{self, FslWeights};
use fsl_core::gfun::GContext;
use fsl_core::lrs_opt;
use fsl_core::schedules::{schedule_to_csv, tabulated_from_csv_path, BatchSchedule, ScheduleSpec};
use fsl_core::sgd;
use fsl_core::sweep;

use crate::config::{
    FitConfig, OptimizeConfig, ParamsDocument, PredictConfig, SweepPredict, TheoryPredict,
};
use crate::sidecar::{self, config_hash, Timer};
use crate::CliError;

fn read_config_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<T, CliError> {
    serde_json::from_slice(bytes)
        .map_err(|e| CliError::config(format!("{what}: {e}")))
}

/// `fsl simulate`
pub fn simulate(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let timer = Timer::start();
    let bytes = read_config_bytes(config)?;
    let mut cfg: sgd::SimConfig<f64> = parse_json(&bytes, "simulate config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    ensure_out_dir(out)?;
    let hash = config_hash(&serde_json::to_vec(&cfg)?);
    let traj = sgd::run_ensemble(&cfg)?;
    let path = out.join("trajectory.csv");
    traj.to_csv(fs::File::create(&path)?)?;
    sidecar::write(
        &path,
        "simulate",
        &hash,
        &timer,
        json!({
            "diverged_runs": traj.diverged_runs,
            "runs": cfg.runs,
            "steps": cfg.steps(),
            "final_mean_risk": traj.final_risk(),
        }),
    )?;
    println!(
        "simulate: {} runs x {} steps -> {} ({} diverged)",
        cfg.runs,
        cfg.steps(),
        path.display(),
        traj.diverged_runs
    );
    Ok(())
}

/// `fsl predict`
pub fn predict(config: &Path, out: &Path) -> Result<(), CliError> {
    let timer = Timer::start();
    let bytes = read_config_bytes(config)?;
    let cfg: PredictConfig = parse_json(&bytes, "predict config")?;
    ensure_out_dir(out)?;
    let hash = config_hash(&bytes);
    match cfg {
        PredictConfig::Theory(t) => predict_theory(t, out, &hash, &timer),
        PredictConfig::Ansatz(a) => predict_ansatz(a, out, &hash, &timer),
        PredictConfig::Sweep(s) => predict_sweep(s, out, &hash, &timer),
    }
}

fn checkpoints(horizon: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut cps: Vec<usize> = (stride..=horizon).step_by(stride).collect();
    if cps.last() != Some(&horizon) {
        cps.push(horizon);
    }
    cps
}

fn predict_theory(
    cfg: TheoryPredict,
    out: &Path,
    hash: &str,
    timer: &Timer,
) -> Result<(), CliError> {
    cfg.task.validate()?;
    cfg.schedule.validate()?;
    let ctx = match cfg.g_model {
        Some(m) => GContext::new(m, cfg.task.beta)?,
        None => GContext::for_task(&cfg.task)?,
    };
    let weights = cfg.weights.unwrap_or_default();
    let cps = checkpoints(cfg.schedule.horizon(), cfg.record_every);
    let eval = fsl::fsl_predict(&ctx, &cfg.task, &cfg.schedule, &cfg.batch, &weights, &cps)?;
    let path = out.join("prediction.csv");
    eval.to_csv(fs::File::create(&path)?)?;
    sidecar::write(
        &path,
        "predict",
        hash,
        timer,
        json!({
            "mode": "theory",
            "final_pred_risk": eval.final_total(),
            "warnings": eval.warnings,
        }),
    )?;
    for w in &eval.warnings {
        eprintln!("warning: {w}");
    }
    println!("predict: theory curve -> {}", path.display());
    Ok(())
}

fn predict_ansatz(
    cfg: crate::config::AnsatzPredict,
    out: &Path,
    hash: &str,
    timer: &Timer,
) -> Result<(), CliError> {
    let schedule: ScheduleSpec<f64> = match (&cfg.schedule, &cfg.schedule_csv) {
        (Some(s), None) => s.clone(),
        (None, Some(p)) => tabulated_from_csv_path(p)?,
        _ => {
            return Err(CliError::config(
                "ansatz mode needs exactly one of `schedule` or `schedule_csv`",
            ))
        }
    };
    schedule.validate()?;
    let cps = checkpoints(schedule.horizon(), cfg.record_every);
    let preds = ansatz::ansatz_eval(&cfg.params, &schedule, cfg.model_size, &cps)?;
    let path = out.join("prediction.csv");
    let mut wtr = csv::Writer::from_writer(fs::File::create(&path)?);
    wtr.write_record(["step", "pred_risk"])
        .map_err(|e| CliError::config(e.to_string()))?;
    for (k, v) in cps.iter().zip(&preds) {
        wtr.write_record([format!("{k}"), format!("{v:.17e}")])
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    wtr.flush()?;
    sidecar::write(
        &path,
        "predict",
        hash,
        timer,
        json!({
            "mode": "ansatz",
            "final_pred_risk": preds.last(),
        }),
    )?;
    println!("predict: ansatz curve -> {}", path.display());
    Ok(())
}

fn predict_sweep(cfg: SweepPredict, out: &Path, hash: &str, timer: &Timer) -> Result<(), CliError> {
    cfg.task.validate()?;
    if cfg.budgets.is_empty() {
        return Err(CliError::config("sweep needs at least one budget"));
    }
    let plan = sweep::SweepPlan {
        family: cfg.family,
        budgets: cfg.budgets.clone(),
        base: cfg.base,
        decay_fraction: cfg.decay_fraction,
    };
    let ctx = GContext::for_task(&cfg.task)?;
    let batch = BatchSchedule::ConstantB { batch: cfg.batch };
    let mut rows: Vec<(u64, f64)> = Vec::with_capacity(plan.budgets.len());
    for &d in &plan.budgets {
        let schedule = sweep::sweep_schedule(&plan, cfg.task.s, cfg.task.beta, d)?;
        let k = schedule.horizon();
        let eval = fsl::fsl_predict(
            &ctx,
            &cfg.task,
            &schedule,
            &batch,
            &FslWeights::default(),
            &[k],
        )?;
        rows.push((d * cfg.batch as u64, eval.final_total()));
    }
    let path = out.join("sweep.csv");
    let mut wtr = csv::Writer::from_writer(fs::File::create(&path)?);
    wtr.write_record(["d", "pred_risk"])
        .map_err(|e| CliError::config(e.to_string()))?;
    for &(d, r) in &rows {
        wtr.write_record([format!("{d}"), format!("{r:.17e}")])
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    wtr.flush()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|&(d, r)| (d as f64, r)).collect();
    let slope = sweep::fit_loglog_slope(&points)?;
    let slope_path = out.join("slope.json");
    fs::write(
        &slope_path,
        serde_json::to_string_pretty(&json!({
            "family": cfg.family,
            "slope": slope,
            "points": rows.len(),
        }))?,
    )?;
    sidecar::write(
        &path,
        "predict",
        hash,
        timer,
        json!({ "mode": "sweep", "slope": slope }),
    )?;
    sidecar::write(&slope_path, "predict", hash, timer, json!({ "mode": "sweep" }))?;
    println!(
        "predict: sweep of {} budgets, slope {slope:.4} -> {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

/// `fsl fit`
pub fn fit(curve_path: &Path, options: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let timer = Timer::start();
    let cfg: FitConfig = match options {
        Some(p) => parse_json(&read_config_bytes(p)?, "fit options")?,
        None => FitConfig::default(),
    };
    let mut hash_input = read_config_bytes(curve_path)?;
    hash_input.extend_from_slice(&serde_json::to_vec(&cfg.options)?);
    let hash = config_hash(&hash_input);

    let mut curve = LossCurve::<f64>::from_csv_path(curve_path)?;
    if let Some(trim) = cfg.warmup_trim {
        curve = curve.trim_warmup(trim)?;
    }
    let init = cfg
        .init
        .unwrap_or_else(|| ansatz::default_init(&curve, cfg.options.model_size));
    let report = ansatz::fit(&curve, &init, &cfg.options)?;
    ensure_out_dir(out)?;

    let report_path = out.join("fit.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    // overlay: curve vs fitted prediction at every curve point
    let schedule = curve.to_schedule()?;
    let preds = ansatz::ansatz_eval(&report.params, &schedule, cfg.options.model_size, &curve.steps)?;
    let overlay_path = out.join("overlay.csv");
    let mut wtr = csv::Writer::from_writer(fs::File::create(&overlay_path)?);
    wtr.write_record(["step", "loss", "fitted"])
        .map_err(|e| CliError::config(e.to_string()))?;
    for ((step, loss), pred) in curve.steps.iter().zip(&curve.losses).zip(&preds) {
        wtr.write_record([
            format!("{step}"),
            format!("{loss:.17e}"),
            format!("{pred:.17e}"),
        ])
        .map_err(|e| CliError::config(e.to_string()))?;
    }
    wtr.flush()?;

    let extra = json!({
        "r2_log": report.r2_log,
        "objective": report.objective,
        "optimizer_steps": report.optimizer_steps,
    });
    sidecar::write(&report_path, "fit", &hash, &timer, &extra)?;
    sidecar::write(&overlay_path, "fit", &hash, &timer, &extra)?;
    println!(
        "fit: objective {:.6e}, log-R2 {:.5} -> {}",
        report.objective,
        report.r2_log,
        report_path.display()
    );
    Ok(())
}

/// `fsl optimize`
pub fn optimize(
    params_path: &Path,
    horizon: usize,
    eta0: f64,
    options: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let timer = Timer::start();
    let params_bytes = read_config_bytes(params_path)?;
    let params = parse_json::<ParamsDocument>(&params_bytes, "params document")?.into_params();
    let opt_cfg: OptimizeConfig = match options {
        Some(p) => parse_json(&read_config_bytes(p)?, "optimize options")?,
        None => OptimizeConfig::default(),
    };
    let cfg = lrs_opt::OptimizerConfig {
        params,
        model_size: opt_cfg.model_size,
        horizon,
        eta0,
        rate: opt_cfg.rate.unwrap_or_default(),
        iterations: opt_cfg.iterations.unwrap_or(50_000),
        control_points: opt_cfg.control_points,
    };
    let hash = config_hash(&serde_json::to_vec(&cfg)?);
    let outcome = lrs_opt::optimize(&cfg)?;
    ensure_out_dir(out)?;

    let schedule_path = out.join("schedule.csv");
    let tabulated = outcome.schedule.to_schedule()?;
    schedule_to_csv(&tabulated, fs::File::create(&schedule_path)?)?;

    let trace_path = out.join("trace.csv");
    let mut wtr = csv::Writer::from_writer(fs::File::create(&trace_path)?);
    wtr.write_record(["iteration", "best_objective"])
        .map_err(|e| CliError::config(e.to_string()))?;
    for &(it, obj) in &outcome.trace {
        wtr.write_record([format!("{it}"), format!("{obj:.17e}")])
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    wtr.flush()?;

    let extra = json!({
        "objective": outcome.objective,
        "rate_used": outcome.rate_used,
        "iterations": outcome.iterations,
        "final_rate": tabulated.rates().last(),
        "eta0": eta0,
    });
    sidecar::write(&schedule_path, "optimize", &hash, &timer, &extra)?;
    sidecar::write(&trace_path, "optimize", &hash, &timer, &extra)?;
    println!(
        "optimize: objective {:.6e} (pgd rate {:.2e}) -> {}",
        outcome.objective,
        outcome.rate_used,
        schedule_path.display()
    );
    Ok(())
}

/// `fsl table1`
pub fn table1(s_values: &[f64], beta_values: &[f64], common_out: &Path) -> Result<(), CliError> {
    let timer = Timer::start();
    if s_values.is_empty() || beta_values.is_empty() {
        return Err(CliError::config("table1 needs nonempty s and beta grids"));
    }
    ensure_out_dir(common_out)?;
    let grid_doc = serde_json::to_vec(&json!({"s": s_values, "beta": beta_values}))?;
    let hash = config_hash(&grid_doc);
    let path = common_out.join("table1.csv");
    let mut wtr = csv::Writer::from_writer(fs::File::create(&path)?);
    wtr.write_record([
        "s",
        "beta",
        "regime",
        "family",
        "budget",
        "exponent",
        "log_exponent",
    ])
    .map_err(|e| CliError::config(e.to_string()))?;
    for &s in s_values {
        for &beta in beta_values {
            for row in asymptotics::table_rows(s, beta)? {
                wtr.write_record([
                    format!("{s}"),
                    format!("{beta}"),
                    match row.regime {
                        asymptotics::Regime::Easy => "easy".into(),
                        asymptotics::Regime::Hard => "hard".into(),
                    },
                    row.family.name().to_string(),
                    match row.budget {
                        asymptotics::Budget::Data => "data".into(),
                        asymptotics::Budget::Compute => "compute".into(),
                    },
                    format!("{:.17e}", row.risk_exponent),
                    format!("{:.17e}", row.risk_log_exponent),
                ])
                .map_err(|e| CliError::config(e.to_string()))?;
            }
        }
    }
    wtr.flush()?;
    sidecar::write(
        &path,
        "table1",
        &hash,
        &timer,
        json!({
            "rows": s_values.len() * beta_values.len() * 6,
        }),
    )?;
    println!("table1 -> {}", path.display());
    Ok(())
}
