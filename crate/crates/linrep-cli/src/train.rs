//! `train`: run the configured regime `n_runs` times with independently
//! seeded ground truths, writing per-run artifacts and a cross-run aggregate.
//!
//! Layout under `--out`:
//!
//! ```text
//! <out>/<regime>/run_00/{ground_truth.bin, params.bin, trace.csv}
//! <out>/<regime>/aggregate.csv
//! <out>/<regime>/manifest.json
//! ```
//!
//! The factorised baseline writes `convergence.csv` per run instead of a
//! trace, and its aggregate lists the per-run optimiser endpoints.
//!
//! Per-run trace CSVs carry a wall-clock column and so differ between
//! invocations; the aggregate holds only step-aligned statistics of the
//! deterministic metrics, which makes repeated runs of one config and seed
//! byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use linrep::baselines::{bm_fit, write_log_csv, BmFit, BmInit, Method, MinimizerConfig};
use linrep::container;
use linrep::dynamics::{init_params, train, MetaParams, Schedule, TraceRecord, VecTraceSink, TRACE_HEADER};
use linrep::parallel;
use linrep::rng::RngSpec;
use linrep::task_model::{make_ground_truth, sample_tasks, GroundTruth};
use nalgebra::DVector;

use crate::config::{ExperimentConfig, Regime};
use crate::manifest::RunManifest;
use crate::CliError;

pub struct TrainOutcome {
    pub regime_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Everything one training run produces, before any file is written.
pub struct RunArtifacts {
    pub gt: GroundTruth,
    pub params: MetaParams,
    /// Trace rows for the dynamics regimes; empty for the factorised baseline.
    pub trace: Vec<TraceRecord>,
    /// Optimiser endpoint for the factorised baseline; None otherwise.
    pub bm: Option<BmFit>,
}

/// Derived generator for run `r`; every sampling site of the run hangs off it.
pub fn run_rng(config: &ExperimentConfig, r: usize) -> RngSpec {
    RngSpec::new(config.run.seed).child_indexed("run", r as u64)
}

pub fn run_ground_truth(config: &ExperimentConfig, rng: &RngSpec) -> Result<GroundTruth, CliError> {
    let g = &config.ground_truth;
    make_ground_truth(g.d, g.k, &g.cov, g.mean, g.noise_var, rng)
        .map_err(|e| CliError::Runtime(format!("ground truth construction failed: {e}")))
}

/// Execute run `r` of the configured experiment in memory.
pub fn execute_run(config: &ExperimentConfig, r: usize) -> Result<RunArtifacts, CliError> {
    let rng = run_rng(config, r);
    let gt = run_ground_truth(config, &rng)?;
    let l = &config.learner;
    let rc = &config.run;
    match rc.regime.train_mode() {
        Some(mode) => {
            let params = init_params(&gt, l.k_prime, l.alpha, l.beta, &l.init_spec(), &rng)
                .map_err(|e| CliError::Runtime(format!("run {r}: initialisation failed: {e}")))?;
            let schedule = Schedule {
                steps: rc.steps,
                cadence: rc.cadence,
                n_tasks: rc.n_tasks,
                m_in: rc.m_in,
                m_out: rc.m_out,
                resample: rc.resample,
            };
            let mut sink = VecTraceSink::default();
            let finished = train(params, &gt, &schedule, mode, &rng, &mut sink)
                .map_err(|e| CliError::Runtime(format!("run {r}: training failed: {e}")))?;
            Ok(RunArtifacts { gt, params: finished, trace: sink.records, bm: None })
        }
        None => {
            let batch = sample_tasks(&gt, rc.n_tasks, rc.m_in, rc.m_out, &rng)
                .map_err(|e| CliError::Runtime(format!("run {r}: sampling failed: {e}")))?;
            let cfg = MinimizerConfig {
                method: Method::Lbfgs { history: config.bm.history },
                max_iters: config.bm.max_iters,
                grad_tol: config.bm.grad_tol,
                f_rel_tol: config.bm.f_rel_tol,
            };
            let fit = bm_fit(&batch, l.k_prime, &BmInit::reference_default(l.alpha, l.k_prime), &cfg, &rng)
                .map_err(|e| CliError::Runtime(format!("run {r}: baseline fit failed: {e}")))?;
            if !fit.converged {
                eprintln!(
                    "warning: run {r} stopped at gradient norm {:.3e} after {} iterations \
                     without reaching {:.1e}",
                    fit.grad_norm, fit.iters, config.bm.grad_tol
                );
            }
            let params = MetaParams {
                b: fit.state.b.clone(),
                w: DVector::zeros(l.k_prime),
                alpha: l.alpha,
                beta: l.beta,
            };
            Ok(RunArtifacts { gt, params, trace: Vec::new(), bm: Some(fit) })
        }
    }
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    config.validated()?;
    let t0 = Instant::now();
    let regime = config.run.regime;
    if regime == Regime::BurerMonteiro {
        eprintln!(
            "note: the factorised baseline ignores beta and uses alpha only to size its \
             initial heads; optimisation is driven by the [bm] section"
        );
    }
    let regime_dir = out.join(regime.as_str());
    create_dir(&regime_dir)?;

    let mut manifest = RunManifest::new(
        "train",
        config.canonical_hash(),
        (0..config.run.n_runs).map(|r| run_rng(config, r).seed).collect(),
    );
    let mut traces: Vec<Vec<TraceRecord>> = Vec::new();
    let mut bm_runs: Vec<BmFit> = Vec::new();

    // Runs are independent given their derived seeds: compute them across
    // the available cores, then write artifacts in run order.
    let results = parallel::indexed_map(config.run.n_runs, |r| execute_run(config, r));
    for (r, result) in results.into_iter().enumerate() {
        let run_name = format!("run_{r:02}");
        let run_dir = regime_dir.join(&run_name);
        create_dir(&run_dir)?;

        let artifacts = result?;
        let err = |e: linrep::Error| CliError::Runtime(format!("run {r}: {e}"));
        container::save_ground_truth(&run_dir.join("ground_truth.bin"), &artifacts.gt).map_err(err)?;
        container::save_meta_params(&run_dir.join("params.bin"), &artifacts.params).map_err(err)?;
        manifest.outputs.push(format!("{run_name}/ground_truth.bin"));
        manifest.outputs.push(format!("{run_name}/params.bin"));

        match artifacts.bm {
            None => {
                write_trace_csv(&run_dir.join("trace.csv"), &artifacts.trace)?;
                manifest.outputs.push(format!("{run_name}/trace.csv"));
                traces.push(artifacts.trace);
            }
            Some(fit) => {
                let file = std::fs::File::create(run_dir.join("convergence.csv"))
                    .map_err(|e| CliError::Runtime(format!("run {r}: {e}")))?;
                write_log_csv(file, &fit.log).map_err(|e| CliError::Runtime(format!("run {r}: {e}")))?;
                manifest.outputs.push(format!("{run_name}/convergence.csv"));
                bm_runs.push(fit);
            }
        }
    }

    let aggregate_path = regime_dir.join("aggregate.csv");
    if regime.train_mode().is_some() {
        write_trace_aggregate(&aggregate_path, &traces)?;
    } else {
        write_bm_aggregate(&aggregate_path, &bm_runs)?;
    }
    manifest.outputs.push("aggregate.csv".into());
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.save(&regime_dir)?;

    Ok(TrainOutcome { regime_dir, manifest })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    w.write_record(TRACE_HEADER).map_err(io)?;
    for rec in records {
        w.write_record([
            rec.step.to_string(),
            rec.sv2_min_c.to_string(),
            rec.sv2_max_c.to_string(),
            rec.sv2_mean_d.to_string(),
            rec.sv2_max_d.to_string(),
            rec.btw_residual.to_string(),
            rec.lambda_residual.to_string(),
            rec.rate_bound.to_string(),
            rec.wall_ms.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))
}

/// The seven deterministic trace metrics (wall time is excluded on purpose).
pub const TRACE_METRICS: [(&str, fn(&TraceRecord) -> f64); 7] = [
    ("sv2_min_C", |r| r.sv2_min_c),
    ("sv2_max_C", |r| r.sv2_max_c),
    ("sv2_mean_D", |r| r.sv2_mean_d),
    ("sv2_max_D", |r| r.sv2_max_d),
    ("btw_residual", |r| r.btw_residual),
    ("lambda_residual", |r| r.lambda_residual),
    ("rate_bound", |r| r.rate_bound),
];

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Step-aligned mean and sample standard deviation over runs for every
/// deterministic trace metric.
fn write_trace_aggregate(path: &Path, traces: &[Vec<TraceRecord>]) -> Result<(), CliError> {
    let first = traces.first().ok_or_else(|| CliError::Runtime("no runs to aggregate".into()))?;
    for (r, t) in traces.iter().enumerate() {
        if t.len() != first.len() || t.iter().zip(first).any(|(a, b)| a.step != b.step) {
            return Err(CliError::Runtime(format!("run {r} produced a misaligned trace")));
        }
    }
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut header = vec!["step".to_string()];
    for (name, _) in TRACE_METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header).map_err(io)?;
    for i in 0..first.len() {
        let mut row = vec![first[i].step.to_string()];
        for (_, get) in TRACE_METRICS {
            let values: Vec<f64> = traces.iter().map(|t| get(&t[i])).collect();
            let (mean, std) = mean_and_std(&values);
            row.push(mean.to_string());
            row.push(std.to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))
}

/// One row per run: where the optimiser stopped.
fn write_bm_aggregate(path: &Path, runs: &[BmFit]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    w.write_record(["run", "iters", "converged", "loss", "grad_norm"]).map_err(io)?;
    for (r, fit) in runs.iter().enumerate() {
        w.write_record([
            r.to_string(),
            fit.iters.to_string(),
            fit.converged.to_string(),
            fit.loss.to_string(),
            fit.grad_norm.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))
}
