//! `sweep`: re-run the experiment across one varied dimension and emit a
//! single long-format CSV of cross-run aggregates.
//!
//! Three kinds re-train per value and log the trace metrics, one aggregate
//! row per (value, step):
//!
//! ```text
//! sweep_kind,sweep_value,step,<metric>_mean,<metric>_std,...
//! ```
//!
//! The `adapt_steps` kind trains the base configuration once per run and
//! varies evaluation instead, one row per (value, m_test):
//!
//! ```text
//! sweep_kind,sweep_value,m_test,mean_risk,std_risk
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use linrep::adaptation_eval::{excess_risk, multi_gd_adapt};
use linrep::parallel;
use linrep::task_model::sample_test_task;

use crate::config::{ExperimentConfig, SweepSection};
use crate::manifest::RunManifest;
use crate::train::{execute_run, mean_and_std, run_rng, TRACE_METRICS};
use crate::CliError;

pub struct SweepOutcome {
    pub csv_path: PathBuf,
    pub rows: usize,
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepOutcome, CliError> {
    config.validated()?;
    let Some(sweep) = &config.sweep else {
        return Err(CliError::Validation(
            "sweep requires a [sweep] section with kind and values".into(),
        ));
    };
    let t0 = Instant::now();
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let csv_path = out.join("sweep.csv");

    let rows = match sweep {
        SweepSection::MIn { values } => {
            let variants = values.iter().map(|&v| {
                let mut patched = config.clone();
                patched.run.m_in = v;
                (v.to_string(), patched)
            });
            write_dynamics_sweep(&csv_path, "m_in", variants)?
        }
        SweepSection::NoiseVar { values } => {
            let variants = values.iter().map(|&v| {
                let mut patched = config.clone();
                patched.ground_truth.noise_var = v;
                (v.to_string(), patched)
            });
            write_dynamics_sweep(&csv_path, "noise_var", variants)?
        }
        SweepSection::MeanSpec { values } => {
            let variants = values.iter().map(|&v| {
                let mut patched = config.clone();
                patched.ground_truth.mean = v;
                (v.to_string(), patched)
            });
            write_dynamics_sweep(&csv_path, "mean_spec", variants)?
        }
        SweepSection::AdaptSteps { values, step } => write_adapt_steps_sweep(&csv_path, config, values, *step)?,
    };

    let mut manifest = RunManifest::new(
        "sweep",
        config.canonical_hash(),
        (0..config.run.n_runs).map(|r| run_rng(config, r).seed).collect(),
    );
    manifest.outputs = vec!["sweep.csv".into()];
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.save(out)?;

    Ok(SweepOutcome { csv_path, rows })
}

/// Train every variant `n_runs` times and aggregate its trace per step.
fn write_dynamics_sweep(
    path: &Path,
    kind: &str,
    variants: impl Iterator<Item = (String, ExperimentConfig)>,
) -> Result<usize, CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut header = vec!["sweep_kind".to_string(), "sweep_value".to_string(), "step".to_string()];
    for (name, _) in TRACE_METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header).map_err(io)?;

    let mut rows = 0usize;
    for (label, patched) in variants {
        patched
            .validated()
            .map_err(|e| CliError::Validation(format!("sweep value {label}: {e}")))?;
        if patched.run.regime.train_mode().is_none() {
            return Err(CliError::Validation(
                "trace sweeps need a dynamics regime; the factorised baseline has no training trace".into(),
            ));
        }
        let traces: Vec<_> = parallel::indexed_map(patched.run.n_runs, |r| {
            execute_run(&patched, r).map(|a| a.trace)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let first = &traces[0];
        for (r, t) in traces.iter().enumerate() {
            if t.len() != first.len() {
                return Err(CliError::Runtime(format!("sweep value {label}: run {r} trace misaligned")));
            }
        }
        for i in 0..first.len() {
            let mut row = vec![kind.to_string(), label.clone(), first[i].step.to_string()];
            for (_, get) in TRACE_METRICS {
                let values: Vec<f64> = traces.iter().map(|t| get(&t[i])).collect();
                let (mean, std) = mean_and_std(&values);
                row.push(mean.to_string());
                row.push(std.to_string());
            }
            w.write_record(&row).map_err(io)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))?;
    Ok(rows)
}

/// Train the base configuration once per run, then score the adapted head
/// after each listed number of gradient steps on fresh test tasks. One
/// trajectory per task is walked to the largest value and read at each
/// prefix, so the listed counts see nested (not resampled) adaptations.
fn write_adapt_steps_sweep(
    path: &Path,
    config: &ExperimentConfig,
    values: &[usize],
    step: f64,
) -> Result<usize, CliError> {
    let &max_steps = values.iter().max().expect("validated nonempty");
    // [run][value_idx * m_test_idx] -> mean risk
    let per_run: Vec<Vec<f64>> = parallel::indexed_map(config.run.n_runs, |r| {
        adapt_steps_one_run(config, values, step, max_steps, r)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    w.write_record(["sweep_kind", "sweep_value", "m_test", "mean_risk", "std_risk"]).map_err(io)?;
    let mut rows = 0usize;
    for (vi, &v) in values.iter().enumerate() {
        for (mi, &m_test) in config.eval.m_test.iter().enumerate() {
            let cell = vi * config.eval.m_test.len() + mi;
            let means: Vec<f64> = per_run.iter().map(|run| run[cell]).collect();
            let (mean, std) = mean_and_std(&means);
            w.write_record([
                "adapt_steps".to_string(),
                v.to_string(),
                m_test.to_string(),
                mean.to_string(),
                std.to_string(),
            ])
            .map_err(io)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))?;
    Ok(rows)
}

fn adapt_steps_one_run(
    config: &ExperimentConfig,
    values: &[usize],
    step: f64,
    max_steps: usize,
    r: usize,
) -> Result<Vec<f64>, CliError> {
    let artifacts = execute_run(config, r)?;
    let eval_rng = run_rng(config, r).child("eval");
    let mut risks_by_cell: Vec<Vec<f64>> =
        vec![Vec::with_capacity(config.eval.n_test_tasks); values.len() * config.eval.m_test.len()];
    for (mi, &m_test) in config.eval.m_test.iter().enumerate() {
        let task_rng = eval_rng.child_indexed("sweep_test", m_test as u64);
        for t in 0..config.eval.n_test_tasks {
            let (x, y, w_star) = sample_test_task(&artifacts.gt, m_test, &task_rng.child_indexed("task", t as u64))
                .map_err(|e| CliError::Runtime(format!("run {r}: {e}")))?;
            let traj = multi_gd_adapt(&artifacts.params.b, &artifacts.params.w, &x, &y, step, max_steps)
                .map_err(|e| CliError::Runtime(format!("run {r}: {e}")))?;
            for (vi, &v) in values.iter().enumerate() {
                let Some(head) = traj.heads.get(v) else {
                    return Err(CliError::Runtime(format!(
                        "run {r}: adaptation diverged before step {v}; lower the sweep step size"
                    )));
                };
                risks_by_cell[vi * config.eval.m_test.len() + mi]
                    .push(excess_risk(&artifacts.params.b, head, &artifacts.gt, &w_star));
            }
        }
    }
    Ok(risks_by_cell
        .into_iter()
        .map(|risks| linrep::linalg::pairwise_sum(&risks) / risks.len() as f64)
        .collect())
}
