//! `evaluate`: excess-risk table for every trained regime found under the
//! output directory, plus the two reference baselines that need no training
//! (single-task ridge on raw features and ridge on the true representation).
//!
//! Rows are (method, adaptation, m_test) with mean and standard deviation
//! across training runs. All methods of one run are scored on the same
//! validation and test tasks, so differences between rows are paired rather
//! than resampled.

use std::path::{Path, PathBuf};
use std::time::Instant;

use linrep::adaptation_eval::{aggregate_runs, evaluate_method, Adaptation, EvalConfig, EvalReport};
use linrep::container;
use linrep::parallel;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{ExperimentConfig, Regime};
use crate::manifest::RunManifest;
use crate::train::{run_ground_truth, run_rng};
use crate::CliError;

/// Presentation order of the table rows.
const METHOD_ORDER: [MethodId; 7] = [
    MethodId::SingleTaskRidge,
    MethodId::OracleRidge,
    MethodId::Trained(Regime::BurerMonteiro),
    MethodId::Trained(Regime::FiniteAnil),
    MethodId::Trained(Regime::FiniteMaml),
    MethodId::Trained(Regime::InfTasks),
    MethodId::Trained(Regime::InfSamples),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MethodId {
    SingleTaskRidge,
    OracleRidge,
    Trained(Regime),
}

impl MethodId {
    fn name(self) -> &'static str {
        match self {
            MethodId::SingleTaskRidge => "single_task_ridge",
            MethodId::OracleRidge => "oracle_ridge",
            MethodId::Trained(regime) => regime.as_str(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub method: String,
    pub adaptation: String,
    pub m_test: usize,
    pub mean_risk: f64,
    pub std_risk: f64,
    pub per_run_means: Vec<f64>,
    pub chosen_lambdas: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct RiskTable {
    pub schema_version: u32,
    pub config_hash: String,
    pub n_runs: usize,
    pub rows: Vec<TableRow>,
}

pub struct EvaluateOutcome {
    pub table: RiskTable,
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
}

pub fn cmd_evaluate(config: &ExperimentConfig, out: &Path) -> Result<EvaluateOutcome, CliError> {
    config.validated()?;
    let t0 = Instant::now();
    // A regime participates iff its manifest loads; a manifest that exists
    // but does not load (schema drift, truncation) is an error, not a skip.
    let mut trained: Vec<Regime> = Vec::new();
    for regime in Regime::ALL {
        let dir = out.join(regime.as_str());
        if RunManifest::exists(&dir) {
            RunManifest::load(&dir)?;
            trained.push(regime);
        }
    }
    if trained.is_empty() {
        eprintln!("note: no trained regimes under {}; reporting reference baselines only", out.display());
    }

    // One report list per (method, adaptation) pair, filled run by run.
    let mut pairs: Vec<(MethodId, &'static str)> = Vec::new();
    for id in METHOD_ORDER {
        match id {
            MethodId::SingleTaskRidge | MethodId::OracleRidge => pairs.push((id, "ridge")),
            MethodId::Trained(regime) if trained.contains(&regime) => {
                if regime != Regime::BurerMonteiro {
                    pairs.push((id, "one_gd"));
                }
                pairs.push((id, "ridge"));
            }
            MethodId::Trained(_) => {}
        }
    }

    // Runs are independent; method pairs within one run share its test
    // tasks, so the pair loop stays inside the per-run unit of work.
    let grid = config.eval.grid();
    let per_run = parallel::indexed_map(config.run.n_runs, |r| evaluate_one_run(config, out, &pairs, &grid, r));
    let mut reports_by_pair: Vec<Vec<EvalReport>> = pairs.iter().map(|_| Vec::new()).collect();
    for run_reports in per_run {
        for (slot, report) in reports_by_pair.iter_mut().zip(run_reports?) {
            slot.push(report);
        }
    }

    let mut rows = Vec::new();
    for ((id, adaptation), reports) in pairs.iter().zip(&reports_by_pair) {
        let aggregated = aggregate_runs(reports)
            .map_err(|e| CliError::Runtime(format!("aggregating {}: {e}", id.name())))?;
        for agg in aggregated {
            rows.push(TableRow {
                method: id.name().to_string(),
                adaptation: adaptation.to_string(),
                m_test: agg.m_test,
                mean_risk: agg.mean_risk,
                std_risk: agg.std_risk,
                per_run_means: agg.per_run_means,
                chosen_lambdas: agg.chosen_lambdas,
            });
        }
    }

    let table = RiskTable {
        schema_version: crate::manifest::SCHEMA_VERSION,
        config_hash: config.canonical_hash(),
        n_runs: config.run.n_runs,
        rows,
    };
    let json_path = out.join("table.json");
    let csv_path = out.join("table.csv");
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let json = serde_json::to_string_pretty(&table)
        .map_err(|e| CliError::Runtime(format!("table does not serialize: {e}")))?;
    std::fs::write(&json_path, json)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", json_path.display())))?;
    write_table_csv(&csv_path, &table)?;

    let mut manifest = RunManifest::new(
        "evaluate",
        config.canonical_hash(),
        (0..config.run.n_runs).map(|r| run_rng(config, r).seed).collect(),
    );
    manifest.outputs = vec!["table.json".into(), "table.csv".into()];
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.save(out)?;

    print_table(&table);
    Ok(EvaluateOutcome { table, json_path, csv_path })
}

/// Evaluate every method pair on run `r`'s ground truth and shared test
/// tasks, returning one report per pair in pair order.
fn evaluate_one_run(
    config: &ExperimentConfig,
    out: &Path,
    pairs: &[(MethodId, &'static str)],
    grid: &[f64],
    r: usize,
) -> Result<Vec<EvalReport>, CliError> {
    let rng = run_rng(config, r);
    let gt = run_ground_truth(config, &rng)?;
    let eval_rng = rng.child("eval");
    let d = config.ground_truth.d;

    let mut reports = Vec::with_capacity(pairs.len());
    for (id, adaptation) in pairs {
        let (b_hat, w_hat, alpha) = match *id {
            MethodId::SingleTaskRidge => (DMatrix::identity(d, d), DVector::zeros(d), None),
            MethodId::OracleRidge => (gt.b_star.clone(), DVector::zeros(config.ground_truth.k), None),
            MethodId::Trained(regime) => {
                let run_dir = out.join(regime.as_str()).join(format!("run_{r:02}"));
                let params = container::load_meta_params(&run_dir.join("params.bin")).map_err(|e| {
                    CliError::Runtime(format!(
                        "{}: missing or unreadable parameters ({e}); train this regime first \
                         or drop it from the output directory",
                        run_dir.display()
                    ))
                })?;
                let stored = container::load_ground_truth(&run_dir.join("ground_truth.bin"))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", run_dir.display())))?;
                if stored.b_star != gt.b_star || stored.noise_var != gt.noise_var {
                    return Err(CliError::Runtime(format!(
                        "{}: stored ground truth disagrees with the config-derived one; \
                         these parameters were trained under a different config or seed",
                        run_dir.display()
                    )));
                }
                let alpha = params.alpha;
                (params.b, params.w, Some(alpha))
            }
        };
        let adapt = match *adaptation {
            "one_gd" => Adaptation::OneGd {
                alpha: alpha.expect("one_gd rows only exist for trained regimes"),
            },
            _ => Adaptation::Ridge { lambda_grid: grid.to_vec() },
        };
        let cfg = EvalConfig {
            n_test_tasks: config.eval.n_test_tasks,
            m_test: config.eval.m_test.clone(),
            n_val_tasks: config.eval.n_val_tasks,
            adaptation: adapt,
        };
        let report = evaluate_method(&b_hat, &w_hat, &gt, &cfg, &eval_rng)
            .map_err(|e| CliError::Runtime(format!("evaluating {} (run {r}): {e}", id.name())))?;
        reports.push(report);
    }
    Ok(reports)
}

fn write_table_csv(path: &Path, table: &RiskTable) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    w.write_record(["method", "adaptation", "m_test", "mean_risk", "std_risk"]).map_err(io)?;
    for row in &table.rows {
        w.write_record([
            row.method.clone(),
            row.adaptation.clone(),
            row.m_test.to_string(),
            row.mean_risk.to_string(),
            row.std_risk.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot flush {}: {e}", path.display())))
}

fn print_table(table: &RiskTable) {
    println!("{:<18} {:<8} {:>6} {:>12} {:>10}", "method", "adapt", "m_test", "mean_risk", "std");
    for row in &table.rows {
        println!(
            "{:<18} {:<8} {:>6} {:>12.4} {:>10.4}",
            row.method, row.adaptation, row.m_test, row.mean_risk, row.std_risk
        );
    }
}
