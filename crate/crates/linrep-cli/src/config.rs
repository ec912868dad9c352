//! Experiment configuration: one TOML file covering the task environment,
//! the learner, the training schedule, and the evaluation protocol. Every
//! field has a default matching the reference experiment (d=50, k=5, k'=50,
//! N=5000, m_in=20, m_out=10, label noise std 2, alpha=beta=0.025, 10 runs),
//! so a config file only needs the fields it changes.

use std::fmt;
use std::path::Path;

use linrep::adaptation_eval::default_lambda_grid;
use linrep::dynamics::{InitSpec, TrainMode};
use linrep::task_model::{CovSpec, MeanSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ground_truth: GroundTruthConfig,
    pub learner: LearnerConfig,
    pub run: RunConfig,
    pub bm: BmConfig,
    pub eval: EvalSection,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub d: usize,
    pub k: usize,
    pub cov: CovSpec,
    pub mean: MeanSpec,
    pub noise_var: f64,
}

impl Default for GroundTruthConfig {
    // noise_var 4.0 is label noise with standard deviation 2: the reference
    // baseline risks (single-task 1.84/1.63, oracle 0.50/0.34) are the
    // optimally tuned ridge values under this variance and are not
    // attainable under variance 2, where the tuned optima sit at 1.68/1.46
    // and 0.29/0.19 instead.
    fn default() -> Self {
        Self { d: 50, k: 5, cov: CovSpec::DiagLinear, mean: MeanSpec::Zero, noise_var: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub k_prime: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Squared spectral norm of the initial representation; defaults to 1/(4·alpha).
    pub b_scale: Option<f64>,
    /// Squared norm of the initial head; defaults to 0.01·k_prime·alpha.
    pub w_scale: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { k_prime: 50, alpha: 0.025, beta: 0.025, b_scale: None, w_scale: None }
    }
}

impl LearnerConfig {
    pub fn init_spec(&self) -> InitSpec {
        let reference = InitSpec::reference_default(self.alpha, self.k_prime);
        InitSpec {
            b_scale: self.b_scale.unwrap_or(reference.b_scale),
            w_scale: self.w_scale.unwrap_or(reference.w_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FiniteAnil,
    FiniteMaml,
    InfTasks,
    InfSamples,
    BurerMonteiro,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::FiniteAnil,
        Regime::FiniteMaml,
        Regime::InfTasks,
        Regime::InfSamples,
        Regime::BurerMonteiro,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FiniteAnil => "finite_anil",
            Regime::FiniteMaml => "finite_maml",
            Regime::InfTasks => "inf_tasks",
            Regime::InfSamples => "inf_samples",
            Regime::BurerMonteiro => "burer_monteiro",
        }
    }

    /// Training mode for the dynamics regimes; None for the factorised baseline.
    pub fn train_mode(self) -> Option<TrainMode> {
        match self {
            Regime::FiniteAnil => Some(TrainMode::FiniteAnil),
            Regime::FiniteMaml => Some(TrainMode::FiniteMaml),
            Regime::InfTasks => Some(TrainMode::InfTasks),
            Regime::InfSamples => Some(TrainMode::InfSamples),
            Regime::BurerMonteiro => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub regime: Regime,
    pub n_tasks: usize,
    pub m_in: usize,
    pub m_out: usize,
    pub steps: usize,
    pub cadence: usize,
    pub resample: bool,
    pub seed: u64,
    pub n_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            regime: Regime::FiniteAnil,
            n_tasks: 5000,
            m_in: 20,
            m_out: 10,
            steps: 5000,
            cadence: 10,
            resample: false,
            seed: 0,
            n_runs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Relative loss-decrease stopping threshold; 0 disables it.
    pub f_rel_tol: f64,
    pub history: usize,
}

impl Default for BmConfig {
    fn default() -> Self {
        Self { max_iters: 5000, grad_tol: 1e-5, f_rel_tol: linrep::baselines::DEFAULT_F_REL_TOL, history: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_test_tasks: usize,
    pub n_val_tasks: usize,
    pub m_test: Vec<usize>,
    /// Ridge penalty grid; defaults to 13 log-spaced values in [1e-4, 1e2].
    pub lambda_grid: Option<Vec<f64>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_test_tasks: 10_000, n_val_tasks: 2_000, m_test: vec![20, 30], lambda_grid: None }
    }
}

impl EvalSection {
    pub fn grid(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }
}

/// What a sweep varies; each value re-runs the experiment with that field
/// patched, except `adapt_steps`, which trains once and varies evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSection {
    MIn { values: Vec<usize> },
    NoiseVar { values: Vec<f64> },
    AdaptSteps { values: Vec<usize>, #[serde(default = "default_adapt_step")] step: f64 },
    MeanSpec { values: Vec<MeanSpec> },
}

fn default_adapt_step() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {} does not parse: {e}", path.display())))?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, runs: Option<usize>) {
        if let Some(seed) = seed {
            self.run.seed = seed;
        }
        if let Some(runs) = runs {
            self.run.n_runs = runs;
        }
    }

    /// All precondition violations at once, so one round trip fixes a config.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let g = &self.ground_truth;
        if g.k == 0 || g.k >= g.d {
            errs.push(format!("ground_truth: need 1 <= k < d, got k={}, d={}", g.k, g.d));
        }
        if let CovSpec::Isotropic { c } = g.cov {
            if c < 0.0 {
                errs.push(format!("ground_truth: isotropic covariance scale must be >= 0, got {c}"));
            }
        }
        if g.noise_var < 0.0 {
            errs.push(format!("ground_truth: noise_var must be >= 0, got {}", g.noise_var));
        }
        let l = &self.learner;
        if l.k_prime < g.k || l.k_prime > g.d {
            errs.push(format!(
                "learner: need k <= k_prime <= d, got k={}, k_prime={}, d={}",
                g.k, l.k_prime, g.d
            ));
        }
        if l.alpha <= 0.0 {
            errs.push(format!("learner: alpha must be > 0, got {}", l.alpha));
        }
        if l.beta <= 0.0 {
            errs.push(format!("learner: beta must be > 0, got {}", l.beta));
        }
        if l.b_scale.is_some_and(|s| s <= 0.0) {
            errs.push(format!("learner: b_scale must be > 0, got {}", l.b_scale.unwrap()));
        }
        if l.w_scale.is_some_and(|s| s < 0.0) {
            errs.push(format!("learner: w_scale must be >= 0, got {}", l.w_scale.unwrap()));
        }
        let r = &self.run;
        if r.n_tasks == 0 {
            errs.push("run: n_tasks must be >= 1".into());
        }
        if r.m_in == 0 {
            errs.push("run: m_in must be >= 1".into());
        }
        if r.m_out == 0 {
            errs.push("run: m_out must be >= 1".into());
        }
        if r.cadence == 0 {
            errs.push("run: cadence must be >= 1".into());
        }
        if r.n_runs == 0 {
            errs.push("run: n_runs must be >= 1".into());
        }
        if r.regime == Regime::InfTasks && g.mean == MeanSpec::Sphere {
            errs.push("run: the infinite-task recursion only supports mean = \"zero\"".into());
        }
        if self.bm.max_iters == 0 {
            errs.push("bm: max_iters must be >= 1".into());
        }
        if self.bm.grad_tol <= 0.0 {
            errs.push(format!("bm: grad_tol must be > 0, got {}", self.bm.grad_tol));
        }
        if !self.bm.f_rel_tol.is_finite() || self.bm.f_rel_tol < 0.0 {
            errs.push(format!("bm: f_rel_tol must be >= 0, got {}", self.bm.f_rel_tol));
        }
        let e = &self.eval;
        if e.n_test_tasks == 0 {
            errs.push("eval: n_test_tasks must be >= 1".into());
        }
        if e.n_val_tasks == 0 {
            errs.push("eval: n_val_tasks must be >= 1".into());
        }
        if e.m_test.is_empty() || e.m_test.iter().any(|&m| m == 0) {
            errs.push("eval: m_test must list at least one positive sample size".into());
        }
        if e.lambda_grid.as_ref().is_some_and(|grid| grid.is_empty() || grid.iter().any(|&v| v < 0.0)) {
            errs.push("eval: lambda_grid must be nonempty with nonnegative entries".into());
        }
        if let Some(sweep) = &self.sweep {
            let empty = match sweep {
                SweepSection::MIn { values } => values.is_empty() || values.iter().any(|&v| v == 0),
                SweepSection::NoiseVar { values } => values.is_empty() || values.iter().any(|&v| v < 0.0),
                // Zero adaptation steps is meaningful: the risk of the
                // unadapted meta-trained head.
                SweepSection::AdaptSteps { values, step } => values.is_empty() || *step <= 0.0,
                SweepSection::MeanSpec { values } => values.is_empty(),
            };
            if empty {
                errs.push("sweep: values must be nonempty and within each kind's range".into());
            }
        }
        errs
    }

    pub fn validated(&self) -> Result<(), CliError> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!(
                "config has {} problem(s):\n  - {}",
                errs.len(),
                errs.join("\n  - ")
            )))
        }
    }

    /// Content hash of the configuration itself (canonical JSON form); wall
    /// time and outputs never feed it, so the hash changes iff the config does.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
