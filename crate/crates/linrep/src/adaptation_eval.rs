//! Test-time adaptation and excess-risk evaluation.
//!
//! A trained pair (B̂, ŵ) meets a fresh task through m_test labelled samples;
//! the head is adapted (one gradient step, several, or a ridge solve on the
//! learnt features XB̂) and judged by the excess risk ½‖B̂·head − B★w★‖₂²,
//! the population gap of the squared-error loss ½E[(y − x·θ)²] under
//! standard normal features. Ridge penalties are tuned on a disjoint
//! validation task set, and a high-probability bound on the error norm with
//! explicit constants is exposed alongside.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::ridge_regression;
use crate::linalg;
use crate::rng::RngSpec;
use crate::task_model::{sample_test_task, GroundTruth};
use crate::{Error, Result};

/// How the head is fit to a test task's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adaptation {
    /// One gradient step of size `alpha` from the trained head.
    OneGd { alpha: f64 },
    /// `n_steps` full-batch gradient steps of size `step` from the trained head.
    KGd { step: f64, n_steps: usize },
    /// Ridge solve on features XB̂ with the penalty chosen from `lambda_grid`
    /// on validation tasks.
    Ridge { lambda_grid: Vec<f64> },
}

/// Evaluation protocol: task counts, test sample sizes, adaptation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_test_tasks: usize,
    pub m_test: Vec<usize>,
    pub n_val_tasks: usize,
    pub adaptation: Adaptation,
}

impl EvalConfig {
    /// Table-style defaults: 10000 test tasks, 2000 validation tasks,
    /// m_test ∈ {20, 30}.
    pub fn with_adaptation(adaptation: Adaptation) -> Self {
        Self { n_test_tasks: 10_000, m_test: vec![20, 30], n_val_tasks: 2_000, adaptation }
    }
}

/// 13 logarithmically spaced penalties covering [1e-4, 1e2].
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

pub const RISK_QUANTILE_LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
}

/// Excess-risk summary for one trained model at one test sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub m_test: usize,
    pub mean_risk: f64,
    pub quantiles: Vec<Quantile>,
    pub chosen_lambda: Option<f64>,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Per-m_test statistics across independently trained runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub m_test: usize,
    pub mean_risk: f64,
    /// Sample standard deviation of the per-run mean risks.
    pub std_risk: f64,
    pub per_run_means: Vec<f64>,
    pub chosen_lambdas: Vec<f64>,
}

/// One head-adaptation gradient step on the test samples:
///   w_test = ŵ − (α/m)·B̂ᵀXᵀ(XB̂ŵ − y).
pub fn one_gd_adapt(
    b_hat: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    let m = x.nrows();
    assert!(m >= 1, "adaptation needs at least one sample");
    assert_eq!(x.ncols(), b_hat.nrows(), "feature dimension mismatch");
    assert_eq!(y.len(), m, "label count mismatch");
    assert_eq!(w_hat.len(), b_hat.ncols(), "head width mismatch");
    let mut r = x * (b_hat * w_hat);
    r.axpy(-1.0, y, 1.0);
    let g = x.tr_mul(&r);
    let mut w = w_hat.clone();
    w.gemv_tr(-alpha / m as f64, b_hat, &g, 1.0);
    w
}

/// Head iterates under full-batch gradient descent on one task's samples.
/// `heads[0]` is the unadapted head; iteration stops early with `diverged`
/// set if an iterate stops being finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptTrajectory {
    pub heads: Vec<DVector<f64>>,
    pub diverged: bool,
}

pub fn multi_gd_adapt(
    b_hat: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    step: f64,
    n_steps: usize,
) -> Result<AdaptTrajectory> {
    if step <= 0.0 {
        return Err(Error::Precondition(format!("adaptation step must be positive, got {step}")));
    }
    let mut heads = Vec::with_capacity(n_steps + 1);
    heads.push(w_hat.clone());
    let mut diverged = false;
    for _ in 0..n_steps {
        let next = one_gd_adapt(b_hat, heads.last().expect("nonempty trajectory"), x, y, step);
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        heads.push(next);
    }
    Ok(AdaptTrajectory { heads, diverged })
}

/// Excess risk of a head on a task: ½‖B̂·head − B★w★‖₂², the population
/// risk gap under the ½-squared-error loss with standard normal features.
pub fn excess_risk(b_hat: &DMatrix<f64>, head: &DVector<f64>, gt: &GroundTruth, w_star: &DVector<f64>) -> f64 {
    0.5 * (b_hat * head - &gt.b_star * w_star).norm_squared()
}

/// Order statistic at the given level: the ⌈q·n⌉-th smallest value.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&level), "quantile level must lie in [0, 1], got {level}");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("risks are finite"));
    let idx = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Precomputed per-task pieces of the ridge normal equations, so the λ grid
/// reuses one feature pass per task.
struct RidgeCache {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    m: usize,
}

impl RidgeCache {
    fn new(features: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self { gram: features.tr_mul(features), rhs: features.tr_mul(y), m: features.nrows() }
    }

    fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        let mut g = self.gram.clone();
        let shift = 2.0 * lambda * self.m as f64;
        for i in 0..g.nrows() {
            g[(i, i)] += shift;
        }
        linalg::chol_solve(&g, &self.rhs)
    }
}

fn adapt_head(
    adaptation: &Adaptation,
    lambda: Option<f64>,
    b_hat: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    match adaptation {
        Adaptation::OneGd { alpha } => Ok(one_gd_adapt(b_hat, w_hat, x, y, *alpha)),
        Adaptation::KGd { step, n_steps } => {
            let traj = multi_gd_adapt(b_hat, w_hat, x, y, *step, *n_steps)?;
            if traj.diverged {
                return Err(Error::Diverged("head adaptation left the finite range".into()));
            }
            Ok(traj.heads.into_iter().next_back().expect("nonempty trajectory"))
        }
        Adaptation::Ridge { .. } => {
            let lambda = lambda.expect("ridge adaptation needs a selected penalty");
            ridge_regression(&(x * b_hat), y, lambda)
        }
    }
}

/// Evaluate one trained model. For ridge adaptation the penalty is selected
/// per m_test by mean excess risk on `n_val_tasks` validation tasks drawn
/// from the `val` substream, then frozen for the `n_test_tasks` test tasks
/// from the `test` substream. Means use a fixed-order pairwise reduction, so
/// the report depends only on the seed, never on evaluation scheduling.
///
/// Raw-feature baselines reuse this entry point: single-task ridge passes
/// B̂ = I_d, oracle ridge passes B̂ = B★.
pub fn evaluate_method(
    b_hat: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    gt: &GroundTruth,
    cfg: &EvalConfig,
    rng: &RngSpec,
) -> Result<EvalReport> {
    if cfg.n_test_tasks == 0 || cfg.m_test.is_empty() {
        return Err(Error::Precondition("evaluation needs at least one test task and one m_test".into()));
    }
    if let Adaptation::Ridge { lambda_grid } = &cfg.adaptation {
        if lambda_grid.is_empty() || cfg.n_val_tasks == 0 {
            return Err(Error::Precondition("ridge evaluation needs a nonempty grid and validation tasks".into()));
        }
    }

    let mut rows = Vec::with_capacity(cfg.m_test.len());
    for &m_test in &cfg.m_test {
        let chosen_lambda = match &cfg.adaptation {
            Adaptation::Ridge { lambda_grid } => Some(tune_lambda(
                b_hat,
                gt,
                m_test,
                cfg.n_val_tasks,
                lambda_grid,
                &rng.child_indexed("val", m_test as u64),
            )?),
            _ => None,
        };

        let test_spec = rng.child_indexed("test", m_test as u64);
        let mut risks = Vec::with_capacity(cfg.n_test_tasks);
        for t in 0..cfg.n_test_tasks {
            let (x, y, w_star) = sample_test_task(gt, m_test, &test_spec.child_indexed("task", t as u64))?;
            let head = adapt_head(&cfg.adaptation, chosen_lambda, b_hat, w_hat, &x, &y)?;
            risks.push(excess_risk(b_hat, &head, gt, &w_star));
        }
        let mean_risk = linalg::pairwise_sum(&risks) / risks.len() as f64;
        let quantiles = RISK_QUANTILE_LEVELS
            .iter()
            .map(|&level| Quantile { level, value: empirical_quantile(&risks, level) })
            .collect();
        rows.push(EvalRow { m_test, mean_risk, quantiles, chosen_lambda, n_tasks: cfg.n_test_tasks });
    }
    Ok(EvalReport { rows })
}

/// Mean-risk argmin over the grid on validation tasks; ties keep the
/// smallest penalty. One feature pass per task serves every grid point.
fn tune_lambda(
    b_hat: &DMatrix<f64>,
    gt: &GroundTruth,
    m_test: usize,
    n_val_tasks: usize,
    grid: &[f64],
    rng: &RngSpec,
) -> Result<f64> {
    let mut totals = vec![0.0f64; grid.len()];
    for v in 0..n_val_tasks {
        let (x, y, w_star) = sample_test_task(gt, m_test, &rng.child_indexed("task", v as u64))?;
        let cache = RidgeCache::new(&(&x * b_hat), &y);
        for (j, &lambda) in grid.iter().enumerate() {
            let head = cache.solve(lambda)?;
            totals[j] += excess_risk(b_hat, &head, gt, &w_star);
        }
    }
    let best = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite validation risks"))
        .expect("nonempty grid")
        .0;
    Ok(grid[best])
}

/// Combine per-run reports of one method into across-run statistics.
/// All reports must cover the same m_test list in the same order.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    let first = reports.first().ok_or_else(|| Error::Precondition("no reports to aggregate".into()))?;
    let m_tests: Vec<usize> = first.rows.iter().map(|r| r.m_test).collect();
    for rep in reports {
        let got: Vec<usize> = rep.rows.iter().map(|r| r.m_test).collect();
        if got != m_tests {
            return Err(Error::Precondition(format!(
                "reports disagree on m_test lists: {m_tests:?} vs {got:?}"
            )));
        }
    }
    let mut rows = Vec::with_capacity(m_tests.len());
    for (i, &m_test) in m_tests.iter().enumerate() {
        let per_run_means: Vec<f64> = reports.iter().map(|r| r.rows[i].mean_risk).collect();
        let n = per_run_means.len() as f64;
        let mean = linalg::pairwise_sum(&per_run_means) / n;
        let std_risk = if per_run_means.len() > 1 {
            (per_run_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let chosen_lambdas = reports.iter().filter_map(|r| r.rows[i].chosen_lambda).collect();
        rows.push(AggregateRow { m_test, mean_risk: mean, std_risk, per_run_means, chosen_lambdas });
    }
    Ok(rows)
}

/// High-probability excess-risk bound (level 1 − 4e^{−k/2}) for the ideally
/// aligned representation: the sum of a bias term from the shrunken inner
/// step and two concentration terms in k/m_test, all constants explicit.
pub fn prop2_bound(w_star_norm: f64, gt: &GroundTruth, m_in: usize, m_test: usize) -> Result<f64> {
    if m_test < gt.k {
        return Err(Error::Precondition(format!(
            "bound needs m_test >= k, got m_test={m_test}, k={}",
            gt.k
        )));
    }
    assert!(m_in >= 1, "inner sample count must be at least 1");
    assert!(w_star_norm >= 0.0, "norm must be nonnegative");
    let m = m_in as f64;
    let sb2 = gt.sigma_bar2();
    let k = gt.k as f64;
    let mt = m_test as f64;

    let bias = (1.0 + sb2 / (gt.sigma_lambda_min() + sb2 / m)) / (m + 1.0) * w_star_norm;
    let shrink = 1.0 - (1.0 + sb2 / (gt.sigma_spectral_norm() + sb2 / m)) / (m + 1.0);
    let concentration = 3.0 * shrink * (2.0 * (k / mt).sqrt()).max(4.0 * k / mt) * w_star_norm;
    let noise = 36.0 * shrink * gt.noise_var.sqrt() * (k / mt).sqrt();
    Ok(bias + concentration + noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::infinite_tasks_step;
    use crate::task_model::{make_ground_truth, CovSpec, MeanSpec};
    use crate::theory_oracles;

    const EXACT_TOL: f64 = 1e-12;

    fn instance(seed: u64, d: usize, k: usize, noise_var: f64) -> GroundTruth {
        make_ground_truth(d, k, &CovSpec::DiagLinear, MeanSpec::Zero, noise_var, &RngSpec::new(seed)).unwrap()
    }

    #[test]
    fn one_gd_zero_step_returns_the_head() {
        let gt = instance(1, 8, 2, 0.5);
        let (x, y, _) = sample_test_task(&gt, 5, &RngSpec::new(2)).unwrap();
        let mut gen = RngSpec::new(3).stream("init");
        let b = linalg::normal_matrix(8, 3, &mut gen);
        let w = linalg::normal_vector(3, &mut gen);
        assert_eq!(one_gd_adapt(&b, &w, &x, &y, 0.0), w);
    }

    #[test]
    fn one_gd_matches_elementwise_gradient_oracle() {
        let gt = instance(4, 7, 2, 1.0);
        let (x, y, _) = sample_test_task(&gt, 6, &RngSpec::new(5)).unwrap();
        let mut gen = RngSpec::new(6).stream("init");
        let b = linalg::normal_matrix(7, 3, &mut gen);
        let w = linalg::normal_vector(3, &mut gen);
        let alpha = 0.07;
        let adapted = one_gd_adapt(&b, &w, &x, &y, alpha);

        let (m, d, kp) = (6, 7, 3);
        for l in 0..kp {
            let mut grad_l = 0.0;
            for s in 0..m {
                let mut pred = 0.0;
                for j in 0..d {
                    let mut bw = 0.0;
                    for q in 0..kp {
                        bw += b[(j, q)] * w[q];
                    }
                    pred += x[(s, j)] * bw;
                }
                let mut xb = 0.0;
                for j in 0..d {
                    xb += x[(s, j)] * b[(j, l)];
                }
                grad_l += (pred - y[s]) * xb;
            }
            let expect = w[l] - alpha / m as f64 * grad_l;
            let rel = (adapted[l] - expect).abs() / expect.abs().max(1e-30);
            assert!(rel < EXACT_TOL, "adapted head entry {l} off by relative {rel:.2e}");
        }
    }

    #[test]
    fn ideal_representation_shrinks_the_task_exactly() {
        // B̂ carrying the ideal alignment, no head, no noise, and features
        // with (1/m)XᵀX = I: one adaptation step lands on B★(αΛ★)w★.
        let gt = make_ground_truth(10, 3, &CovSpec::DiagLinear, MeanSpec::Zero, 0.0, &RngSpec::new(7)).unwrap();
        let (alpha, m_in) = (0.05, 20usize);
        let (b_hat, w_hat) = theory_oracles::lambda_star_point(&gt, 4, alpha, m_in).unwrap();
        let fp = theory_oracles::lambda_star(&gt, alpha, m_in);

        let m_test = 12;
        let mut gen = RngSpec::new(8).stream("features");
        // X = √m·U with orthonormal columns gives (1/m)XᵀX = I exactly.
        let x = linalg::orthonormal_columns(m_test, 10, &mut gen) * (m_test as f64).sqrt();
        let w_star = gt.draw_w_star(&mut RngSpec::new(9).stream("tasks"));
        let y = &x * (&gt.b_star * &w_star);

        let w_test = one_gd_adapt(&b_hat, &w_hat, &x, &y, alpha);
        let got = &b_hat * &w_test;
        let expect = &gt.b_star * (&fp.lambda_star * &w_star) * alpha;
        let dev = (&got - &expect).abs().max();
        assert!(dev < 1e-10, "adapted prediction must equal the shrunken task, deviation {dev:.2e}");
    }

    #[test]
    fn multi_gd_first_step_equals_one_gd() {
        let gt = instance(10, 8, 2, 0.5);
        let (x, y, _) = sample_test_task(&gt, 6, &RngSpec::new(11)).unwrap();
        let mut gen = RngSpec::new(12).stream("init");
        let b = linalg::normal_matrix(8, 3, &mut gen) * 0.5;
        let w = linalg::normal_vector(3, &mut gen);
        let traj = multi_gd_adapt(&b, &w, &x, &y, 0.02, 1).unwrap();
        assert!(!traj.diverged);
        assert_eq!(traj.heads.len(), 2);
        assert_eq!(traj.heads[0], w);
        assert_eq!(traj.heads[1], one_gd_adapt(&b, &w, &x, &y, 0.02), "one step must match bit for bit");
    }

    #[test]
    fn multi_gd_on_oracle_representation_is_monotone() {
        // Noiseless labels: the least-squares head equals the true one, and a
        // small-step descent contracts the Euclidean error at every step.
        // Under noise the limit shifts and late iterates can drift past the
        // truth, so monotone risk is only a property of the clean problem.
        let gt = instance(13, 8, 2, 0.0);
        let (x, y, w_star) = sample_test_task(&gt, 10, &RngSpec::new(14)).unwrap();
        let w0 = DVector::zeros(2);
        let traj = multi_gd_adapt(&gt.b_star, &w0, &x, &y, 0.02, 200).unwrap();
        assert!(!traj.diverged);
        let risks: Vec<f64> = traj.heads.iter().map(|h| excess_risk(&gt.b_star, h, &gt, &w_star)).collect();
        for pair in risks.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "risk rose from {} to {} under a small-step convex descent",
                pair[0],
                pair[1]
            );
        }
        assert!(risks[risks.len() - 1] < 0.5 * risks[0], "descent must make visible progress");
    }

    #[test]
    fn multi_gd_flags_divergence_for_large_steps() {
        let gt = instance(15, 8, 2, 0.5);
        let (x, y, _) = sample_test_task(&gt, 6, &RngSpec::new(16)).unwrap();
        let mut gen = RngSpec::new(17).stream("init");
        let b = linalg::normal_matrix(8, 3, &mut gen) * 3.0;
        let w = linalg::normal_vector(3, &mut gen);
        let traj = multi_gd_adapt(&b, &w, &x, &y, 50.0, 400).unwrap();
        assert!(traj.diverged, "a huge step on a quadratic must blow up");
        assert!(traj.heads.len() < 401, "divergence must cut the trajectory short");
        assert!(matches!(multi_gd_adapt(&b, &w, &x, &y, 0.0, 3), Err(Error::Precondition(_))));
    }

    #[test]
    fn learnt_representation_risk_is_u_shaped_in_adaptation_steps() {
        // Misspecified width, noisy tasks, trained to near-alignment: a few
        // head steps reduce risk, long adaptation overfits the noise.
        let gt = make_ground_truth(25, 3, &CovSpec::DiagLinear, MeanSpec::Zero, 2.0, &RngSpec::new(18)).unwrap();
        let alpha = 0.05;
        let init = crate::dynamics::InitSpec { b_scale: 1.0 / (4.0 * alpha), w_scale: 0.01 * 25.0 * alpha };
        let mut p = crate::dynamics::init_params(&gt, 25, alpha, alpha, &init, &RngSpec::new(19)).unwrap();
        for _ in 0..3000 {
            p = infinite_tasks_step(&p, &gt, 20).unwrap().0;
        }

        let m_test = 15;
        let n_tasks = 400;
        let n_steps = 120;
        let mut mean_risks = vec![0.0f64; n_steps + 1];
        let spec = RngSpec::new(20);
        for t in 0..n_tasks {
            let (x, y, w_star) = sample_test_task(&gt, m_test, &spec.child_indexed("task", t)).unwrap();
            let traj = multi_gd_adapt(&p.b, &p.w, &x, &y, 0.01, n_steps).unwrap();
            assert!(!traj.diverged);
            for (s, head) in traj.heads.iter().enumerate() {
                mean_risks[s] += excess_risk(&p.b, head, &gt, &w_star) / n_tasks as f64;
            }
        }
        let (best_step, best) = mean_risks
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let last = mean_risks[n_steps];
        assert!(best_step > 0, "some adaptation must help");
        assert!(best_step < n_steps, "the minimum must be interior");
        assert!(
            last > 1.05 * best,
            "risk must rise again after the optimum: best {best:.4} at step {best_step}, final {last:.4}"
        );
    }

    #[test]
    fn excess_risk_identities() {
        let gt = instance(21, 8, 2, 0.5);
        let w_star = gt.draw_w_star(&mut RngSpec::new(22).stream("tasks"));

        // A head reproducing the task exactly has zero risk.
        let mut b = DMatrix::zeros(8, 3);
        b.view_mut((0, 0), (8, 2)).copy_from(&gt.b_star);
        let head = DVector::from_vec(vec![w_star[0], w_star[1], 0.0]);
        assert_eq!(excess_risk(&b, &head, &gt, &w_star), 0.0);

        // A zero representation scores half the squared task norm.
        let zero = DMatrix::zeros(8, 3);
        let any_head = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let risk = excess_risk(&zero, &any_head, &gt, &w_star);
        let rel = (risk - 0.5 * w_star.norm_squared()).abs() / (0.5 * w_star.norm_squared());
        assert!(rel < EXACT_TOL, "orthonormal columns preserve the norm, relative error {rel:.2e}");

        // Random instance against a naive loop.
        let mut gen = RngSpec::new(23).stream("init");
        let b = linalg::normal_matrix(8, 3, &mut gen);
        let head = linalg::normal_vector(3, &mut gen);
        let fast = excess_risk(&b, &head, &gt, &w_star);
        let mut slow = 0.0;
        for j in 0..8 {
            let mut bh = 0.0;
            for l in 0..3 {
                bh += b[(j, l)] * head[l];
            }
            let mut bs = 0.0;
            for l in 0..2 {
                bs += gt.b_star[(j, l)] * w_star[l];
            }
            slow += 0.5 * (bh - bs) * (bh - bs);
        }
        assert!((fast - slow).abs() / slow < EXACT_TOL);
    }

    #[test]
    fn quantile_order_statistics() {
        let values = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&values, 0.0), 1.0);
        assert_eq!(empirical_quantile(&values, 0.2), 1.0);
        assert_eq!(empirical_quantile(&values, 0.5), 3.0);
        assert_eq!(empirical_quantile(&values, 0.9), 5.0);
        assert_eq!(empirical_quantile(&values, 1.0), 5.0);
    }

    #[test]
    fn lambda_grid_covers_the_documented_range() {
        let grid = default_lambda_grid();
        assert_eq!(grid.len(), 13);
        assert!((grid[0] - 1e-4).abs() < 1e-18);
        assert!((grid[12] - 1e2).abs() < 1e-10);
        for pair in grid.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!((ratio - 10f64.sqrt()).abs() < 1e-10, "grid must be uniform in log space");
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_noiseless_oracle_risk_vanishes() {
        let gt = make_ground_truth(10, 3, &CovSpec::DiagLinear, MeanSpec::Zero, 0.0, &RngSpec::new(24)).unwrap();
        let cfg = EvalConfig {
            n_test_tasks: 50,
            m_test: vec![8],
            n_val_tasks: 20,
            adaptation: Adaptation::Ridge { lambda_grid: vec![1e-10, 1e-4, 1.0] },
        };
        let w_dummy = DVector::zeros(3);
        let a = evaluate_method(&gt.b_star, &w_dummy, &gt, &cfg, &RngSpec::new(25)).unwrap();
        let b = evaluate_method(&gt.b_star, &w_dummy, &gt, &cfg, &RngSpec::new(25)).unwrap();
        assert_eq!(a, b, "same seed must reproduce the report bit for bit");

        let row = &a.rows[0];
        assert_eq!(row.chosen_lambda, Some(1e-10), "noiseless oracle prefers the weakest penalty");
        assert!(row.mean_risk < 1e-12, "noiseless oracle ridge recovers tasks, mean risk {}", row.mean_risk);
        assert!(row.quantiles.iter().all(|q| q.value >= 0.0));
    }

    #[test]
    fn single_task_semantics_use_raw_features() {
        // With B̂ = I_d the ridge features are the raw inputs; for m_test < d
        // regularisation is forced and risk stays well above the oracle's.
        let gt = make_ground_truth(12, 2, &CovSpec::DiagLinear, MeanSpec::Zero, 1.0, &RngSpec::new(26)).unwrap();
        let cfg = EvalConfig {
            n_test_tasks: 300,
            m_test: vec![8],
            n_val_tasks: 100,
            adaptation: Adaptation::Ridge { lambda_grid: default_lambda_grid() },
        };
        let eye = DMatrix::identity(12, 12);
        let raw = evaluate_method(&eye, &DVector::zeros(12), &gt, &cfg, &RngSpec::new(27)).unwrap();
        let oracle = evaluate_method(&gt.b_star, &DVector::zeros(2), &gt, &cfg, &RngSpec::new(27)).unwrap();
        assert!(
            raw.rows[0].mean_risk > 1.5 * oracle.rows[0].mean_risk,
            "raw-feature ridge ({}) must trail the oracle ({})",
            raw.rows[0].mean_risk,
            oracle.rows[0].mean_risk
        );
    }

    #[test]
    fn aggregate_runs_mixes_means_and_stds() {
        let row = |mean: f64, lam: Option<f64>| EvalRow {
            m_test: 20,
            mean_risk: mean,
            quantiles: vec![],
            chosen_lambda: lam,
            n_tasks: 10,
        };
        let reports = vec![
            EvalReport { rows: vec![row(1.0, Some(0.1))] },
            EvalReport { rows: vec![row(2.0, Some(0.2))] },
            EvalReport { rows: vec![row(3.0, None)] },
        ];
        let agg = aggregate_runs(&reports).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].m_test, 20);
        assert!((agg[0].mean_risk - 2.0).abs() < EXACT_TOL);
        assert!((agg[0].std_risk - 1.0).abs() < EXACT_TOL);
        assert_eq!(agg[0].chosen_lambdas, vec![0.1, 0.2]);

        let mismatched = vec![
            EvalReport { rows: vec![row(1.0, None)] },
            EvalReport {
                rows: vec![EvalRow { m_test: 30, mean_risk: 1.0, quantiles: vec![], chosen_lambda: None, n_tasks: 10 }],
            },
        ];
        assert!(matches!(aggregate_runs(&mismatched), Err(Error::Precondition(_))));
    }

    #[test]
    fn prop2_bound_limits_and_preconditions() {
        let gt = make_ground_truth(10, 3, &CovSpec::DiagLinear, MeanSpec::Zero, 0.0, &RngSpec::new(28)).unwrap();
        assert_eq!(prop2_bound(0.0, &gt, 20, 10).unwrap(), 0.0, "no task and no noise leave nothing to bound");
        assert!(matches!(prop2_bound(1.0, &gt, 20, 2), Err(Error::Precondition(_))));

        let noisy = make_ground_truth(10, 3, &CovSpec::DiagLinear, MeanSpec::Zero, 2.0, &RngSpec::new(29)).unwrap();
        let big = prop2_bound(1.0, &noisy, 5, 10).unwrap();
        let small = prop2_bound(1.0, &noisy, 1_000_000, 1_000_000_000).unwrap();
        assert!(big > small, "bound must tighten with more samples: {big} vs {small}");
        assert!(small < 1e-2, "bound must vanish in the joint limit, got {small}");
    }

    #[test]
    fn prop2_bound_covers_the_ideal_representation_quantile() {
        // At the ideally aligned representation, the 1 − 4e^{−k/2} quantile
        // of ‖B̂w_test − B★w★‖ over many tasks must sit below the bound.
        let gt = make_ground_truth(20, 5, &CovSpec::Isotropic { c: 1.0 }, MeanSpec::Zero, 2.0, &RngSpec::new(30)).unwrap();
        let (alpha, m_in, m_test) = (0.025, 20usize, 20usize);
        let (b_hat, _) = theory_oracles::lambda_star_point(&gt, 20, alpha, m_in).unwrap();

        let n_tasks = 4000;
        let spec = RngSpec::new(31);
        let mut errors = Vec::with_capacity(n_tasks);
        let mut norm_sum = 0.0;
        for t in 0..n_tasks {
            let (x, y, w_star) = sample_test_task(&gt, m_test, &spec.child_indexed("task", t as u64)).unwrap();
            let head = one_gd_adapt(&b_hat, &DVector::zeros(20), &x, &y, alpha);
            errors.push((&b_hat * &head - &gt.b_star * &w_star).norm());
            norm_sum += w_star.norm();
        }
        let level = 1.0 - 4.0 * (-(gt.k as f64) / 2.0).exp();
        let quantile = empirical_quantile(&errors, level);
        let bound = prop2_bound(norm_sum / n_tasks as f64, &gt, m_in, m_test).unwrap();
        assert!(
            quantile <= bound,
            "coverage failed: empirical quantile {quantile:.4} above certificate {bound:.4}"
        );
    }
}
