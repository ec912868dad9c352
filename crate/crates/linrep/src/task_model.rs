//! Ground-truth structure and task sampling.
//!
//! The hidden problem is (B★, Σ★, μ★, σ²): an orthonormal d×k representation,
//! a task-parameter covariance, an optional task mean, and label-noise
//! variance. A task i draws w★,i ~ N(μ★, Σ★), a design X with i.i.d. N(0, I_d)
//! rows, and labels y = X B★ w★,i + z, z ~ N(0, σ²I). Training tasks split
//! their m = m_in + m_out rows into inner/outer subsets; test tasks are
//! unsplit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng::RngSpec;
use crate::{Error, Result};

/// Task-parameter covariance family. The diagonal families are scaled to a
/// pinned Frobenius norm (√k and 2√k respectively) so that task energy is
/// comparable across k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovSpec {
    /// Σ★ = c·I_k.
    Isotropic { c: f64 },
    /// Σ★ ∝ diag(1, 2, …, k), scaled so ‖Σ★‖_F = √k.
    DiagLinear,
    /// Σ★ ∝ diag(e¹, e², …, e^k), scaled so ‖Σ★‖_F = 2√k; condition e^(k−1).
    DiagExp,
}

impl CovSpec {
    fn build(&self, k: usize) -> Result<DMatrix<f64>> {
        match self {
            CovSpec::Isotropic { c } => {
                if *c <= 0.0 {
                    return Err(Error::Precondition(format!("isotropic scale must be positive, got {c}")));
                }
                Ok(DMatrix::identity(k, k) * *c)
            }
            CovSpec::DiagLinear => {
                let raw: Vec<f64> = (1..=k).map(|j| j as f64).collect();
                Ok(scaled_diag(&raw, (k as f64).sqrt()))
            }
            CovSpec::DiagExp => {
                let raw: Vec<f64> = (1..=k).map(|j| (j as f64).exp()).collect();
                Ok(scaled_diag(&raw, 2.0 * (k as f64).sqrt()))
            }
        }
    }
}

fn scaled_diag(raw: &[f64], target_frobenius: f64) -> DMatrix<f64> {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = target_frobenius / norm;
    DMatrix::from_diagonal(&DVector::from_iterator(raw.len(), raw.iter().map(|x| x * scale)))
}

impl std::fmt::Display for CovSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovSpec::Isotropic { c } => write!(f, "isotropic({c})"),
            CovSpec::DiagLinear => write!(f, "diag_linear"),
            CovSpec::DiagExp => write!(f, "diag_exp"),
        }
    }
}

/// Task-mean family: centered, or uniform on the radius-√k sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSpec {
    Zero,
    Sphere,
}

impl std::fmt::Display for MeanSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanSpec::Zero => write!(f, "zero"),
            MeanSpec::Sphere => write!(f, "sphere"),
        }
    }
}

/// The hidden problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub d: usize,
    pub k: usize,
    /// d×k, orthonormal columns.
    pub b_star: DMatrix<f64>,
    /// d×(d−k) orthonormal basis of the complement of col(B★).
    pub b_star_perp: DMatrix<f64>,
    /// k×k symmetric PSD task covariance.
    pub sigma_star: DMatrix<f64>,
    /// k-vector task mean.
    pub mu_star: DVector<f64>,
    /// Label-noise variance σ² ≥ 0.
    pub noise_var: f64,
    sigma_sqrt: DMatrix<f64>,
}

impl GroundTruth {
    /// Assemble from raw fields, validating the invariants; used by the
    /// binary container loader.
    pub fn from_parts(
        b_star: DMatrix<f64>,
        sigma_star: DMatrix<f64>,
        mu_star: DVector<f64>,
        noise_var: f64,
    ) -> Result<Self> {
        let (d, k) = b_star.shape();
        if k >= d {
            return Err(Error::Dim(format!("need k < d, got k={k}, d={d}")));
        }
        if sigma_star.shape() != (k, k) || mu_star.len() != k {
            return Err(Error::Dim("sigma_star/mu_star shapes inconsistent with b_star".into()));
        }
        if noise_var < 0.0 {
            return Err(Error::Precondition(format!("noise variance must be >= 0, got {noise_var}")));
        }
        let gram_err = (b_star.transpose() * &b_star - DMatrix::identity(k, k)).abs().max();
        if gram_err > 1e-10 {
            return Err(Error::Precondition(format!(
                "b_star columns not orthonormal (max Gram deviation {gram_err:.2e})"
            )));
        }
        let sym_err = (&sigma_star - sigma_star.transpose()).abs().max();
        if sym_err > 1e-10 {
            return Err(Error::Precondition("sigma_star not symmetric".into()));
        }
        let min_eig = linalg::sym_eigenvalues(&sigma_star)[0];
        if min_eig < -1e-10 {
            return Err(Error::Precondition(format!("sigma_star not PSD (min eigenvalue {min_eig:.2e})")));
        }
        let b_star_perp = linalg::orthonormal_complement(&b_star);
        let sigma_sqrt = linalg::spd_sqrt(&sigma_star);
        Ok(Self { d, k, b_star, b_star_perp, sigma_star, mu_star, noise_var, sigma_sqrt })
    }

    /// σ̄² = trace(Σ★) + σ², the effective noise scale of the adapted head.
    pub fn sigma_bar2(&self) -> f64 {
        self.sigma_star.trace() + self.noise_var
    }

    /// Smallest eigenvalue of Σ★.
    pub fn sigma_lambda_min(&self) -> f64 {
        linalg::sym_eigenvalues(&self.sigma_star)[0]
    }

    /// Spectral norm of Σ★.
    pub fn sigma_spectral_norm(&self) -> f64 {
        let ev = linalg::sym_eigenvalues(&self.sigma_star);
        ev[ev.len() - 1]
    }

    /// Draw one task parameter w★ ~ N(μ★, Σ★).
    pub(crate) fn draw_w_star<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.mu_star + &self.sigma_sqrt * linalg::normal_vector(self.k, rng)
    }
}

/// Build a ground truth: B★ is the sign-fixed Q factor of a Gaussian d×k
/// draw from the `b_star` stream; μ★ (when random) is drawn next from the
/// same stream.
pub fn make_ground_truth(
    d: usize,
    k: usize,
    cov_spec: &CovSpec,
    mean_spec: MeanSpec,
    noise_var: f64,
    rng: &RngSpec,
) -> Result<GroundTruth> {
    if k == 0 || k >= d {
        return Err(Error::Dim(format!("need 1 <= k < d, got k={k}, d={d}")));
    }
    if noise_var < 0.0 {
        return Err(Error::Precondition(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let mut stream = rng.stream(&rng.labels.b_star);
    let b_star = linalg::orthonormal_columns(d, k, &mut stream);
    let mu_star = match mean_spec {
        MeanSpec::Zero => DVector::zeros(k),
        MeanSpec::Sphere => linalg::sphere_vector(k, (k as f64).sqrt(), &mut stream),
    };
    let sigma_star = cov_spec.build(k)?;
    GroundTruth::from_parts(b_star, sigma_star, mu_star, noise_var)
}

/// One batch of training tasks with inner/outer splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub m_in: usize,
    pub m_out: usize,
    /// Per task: m_in×d inner design.
    pub x_in: Vec<DMatrix<f64>>,
    /// Per task: inner labels.
    pub y_in: Vec<DVector<f64>>,
    /// Per task: m_out×d outer design.
    pub x_out: Vec<DMatrix<f64>>,
    /// Per task: outer labels.
    pub y_out: Vec<DVector<f64>>,
    /// k×N matrix of true task parameters (one column per task).
    pub w_star: DMatrix<f64>,
}

impl TaskBatch {
    pub fn n_tasks(&self) -> usize {
        self.x_in.len()
    }

    pub fn m_total(&self) -> usize {
        self.m_in + self.m_out
    }
}

/// Sample N tasks. Substream discipline: task i draws its parameter from
/// `tasks[i]`, its design from `features[i]`, and its noise from `noise[i]`,
/// so task i's data is independent of N and of the other tasks.
pub fn sample_tasks(
    gt: &GroundTruth,
    n_tasks: usize,
    m_in: usize,
    m_out: usize,
    rng: &RngSpec,
) -> Result<TaskBatch> {
    if n_tasks < 1 || m_in < 1 || m_out < 1 {
        return Err(Error::Precondition(format!(
            "need n_tasks, m_in, m_out >= 1; got {n_tasks}, {m_in}, {m_out}"
        )));
    }
    let m = m_in + m_out;
    let sigma = gt.noise_var.sqrt();
    let mut x_in = Vec::with_capacity(n_tasks);
    let mut y_in = Vec::with_capacity(n_tasks);
    let mut x_out = Vec::with_capacity(n_tasks);
    let mut y_out = Vec::with_capacity(n_tasks);
    let mut w_star = DMatrix::zeros(gt.k, n_tasks);
    for i in 0..n_tasks {
        let w = gt.draw_w_star(&mut rng.indexed(&rng.labels.tasks, i as u64));
        let x = linalg::normal_matrix(m, gt.d, &mut rng.indexed(&rng.labels.features, i as u64));
        let mut y = &x * (&gt.b_star * &w);
        if sigma > 0.0 {
            let z = linalg::normal_vector(m, &mut rng.indexed(&rng.labels.noise, i as u64));
            y.axpy(sigma, &z, 1.0);
        }
        x_in.push(x.rows(0, m_in).into_owned());
        y_in.push(y.rows(0, m_in).into_owned());
        x_out.push(x.rows(m_in, m_out).into_owned());
        y_out.push(y.rows(m_in, m_out).into_owned());
        w_star.set_column(i, &w);
    }
    Ok(TaskBatch { m_in, m_out, x_in, y_in, x_out, y_out, w_star })
}

/// Sample a single unsplit test task: (X, y, w★) with X of shape m_test×d.
///
/// The draw uses substream index 0 of the given spec's task/feature/noise
/// streams; callers wanting many test tasks pass distinct derived specs
/// (e.g. `spec.child_indexed("test_task", j)`).
pub fn sample_test_task(
    gt: &GroundTruth,
    m_test: usize,
    rng: &RngSpec,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    if m_test < 1 {
        return Err(Error::Precondition("need m_test >= 1".into()));
    }
    let w = gt.draw_w_star(&mut rng.indexed(&rng.labels.tasks, 0));
    let x = linalg::normal_matrix(m_test, gt.d, &mut rng.indexed(&rng.labels.features, 0));
    let mut y = &x * (&gt.b_star * &w);
    if gt.noise_var > 0.0 {
        let z = linalg::normal_vector(m_test, &mut rng.indexed(&rng.labels.noise, 0));
        y.axpy(gt.noise_var.sqrt(), &z, 1.0);
    }
    Ok((x, y, w))
}

/// Draw n task parameters w★,i (k×n, one column each), using the same
/// per-index substreams as [`sample_tasks`].
pub fn sample_task_params(gt: &GroundTruth, n: usize, rng: &RngSpec) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(gt.k, n);
    for i in 0..n {
        out.set_column(i, &gt.draw_w_star(&mut rng.indexed(&rng.labels.tasks, i as u64)));
    }
    out
}
