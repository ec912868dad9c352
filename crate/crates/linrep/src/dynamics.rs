//! Training dynamics: finite-task FO-ANIL and FO-MAML on sampled batches,
//! and the two idealised recursions (infinite tasks, infinite samples).
//!
//! Inner loop (head only, one step of size α on m_in samples):
//!   w_{t,i} = w_t − (α/m_in)·B_tᵀX_inᵀ(X_in B_t w_t − y_in).
//! Outer loop (first order, step β averaged over tasks): gradients of the
//! m_out-sample squared loss evaluated at the adapted head, the adapted head
//! treated as a constant. FO-MAML additionally adapts B in the inner loop
//! and evaluates outer gradients at the adapted pair.
//!
//! Infinite tasks (μ★ = 0):
//!   w_{t+1} = w_t − β(I − αB_tᵀB_t)B_tᵀB_t w_t,
//!   B_{t+1} = B_t − βB_t·E[w_{t,i}w_{t,i}ᵀ] + αβB★Σ★B★ᵀB_t,
//! with E[w_{t,i}w_{t,i}ᵀ] in closed form (three finite-sample terms carrying
//! 1/m_in factors).
//!
//! Infinite samples (μ★ allowed): both parameter recursions with
//! Δ_t = I − αB_tᵀB_t.

use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng::RngSpec;
use crate::task_model::{sample_tasks, GroundTruth, TaskBatch};
use crate::theory_oracles;
use crate::{Error, Result};

/// Learner state: representation B (d×k'), head w (k'), and step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub b: DMatrix<f64>,
    pub w: DVector<f64>,
    /// Inner (adaptation) step size α > 0.
    pub alpha: f64,
    /// Outer (meta) step size β > 0.
    pub beta: f64,
}

impl MetaParams {
    pub fn k_prime(&self) -> usize {
        self.b.ncols()
    }
}

/// Initialisation scales: B₀ᵀB₀ = b_scale·I (scaled orthonormal columns) and
/// ‖w₀‖² = w_scale (uniform on the sphere).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub b_scale: f64,
    pub w_scale: f64,
}

impl InitSpec {
    /// The reference experimental choice: B₀ᵀB₀ = 1/(4α)·I, ‖w₀‖² = 0.01·k'·α.
    pub fn reference_default(alpha: f64, k_prime: usize) -> Self {
        Self { b_scale: 1.0 / (4.0 * alpha), w_scale: 0.01 * k_prime as f64 * alpha }
    }
}

/// One dynamics step's output; `e_ww` is populated by the infinite-tasks
/// recursion, which has the adapted-head second moment in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub params: MetaParams,
    pub e_ww: Option<DMatrix<f64>>,
}

/// Draw initial parameters: B₀ = √s·Q with Q haar-ish orthonormal (QR of a
/// Gaussian), resampled until B★ᵀB₀ is numerically full rank, then w₀ on the
/// sphere of squared radius `w_scale`, both from the `init` stream.
pub fn init_params(
    gt: &GroundTruth,
    k_prime: usize,
    alpha: f64,
    beta: f64,
    init: &InitSpec,
    rng: &RngSpec,
) -> Result<MetaParams> {
    if k_prime < gt.k || k_prime > gt.d {
        return Err(Error::Dim(format!(
            "width must satisfy k <= k_prime <= d, got k={}, k_prime={k_prime}, d={}",
            gt.k, gt.d
        )));
    }
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::Precondition(format!("step sizes must be positive, got alpha={alpha}, beta={beta}")));
    }
    if init.b_scale <= 0.0 || init.w_scale < 0.0 {
        return Err(Error::Precondition(format!(
            "need b_scale > 0 and w_scale >= 0, got b_scale={}, w_scale={}",
            init.b_scale, init.w_scale
        )));
    }
    let mut gen = rng.stream(&rng.labels.init);
    let mut b = None;
    for _ in 0..16 {
        let candidate = linalg::orthonormal_columns(gt.d, k_prime, &mut gen) * init.b_scale.sqrt();
        if theory_oracles::check_init_full_rank(gt, &candidate).holds {
            b = Some(candidate);
            break;
        }
    }
    let b = b.ok_or_else(|| {
        Error::RankDeficient("initial b_star overlap stayed rank-deficient after 16 draws".into())
    })?;
    let w = linalg::sphere_vector(k_prime, init.w_scale.sqrt(), &mut gen);
    Ok(MetaParams { b, w, alpha, beta })
}

/// Adapted head after one inner gradient step on the given samples.
pub fn anil_inner_head(params: &MetaParams, x_in: &DMatrix<f64>, y_in: &DVector<f64>) -> DVector<f64> {
    let m = x_in.nrows();
    assert!(m >= 1, "inner adaptation needs at least one sample");
    assert_eq!(x_in.ncols(), params.b.nrows(), "feature dimension mismatch");
    assert_eq!(y_in.len(), m, "label count mismatch");
    let bw = &params.b * &params.w;
    let mut r = x_in * bw;
    r.axpy(-1.0, y_in, 1.0);
    let g = x_in.tr_mul(&r);
    let mut w = params.w.clone();
    w.gemv_tr(-params.alpha / m as f64, &params.b, &g, 1.0);
    w
}

/// Scratch buffers for one finite-batch step; reused across steps by `train`.
struct FiniteWorkspace {
    /// d×N, per-task inner-loss gradient directions X_inᵀ(X_in·B·w − y_in).
    g: DMatrix<f64>,
    /// k'×N adapted heads.
    w_adapt: DMatrix<f64>,
    /// N×k' transpose of `w_adapt` for the outer gradient contraction.
    w_adapt_t: DMatrix<f64>,
    /// d×N adapted predictions' coefficient vectors B_{t,i}·w_{t,i}.
    theta: DMatrix<f64>,
    /// d×N per-task outer residual pullbacks X_outᵀ(X_out·θ_i − y_out).
    u: DMatrix<f64>,
    /// N head-overlap factors (α/m_in)·wᵀw_{t,i}; only used when B adapts.
    c: DVector<f64>,
    r_in: DVector<f64>,
    r_out: DVector<f64>,
}

impl FiniteWorkspace {
    fn new(d: usize, k_prime: usize, n: usize, m_in: usize, m_out: usize) -> Self {
        Self {
            g: DMatrix::zeros(d, n),
            w_adapt: DMatrix::zeros(k_prime, n),
            w_adapt_t: DMatrix::zeros(n, k_prime),
            theta: DMatrix::zeros(d, n),
            u: DMatrix::zeros(d, n),
            c: DVector::zeros(n),
            r_in: DVector::zeros(m_in),
            r_out: DVector::zeros(m_out),
        }
    }

    fn fits(&self, d: usize, k_prime: usize, n: usize, m_in: usize, m_out: usize) -> bool {
        self.g.shape() == (d, n)
            && self.w_adapt.shape() == (k_prime, n)
            && self.r_in.len() == m_in
            && self.r_out.len() == m_out
    }
}

/// Shared core of the two finite-task dynamics. `adapt_b = false` freezes B
/// in the inner loop (FO-ANIL); `adapt_b = true` also takes the inner
/// gradient step on B (FO-MAML). All per-task work is batched into dense
/// d×N / k'×N products; the task reduction is a gemm plus a fixed pairwise
/// column sum, so the result does not depend on scheduling.
fn finite_step_with(
    ws: &mut FiniteWorkspace,
    params: &MetaParams,
    batch: &TaskBatch,
    adapt_b: bool,
) -> MetaParams {
    let n = batch.n_tasks();
    assert!(n > 0, "finite step needs a nonempty batch");
    let (m_in, m_out) = (batch.m_in, batch.m_out);
    let d = params.b.nrows();
    let kp = params.b.ncols();
    assert!(ws.fits(d, kp, n, m_in, m_out), "workspace shaped for a different batch");
    assert_eq!(batch.x_in[0].ncols(), d, "feature dimension mismatch");
    let alpha_in = params.alpha / m_in as f64;

    let bw = &params.b * &params.w;
    for i in 0..n {
        ws.r_in.gemv(1.0, &batch.x_in[i], &bw, 0.0);
        ws.r_in.axpy(-1.0, &batch.y_in[i], 1.0);
        ws.g.column_mut(i).gemv_tr(1.0, &batch.x_in[i], &ws.r_in, 0.0);
    }

    // w_{t,i} = w − (α/m_in)·Bᵀg_i, all tasks at once.
    ws.w_adapt.gemm_tr(-alpha_in, &params.b, &ws.g, 0.0);
    for i in 0..n {
        ws.w_adapt.column_mut(i).axpy(1.0, &params.w, 1.0);
    }

    // θ_i = B_{t,i}·w_{t,i}; with B frozen this is B·w_{t,i}, otherwise the
    // rank-one inner update subtracts (α/m_in)(wᵀw_{t,i})·g_i.
    ws.theta.gemm(1.0, &params.b, &ws.w_adapt, 0.0);
    if adapt_b {
        ws.c.gemv_tr(alpha_in, &ws.w_adapt, &params.w, 0.0);
        for i in 0..n {
            let gi = ws.g.column(i);
            ws.theta.column_mut(i).axpy(-ws.c[i], &gi, 1.0);
        }
    }

    for i in 0..n {
        ws.r_out.gemv(1.0, &batch.x_out[i], &ws.theta.column(i), 0.0);
        ws.r_out.axpy(-1.0, &batch.y_out[i], 1.0);
        ws.u.column_mut(i).gemv_tr(1.0, &batch.x_out[i], &ws.r_out, 0.0);
    }

    let scale = 1.0 / (n as f64 * m_out as f64);
    ws.w_adapt.transpose_to(&mut ws.w_adapt_t);
    let mut grad_b = DMatrix::zeros(d, kp);
    grad_b.gemm(scale, &ws.u, &ws.w_adapt_t, 0.0);

    let u_sum = linalg::pairwise_col_sum(&ws.u);
    let mut grad_w = DVector::zeros(kp);
    grad_w.gemv_tr(scale, &params.b, &u_sum, 0.0);
    if adapt_b {
        // ∇_w through the adapted B_{t,i}ᵀ picks up −(α/m_in)·w·Σᵢ g_iᵀu_i.
        let gu = ws.g.dot(&ws.u);
        grad_w.axpy(-alpha_in * scale * gu, &params.w, 1.0);
    }

    MetaParams {
        b: &params.b - grad_b * params.beta,
        w: &params.w - grad_w * params.beta,
        alpha: params.alpha,
        beta: params.beta,
    }
}

/// One FO-ANIL outer step on a finite task batch.
pub fn foanil_step(params: &MetaParams, batch: &TaskBatch) -> MetaParams {
    let mut ws = FiniteWorkspace::new(params.b.nrows(), params.b.ncols(), batch.n_tasks(), batch.m_in, batch.m_out);
    finite_step_with(&mut ws, params, batch, false)
}

/// One FO-MAML outer step on a finite task batch.
pub fn fomaml_step(params: &MetaParams, batch: &TaskBatch) -> MetaParams {
    let mut ws = FiniteWorkspace::new(params.b.nrows(), params.b.ncols(), batch.n_tasks(), batch.m_in, batch.m_out);
    finite_step_with(&mut ws, params, batch, true)
}

/// FO-MAML with the representation frozen in the inner loop; definitionally
/// identical to FO-ANIL and exercised to pin that reduction.
pub fn fomaml_step_head_only(params: &MetaParams, batch: &TaskBatch) -> MetaParams {
    let mut ws = FiniteWorkspace::new(params.b.nrows(), params.b.ncols(), batch.n_tasks(), batch.m_in, batch.m_out);
    finite_step_with(&mut ws, params, batch, false)
}

/// One outer step of the infinite-task recursion, returning the closed-form
/// adapted-head second moment E[w_{t,i}w_{t,i}ᵀ] used in the B update.
///
/// Only derived for centered task distributions; μ★ ≠ 0 is rejected because
/// the corresponding cross term is not available.
pub fn infinite_tasks_step(
    params: &MetaParams,
    gt: &GroundTruth,
    m_in: usize,
) -> Result<(MetaParams, DMatrix<f64>)> {
    assert!(m_in >= 1, "inner sample count must be at least 1");
    assert_eq!(params.b.nrows(), gt.d, "representation rows must match the instance dimension");
    if gt.mu_star.iter().any(|x| *x != 0.0) {
        return Err(Error::Unsupported(
            "infinite-task recursion is only derived for zero task mean".into(),
        ));
    }
    let (alpha, beta) = (params.alpha, params.beta);
    let m = m_in as f64;
    let kp = params.b.ncols();

    let btb = params.b.tr_mul(&params.b);
    let a = DMatrix::identity(kp, kp) - &btb * alpha;
    let aw = &a * &params.w;
    let c = gt.b_star.tr_mul(&params.b);
    let sc = &gt.sigma_star * &c;
    let ctsc = c.tr_mul(&sc);
    let btbw = &btb * &params.w;
    let bw_norm2 = (&params.b * &params.w).norm_squared();
    let noise_scale = bw_norm2 + gt.sigma_bar2();

    let mut e_ww = ctsc * (alpha * alpha * (m + 1.0) / m);
    e_ww.ger(1.0, &aw, &aw, 1.0);
    e_ww.ger(alpha * alpha / m, &btbw, &btbw, 1.0);
    e_ww += &btb * (alpha * alpha / m * noise_scale);
    let t = e_ww.transpose();
    e_ww += t;
    e_ww *= 0.5;

    let w_next = &params.w - (&a * &btbw) * beta;
    let b_next = &params.b - (&params.b * &e_ww) * beta + (&gt.b_star * &sc) * (alpha * beta);
    Ok((MetaParams { b: b_next, w: w_next, alpha, beta }, e_ww))
}

/// One outer step of the infinite-sample recursion (μ★ may be nonzero):
///   w' = w − βΔBᵀ(Bw − B★μ★),
///   B' = B − β(BΔw)(Δw + αBᵀB★μ★)ᵀ + β(I − αBBᵀ)B★(μ★(Δw)ᵀ + αΣ★B★ᵀB),
/// with Δ = I − αBᵀB.
pub fn infinite_samples_step(params: &MetaParams, gt: &GroundTruth) -> MetaParams {
    assert_eq!(params.b.nrows(), gt.d, "representation rows must match the instance dimension");
    let (alpha, beta) = (params.alpha, params.beta);
    let kp = params.b.ncols();

    let btb = params.b.tr_mul(&params.b);
    let delta = DMatrix::identity(kp, kp) - btb * alpha;
    let bmu = &gt.b_star * &gt.mu_star;
    let dw = &delta * &params.w;

    let resid = &params.b * &params.w - &bmu;
    let w_next = &params.w - &delta * params.b.tr_mul(&resid) * beta;

    let bdw = &params.b * &dw;
    let v = &dw + params.b.tr_mul(&bmu) * alpha;
    let c = gt.b_star.tr_mul(&params.b);
    let mut m_mat = &gt.sigma_star * c * alpha;
    m_mat.ger(1.0, &gt.mu_star, &dw, 1.0);
    let p = &gt.b_star * m_mat;
    let p2 = &p - &params.b * (params.b.tr_mul(&p) * alpha);

    let mut b_next = &params.b + p2 * beta;
    b_next.ger(-beta, &bdw, &v, 1.0);
    MetaParams { b: b_next, w: w_next, alpha, beta }
}

/// Which recursion `train` iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FiniteAnil,
    FiniteMaml,
    InfTasks,
    InfSamples,
}

impl TrainMode {
    pub fn is_finite(self) -> bool {
        matches!(self, TrainMode::FiniteAnil | TrainMode::FiniteMaml)
    }
}

/// Outer-loop schedule: step count, trace cadence, and the batch geometry
/// used by the finite modes (`m_in` also feeds the infinite-task recursion
/// and the rate-bound column of the trace).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub cadence: usize,
    pub n_tasks: usize,
    pub m_in: usize,
    pub m_out: usize,
    /// Resample a fresh batch every step instead of reusing one fixed batch.
    pub resample: bool,
}

/// Alignment metrics logged along a trajectory. C_t = B★ᵀB_t carries the
/// learned-subspace overlap, D_t = B★⊥ᵀB_t the complement energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub sv2_min_c: f64,
    pub sv2_max_c: f64,
    pub sv2_mean_d: f64,
    pub sv2_max_d: f64,
    /// ‖B_tw_t − B★μ★‖₂².
    pub btw_residual: f64,
    /// ‖C_tC_tᵀ − Λ★‖_F / ‖Λ★‖_F; NaN when Λ★ is undefined.
    pub lambda_residual: f64,
    /// Theoretical ceiling for ‖D_t‖₂² at this step.
    pub rate_bound: f64,
    pub wall_ms: f64,
}

/// Receives trace rows as they are produced.
pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord) -> Result<()>;
}

/// Collects rows in memory.
#[derive(Debug, Default)]
pub struct VecTraceSink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for VecTraceSink {
    fn record(&mut self, rec: &TraceRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// Discards rows.
#[derive(Debug, Default)]
pub struct NullTraceSink;

impl TraceSink for NullTraceSink {
    fn record(&mut self, _rec: &TraceRecord) -> Result<()> {
        Ok(())
    }
}

pub const TRACE_HEADER: [&str; 9] = [
    "step",
    "sv2_min_C",
    "sv2_max_C",
    "sv2_mean_D",
    "sv2_max_D",
    "btw_residual",
    "lambda_residual",
    "rate_bound",
    "wall_ms",
];

/// Streams rows to CSV.
pub struct CsvTraceSink<W: IoWrite> {
    writer: csv::Writer<W>,
}

impl CsvTraceSink<std::fs::File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::from_writer(std::fs::File::create(path)?)
    }
}

impl<W: IoWrite> CsvTraceSink<W> {
    pub fn from_writer(w: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(TRACE_HEADER)?;
        Ok(Self { writer })
    }

    pub fn finish(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

impl<W: IoWrite> TraceSink for CsvTraceSink<W> {
    fn record(&mut self, rec: &TraceRecord) -> Result<()> {
        self.writer.write_record([
            rec.step.to_string(),
            rec.sv2_min_c.to_string(),
            rec.sv2_max_c.to_string(),
            rec.sv2_mean_d.to_string(),
            rec.sv2_max_d.to_string(),
            rec.btw_residual.to_string(),
            rec.lambda_residual.to_string(),
            rec.rate_bound.to_string(),
            rec.wall_ms.to_string(),
        ])?;
        Ok(())
    }
}

/// Precomputed quantities for trace rows: Λ★ (when defined), its Frobenius
/// norm, and the initial complement energy ‖D₀‖₂² anchoring the rate bound.
struct TraceContext<'a> {
    gt: &'a GroundTruth,
    lambda_star: Option<DMatrix<f64>>,
    lambda_norm: f64,
    d0_norm2: f64,
    alpha: f64,
    beta: f64,
    m_in: usize,
    sigma_bar2: f64,
}

impl<'a> TraceContext<'a> {
    fn new(gt: &'a GroundTruth, params: &MetaParams, schedule: &Schedule) -> Self {
        let lambda_star = if gt.sigma_bar2() > 0.0 && schedule.m_in >= 1 {
            Some(theory_oracles::lambda_star(gt, params.alpha, schedule.m_in).lambda_star)
        } else {
            None
        };
        let lambda_norm = lambda_star.as_ref().map_or(f64::NAN, |l| l.norm());
        let d0 = gt.b_star_perp.tr_mul(&params.b);
        Self {
            gt,
            lambda_star,
            lambda_norm,
            d0_norm2: linalg::spectral_norm_sq(&d0),
            alpha: params.alpha,
            beta: params.beta,
            m_in: schedule.m_in.max(1),
            sigma_bar2: gt.sigma_bar2(),
        }
    }

    fn record(&self, step: usize, params: &MetaParams, start: Instant) -> TraceRecord {
        let c = self.gt.b_star.tr_mul(&params.b);
        let d = self.gt.b_star_perp.tr_mul(&params.b);
        let sv2_c = linalg::sv_squared(&c);
        let sv2_d = linalg::sv_squared(&d);
        let btw = (&params.b * &params.w - &self.gt.b_star * &self.gt.mu_star).norm_squared();
        let lambda_residual = match &self.lambda_star {
            Some(ls) => (&c * c.transpose() - ls).norm() / self.lambda_norm,
            None => f64::NAN,
        };
        TraceRecord {
            step,
            sv2_min_c: sv2_c[0],
            sv2_max_c: sv2_c[sv2_c.len() - 1],
            sv2_mean_d: sv2_d.sum() / sv2_d.len() as f64,
            sv2_max_d: sv2_d[sv2_d.len() - 1],
            btw_residual: btw,
            lambda_residual,
            rate_bound: theory_oracles::rate_bound(
                step,
                self.alpha,
                self.beta,
                self.m_in,
                self.sigma_bar2,
                self.d0_norm2,
            ),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// Iterate the chosen dynamics for `schedule.steps` outer steps, emitting a
/// trace row at step 0, every `cadence` steps, and the final step.
///
/// Finite modes draw one batch up front and reuse it each step; with
/// `schedule.resample` a fresh batch is drawn per step from per-step derived
/// seeds.
pub fn train(
    params: MetaParams,
    gt: &GroundTruth,
    schedule: &Schedule,
    mode: TrainMode,
    rng: &RngSpec,
    sink: &mut dyn TraceSink,
) -> Result<MetaParams> {
    if schedule.cadence == 0 {
        return Err(Error::Precondition("trace cadence must be at least 1".into()));
    }
    if schedule.m_in == 0 {
        return Err(Error::Precondition("m_in must be at least 1".into()));
    }
    if mode.is_finite() && (schedule.n_tasks == 0 || schedule.m_out == 0) {
        return Err(Error::Precondition("finite modes need n_tasks >= 1 and m_out >= 1".into()));
    }
    let start = Instant::now();
    let ctx = TraceContext::new(gt, &params, schedule);

    let mut fixed_batch = None;
    let mut ws = None;
    if mode.is_finite() {
        if !schedule.resample {
            fixed_batch = Some(sample_tasks(gt, schedule.n_tasks, schedule.m_in, schedule.m_out, rng)?);
        }
        ws = Some(FiniteWorkspace::new(
            gt.d,
            params.k_prime(),
            schedule.n_tasks,
            schedule.m_in,
            schedule.m_out,
        ));
    }

    let mut p = params;
    sink.record(&ctx.record(0, &p, start))?;
    for t in 1..=schedule.steps {
        p = match mode {
            TrainMode::FiniteAnil | TrainMode::FiniteMaml => {
                let fresh;
                let batch = if schedule.resample {
                    fresh = sample_tasks(
                        gt,
                        schedule.n_tasks,
                        schedule.m_in,
                        schedule.m_out,
                        &rng.child_indexed("step_batch", t as u64),
                    )?;
                    &fresh
                } else {
                    fixed_batch.as_ref().expect("fixed batch drawn above")
                };
                finite_step_with(ws.as_mut().expect("workspace built above"), &p, batch, mode == TrainMode::FiniteMaml)
            }
            TrainMode::InfTasks => infinite_tasks_step(&p, gt, schedule.m_in)?.0,
            TrainMode::InfSamples => infinite_samples_step(&p, gt),
        };
        if t % schedule.cadence == 0 || t == schedule.steps {
            sink.record(&ctx.record(t, &p, start))?;
        }
    }
    Ok(p)
}
