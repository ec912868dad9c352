//! Executable forms of the theory: the asymptotic head-covariance target
//! Λ★, step-size/initialisation condition checking, the unlearning rate
//! bound, the sample-covariance outer-product identity, and population-loss
//! evaluators (closed form on its domain, Monte Carlo everywhere).
//!
//! Notation: B★ ∈ R^{d×k} orthonormal, task parameters w★ ~ N(μ★, Σ★),
//! label noise variance σ², σ̄² = tr(Σ★) + σ², m the inner-loop sample
//! count, α the inner step size. Λ★ := (1/α)·(m/(m+1))·(I_k − ((m+1)/σ̄²·Σ★
//! + I_k)⁻¹).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::InitSpec;
use crate::linalg;
use crate::parallel;
use crate::rng::RngSpec;
use crate::task_model::GroundTruth;
use crate::{Error, Result};

/// Asymptotic value of C_tC_tᵀ = B★ᵀB_tB_tᵀB★, with the inputs that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// k×k symmetric PSD matrix, bounded above by (1/α)(m/(m+1))·I.
    pub lambda_star: DMatrix<f64>,
    pub alpha: f64,
    pub m_in: usize,
    pub sigma_bar2: f64,
}

/// One inequality of the convergence theorem: `margin` is the slack (right
/// side minus left side), so `holds` iff `margin >= 0`, except the strict
/// feasibility inequality which needs `margin > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionMargin {
    pub label: String,
    pub holds: bool,
    pub margin: f64,
}

impl ConditionMargin {
    fn new(label: &str, holds: bool, margin: f64) -> Self {
        Self { label: label.to_string(), holds, margin }
    }
}

/// Outcome of evaluating every convergence-theorem inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Strict c₁/c₂ feasibility inequality against λ_min(Σ★); also requires
    /// 0 < c₁ < 1 and c₂ > 0.
    pub feasibility: ConditionMargin,
    /// Step-size conditions 1-4 on (α, β).
    pub step: [ConditionMargin; 4],
    /// Initialisation conditions 1-3 on (B₀, w₀).
    pub init: [ConditionMargin; 3],
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.feasibility.holds
            && self.step.iter().all(|c| c.holds)
            && self.init.iter().all(|c| c.holds)
    }

    /// All conditions in a fixed order, for tabular display.
    pub fn rows(&self) -> Vec<&ConditionMargin> {
        let mut out = vec![&self.feasibility];
        out.extend(self.step.iter());
        out.extend(self.init.iter());
        out
    }
}

/// Monte-Carlo estimate of a matrix mean with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McMatrix {
    pub mean: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub trials: usize,
}

/// Monte-Carlo estimate of a scalar mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McScalar {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Λ★ for the given instance.
///
/// Panics if `alpha <= 0`, `m_in == 0`, or σ̄² = 0 (a zero-variance task
/// distribution has no adapted-head covariance to speak of).
pub fn lambda_star(gt: &GroundTruth, alpha: f64, m_in: usize) -> FixedPoint {
    assert!(alpha > 0.0, "inner step size must be positive");
    assert!(m_in >= 1, "inner sample count must be at least 1");
    let sigma_bar2 = gt.sigma_bar2();
    assert!(sigma_bar2 > 0.0, "lambda_star needs tr(sigma_star) + noise_var > 0");
    let m = m_in as f64;
    let k = gt.k;
    let shrink = (&gt.sigma_star * ((m + 1.0) / sigma_bar2) + DMatrix::identity(k, k))
        .cholesky()
        .expect("matrix has eigenvalues >= 1")
        .inverse();
    let mut lam = (DMatrix::identity(k, k) - shrink) * (m / (alpha * (m + 1.0)));
    symmetrize(&mut lam);
    debug_assert_lambda_bounds(&lam, alpha, m);
    FixedPoint { lambda_star: lam, alpha, m_in, sigma_bar2 }
}

/// Generalised fixed point Λ★(τ, γ) = (1/α)(m/(m+1))·(I − ((σ̄²+τ)/(m+1) + γ)
/// · (Σ★ + (σ̄²+τ)/(m+1)·I)⁻¹); reduces to Λ★ at (0, 0).
pub fn lambda_star_shifted(
    gt: &GroundTruth,
    alpha: f64,
    m_in: usize,
    tau: f64,
    gamma: f64,
) -> Result<FixedPoint> {
    assert!(alpha > 0.0, "inner step size must be positive");
    assert!(m_in >= 1, "inner sample count must be at least 1");
    let sigma_bar2 = gt.sigma_bar2();
    assert!(sigma_bar2 > 0.0, "lambda_star_shifted needs tr(sigma_star) + noise_var > 0");
    if tau < 0.0 {
        return Err(Error::Precondition(format!("tau must be >= 0, got {tau}")));
    }
    let lam_min = gt.sigma_lambda_min();
    if gamma < 0.0 || gamma >= lam_min {
        return Err(Error::Precondition(format!(
            "gamma must lie in [0, lambda_min(sigma_star)) = [0, {lam_min:.6}), got {gamma}"
        )));
    }
    let m = m_in as f64;
    let k = gt.k;
    let floor = (sigma_bar2 + tau) / (m + 1.0);
    let inv = (&gt.sigma_star + DMatrix::identity(k, k) * floor)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("sigma_star + floor*I not positive definite".into()))?
        .inverse();
    let mut lam = (DMatrix::identity(k, k) - inv * (floor + gamma)) * (m / (alpha * (m + 1.0)));
    symmetrize(&mut lam);
    Ok(FixedPoint { lambda_star: lam, alpha, m_in, sigma_bar2 })
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let t = a.transpose();
    *a += t;
    *a *= 0.5;
}

fn debug_assert_lambda_bounds(lam: &DMatrix<f64>, alpha: f64, m: f64) {
    if cfg!(debug_assertions) {
        let ev = linalg::sym_eigenvalues(lam);
        let hi = m / (alpha * (m + 1.0));
        assert!(ev[0] >= -1e-10, "lambda_star must be PSD, got min eigenvalue {}", ev[0]);
        assert!(
            ev[ev.len() - 1] <= hi + 1e-10 * hi.max(1.0),
            "lambda_star must be bounded by (1/alpha)(m/(m+1)), got {} > {hi}",
            ev[ev.len() - 1]
        );
    }
}

/// Evaluate every inequality of the convergence theorem for an instance,
/// step sizes, scaled-orthonormal initialisation, and constants (c₁, c₂).
///
/// The initialisation scheme pins ‖B₀‖₂² = `init.b_scale` and ‖w₀‖₂² =
/// `init.w_scale` exactly, so those two conditions are evaluated on the
/// scales. Full rank of B★ᵀB₀ holds almost surely and is enforced by
/// resampling at draw time; its margin is reported as +∞ here, and
/// [`check_init_full_rank`] measures it for a concrete draw.
pub fn check_theorem3(
    gt: &GroundTruth,
    alpha: f64,
    beta: f64,
    m_in: usize,
    init: &InitSpec,
    c1: f64,
    c2: f64,
) -> ConditionReport {
    let m = m_in as f64;
    let sigma_bar2 = gt.sigma_bar2();
    let s_norm = gt.sigma_spectral_norm();
    let lam_min = gt.sigma_lambda_min();

    let feas_lhs = c2 * (m + 1.0) / m + c1 * (c2 + sigma_bar2) / (2.0 * m * (m + 1.0));
    let constants_ok = c1 > 0.0 && c1 < 1.0 && c2 > 0.0;
    let feasibility = ConditionMargin::new(
        "c1/c2 feasibility vs lambda_min",
        constants_ok && feas_lhs < lam_min,
        lam_min - feas_lhs,
    );

    let step3_rhs = c2 * (m + 2.0) / m
        + c1 * c2 / (2.0 * m * (m + 1.0))
        + 2.0 * sigma_bar2 / m
        + (m + 1.0) / m * s_norm
        + (4.0 / 3.0) * m / ((m + 1.0) * (m + 1.0));
    let step4_rhs = 6.0 * (s_norm + (c2 + sigma_bar2) / (m + 1.0));
    let step = [
        margin_at_least("step 1: beta <= alpha", alpha - beta),
        margin_at_least("step 2: 1/alpha^2 >= 4*spectral(sigma_star)", 1.0 / (alpha * alpha) - 4.0 * s_norm),
        margin_at_least("step 3: 1/(alpha*beta) >= drift bound", 1.0 / (alpha * beta) - step3_rhs),
        margin_at_least("step 4: 1/(alpha*beta) >= contraction bound", 1.0 / (alpha * beta) - step4_rhs),
    ];

    let init = [
        ConditionMargin::new("init 1: b_star^T B0 full rank (by construction)", true, f64::INFINITY),
        margin_at_least("init 2: spectral(B0)^2 <= c1/(alpha*(m+1))", c1 / (alpha * (m + 1.0)) - init.b_scale),
        margin_at_least("init 3: |w0|^2 <= alpha*c2", alpha * c2 - init.w_scale),
    ];

    ConditionReport { feasibility, step, init }
}

fn margin_at_least(label: &str, margin: f64) -> ConditionMargin {
    ConditionMargin::new(label, margin >= 0.0, margin)
}

/// Measure initialisation condition 1 on a concrete draw: the margin is the
/// smallest singular value of B★ᵀB₀, and the condition holds when it exceeds
/// 1e-8 times the spectral norm of B₀. The comparison is against B₀'s own
/// scale (B★ has unit spectral norm) so that a B₀ lying entirely in the
/// complement of col(B★) is rejected instead of passing on rounding noise.
pub fn check_init_full_rank(gt: &GroundTruth, b0: &DMatrix<f64>) -> ConditionMargin {
    let c0 = gt.b_star.transpose() * b0;
    let sv2 = linalg::sv_squared(&c0);
    let smin = sv2[0].max(0.0).sqrt();
    let scale = linalg::spectral_norm_sq(b0).sqrt();
    ConditionMargin::new("init 1: b_star^T B0 full rank", scale > 0.0 && smin > 1e-8 * scale, smin)
}

/// Upper bound 1/(κt + 1/‖D₀‖₂²) on the squared spectral norm of the
/// complement-aligned component D_t = B★⊥ᵀB_t, with κ = α²βσ̄²/m.
pub fn rate_bound(t: usize, alpha: f64, beta: f64, m_in: usize, sigma_bar2: f64, d0_norm2: f64) -> f64 {
    debug_assert!(alpha > 0.0 && beta > 0.0, "step sizes must be positive");
    debug_assert!(m_in >= 1, "inner sample count must be at least 1");
    debug_assert!(d0_norm2 >= 0.0, "initial norm must be nonnegative");
    let kappa = alpha * alpha * beta * sigma_bar2 / m_in as f64;
    1.0 / (kappa * t as f64 + 1.0 / d0_norm2)
}

const UNIT_NORM_TOL: f64 = 1e-10;

/// E[Σ̂ v vᵀ Σ̂] = (1/n)·I_d + ((n+1)/n)·v vᵀ for Σ̂ = (1/n)XᵀX a sample
/// covariance of n standard Gaussian rows and v a unit vector.
pub fn wwtop_expectation(n: usize, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Precondition("sample count n must be at least 1".into()));
    }
    if (v.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Precondition(format!("v must be a unit vector, got norm {}", v.norm())));
    }
    let d = v.len();
    let nf = n as f64;
    let mut out = DMatrix::identity(d, d) / nf;
    out.ger((nf + 1.0) / nf, v, v, 1.0);
    Ok(out)
}

/// Trials per Monte-Carlo chunk. Each chunk draws from its own derived
/// stream and chunks merge in index order, so estimates are identical for
/// every thread count.
const MC_CHUNK: usize = 8192;

/// Monte-Carlo mean of Σ̂ v vᵀ Σ̂ over fresh sample covariances, with
/// entrywise standard errors. Trials run in fixed-size chunks mapped over
/// the available threads; memory stays O(d²) per thread.
pub fn mc_wwtop(n: usize, v: &DVector<f64>, d: usize, trials: usize, rng: &RngSpec) -> Result<McMatrix> {
    if n == 0 {
        return Err(Error::Precondition("sample count n must be at least 1".into()));
    }
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    if v.len() != d {
        return Err(Error::Dim(format!("v has length {}, expected d = {d}", v.len())));
    }
    if (v.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Precondition(format!("v must be a unit vector, got norm {}", v.norm())));
    }
    let sizes = parallel::chunk_sizes(trials, MC_CHUNK);
    let partials = parallel::indexed_map(sizes.len(), |c| {
        let sub = rng.child_indexed("mc_chunk", c as u64);
        let mut gen = sub.stream(&sub.labels.features);
        let mut x = DMatrix::zeros(n, d);
        let mut u = DVector::zeros(n);
        let mut s = DVector::zeros(d);
        let mut sum = DMatrix::zeros(d, d);
        let mut sumsq = DMatrix::zeros(d, d);
        for _ in 0..sizes[c] {
            linalg::fill_normal_matrix(&mut x, &mut gen);
            u.gemv(1.0, &x, v, 0.0);
            s.gemv_tr(1.0 / n as f64, &x, &u, 0.0);
            for j in 0..d {
                for i in 0..d {
                    let e = s[i] * s[j];
                    sum[(i, j)] += e;
                    sumsq[(i, j)] += e * e;
                }
            }
        }
        (sum, sumsq)
    });
    let mut sum = DMatrix::zeros(d, d);
    let mut sumsq = DMatrix::zeros(d, d);
    for (part_sum, part_sumsq) in partials {
        sum += part_sum;
        sumsq += part_sumsq;
    }
    Ok(finish_matrix_moments(sum, sumsq, trials))
}

fn finish_matrix_moments(sum: DMatrix<f64>, sumsq: DMatrix<f64>, trials: usize) -> McMatrix {
    let t = trials as f64;
    let mean = sum / t;
    let std_err = if trials >= 2 {
        DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
            let var = (sumsq[(i, j)] - t * mean[(i, j)] * mean[(i, j)]) / (t - 1.0);
            (var.max(0.0) / t).sqrt()
        })
    } else {
        DMatrix::from_element(mean.nrows(), mean.ncols(), f64::INFINITY)
    };
    McMatrix { mean, std_err, trials }
}

/// Population loss of a point satisfying B★⊥ᵀB = 0 and Bw = 0, expressed in
/// Λ = B★ᵀBBᵀB★ for isotropic Σ★ = c·I:
///
///   L(Λ) = α²/(2m)·((m+1)·c + σ̄²)·tr(Λ²) − α·c·tr(Λ) + tr(Σ★)/2.
pub fn closed_form_anil_loss(lam: &DMatrix<f64>, gt: &GroundTruth, alpha: f64, m_in: usize) -> Result<f64> {
    assert!(alpha > 0.0, "inner step size must be positive");
    assert!(m_in >= 1, "inner sample count must be at least 1");
    let k = gt.k;
    if lam.shape() != (k, k) {
        return Err(Error::Dim(format!("lambda must be {k}x{k}, got {}x{}", lam.nrows(), lam.ncols())));
    }
    if (lam - lam.transpose()).abs().max() > 1e-9 {
        return Err(Error::Precondition("lambda must be symmetric".into()));
    }
    if linalg::sym_eigenvalues(lam)[0] < -1e-10 {
        return Err(Error::Precondition("lambda must be PSD".into()));
    }
    let c = gt.sigma_star[(0, 0)];
    let iso_dev = (&gt.sigma_star - DMatrix::identity(k, k) * c).abs().max();
    if iso_dev > 1e-12 * c.abs().max(1.0) {
        return Err(Error::Unsupported(
            "closed-form loss is only available for isotropic task covariance".into(),
        ));
    }
    let m = m_in as f64;
    let sigma_bar2 = gt.sigma_bar2();
    let tr_lam2 = lam.iter().map(|x| x * x).sum::<f64>();
    Ok(alpha * alpha / (2.0 * m) * ((m + 1.0) * c + sigma_bar2) * tr_lam2 - alpha * c * lam.trace()
        + gt.sigma_star.trace() / 2.0)
}

/// Monte-Carlo estimate of the population loss ½·E‖B·w̃ − B★w★‖² where w̃ is
/// the head after one inner gradient step on m fresh samples.
pub fn mc_anil_loss(
    b: &DMatrix<f64>,
    w: &DVector<f64>,
    gt: &GroundTruth,
    alpha: f64,
    m_in: usize,
    trials: usize,
    rng: &RngSpec,
) -> Result<McScalar> {
    assert!(m_in >= 1, "inner sample count must be at least 1");
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    if b.nrows() != gt.d || b.ncols() != w.len() {
        return Err(Error::Dim(format!(
            "representation is {}x{}, head has length {}, instance dimension {}",
            b.nrows(),
            b.ncols(),
            w.len(),
            gt.d
        )));
    }
    let (m, d, kp) = (m_in, gt.d, b.ncols());
    let sigma = gt.noise_var.sqrt();
    let bw = b * w;
    let sizes = parallel::chunk_sizes(trials, MC_CHUNK);
    let partials = parallel::indexed_map(sizes.len(), |c| {
        let sub = rng.child_indexed("mc_chunk", c as u64);
        let mut task_gen = sub.stream(&sub.labels.tasks);
        let mut feat_gen = sub.stream(&sub.labels.features);
        let mut noise_gen = sub.stream(&sub.labels.noise);
        let mut x = DMatrix::zeros(m, d);
        let mut z = DVector::zeros(m);
        let mut bws = DVector::zeros(d);
        let mut r = DVector::zeros(m);
        let mut g = DVector::zeros(d);
        let mut wt = DVector::zeros(kp);
        let mut out = DVector::zeros(d);
        let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
        for _ in 0..sizes[c] {
            let ws = gt.draw_w_star(&mut task_gen);
            bws.gemv(1.0, &gt.b_star, &ws, 0.0);
            linalg::fill_normal_matrix(&mut x, &mut feat_gen);
            linalg::fill_normal_vector(&mut z, &mut noise_gen);
            // r = X(Bw − B★w★) − σz, the negated inner-loop residual.
            r.gemv(1.0, &x, &bw, 0.0);
            r.gemv(-1.0, &x, &bws, 1.0);
            r.axpy(-sigma, &z, 1.0);
            g.gemv_tr(1.0, &x, &r, 0.0);
            // w̃ = w − (α/m)·BᵀXᵀ(XBw − y)
            wt.gemv_tr(-alpha / m as f64, b, &g, 0.0);
            wt += w;
            out.gemv(1.0, b, &wt, 0.0);
            out -= &bws;
            let sample = 0.5 * out.norm_squared();
            sum += sample;
            sumsq += sample * sample;
        }
        (sum, sumsq)
    });
    let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
    for (part_sum, part_sumsq) in partials {
        sum += part_sum;
        sumsq += part_sumsq;
    }
    let t = trials as f64;
    let mean = sum / t;
    let std_err = if trials >= 2 {
        (((sumsq - t * mean * mean) / (t - 1.0)).max(0.0) / t).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(McScalar { mean, std_err, trials })
}

/// Remove the component of B outside col(B★): B₁ = B − B★⊥B★⊥ᵀB. Never
/// increases the population loss.
pub fn project_out_complement(b: &DMatrix<f64>, gt: &GroundTruth) -> DMatrix<f64> {
    let d_tb = gt.b_star_perp.transpose() * b;
    b - &gt.b_star_perp * d_tb
}

/// Remove the head component seen by B: w' = w − B⁺Bw, so Bw' = 0. Never
/// increases the population loss once B★⊥ᵀB = 0.
pub fn project_out_head(b: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let pinv = b
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::RankDeficient(format!("pseudo-inverse failed: {e}")))?;
    Ok(w - pinv * (b * w))
}

/// A loss-minimising point: B̂ = B★·Λ★^{1/2} padded with k'−k zero columns,
/// ŵ = 0. Satisfies B★⊥ᵀB̂ = 0, B̂ŵ = 0, B★ᵀB̂B̂ᵀB★ = Λ★.
pub fn lambda_star_point(
    gt: &GroundTruth,
    k_prime: usize,
    alpha: f64,
    m_in: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if k_prime < gt.k {
        return Err(Error::Dim(format!("need k_prime >= k, got k_prime={k_prime}, k={}", gt.k)));
    }
    let fp = lambda_star(gt, alpha, m_in);
    let root = linalg::spd_sqrt(&fp.lambda_star);
    let left = &gt.b_star * root;
    let mut b_hat = DMatrix::zeros(gt.d, k_prime);
    b_hat.view_mut((0, 0), (gt.d, gt.k)).copy_from(&left);
    Ok((b_hat, DVector::zeros(k_prime)))
}

/// Monte-Carlo losses along the minimality chain: the point itself, its
/// complement projection, the head projection of that, and the Λ★ point.
/// Each step is provably no worse in population loss.
pub fn anil_loss_chain(
    b: &DMatrix<f64>,
    w: &DVector<f64>,
    gt: &GroundTruth,
    alpha: f64,
    m_in: usize,
    trials: usize,
    rng: &RngSpec,
) -> Result<[McScalar; 4]> {
    let b1 = project_out_complement(b, gt);
    let w2 = project_out_head(&b1, w)?;
    let (b_hat, w_hat) = lambda_star_point(gt, b.ncols(), alpha, m_in)?;
    Ok([
        mc_anil_loss(b, w, gt, alpha, m_in, trials, &rng.child("chain_raw"))?,
        mc_anil_loss(&b1, w, gt, alpha, m_in, trials, &rng.child("chain_complement"))?,
        mc_anil_loss(&b1, &w2, gt, alpha, m_in, trials, &rng.child("chain_head"))?,
        mc_anil_loss(&b_hat, &w_hat, gt, alpha, m_in, trials, &rng.child("chain_opt"))?,
    ])
}
