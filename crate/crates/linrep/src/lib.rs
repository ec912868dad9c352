//! Simulator, baseline suite, and theory oracles for first-order ANIL
//! (Almost-No-Inner-Loop meta-learning) on the multi-task linear
//! representation model.
//!
//! The data model: each task i has parameters w★,i ~ N(μ★, Σ★) living in a
//! hidden k-dimensional subspace col(B★) of R^d, and observations
//! y = X B★ w★,i + z with X rows N(0, I_d) and z ~ N(0, σ²I). The learner is a
//! two-layer linear network x ↦ xᵀB w with width k′ (k ≤ k′ ≤ d, typically
//! misspecified k′ > k). Only the head w adapts in the inner loop (step α);
//! the outer loop updates (B, w) with first-order meta-gradients (step β).
//!
//! Modules:
//! - [`task_model`]: ground truth + task sampling (exact, seeded).
//! - [`dynamics`]: the four training dynamics (finite FO-ANIL / FO-MAML,
//!   infinite-tasks and infinite-samples recursions) and trace logging.
//! - [`baselines`]: Burer-Monteiro factorisation with stability regularizer,
//!   L-BFGS/GD minimizer, ridge regression.
//! - [`adaptation_eval`]: test-time adaptation, excess risk, method
//!   evaluation with λ grid search, and the explicit-constant risk bound.
//! - [`theory_oracles`]: Λ★ fixed points, step-size/init condition checker,
//!   unlearning rate bound, head-covariance lemma verifier, closed-form and
//!   Monte-Carlo population losses.
//! - [`rng`], [`linalg`], [`container`]: seeded streams, small matrix
//!   helpers, binary persistence.
//!
//! All randomness flows through [`rng::RngSpec`]: one seed plus named streams,
//! so identical specs reproduce identical bytes and resizing one source (e.g.
//! the task count) never perturbs another (e.g. the ground truth).

pub mod adaptation_eval;
pub mod baselines;
pub mod container;
pub mod dynamics;
pub mod linalg;
pub mod parallel;
pub mod rng;
pub mod task_model;
pub mod theory_oracles;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible or out-of-range dimensions (e.g. k ≥ d).
    #[error("dimension error: {0}")]
    Dim(String),
    /// An operation's documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The configuration is valid elsewhere but this operation does not
    /// support it (e.g. infinite-tasks recursion with μ★ ≠ 0).
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    /// A linear system is singular where an invertible one was required.
    #[error("rank-deficient system: {0}")]
    RankDeficient(String),
    /// An iterative procedure produced a non-finite value.
    #[error("divergence: {0}")]
    Diverged(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
