//! Subspace-constrained initialization of low-rank adapters.
//!
//! The pipeline: accumulate output-activation second moments for the task
//! to learn (`Cov₊`) and the task to preserve (`Cov₋`), take the top-`r`
//! eigenvectors `Q_r` of `(1 − β)·Cov₊ − β·Cov₋`, and initialize the
//! adapter as `B = Q_r`, `A = Q_rᵀ W₀`, `W_res = W₀ − B·A`. At
//! initialization the adapter output `B·A·x` is exactly the orthogonal
//! projection of `W₀·x` onto span(`Q_r`).
//!
//! Modules:
//! - [`matrix`]: dense matrices, Jacobi eigensolver, thin SVD.
//! - [`covariance`]: streaming, mergeable second-moment accumulators.
//! - [`subspace`]: `ΔCov`, subspace selection, reward, optimality probe.
//! - [`adapter`]: SC-LoRA, vanilla and PiSSA initializers.
//! - [`trainer`]: synthetic two-task experiment and β sweep.
//! - [`io`]: binary/CSV file formats.

pub mod adapter;
pub mod covariance;
pub mod error;
pub mod io;
pub mod matrix;
pub mod subspace;
pub mod trainer;
pub mod warning;

pub use adapter::{adapted_forward, init_pissa, init_sc_lora, init_vanilla, merge_adapter, AdapterPair, Scheme};
pub use covariance::{
    accumulate_sample, finalize, merge, rank_deficiency_check, ActivationSample, CovAccumulator, CovarianceMatrix,
    RankDiagnostic, Verdict,
};
pub use error::{Error, Result};
pub use matrix::{eig_sym, frobenius_norm, mat_mul, svd_thin, symmetrize, EigenDecomposition, Matrix, SymmetricMatrix};
pub use subspace::{
    delta_cov, project, reward, reward_oracle_max, select_subspace, OrthonormalBasis, RewardValue, SubspaceSelection,
};
pub use trainer::{
    beta_sweep, eval_preservation, gen_two_task_data, train_adapter, SweepConfig, SweepReport, TrainConfig,
    TwoTaskDataset,
};
pub use warning::{Warning, WarningCode};
