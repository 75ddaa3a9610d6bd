//! Reward-maximizing subspace selection.
//!
//! The reward of an `r`-dimensional subspace `S` with orthonormal basis
//! `Q_r` is
//!
//! ```text
//! R(S) = (1 − β)·E‖Π_S(x₊)‖² − β·E‖Π_S(x₋)‖² = tr(Q_rᵀ ΔCov Q_r),
//! ΔCov = (1 − β)·Cov₊ − β·Cov₋,
//! ```
//!
//! and is maximized by the top-`r` eigenvectors of `ΔCov` (Ky Fan), with
//! maximum equal to the sum of the top-`r` eigenvalues.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::matrix::{
    dot, eig_sym, mat_mul, orthonormality_error, orthonormalize_columns, Matrix, SymmetricMatrix,
};
use crate::warning::{Warning, WarningCode};

/// Maximum entrywise deviation of `QᵀQ` from `I` accepted for a basis.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;
/// Relative eigenvalue gap below which the selection is flagged degenerate.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// `r` orthonormal columns spanning a subspace of ℝ^dim.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    columns: Matrix,
}

impl OrthonormalBasis {
    pub fn new(columns: Matrix) -> Result<Self> {
        if columns.cols() > columns.rows() {
            return Err(Error::RankOutOfRange {
                op: "OrthonormalBasis",
                rank: columns.cols(),
                max: columns.rows(),
            });
        }
        let deviation = orthonormality_error(&columns);
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { columns })
    }

    /// Standard basis vectors `e_i` for the given indices.
    pub fn standard(dim: usize, indices: &[usize]) -> Result<Self> {
        let m = Matrix::from_fn(dim, indices.len(), |i, j| if i == indices[j] { 1.0 } else { 0.0 })?;
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn rank(&self) -> usize {
        self.columns.cols()
    }

    /// `dim × r`; column `i` is `q_i`.
    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn into_matrix(self) -> Matrix {
        self.columns
    }

    /// `P = Q_r Q_rᵀ`.
    pub fn projection_matrix(&self) -> Matrix {
        mat_mul(&self.columns, &self.columns.transpose()).expect("finite orthonormal columns")
    }

    /// Same subspace, columns mixed by an `r × r` orthogonal matrix.
    pub fn rotated(&self, rotation: &Matrix) -> Result<Self> {
        Self::new(mat_mul(&self.columns, rotation)?)
    }
}

/// `Π_S(x) = Σ (q_iᵀ x) q_i`.
pub fn project(basis: &OrthonormalBasis, x: &[f64]) -> Result<Vec<f64>> {
    let coeffs = basis.columns.transpose_mat_vec(x).map_err(|_| Error::ShapeMismatch {
        op: "project",
        left: basis.columns.shape(),
        right: (x.len(), 1),
    })?;
    basis.columns.mat_vec(&coeffs)
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::BetaOutOfRange(beta))
    }
}

/// `(1 − β)·Cov₊ − β·Cov₋`.
pub fn delta_cov(cov_pos: &CovarianceMatrix, cov_neg: &CovarianceMatrix, beta: f64) -> Result<SymmetricMatrix> {
    check_beta(beta)?;
    if cov_pos.dim() != cov_neg.dim() {
        return Err(Error::ShapeMismatch {
            op: "delta_cov",
            left: (cov_pos.dim(), cov_pos.dim()),
            right: (cov_neg.dim(), cov_neg.dim()),
        });
    }
    cov_pos.matrix.linear_combination(1.0 - beta, &cov_neg.matrix, -beta)
}

/// Result of [`select_subspace`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceSelection {
    pub basis: OrthonormalBasis,
    /// Full spectrum of `ΔCov`, descending.
    pub eigenvalues: Vec<f64>,
    /// Achieved reward, `tr(Q_rᵀ ΔCov Q_r)`.
    pub reward: f64,
    pub warnings: Vec<Warning>,
}

impl SubspaceSelection {
    pub fn is_degenerate(&self) -> bool {
        self.warnings.iter().any(|w| w.code == WarningCode::Degenerate)
    }
}

/// Top-`r` eigenvectors of `delta`.
///
/// A vanishing gap between the `r`-th and `(r+1)`-th eigenvalues is not an
/// error: the returned subspace is one of several optimal ones and a
/// `DEGENERATE` warning is attached.
pub fn select_subspace(delta: &SymmetricMatrix, r: usize) -> Result<SubspaceSelection> {
    let dim = delta.dim();
    if r == 0 || r > dim {
        return Err(Error::RankOutOfRange {
            op: "select_subspace",
            rank: r,
            max: dim,
        });
    }
    let eig = eig_sym(delta)?;
    let basis = OrthonormalBasis::new(eig.leading_vectors(r)?)?;
    let reward = reward_of_delta(&basis, delta)?;

    let mut warnings = Vec::new();
    if r < dim {
        let gap = eig.eigenvalues[r - 1] - eig.eigenvalues[r];
        let scale = eig.eigenvalues[0].abs().max(1.0);
        if gap < DEGENERATE_GAP * scale {
            warnings.push(Warning::new(
                WarningCode::Degenerate,
                format!(
                    "eigenvalue gap {gap:e} between positions {r} and {} is below {:e}; the optimal subspace is not unique",
                    r + 1,
                    DEGENERATE_GAP * scale
                ),
            ));
        }
    }
    Ok(SubspaceSelection {
        basis,
        eigenvalues: eig.eigenvalues,
        reward,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub value: f64,
    /// `None` when evaluated directly against a `ΔCov`.
    pub beta: Option<f64>,
    pub r: usize,
}

/// `Σ q_iᵀ Δ q_i`.
pub fn reward_of_delta(basis: &OrthonormalBasis, delta: &SymmetricMatrix) -> Result<f64> {
    if basis.dim() != delta.dim() {
        return Err(Error::ShapeMismatch {
            op: "reward",
            left: basis.columns.shape(),
            right: (delta.dim(), delta.dim()),
        });
    }
    let d = delta.as_matrix();
    let mut total = 0.0;
    for j in 0..basis.rank() {
        let q = basis.columns.column(j);
        let dq = d.mat_vec(&q)?;
        total += dot(&q, &dq);
    }
    Ok(total)
}

/// Trace-form reward of `basis` for the two covariances.
pub fn reward(
    basis: &OrthonormalBasis,
    cov_pos: &CovarianceMatrix,
    cov_neg: &CovarianceMatrix,
    beta: f64,
) -> Result<RewardValue> {
    let delta = delta_cov(cov_pos, cov_neg, beta)?;
    Ok(RewardValue {
        value: reward_of_delta(basis, &delta)?,
        beta: Some(beta),
        r: basis.rank(),
    })
}

/// Random `r`-dimensional orthonormal basis: Gaussian matrix, then
/// Gram–Schmidt.
pub fn random_orthonormal_basis<R: rand::Rng + ?Sized>(dim: usize, r: usize, rng: &mut R) -> Result<OrthonormalBasis> {
    if r == 0 || r > dim {
        return Err(Error::RankOutOfRange {
            op: "random_orthonormal_basis",
            rank: r,
            max: dim,
        });
    }
    loop {
        let g = Matrix::from_fn(dim, r, |_, _| StandardNormal.sample(rng))?;
        // a Gaussian draw is rank-deficient with probability zero; redraw if it happens
        if let Ok(q) = orthonormalize_columns(&g) {
            return OrthonormalBasis::new(q);
        }
    }
}

/// RNG for trial `index` of a seeded probe; streams are independent so
/// trials can run in any order.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Best reward over `trials` random orthonormal bases. A lower-bound probe
/// for the optimum.
pub fn reward_oracle_max(delta: &SymmetricMatrix, r: usize, trials: usize, seed: u64) -> Result<RewardValue> {
    if trials == 0 {
        return Err(Error::InvalidConfig("reward_oracle_max needs at least one trial".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for t in 0..trials {
        let mut rng = trial_rng(seed, t as u64);
        let basis = random_orthonormal_basis(delta.dim(), r, &mut rng)?;
        best = best.max(reward_of_delta(&basis, delta)?);
    }
    Ok(RewardValue {
        value: best,
        beta: None,
        r,
    })
}
