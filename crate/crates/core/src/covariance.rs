//! Streaming second-moment estimation of layer outputs.
//!
//! Each sample contributes one vector: the sum of its per-token output
//! columns. The accumulator keeps `Σ x̂ x̂ᵀ` and the sample count, and
//! `finalize` divides by the count. No mean-centering is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{symmetrize, Matrix, SymmetricMatrix};

/// Output activations of one sample: `d_out × L`, one column per token.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSample {
    pub tokens: Matrix,
    pub sample_id: String,
}

impl ActivationSample {
    pub fn new(tokens: Matrix, sample_id: impl Into<String>) -> Self {
        Self {
            tokens,
            sample_id: sample_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.tokens.rows()
    }

    pub fn token_length(&self) -> usize {
        self.tokens.cols()
    }

    /// Drops token columns beyond `len`. Samples already at or below `len`
    /// are returned unchanged.
    pub fn clip(self, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidConfig("clip length must be at least 1".into()));
        }
        if self.token_length() <= len {
            return Ok(self);
        }
        let tokens = self.tokens.leading_columns(len)?;
        Ok(Self {
            tokens,
            sample_id: self.sample_id,
        })
    }

    /// `x̂ = Σ_t tokens[:, t]`.
    pub fn summed(&self) -> Vec<f64> {
        (0..self.tokens.rows())
            .map(|i| self.tokens.row(i).iter().sum())
            .collect()
    }
}

/// Running `Σ x̂ x̂ᵀ` and sample count for one layer and task.
#[derive(Clone, Debug, PartialEq)]
pub struct CovAccumulator {
    dim: usize,
    sum_outer: Matrix,
    sample_count: u64,
    token_length: Option<usize>,
}

impl CovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sum_outer: Matrix::zeros(dim, dim),
            sample_count: 0,
            token_length: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn token_length(&self) -> Option<usize> {
        self.token_length
    }

    pub fn sum_outer(&self) -> &Matrix {
        &self.sum_outer
    }

    /// Adds one sample's token-summed outer product.
    pub fn accumulate(&mut self, sample: &ActivationSample) -> Result<()> {
        if sample.dim() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "accumulate_sample",
                left: (self.dim, self.token_length.unwrap_or(sample.token_length())),
                right: sample.tokens.shape(),
            });
        }
        if let Some(expected) = self.token_length {
            if expected != sample.token_length() {
                return Err(Error::TokenLengthMismatch {
                    expected,
                    got: sample.token_length(),
                });
            }
        }
        let x = sample.summed();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "accumulate_sample" });
        }
        let n = self.dim;
        let data = self.sum_outer.as_mut_slice();
        for i in 0..n {
            let xi = x[i];
            let row = &mut data[i * n..(i + 1) * n];
            for (o, &xj) in row.iter_mut().zip(&x) {
                *o += xi * xj;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "accumulate_sample" });
        }
        self.sample_count += 1;
        self.token_length = Some(sample.token_length());
        Ok(())
    }

    /// Folds every sample in arrival order.
    pub fn accumulate_all<'a>(&mut self, samples: impl IntoIterator<Item = &'a ActivationSample>) -> Result<()> {
        for s in samples {
            self.accumulate(s)?;
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<CovarianceMatrix> {
        finalize(self)
    }
}

/// Functional form of [`CovAccumulator::accumulate`].
pub fn accumulate_sample(mut acc: CovAccumulator, sample: &ActivationSample) -> Result<CovAccumulator> {
    acc.accumulate(sample)?;
    Ok(acc)
}

/// Entrywise sum of two accumulators, left operand first.
pub fn merge(a: &CovAccumulator, b: &CovAccumulator) -> Result<CovAccumulator> {
    if a.dim != b.dim {
        return Err(Error::ShapeMismatch {
            op: "merge",
            left: (a.dim, a.dim),
            right: (b.dim, b.dim),
        });
    }
    let token_length = match (a.token_length, b.token_length) {
        (Some(x), Some(y)) if x != y => {
            return Err(Error::TokenLengthMismatch { expected: x, got: y });
        }
        (x, y) => x.or(y),
    };
    Ok(CovAccumulator {
        dim: a.dim,
        sum_outer: a.sum_outer.add(&b.sum_outer)?,
        sample_count: a.sample_count + b.sample_count,
        token_length,
    })
}

/// Empirical second-moment matrix `(1/B) X̂ X̂ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub matrix: SymmetricMatrix,
    pub sample_count: u64,
    pub token_length: usize,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn finalize(acc: &CovAccumulator) -> Result<CovarianceMatrix> {
    if acc.sample_count == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let scaled = acc.sum_outer.scale(1.0 / acc.sample_count as f64)?;
    Ok(CovarianceMatrix {
        matrix: symmetrize(&scaled)?,
        sample_count: acc.sample_count,
        token_length: acc.token_length.unwrap_or(1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Ok,
    Warn,
}

/// Outcome of [`rank_deficiency_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    pub verdict: Verdict,
    /// `sample_count × token_length`, the upper bound on `rank(Cov)`.
    pub rank_bound: u64,
    /// `dim − r`.
    pub threshold: u64,
}

impl RankDiagnostic {
    pub fn is_warn(&self) -> bool {
        self.verdict == Verdict::Warn
    }
}

/// Warns when `B·L < dim − r`: the covariance then has a null space of
/// dimension greater than `r`, and at β = 1 any `r` orthonormal vectors
/// inside it are equally optimal.
pub fn rank_deficiency_check(cov: &CovarianceMatrix, r: usize) -> RankDiagnostic {
    rank_deficiency_verdict(cov.dim(), r, cov.sample_count, cov.token_length)
}

pub fn rank_deficiency_verdict(dim: usize, r: usize, sample_count: u64, token_length: usize) -> RankDiagnostic {
    let rank_bound = sample_count.saturating_mul(token_length as u64);
    let threshold = dim.saturating_sub(r) as u64;
    let verdict = if rank_bound < threshold {
        Verdict::Warn
    } else {
        Verdict::Ok
    };
    RankDiagnostic {
        verdict,
        rank_bound,
        threshold,
    }
}
