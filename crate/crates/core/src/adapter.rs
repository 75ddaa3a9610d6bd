//! Low-rank adapter pairs and their initializers.
//!
//! An adapter splits a frozen weight `W₀` into `W_res + B·A` where `A` is
//! `r × d_in`, `B` is `d_out × r`, and `W_res` stays frozen. Every scheme
//! here starts with `W_res + B·A = W₀`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{mat_mul, norm, svd_thin, Matrix};
use crate::subspace::{project, OrthonormalBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "SC_LORA")]
    ScLora,
    #[serde(rename = "VANILLA")]
    Vanilla,
    #[serde(rename = "PISSA")]
    Pissa,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ScLora, Scheme::Vanilla, Scheme::Pissa];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::ScLora => "SC_LORA",
            Scheme::Vanilla => "VANILLA",
            Scheme::Pissa => "PISSA",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts the CLI spellings (`sc-lora`, `vanilla`, `pissa`) and the
    /// header tags (`SC_LORA`, ...).
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sc-lora" | "sclora" => Ok(Scheme::ScLora),
            "vanilla" => Ok(Scheme::Vanilla),
            "pissa" => Ok(Scheme::Pissa),
            _ => Err(Error::InvalidConfig(format!("unknown scheme '{s}'"))),
        }
    }
}

/// `(A, B, W_res)` factorization of one linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterPair {
    a: Matrix,
    b: Matrix,
    w_res: Matrix,
    scheme: Scheme,
}

impl AdapterPair {
    /// Assembles a pair from parts, checking shape coherence.
    pub fn from_parts(scheme: Scheme, a: Matrix, b: Matrix, w_res: Matrix) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::ShapeMismatch {
                op: "AdapterPair(b, a)",
                left: b.shape(),
                right: a.shape(),
            });
        }
        if w_res.shape() != (b.rows(), a.cols()) {
            return Err(Error::ShapeMismatch {
                op: "AdapterPair(w_res)",
                left: w_res.shape(),
                right: (b.rows(), a.cols()),
            });
        }
        Ok(Self { a, b, w_res, scheme })
    }

    /// Same residual and scheme with new trainable factors.
    pub fn with_factors(&self, a: Matrix, b: Matrix) -> Result<Self> {
        if a.shape() != self.a.shape() || b.shape() != self.b.shape() {
            return Err(Error::ShapeMismatch {
                op: "with_factors",
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(Self {
            a,
            b,
            w_res: self.w_res.clone(),
            scheme: self.scheme,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn w_res(&self) -> &Matrix {
        &self.w_res
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    /// `B·A`.
    pub fn delta(&self) -> Matrix {
        mat_mul(&self.b, &self.a).expect("coherent adapter shapes")
    }
}

fn check_rank(op: &'static str, w0: &Matrix, r: usize) -> Result<()> {
    let max = w0.rows().min(w0.cols());
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange { op, rank: r, max });
    }
    Ok(())
}

/// `B = Q_r`, `A = Q_rᵀ W₀`, `W_res = W₀ − B·A`.
pub fn init_sc_lora(w0: &Matrix, basis: &OrthonormalBasis) -> Result<AdapterPair> {
    if basis.dim() != w0.rows() {
        return Err(Error::ShapeMismatch {
            op: "init_sc_lora",
            left: w0.shape(),
            right: basis.columns().shape(),
        });
    }
    let b = basis.columns().clone();
    let a = mat_mul(&b.transpose(), w0)?;
    let w_res = w0.sub(&mat_mul(&b, &a)?)?;
    AdapterPair::from_parts(Scheme::ScLora, a, b, w_res)
}

/// Kaiming-normal `A` (fan-in, gain √2, so variance `2/d_in`), zero `B`.
pub fn init_vanilla(w0: &Matrix, r: usize, seed: u64) -> Result<AdapterPair> {
    check_rank("init_vanilla", w0, r)?;
    let d_in = w0.cols();
    let dist = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(r, d_in, |_, _| dist.sample(&mut rng))?;
    let b = Matrix::zeros(w0.rows(), r);
    AdapterPair::from_parts(Scheme::Vanilla, a, b, w0.clone())
}

/// Principal singular triplets with the balanced split
/// `B = U_r diag(√σ)`, `A = diag(√σ) V_rᵀ`.
pub fn init_pissa(w0: &Matrix, r: usize) -> Result<AdapterPair> {
    check_rank("init_pissa", w0, r)?;
    let svd = svd_thin(w0, r)?;
    let root: Vec<f64> = svd.sigma.iter().map(|s| s.sqrt()).collect();
    let b = Matrix::from_fn(w0.rows(), r, |i, j| svd.u.get(i, j) * root[j])?;
    let a = Matrix::from_fn(r, w0.cols(), |i, j| root[i] * svd.v.get(j, i))?;
    let w_res = w0.sub(&mat_mul(&b, &a)?)?;
    AdapterPair::from_parts(Scheme::Pissa, a, b, w_res)
}

/// `W_res·x + B·(A·x)`, without forming `B·A`.
pub fn adapted_forward(p: &AdapterPair, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.d_in() {
        return Err(Error::ShapeMismatch {
            op: "adapted_forward",
            left: p.w_res.shape(),
            right: (x.len(), 1),
        });
    }
    let mut out = p.w_res.mat_vec(x)?;
    let ax = p.a.mat_vec(x)?;
    let bax = p.b.mat_vec(&ax)?;
    for (o, v) in out.iter_mut().zip(bax) {
        *o += v;
    }
    Ok(out)
}

/// `W_res + B·A`.
pub fn merge_adapter(p: &AdapterPair) -> Result<Matrix> {
    p.w_res.add(&mat_mul(&p.b, &p.a)?)
}

/// `‖(W_res + B·A) − W₀‖_F / max(1, ‖W₀‖_F)`.
pub fn reconstruction_error(p: &AdapterPair, w0: &Matrix) -> Result<f64> {
    let merged = merge_adapter(p)?;
    if merged.shape() != w0.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_error",
            left: merged.shape(),
            right: w0.shape(),
        });
    }
    Ok(merged.sub(w0)?.frobenius_norm() / w0.frobenius_norm().max(1.0))
}

/// Largest `‖B·A·x − Π_S(W₀·x)‖ / ‖x‖` over the given inputs, where `S` is
/// spanned by `basis`.
pub fn projection_identity_error(p: &AdapterPair, w0: &Matrix, basis: &OrthonormalBasis, xs: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in xs {
        let ax = p.a.mat_vec(x)?;
        let bax = p.b.mat_vec(&ax)?;
        let target = project(basis, &w0.mat_vec(x)?)?;
        let diff: Vec<f64> = bax.iter().zip(&target).map(|(a, b)| a - b).collect();
        let nx = norm(x);
        if nx > 0.0 {
            worst = worst.max(norm(&diff) / nx);
        } else {
            worst = worst.max(norm(&diff));
        }
    }
    Ok(worst)
}

/// Largest relative component of `B·A·x` outside span(`basis`).
pub fn containment_error(p: &AdapterPair, basis: &OrthonormalBasis, xs: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in xs {
        let bax = p.b.mat_vec(&p.a.mat_vec(x)?)?;
        let inside = project(basis, &bax)?;
        let outside: Vec<f64> = bax.iter().zip(&inside).map(|(a, b)| a - b).collect();
        let n = norm(&bax);
        if n > 0.0 {
            worst = worst.max(norm(&outside) / n);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::random_orthonormal_basis;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sc_lora_by_hand() {
        let w0 = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let basis = OrthonormalBasis::standard(2, &[0]).unwrap();
        let p = init_sc_lora(&w0, &basis).unwrap();
        assert_eq!(p.b(), &Matrix::from_rows(&[[1.0], [0.0]]).unwrap());
        assert_eq!(p.a(), &Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        assert_eq!(p.w_res(), &Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap());
        assert_eq!(p.scheme(), Scheme::ScLora);
    }

    #[test]
    fn sc_lora_full_basis_leaves_no_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = random_matrix(&mut rng, 6, 9);
        let basis = random_orthonormal_basis(6, 6, &mut rng).unwrap();
        let p = init_sc_lora(&w0, &basis).unwrap();
        assert!(p.w_res().frobenius_norm() <= 1e-10 * w0.frobenius_norm());
    }

    #[test]
    fn sc_lora_projection_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w0 = random_matrix(&mut rng, 32, 48);
        let basis = random_orthonormal_basis(32, 8, &mut rng).unwrap();
        let p = init_sc_lora(&w0, &basis).unwrap();
        let xs: Vec<Vec<f64>> = (0..100).map(|_| random_vec(&mut rng, 48)).collect();
        assert!(projection_identity_error(&p, &w0, &basis, &xs).unwrap() <= 1e-8);
        assert!(containment_error(&p, &basis, &xs).unwrap() <= 1e-8);
    }

    #[test]
    fn sc_lora_dimension_mismatch() {
        let w0 = Matrix::zeros(3, 2);
        let basis = OrthonormalBasis::standard(4, &[0]).unwrap();
        assert!(matches!(init_sc_lora(&w0, &basis), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn vanilla_starts_at_w0() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = random_matrix(&mut rng, 5, 7);
        let p = init_vanilla(&w0, 3, 9).unwrap();
        assert_eq!(merge_adapter(&p).unwrap(), w0);
        let x = random_vec(&mut rng, 7);
        assert_eq!(adapted_forward(&p, &x).unwrap(), w0.mat_vec(&x).unwrap());
        assert_eq!(init_vanilla(&w0, 3, 9).unwrap(), p);
        assert_ne!(init_vanilla(&w0, 3, 10).unwrap(), p);
    }

    #[test]
    fn vanilla_kaiming_variance() {
        let w0 = Matrix::zeros(64, 256);
        let p = init_vanilla(&w0, 64, 0).unwrap();
        let vals = p.a().as_slice();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 256.0;
        assert!((var - target).abs() <= 0.2 * target, "variance {var}");
    }

    #[test]
    fn rank_checks() {
        let w0 = Matrix::zeros(3, 5);
        assert!(matches!(init_vanilla(&w0, 4, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(init_pissa(&w0, 0), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn pissa_on_diagonal() {
        let w0 = Matrix::from_diag(&[5.0, 2.0, 1.0]).unwrap();
        let p = init_pissa(&w0, 1).unwrap();
        assert!(p.delta().max_abs_diff(&Matrix::from_diag(&[5.0, 0.0, 0.0]).unwrap()) <= 1e-12);
        assert!(p.w_res().max_abs_diff(&Matrix::from_diag(&[0.0, 2.0, 1.0]).unwrap()) <= 1e-12);
    }

    #[test]
    fn pissa_full_rank_has_tiny_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w0 = random_matrix(&mut rng, 7, 5);
        let p = init_pissa(&w0, 5).unwrap();
        assert!(p.w_res().frobenius_norm() <= 1e-9 * w0.frobenius_norm());
    }

    #[test]
    fn forward_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w0 = random_matrix(&mut rng, 4, 6);
        let p = init_pissa(&w0, 2).unwrap();
        assert_eq!(adapted_forward(&p, &[0.0; 6]).unwrap(), vec![0.0; 4]);
        assert!(adapted_forward(&p, &[0.0; 5]).is_err());
    }

    #[test]
    fn forward_matches_merged_after_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w0 = random_matrix(&mut rng, 8, 10);
        let basis = random_orthonormal_basis(8, 3, &mut rng).unwrap();
        let p = init_sc_lora(&w0, &basis).unwrap();
        let a = random_matrix(&mut rng, 3, 10);
        let b = random_matrix(&mut rng, 8, 3);
        let q = p.with_factors(a, b).unwrap();
        let merged = merge_adapter(&q).unwrap();
        for _ in 0..20 {
            let x = random_vec(&mut rng, 10);
            let f = adapted_forward(&q, &x).unwrap();
            let m = merged.mat_vec(&x).unwrap();
            let d = f.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-10);
        }
        assert!(p.with_factors(Matrix::zeros(2, 10), Matrix::zeros(8, 2)).is_err());
    }

    #[test]
    fn reconstruction_for_every_scheme() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w0 = random_matrix(&mut rng, 12, 9);
        let basis = random_orthonormal_basis(12, 4, &mut rng).unwrap();
        let pairs = [
            init_sc_lora(&w0, &basis).unwrap(),
            init_vanilla(&w0, 4, 1).unwrap(),
            init_pissa(&w0, 4).unwrap(),
        ];
        for p in &pairs {
            assert!(reconstruction_error(p, &w0).unwrap() <= 1e-10, "{}", p.scheme());
        }
    }

    #[test]
    fn from_parts_checks_shapes() {
        assert!(AdapterPair::from_parts(Scheme::Vanilla, Matrix::zeros(2, 4), Matrix::zeros(3, 3), Matrix::zeros(3, 4)).is_err());
        assert!(AdapterPair::from_parts(Scheme::Vanilla, Matrix::zeros(2, 4), Matrix::zeros(3, 2), Matrix::zeros(3, 5)).is_err());
        assert!(AdapterPair::from_parts(Scheme::Vanilla, Matrix::zeros(2, 4), Matrix::zeros(3, 2), Matrix::zeros(3, 4)).is_ok());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("sc-lora".parse::<Scheme>().unwrap(), Scheme::ScLora);
        assert_eq!("SC_LORA".parse::<Scheme>().unwrap(), Scheme::ScLora);
        assert_eq!("pissa".parse::<Scheme>().unwrap(), Scheme::Pissa);
        assert!("corda".parse::<Scheme>().is_err());
    }
}
