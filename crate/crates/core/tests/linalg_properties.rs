use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sclora_core::covariance::{ActivationSample, CovAccumulator, CovarianceMatrix};
use sclora_core::matrix::{eig_sym, mat_mul, orthonormalize_columns, svd_thin, symmetrize, Matrix, SymmetricMatrix};
use sclora_core::subspace::{
    delta_cov, project, random_orthonormal_basis, reward, select_subspace, OrthonormalBasis,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn covariance_of(samples: &[Vec<f64>]) -> CovarianceMatrix {
    let mut acc = CovAccumulator::new(samples[0].len());
    for (i, s) in samples.iter().enumerate() {
        acc.accumulate(&ActivationSample::new(Matrix::column_vector(s).unwrap(), i.to_string()))
            .unwrap();
    }
    acc.finalize().unwrap()
}

#[test]
fn svd_eckart_young_against_eig_of_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 6, 4);
        // oracle: σ² are the eigenvalues of mᵀm
        let gram = symmetrize(&mat_mul(&m.transpose(), &m).unwrap()).unwrap();
        let eig = eig_sym(&gram).unwrap();
        let sigma_sq: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();

        let s = svd_thin(&m, 2).unwrap();
        let approx_err = s.reconstruct().unwrap().sub(&m).unwrap().frobenius_norm();
        assert!((approx_err * approx_err - (sigma_sq[2] + sigma_sq[3])).abs() <= 1e-8);
        for (sigma, sq) in s.sigma.iter().zip(&sigma_sq) {
            assert!((sigma - sq.sqrt()).abs() <= 1e-8);
        }
    }
}

#[test]
fn projection_matrix_is_symmetric_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for dim in 3..10 {
        for r in 1..=dim {
            let b = random_orthonormal_basis(dim, r, &mut rng).unwrap();
            let p = b.projection_matrix();
            let p2 = mat_mul(&p, &p).unwrap();
            assert!(p2.sub(&p).unwrap().frobenius_norm() <= 1e-10);
            assert!(p.sub(&p.transpose()).unwrap().frobenius_norm() <= 1e-10);
        }
    }
}

#[test]
fn reward_and_projection_are_basis_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let dim = 9;
        let r = 4;
        let b = random_orthonormal_basis(dim, r, &mut rng).unwrap();
        let rot = orthonormalize_columns(&random_matrix(&mut rng, r, r)).unwrap();
        let b2 = b.rotated(&rot).unwrap();
        let pos = covariance_of(&(0..30).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
        let neg = covariance_of(&(0..30).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
        let r1 = reward(&b, &pos, &neg, 0.3).unwrap().value;
        let r2 = reward(&b2, &pos, &neg, 0.3).unwrap().value;
        assert!((r1 - r2).abs() <= 1e-10);
        assert!(b.projection_matrix().max_abs_diff(&b2.projection_matrix()) <= 1e-10);
    }
}

#[test]
fn reward_equals_sample_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let dim = 7;
    let plus: Vec<Vec<f64>> = (0..40).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let minus: Vec<Vec<f64>> = (0..25).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let cov_pos = covariance_of(&plus);
    let cov_neg = covariance_of(&minus);
    for beta in [0.0, 0.2, 0.5, 0.9, 1.0] {
        for r in 1..dim {
            let b = random_orthonormal_basis(dim, r, &mut rng).unwrap();
            let mean_proj = |xs: &[Vec<f64>]| {
                xs.iter().map(|x| sq_norm(&project(&b, x).unwrap())).sum::<f64>() / xs.len() as f64
            };
            let mc = (1.0 - beta) * mean_proj(&plus) - beta * mean_proj(&minus);
            let tr = reward(&b, &cov_pos, &cov_neg, beta).unwrap().value;
            assert!((mc - tr).abs() <= 1e-10 * mc.abs().max(1.0), "beta={beta} r={r}: {mc} vs {tr}");
        }
    }
}

#[test]
fn reward_at_beta_zero_of_top_eigvector_is_lambda_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let samples: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let pos = covariance_of(&samples);
    let eig = eig_sym(&pos.matrix).unwrap();
    let top = OrthonormalBasis::new(eig.leading_vectors(1).unwrap()).unwrap();
    let v = reward(&top, &pos, &pos, 0.0).unwrap();
    assert!((v.value - eig.eigenvalues[0]).abs() <= 1e-9);
}

#[test]
fn reward_at_beta_one_is_never_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let pos = covariance_of(&(0..10).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
    let neg = covariance_of(&(0..10).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
    for r in 1..=5 {
        for _ in 0..20 {
            let b = random_orthonormal_basis(5, r, &mut rng).unwrap();
            assert!(reward(&b, &pos, &neg, 1.0).unwrap().value <= 0.0);
        }
    }
}

#[test]
fn degenerate_selection_compared_by_projection() {
    // repeated eigenvalue straddling the cut: any basis of the tied pair is fine,
    // but the top eigenvector must be included
    let d = SymmetricMatrix::from_diag(&[4.0, 2.0, 2.0, -1.0]).unwrap();
    let s = select_subspace(&d, 3).unwrap();
    assert!(!s.is_degenerate());
    let expected = OrthonormalBasis::standard(4, &[0, 1, 2]).unwrap();
    assert!(s.basis.projection_matrix().max_abs_diff(&expected.projection_matrix()) <= 1e-12);

    let s2 = select_subspace(&d, 2).unwrap();
    assert!(s2.is_degenerate());
    assert!((s2.reward - 6.0).abs() <= 1e-12);
}

#[test]
fn rank_deficient_neg_covariance_at_beta_one_is_degenerate() {
    // 2 samples in 10 dims: Cov₋ has an 8-dimensional null space > r = 3
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let neg = covariance_of(&(0..2).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
    let pos = covariance_of(&(0..50).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
    assert!(sclora_core::rank_deficiency_check(&neg, 3).is_warn());
    let s = select_subspace(&delta_cov(&pos, &neg, 1.0).unwrap(), 3).unwrap();
    assert!(s.is_degenerate());
    let s = select_subspace(&delta_cov(&pos, &neg, 0.9).unwrap(), 3).unwrap();
    assert!(!s.is_degenerate());
}

fn symmetric_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..9).prop_flat_map(|n| (Just(n), prop::collection::vec(-10.0f64..10.0, n * n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eig_invariants((n, data) in symmetric_strategy()) {
        let m = symmetrize(&Matrix::new(n, n, data).unwrap()).unwrap();
        let e = eig_sym(&m).unwrap();
        let mn = m.as_matrix().frobenius_norm();
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(sclora_core::matrix::orthonormality_error(&e.eigenvectors) <= 1e-10);
        let err = e.reconstruct().unwrap().sub(m.as_matrix()).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-9 * mn.max(1.0));
        let tr = m.as_matrix().trace();
        prop_assert!((e.eigenvalues.iter().sum::<f64>() - tr).abs() <= 1e-9 * tr.abs().max(1.0));
        prop_assert_eq!(eig_sym(&m).unwrap(), e);
    }

    #[test]
    fn selected_reward_is_ky_fan_sum((n, data) in symmetric_strategy(), r_frac in 0.0f64..1.0) {
        let m = symmetrize(&Matrix::new(n, n, data).unwrap()).unwrap();
        let r = 1 + ((n - 1) as f64 * r_frac) as usize;
        let s = select_subspace(&m, r).unwrap();
        let top: f64 = s.eigenvalues[..r].iter().sum();
        prop_assert!((s.reward - top).abs() <= 1e-9 * top.abs().max(1.0));
    }
}
