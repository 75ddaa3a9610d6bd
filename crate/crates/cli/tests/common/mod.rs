#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sclora_core::covariance::ActivationSample;
use sclora_core::io;
use sclora_core::matrix::Matrix;

pub const D_IN: usize = 24;
pub const D_OUT: usize = 16;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn sclora(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("sclora").chain(args.iter().copied());
    let outcome = sclora_cli::run_with_io(argv, &mut out, &mut err);
    Output {
        code: outcome.exit_code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

/// Activation dumps for two tasks plus a weight matrix, written into `dir`.
pub struct Fixture {
    pub w0: PathBuf,
    pub acts_pos: PathBuf,
    pub acts_neg: PathBuf,
}

pub fn fixture(dir: &Path, seed: u64, samples: usize, tokens: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = random_matrix(&mut rng, D_OUT, D_IN);
    let mut acts = |scale: f64| -> Vec<ActivationSample> {
        (0..samples)
            .map(|k| {
                let x = random_matrix(&mut rng, D_IN, tokens).scale(scale).unwrap();
                ActivationSample::new(w0.matmul(&x).unwrap(), k.to_string())
            })
            .collect()
    };
    let pos = acts(1.0);
    let neg = acts(0.5);
    let f = Fixture {
        w0: dir.join("w0.sclm"),
        acts_pos: dir.join("pos.acts"),
        acts_neg: dir.join("neg.acts"),
    };
    io::write_matrix(&f.w0, &w0).unwrap();
    io::write_activations(&f.acts_pos, &pos).unwrap();
    io::write_activations(&f.acts_neg, &neg).unwrap();
    f
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// covariance -> subspace -> init -> verify; returns the produced files.
pub fn full_pipeline(dir: &Path, f: &Fixture, beta: &str, rank: &str) -> Vec<PathBuf> {
    let cov_pos = dir.join("pos.cov");
    let cov_neg = dir.join("neg.cov");
    let basis = dir.join("basis.sclm");
    let adapter = dir.join("adapter.scla");
    let steps: [Vec<&str>; 5] = [
        vec!["covariance", "--activations", s(&f.acts_pos), "--out", s(&cov_pos)],
        vec!["covariance", "--activations", s(&f.acts_neg), "--out", s(&cov_neg)],
        vec![
            "subspace", "--cov-pos", s(&cov_pos), "--cov-neg", s(&cov_neg), "--beta", beta, "--rank", rank, "--out",
            s(&basis),
        ],
        vec!["init", "--w0", s(&f.w0), "--scheme", "sc-lora", "--basis", s(&basis), "--rank", rank, "--out", s(&adapter)],
        vec!["verify", "--adapter", s(&adapter), "--w0", s(&f.w0)],
    ];
    for step in &steps {
        let o = sclora(step);
        assert_eq!(o.code, 0, "{step:?}: {}", o.stderr);
    }
    vec![cov_pos, cov_neg, basis, adapter]
}
