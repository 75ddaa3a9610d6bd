//! Synthetic two-task fine-tuning harness.
//!
//! A single frozen linear layer `W₀` is adapted toward a perturbed target on
//! task T₊ while its behaviour on task T₋ should stay put. T₊ and T₋ inputs
//! live in (by default orthogonal) low-dimensional input subspaces, so the
//! only way training can disturb T₋ is through the shared `B` factor.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{init_sc_lora, merge_adapter, AdapterPair};
use crate::covariance::{ActivationSample, CovAccumulator, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::matrix::{orthonormalize_columns, Matrix};
use crate::subspace::{delta_cov, select_subspace, trial_rng, OrthonormalBasis};
use crate::warning::Warning;

// RNG stream assignment within one seed.
const STREAM_GENERATOR: u64 = 0;
const STREAM_INIT_SAMPLES: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_TRAIN_DATA: u64 = 3;

/// Parameters of the synthetic data generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub r_plus: usize,
    pub r_minus: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub seed: u64,
    /// Principal angle (radians) between the task input subspaces.
    /// `None` means exactly orthogonal.
    #[serde(default)]
    pub overlap_angle: Option<f64>,
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.r_plus == 0 || self.r_minus == 0 {
            return Err(Error::InvalidConfig("task subspace ranks must be at least 1".into()));
        }
        if self.r_plus + self.r_minus > self.d_in {
            return Err(Error::InvalidConfig(format!(
                "r_plus + r_minus = {} exceeds d_in = {}",
                self.r_plus + self.r_minus,
                self.d_in
            )));
        }
        if self.d_out == 0 {
            return Err(Error::InvalidConfig("d_out must be at least 1".into()));
        }
        if self.n_plus == 0 || self.n_minus == 0 {
            return Err(Error::InvalidConfig("sample counts must be at least 1".into()));
        }
        if let Some(theta) = self.overlap_angle {
            if !theta.is_finite() {
                return Err(Error::InvalidConfig("overlap_angle must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoTaskDataset {
    pub plus: Vec<Pair>,
    pub minus: Vec<Pair>,
    pub d_in: usize,
    pub d_out: usize,
    pub config: GenConfig,
}

/// Ground truth behind a [`TwoTaskDataset`]: the pretrained map, the T₊
/// target map and the two input subspaces.
#[derive(Clone, Debug)]
pub struct TaskGenerator {
    pub w0: Matrix,
    pub w_target: Matrix,
    pub u_plus: Matrix,
    pub u_minus: Matrix,
    config: GenConfig,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

impl TaskGenerator {
    pub fn new(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = trial_rng(cfg.seed, STREAM_GENERATOR);
        let (d_in, d_out) = (cfg.d_in, cfg.d_out);

        let raw = gaussian_matrix(d_out, d_in, &mut rng)?;
        let w0 = Matrix::from_fn(d_out, d_in, |i, j| {
            let n = crate::matrix::norm(raw.row(i));
            raw.get(i, j) / n
        })?;

        let g = gaussian_matrix(d_out, d_in, &mut rng)?;
        let g = g.scale(0.5 * w0.frobenius_norm() / g.frobenius_norm())?;
        let w_target = w0.add(&g)?;

        let joint = loop {
            let m = gaussian_matrix(d_in, cfg.r_plus + cfg.r_minus, &mut rng)?;
            if let Ok(q) = orthonormalize_columns(&m) {
                break q;
            }
        };
        let u_plus = Matrix::from_fn(d_in, cfg.r_plus, |i, j| joint.get(i, j))?;
        let rest = Matrix::from_fn(d_in, cfg.r_minus, |i, j| joint.get(i, cfg.r_plus + j))?;
        let u_minus = match cfg.overlap_angle {
            None => rest,
            Some(theta) => {
                let paired = cfg.r_plus.min(cfg.r_minus);
                let (c, s) = (theta.cos(), theta.sin());
                Matrix::from_fn(d_in, cfg.r_minus, |i, j| {
                    if j < paired {
                        c * u_plus.get(i, j) + s * rest.get(i, j)
                    } else {
                        rest.get(i, j)
                    }
                })?
            }
        };
        Ok(Self {
            w0,
            w_target,
            u_plus,
            u_minus,
            config: cfg.clone(),
        })
    }

    fn draw_inputs(u: &Matrix, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..u.cols()).map(|_| StandardNormal.sample(rng)).collect();
                u.mat_vec(&z)
            })
            .collect()
    }

    /// The training set for the configured seed and counts.
    pub fn draw_training_set(&self) -> Result<TwoTaskDataset> {
        let mut rng = trial_rng(self.config.seed, STREAM_TRAIN_DATA);
        self.draw(self.config.n_plus, self.config.n_minus, &mut rng)
    }

    /// Draws `n_plus` T₊ pairs (`y = W_target·x`) and `n_minus` T₋ pairs
    /// (`y = W₀·x`).
    pub fn draw(&self, n_plus: usize, n_minus: usize, rng: &mut ChaCha8Rng) -> Result<TwoTaskDataset> {
        let plus = Self::draw_inputs(&self.u_plus, n_plus, rng)?
            .into_iter()
            .map(|x| Ok(Pair { y: self.w_target.mat_vec(&x)?, x }))
            .collect::<Result<Vec<_>>>()?;
        let minus = Self::draw_inputs(&self.u_minus, n_minus, rng)?
            .into_iter()
            .map(|x| Ok(Pair { y: self.w0.mat_vec(&x)?, x }))
            .collect::<Result<Vec<_>>>()?;
        Ok(TwoTaskDataset {
            plus,
            minus,
            d_in: self.w0.cols(),
            d_out: self.w0.rows(),
            config: self.config.clone(),
        })
    }
}

/// Builds the generator for `cfg.seed` and draws the training set.
pub fn gen_two_task_data(cfg: &GenConfig) -> Result<(Matrix, Matrix, TwoTaskDataset)> {
    let generator = TaskGenerator::new(cfg)?;
    let data = generator.draw_training_set()?;
    Ok((generator.w0, generator.w_target, data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean squared error and its gradients with respect to `A` and `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

/// `L = mean ‖(W_res + B·A)x − y‖²` with
/// `∂L/∂B = mean 2·err·(A x)ᵀ` and `∂L/∂A = mean 2·Bᵀ err xᵀ`.
pub fn loss_and_grads(p: &AdapterPair, batch: &[&Pair]) -> Result<LossGrad> {
    let offsets = batch
        .iter()
        .map(|pair| residual_offset(p, pair))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&[f64], &[f64])> = batch.iter().zip(&offsets).map(|(pair, o)| (pair.x.as_slice(), o.as_slice())).collect();
    grads_from_offsets(p.a(), p.b(), &refs)
}

/// `W_res·x − y`: the part of the error that does not depend on `A`, `B`.
fn residual_offset(p: &AdapterPair, pair: &Pair) -> Result<Vec<f64>> {
    if pair.x.len() != p.d_in() || pair.y.len() != p.d_out() {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: (p.d_out(), p.d_in()),
            right: (pair.y.len(), pair.x.len()),
        });
    }
    let mut o = p.w_res().mat_vec(&pair.x)?;
    for (v, y) in o.iter_mut().zip(&pair.y) {
        *v -= y;
    }
    Ok(o)
}

fn grads_from_offsets(a: &Matrix, b: &Matrix, batch: &[(&[f64], &[f64])]) -> Result<LossGrad> {
    let (r, d_in) = a.shape();
    let d_out = b.rows();
    let mut grad_a = vec![0.0; r * d_in];
    let mut grad_b = vec![0.0; d_out * r];
    let mut loss = 0.0;
    let scale = 2.0 / batch.len() as f64;

    for &(x, offset) in batch {
        let ax = a.mat_vec(x)?;
        let mut err = b.mat_vec(&ax)?;
        for (e, o) in err.iter_mut().zip(offset) {
            *e += o;
        }
        loss += err.iter().map(|e| e * e).sum::<f64>();
        for i in 0..d_out {
            let ei = scale * err[i];
            for (g, &v) in grad_b[i * r..(i + 1) * r].iter_mut().zip(&ax) {
                *g += ei * v;
            }
        }
        let bt_err = b.transpose_mat_vec(&err)?;
        for k in 0..r {
            let c = scale * bt_err[k];
            for (g, &xj) in grad_a[k * d_in..(k + 1) * d_in].iter_mut().zip(x) {
                *g += c * xj;
            }
        }
    }
    let loss = loss / batch.len() as f64;
    Ok(LossGrad {
        loss,
        grad_a: Matrix::new(r, d_in, grad_a).map_err(|_| Error::NonFinite { op: "loss_and_grads" })?,
        grad_b: Matrix::new(d_out, r, grad_b).map_err(|_| Error::NonFinite { op: "loss_and_grads" })?,
    })
}

/// Mean `‖(W_res + B·A)x − y‖²` over `pairs`.
pub fn task_loss(p: &AdapterPair, pairs: &[Pair]) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let out = crate::adapter::adapted_forward(p, &pair.x)?;
        total += out.iter().zip(&pair.y).map(|(o, y)| (o - y) * (o - y)).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Mini-batch gradient descent on the T₊ pairs, updating only `A` and `B`.
/// Returns the trained pair and the per-step batch loss (measured before
/// each update).
pub fn train_adapter(p: &AdapterPair, data: &TwoTaskDataset, cfg: &TrainConfig) -> Result<(AdapterPair, Vec<f64>)> {
    cfg.validate()?;
    if data.plus.is_empty() {
        return Err(Error::InvalidConfig("no T+ pairs to train on".into()));
    }
    let offsets = data
        .plus
        .iter()
        .map(|pair| residual_offset(p, pair))
        .collect::<Result<Vec<_>>>()?;

    let mut trained = p.clone();
    let mut rng = trial_rng(cfg.seed, STREAM_BATCHES);
    let n = data.plus.len();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // forces a shuffle on the first step
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let indices: Vec<usize> = if batch == n {
            (0..n).collect()
        } else {
            if cursor + batch > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor..cursor + batch].to_vec();
            cursor += batch;
            idx
        };
        let refs: Vec<(&[f64], &[f64])> = indices
            .iter()
            .map(|&i| (data.plus[i].x.as_slice(), offsets[i].as_slice()))
            .collect();
        let lg = grads_from_offsets(trained.a(), trained.b(), &refs).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence { step, loss: f64::INFINITY },
            other => other,
        })?;
        if !lg.loss.is_finite() {
            return Err(Error::Divergence { step, loss: lg.loss });
        }
        trace.push(lg.loss);

        let lr = cfg.learning_rate;
        let (a, b) = trained.factors_mut();
        for (w, g) in a.as_mut_slice().iter_mut().zip(lg.grad_a.as_slice()) {
            *w -= lr * g;
        }
        for (w, g) in b.as_mut_slice().iter_mut().zip(lg.grad_b.as_slice()) {
            *w -= lr * g;
        }
        let finite = a.as_slice().iter().chain(b.as_slice()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence { step, loss: lg.loss });
        }
    }
    Ok((trained, trace))
}

/// Mean `‖merge(p)·x − W₀·x‖²` over the T₋ inputs.
pub fn eval_preservation(p: &AdapterPair, data: &TwoTaskDataset, w0: &Matrix) -> Result<f64> {
    let change = merge_adapter(p)?.sub(w0)?;
    let mut total = 0.0;
    for pair in &data.minus {
        let d = change.mat_vec(&pair.x)?;
        total += d.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / data.minus.len() as f64)
}

/// Configuration of a β sweep; JSON keys match the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
    pub r_plus: usize,
    pub r_minus: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    /// Samples per task used only to estimate the covariances.
    pub init_samples: usize,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub overlap_angle: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_in: 48,
            d_out: 32,
            rank: 8,
            r_plus: 8,
            r_minus: 8,
            n_plus: 256,
            n_minus: 256,
            init_samples: 256,
            betas: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            seeds: (0..10).collect(),
            steps: 500,
            learning_rate: 1e-2,
            batch_size: 32,
            overlap_angle: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("betas and seeds must be non-empty".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::BetaOutOfRange(*b));
        }
        if self.rank == 0 || self.rank > self.d_out.min(self.d_in) {
            return Err(Error::RankOutOfRange {
                op: "sweep",
                rank: self.rank,
                max: self.d_out.min(self.d_in),
            });
        }
        if self.init_samples == 0 {
            return Err(Error::InvalidConfig("init_samples must be at least 1".into()));
        }
        self.gen_config(0).validate()?;
        self.train_config(0).validate()
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            d_in: self.d_in,
            d_out: self.d_out,
            r_plus: self.r_plus,
            r_minus: self.r_minus,
            n_plus: self.n_plus,
            n_minus: self.n_minus,
            seed,
            overlap_angle: self.overlap_angle,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Everything shared by the cells of one seed.
#[derive(Clone, Debug)]
pub struct SeedContext {
    pub seed: u64,
    pub generator: TaskGenerator,
    pub data: TwoTaskDataset,
    pub cov_pos: CovarianceMatrix,
    pub cov_neg: CovarianceMatrix,
}

fn output_covariance(w0: &Matrix, pairs: &[Pair]) -> Result<CovarianceMatrix> {
    let mut acc = CovAccumulator::new(w0.rows());
    for (k, pair) in pairs.iter().enumerate() {
        let h = w0.mat_vec(&pair.x)?;
        acc.accumulate(&ActivationSample::new(Matrix::column_vector(&h)?, k.to_string()))?;
    }
    acc.finalize()
}

/// Generates training data and the initialization covariances (from a
/// disjoint subsample, one token per sample) for `seed`.
pub fn prepare_seed(cfg: &SweepConfig, seed: u64) -> Result<SeedContext> {
    let generator = TaskGenerator::new(&cfg.gen_config(seed))?;
    let data = generator.draw_training_set()?;
    let mut rng = trial_rng(seed, STREAM_INIT_SAMPLES);
    let init = generator.draw(cfg.init_samples, cfg.init_samples, &mut rng)?;
    let cov_pos = output_covariance(&generator.w0, &init.plus)?;
    let cov_neg = output_covariance(&generator.w0, &init.minus)?;
    Ok(SeedContext {
        seed,
        generator,
        data,
        cov_pos,
        cov_neg,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub seed: u64,
    pub final_plus_loss: f64,
    pub preservation_drift: f64,
    pub loss_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub record: SweepRecord,
    pub basis: OrthonormalBasis,
    pub warnings: Vec<Warning>,
}

/// Select, initialize, train and measure one (β, seed) cell.
pub fn run_cell(cfg: &SweepConfig, ctx: &SeedContext, beta: f64) -> Result<CellResult> {
    let delta = delta_cov(&ctx.cov_pos, &ctx.cov_neg, beta)?;
    let selection = select_subspace(&delta, cfg.rank)?;
    let w0 = &ctx.generator.w0;
    let pair = init_sc_lora(w0, &selection.basis)?;
    let (trained, trace) = train_adapter(&pair, &ctx.data, &cfg.train_config(ctx.seed))?;
    let record = SweepRecord {
        beta,
        seed: ctx.seed,
        final_plus_loss: task_loss(&trained, &ctx.data.plus)?,
        preservation_drift: eval_preservation(&trained, &ctx.data, w0)?,
        loss_trace: trace,
    };
    Ok(CellResult {
        record,
        basis: selection.basis,
        warnings: selection.warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub beta: f64,
    pub mean_final_plus_loss: f64,
    pub mean_preservation_drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Ordered by β, then seed, as listed in the config.
    pub records: Vec<SweepRecord>,
    /// One row per β, averaged over seeds.
    pub summary: Vec<SummaryRow>,
    pub seeds: Vec<u64>,
    pub warnings: Vec<Warning>,
}

impl SweepReport {
    pub fn drift_series(&self) -> Vec<f64> {
        self.summary.iter().map(|r| r.mean_preservation_drift).collect()
    }

    pub fn loss_series(&self) -> Vec<f64> {
        self.summary.iter().map(|r| r.mean_final_plus_loss).collect()
    }
}

fn run_all(cfg: &SweepConfig) -> Result<Vec<CellResult>> {
    let contexts = cfg
        .seeds
        .iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(cfg.betas.len() * contexts.len());
    for &beta in &cfg.betas {
        for ctx in &contexts {
            out.push(run_cell(cfg, ctx, beta)?);
        }
    }
    Ok(out)
}

fn run_all_parallel(cfg: &SweepConfig) -> Result<Vec<CellResult>> {
    let contexts = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(f64, usize)> = cfg
        .betas
        .iter()
        .flat_map(|&b| (0..contexts.len()).map(move |k| (b, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(beta, k)| run_cell(cfg, &contexts[k], beta))
        .collect()
}

/// Runs every (β, seed) cell. With `threads > 1` cells run on a dedicated
/// thread pool; the report is identical either way.
pub fn beta_sweep(cfg: &SweepConfig, threads: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let cells = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| run_all_parallel(cfg))?
    } else {
        run_all(cfg)?
    };

    let n_seeds = cfg.seeds.len() as f64;
    let summary = cfg
        .betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let rows = &cells[i * cfg.seeds.len()..(i + 1) * cfg.seeds.len()];
            SummaryRow {
                beta,
                mean_final_plus_loss: rows.iter().map(|c| c.record.final_plus_loss).sum::<f64>() / n_seeds,
                mean_preservation_drift: rows.iter().map(|c| c.record.preservation_drift).sum::<f64>() / n_seeds,
            }
        })
        .collect();
    let mut warnings = Vec::new();
    for c in &cells {
        for w in &c.warnings {
            warnings.push(Warning::new(
                w.code,
                format!("beta={} seed={}: {}", c.record.beta, c.record.seed, w.message),
            ));
        }
    }
    Ok(SweepReport {
        records: cells.into_iter().map(|c| c.record).collect(),
        summary,
        seeds: cfg.seeds.clone(),
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    NonIncreasing,
    NonDecreasing,
}

/// Adjacent-pair inversions of a series against the expected direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendCheck {
    /// Relative size of each inversion, `|s[i+1] − s[i]| / |s[i]|`.
    pub inversions: Vec<f64>,
}

impl TrendCheck {
    /// At most `max_inversions` inversions, none larger than `max_relative`.
    pub fn holds(&self, max_inversions: usize, max_relative: f64) -> bool {
        self.inversions.len() <= max_inversions && self.inversions.iter().all(|&r| r <= max_relative)
    }
}

pub fn check_trend(series: &[f64], direction: Direction) -> TrendCheck {
    let inversions = series
        .windows(2)
        .filter_map(|w| {
            let step = w[1] - w[0];
            let wrong = match direction {
                Direction::NonIncreasing => step > 0.0,
                Direction::NonDecreasing => step < 0.0,
            };
            wrong.then(|| {
                if w[0] == 0.0 {
                    f64::INFINITY
                } else {
                    step.abs() / w[0].abs()
                }
            })
        })
        .collect();
    TrendCheck { inversions }
}
