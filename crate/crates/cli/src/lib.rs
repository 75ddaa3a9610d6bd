//! `sclora` command-line front end.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 usage or input error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use sclora_core::adapter::{
    containment_error, init_pissa, init_sc_lora, init_vanilla, projection_identity_error, reconstruction_error,
    AdapterPair, Scheme,
};
use sclora_core::covariance::{rank_deficiency_check, CovAccumulator, CovarianceMatrix};
use sclora_core::io::{self, AdapterHeader};
use sclora_core::matrix::{mat_mul, orthonormality_error, svd_thin, Matrix};
use sclora_core::subspace::{delta_cov, select_subspace, trial_rng, OrthonormalBasis, SubspaceSelection};
use sclora_core::trainer::{beta_sweep, SweepConfig};
use sclora_core::{Error, Warning, WarningCode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// β above which a rank-deficient preserved-task covariance triggers the
/// advisory.
const BETA_ADVISORY_THRESHOLD: f64 = 0.95;
/// Random probes used by `verify` for the projection identity.
const VERIFY_PROBES: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "sclora", version, about = "Subspace-constrained low-rank adapter initialization")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Suppress informational output (warnings still go to stderr).
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Accumulate an activation dump into a covariance file.
    Covariance(CovarianceArgs),
    /// Select the reward-maximizing subspace from two covariances.
    Subspace(SubspaceArgs),
    /// Initialize an adapter for a weight matrix.
    Init(InitArgs),
    /// Check the initialization invariants of an adapter file.
    Verify(VerifyArgs),
    /// Run the synthetic two-task β sweep.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct CovarianceArgs {
    /// Concatenated matrix records, one d_out × L record per sample.
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Truncate every sample to its first L tokens.
    #[arg(long, value_name = "L")]
    clip: Option<usize>,
}

#[derive(Debug, Args)]
struct SubspaceArgs {
    #[arg(long)]
    cov_pos: PathBuf,
    #[arg(long)]
    cov_neg: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long)]
    rank: usize,
    /// Basis output (d_out × r matrix).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    w0: PathBuf,
    /// sc-lora, vanilla or pissa.
    #[arg(long)]
    scheme: String,
    #[arg(long, conflicts_with_all = ["cov_pos", "cov_neg", "beta"])]
    basis: Option<PathBuf>,
    #[arg(long, requires_all = ["cov_neg", "beta"])]
    cov_pos: Option<PathBuf>,
    #[arg(long, requires_all = ["cov_pos", "beta"])]
    cov_neg: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    adapter: PathBuf,
    #[arg(long)]
    w0: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON sweep configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.csv, summary.csv and the loss traces.
    #[arg(long)]
    out: PathBuf,
}

/// Result of one CLI invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub warnings: Vec<Warning>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input { path: PathBuf, source: Error },
    Numerical(Error),
    Violation(usize),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Input { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Violation(n) => write!(f, "{n} invariant check(s) failed"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input { .. } => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Violation(_) => EXIT_VIOLATION,
        }
    }
}

/// Core errors that are not tied to a file.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e)
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

fn with_path<T>(path: &Path, r: sclora_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| {
        if source.is_numerical() {
            CliError::Numerical(source)
        } else {
            CliError::Input {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

struct Context<'a> {
    seed: u64,
    quiet: bool,
    threads: usize,
    out: &'a mut dyn Write,
    warnings: Vec<Warning>,
}

impl Context<'_> {
    fn info(&mut self, line: impl fmt::Display) {
        if !self.quiet {
            let _ = writeln!(self.out, "{line}");
        }
    }

    fn warn(&mut self, w: Warning) {
        self.warnings.push(w);
    }
}

/// Runs the CLI against the process's stdout/stderr.
pub fn run<I, T>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI with explicit output streams. `err` is the diagnostic
/// stream: `WARN <code>: <message>` lines and error messages.
pub fn run_with_io<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
            return CommandOutcome {
                exit_code: code,
                warnings: Vec::new(),
            };
        }
    };

    let mut ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
        threads: cli.threads,
        out,
        warnings: Vec::new(),
    };
    let result = match &cli.command {
        Command::Covariance(a) => cmd_covariance(&mut ctx, a),
        Command::Subspace(a) => cmd_subspace(&mut ctx, a),
        Command::Init(a) => cmd_init(&mut ctx, a),
        Command::Verify(a) => cmd_verify(&mut ctx, a),
        Command::Sweep(a) => cmd_sweep(&mut ctx, a),
    };
    for w in &ctx.warnings {
        let _ = writeln!(err, "{w}");
    }
    let exit_code = match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    };
    CommandOutcome {
        exit_code,
        warnings: ctx.warnings,
    }
}

fn cmd_covariance(ctx: &mut Context, args: &CovarianceArgs) -> Result<(), CliError> {
    let samples = with_path(&args.activations, io::read_activations(&args.activations))?;
    let first = samples.first().ok_or_else(|| CliError::Input {
        path: args.activations.clone(),
        source: Error::Format {
            offset: 0,
            reason: "no activation records".into(),
        },
    })?;
    let mut acc = CovAccumulator::new(first.dim());
    for (i, s) in samples.into_iter().enumerate() {
        let s = match args.clip {
            Some(l) => s.clip(l)?,
            None => s,
        };
        acc.accumulate(&s).map_err(|e| CliError::Input {
            path: args.activations.clone(),
            source: Error::InvalidConfig(format!("record {i}: {e}")),
        })?;
    }
    let cov = acc.finalize()?;
    with_path(&args.out, io::write_covariance(&args.out, &cov))?;
    ctx.info(format!(
        "covariance: dim={} samples={} token_length={} -> {}",
        cov.dim(),
        cov.sample_count,
        cov.token_length,
        args.out.display()
    ));
    Ok(())
}

fn check_beta(beta: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--beta must lie in [0, 1], got {beta}")))
    }
}

/// Subspace selection plus the sample-size diagnostics.
fn select_from_covariances(
    ctx: &mut Context,
    cov_pos: &CovarianceMatrix,
    cov_neg: &CovarianceMatrix,
    beta: f64,
    rank: usize,
) -> Result<SubspaceSelection, CliError> {
    let delta = delta_cov(cov_pos, cov_neg, beta)?;
    let selection = select_subspace(&delta, rank)?;

    let neg = rank_deficiency_check(cov_neg, rank);
    for (name, diag) in [("Cov+", rank_deficiency_check(cov_pos, rank)), ("Cov-", neg)] {
        if diag.is_warn() {
            ctx.warn(Warning::new(
                WarningCode::RankDeficient,
                format!(
                    "{name}: samples x tokens = {} < d_out - r = {}; its null space exceeds the rank",
                    diag.rank_bound, diag.threshold
                ),
            ));
        }
    }
    if beta > BETA_ADVISORY_THRESHOLD && neg.is_warn() {
        ctx.warn(Warning::new(
            WarningCode::BetaNearOne,
            format!(
                "beta={beta} with a rank-deficient Cov-: many subspaces are equally optimal; keep 1 - beta a small positive value (e.g. beta = 0.8 or 0.9)"
            ),
        ));
    }
    for w in &selection.warnings {
        ctx.warn(w.clone());
    }
    Ok(selection)
}

fn cmd_subspace(ctx: &mut Context, args: &SubspaceArgs) -> Result<(), CliError> {
    check_beta(args.beta)?;
    let cov_pos = with_path(&args.cov_pos, io::read_covariance(&args.cov_pos))?;
    let cov_neg = with_path(&args.cov_neg, io::read_covariance(&args.cov_neg))?;
    let selection = select_from_covariances(ctx, &cov_pos, &cov_neg, args.beta, args.rank)?;
    with_path(&args.out, io::write_matrix(&args.out, selection.basis.columns()))?;
    ctx.info(format!(
        "subspace: dim={} r={} beta={} reward={:e} -> {}",
        selection.basis.dim(),
        selection.basis.rank(),
        args.beta,
        selection.reward,
        args.out.display()
    ));
    Ok(())
}

fn cmd_init(ctx: &mut Context, args: &InitArgs) -> Result<(), CliError> {
    let scheme: Scheme = args.scheme.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let w0 = with_path(&args.w0, io::read_matrix(&args.w0))?;
    let mut beta = None;
    let mut seed = None;

    let pair = match scheme {
        Scheme::ScLora => {
            let basis = match (&args.basis, &args.cov_pos, &args.cov_neg, args.beta) {
                (Some(path), ..) => {
                    let m = with_path(path, io::read_matrix(path))?;
                    let basis = with_path(path, OrthonormalBasis::new(m))?;
                    if basis.rank() != args.rank {
                        return Err(CliError::Usage(format!(
                            "--rank {} does not match the basis rank {}",
                            args.rank,
                            basis.rank()
                        )));
                    }
                    basis
                }
                (None, Some(pos), Some(neg), Some(b)) => {
                    check_beta(b)?;
                    let cov_pos = with_path(pos, io::read_covariance(pos))?;
                    let cov_neg = with_path(neg, io::read_covariance(neg))?;
                    beta = Some(b);
                    select_from_covariances(ctx, &cov_pos, &cov_neg, b, args.rank)?.basis
                }
                _ => {
                    return Err(CliError::Usage(
                        "sc-lora needs --basis or all of --cov-pos, --cov-neg, --beta".into(),
                    ))
                }
            };
            init_sc_lora(&w0, &basis)?
        }
        Scheme::Vanilla => {
            seed = Some(ctx.seed);
            init_vanilla(&w0, args.rank, ctx.seed)?
        }
        Scheme::Pissa => init_pissa(&w0, args.rank)?,
    };

    let header = AdapterHeader {
        scheme,
        r: pair.rank(),
        d_in: pair.d_in(),
        d_out: pair.d_out(),
        beta,
        seed,
        warnings: ctx.warnings.clone(),
    };
    with_path(&args.out, io::write_adapter(&args.out, &header, &pair))?;
    ctx.info(format!(
        "init: scheme={} r={} d_in={} d_out={} -> {}",
        scheme,
        pair.rank(),
        pair.d_in(),
        pair.d_out(),
        args.out.display()
    ));
    Ok(())
}

/// One named invariant with its measured value and bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:e} <= {:e}", self.name, self.value, self.bound)
    }
}

/// Initialization-time invariants of `pair` against `w0`. `seed` drives the
/// random probe inputs.
pub fn verify_adapter(pair: &AdapterPair, w0: &Matrix, seed: u64) -> sclora_core::Result<Vec<Check>> {
    let mut checks = Vec::new();
    if (pair.d_out(), pair.d_in()) != w0.shape() {
        checks.push(Check {
            name: "shape",
            value: f64::INFINITY,
            bound: 0.0,
        });
        return Ok(checks);
    }
    let w0_norm = w0.frobenius_norm().max(1.0);
    checks.push(Check {
        name: "reconstruction",
        value: reconstruction_error(pair, w0)?,
        bound: 1e-10,
    });

    match pair.scheme() {
        Scheme::ScLora => {
            let ortho = orthonormality_error(pair.b());
            checks.push(Check {
                name: "b_orthonormal",
                value: ortho,
                bound: 1e-10,
            });
            let a_expected = mat_mul(&pair.b().transpose(), w0)?;
            checks.push(Check {
                name: "a_equals_bt_w0",
                value: pair.a().sub(&a_expected)?.frobenius_norm() / w0_norm,
                bound: 1e-10,
            });
            if ortho <= 1e-10 {
                let basis = OrthonormalBasis::new(pair.b().clone())?;
                let mut rng = trial_rng(seed, 0);
                let xs: Vec<Vec<f64>> = (0..VERIFY_PROBES)
                    .map(|_| (0..w0.cols()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                checks.push(Check {
                    name: "projection_identity",
                    value: projection_identity_error(pair, w0, &basis, &xs)?,
                    bound: 1e-8,
                });
                checks.push(Check {
                    name: "output_containment",
                    value: containment_error(pair, &basis, &xs)?,
                    bound: 1e-8,
                });
            }
        }
        Scheme::Vanilla => {
            checks.push(Check {
                name: "b_zero",
                value: pair.b().frobenius_norm(),
                bound: 0.0,
            });
        }
        Scheme::Pissa => {
            let k = w0.rows().min(w0.cols());
            let full = svd_thin(w0, k)?;
            let tail: f64 = full.sigma[pair.rank()..].iter().map(|s| s * s).sum();
            let res = pair.w_res().frobenius_norm();
            checks.push(Check {
                name: "residual_tail_energy",
                value: (res * res - tail).abs(),
                bound: 1e-8 * w0_norm * w0_norm,
            });
        }
    }
    Ok(checks)
}

fn cmd_verify(ctx: &mut Context, args: &VerifyArgs) -> Result<(), CliError> {
    let (header, pair) = with_path(&args.adapter, io::read_adapter(&args.adapter))?;
    let w0 = with_path(&args.w0, io::read_matrix(&args.w0))?;
    let checks = verify_adapter(&pair, &w0, ctx.seed)?;
    ctx.info(format!("verify: scheme={} r={}", header.scheme, header.r));
    for c in &checks {
        ctx.info(c);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Violation(failed));
    }
    Ok(())
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn json_byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let preceding: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (preceding + column.saturating_sub(1)) as u64
}

fn cmd_sweep(ctx: &mut Context, args: &SweepArgs) -> Result<(), CliError> {
    let text = with_path(
        &args.config,
        std::fs::read_to_string(&args.config).map_err(Error::from),
    )?;
    let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: args.config.clone(),
        source: Error::Format {
            offset: json_byte_offset(&text, e.line(), e.column()),
            reason: e.to_string(),
        },
    })?;
    cfg.validate().map_err(|source| CliError::Input {
        path: args.config.clone(),
        source,
    })?;
    let report = beta_sweep(&cfg, ctx.threads)?;
    with_path(&args.out, io::write_sweep_report(&args.out, &report))?;
    for w in &report.warnings {
        ctx.warn(w.clone());
    }
    ctx.info("beta,mean_final_plus_loss,mean_preservation_drift");
    for row in &report.summary {
        ctx.info(format!(
            "{},{},{}",
            row.beta, row.mean_final_plus_loss, row.mean_preservation_drift
        ));
    }
    Ok(())
}
