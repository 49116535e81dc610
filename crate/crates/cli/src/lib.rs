//! Command-line front end: argument parsing and subcommand dispatch.
//!
//! Exit codes: 0 on success (including `--help` and `--version`), 1 on a
//! usage error, 2 on a runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opsa::harness::{run_experiment, write_trace_csv, ExperimentConfig, PRule};
use opsa::metrics::{contraction_rate, simplified_rate, theory_checks, RateInputs};
use opsa::rip;
use opsa::sensing::{corrupt, outlier_support, Measurements, DEFAULT_AMPLITUDE};
use opsa::solver::{self, Init, Method, SolverConfig, StepPolicy};
use opsa::{generate_ground_truth, make_gaussian_ensemble, LossContext, StorageMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "opsa",
    version,
    about = "Robust overparameterized low-rank matrix sensing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solver configuration on a synthetic instance.
    Solve(SolveArgs),
    /// Run a JSON experiment config and write traces plus a manifest.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample mixed-norm RIP ratios of a Gaussian ensemble.
    RipProbe(RipArgs),
    /// Run the numerical lemma checks.
    TheoryCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the general and simplified contraction rates.
    Rate {
        #[arg(long)]
        chi: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        lambda: f64,
        /// `‖X⋆‖_op`.
        #[arg(long)]
        opnorm: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepKind {
    Polyak,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Spectral,
    /// Start at the planted factors.
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Storage {
    Dense,
    Regenerate,
}

impl From<Storage> for StorageMode {
    fn from(s: Storage) -> Self {
        match s {
            Storage::Dense => StorageMode::Dense,
            Storage::Regenerate => StorageMode::Regenerate,
        }
    }
}

fn parse_p(s: &str) -> Result<PRule, String> {
    if s == "8nr" {
        return Ok(PRule::Named(opsa::harness::NamedRule::EightNr));
    }
    s.parse()
        .map(PRule::Explicit)
        .map_err(|_| format!("expected a count or \"8nr\", got {s:?}"))
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub r: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 20.0)]
    pub kappa: f64,
    /// Measurement count or `8nr`.
    #[arg(long, default_value = "8nr", value_parser = parse_p)]
    pub p: PRule,
    /// Keep the random-product scale instead of pinning `σ_r = 1`.
    #[arg(long)]
    pub raw_scale: bool,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
    pub amplitude: f64,
    #[arg(long, value_enum, default_value_t = Storage::Dense)]
    pub storage: Storage,

    #[arg(long, default_value = "OPSA")]
    pub method: Method,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = StepKind::Polyak)]
    pub step: StepKind,
    /// Optimal loss for Polyak steps; defaults to the planted value.
    #[arg(long)]
    pub opt_value: Option<f64>,
    #[arg(long, default_value_t = solver::DEFAULT_ETA0)]
    pub eta0: f64,
    #[arg(long, default_value_t = solver::DEFAULT_DECAY)]
    pub q: f64,
    #[arg(long, value_enum, default_value_t = InitKind::Spectral)]
    pub init: InitKind,
    #[arg(long)]
    pub truncation_quantile: Option<f64>,
    #[arg(long, default_value_t = solver::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rel_err_stop: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub dist_every: usize,
    #[arg(long, default_value_t = solver::DEFAULT_PINV_CUTOFF)]
    pub pinv_cutoff: f64,
    #[arg(long)]
    pub wall_time: bool,
    /// Trace CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RipArgs {
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub two_d: usize,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Splits each ratio across a planted outlier support of this size.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Storage::Dense)]
    pub storage: Storage,
    /// CSV destination; without it the CSV goes to stdout and the summary to stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first) without running anything.
pub fn parse<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Parses and runs `argv`, returning the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] opsa::Error),
    #[error("{0}")]
    Output(#[from] std::io::Error),
}

fn write_file(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| {
        opsa::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Solve(args) => solve(&args, out),
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(&cfg)?;
            for c in &outcome.manifest.cells {
                match (&c.termination, c.final_rel_error) {
                    (Some(t), Some(e)) => writeln!(
                        out,
                        "cell {:>4} d={} kappa={} lambda={} fraction={} {} seed={}: {} after {} iterations, rel_error {e:.3e}",
                        c.cell.index,
                        c.cell.d,
                        c.cell.kappa,
                        c.cell.lambda,
                        c.cell.outlier_fraction,
                        c.cell.method,
                        c.cell.seed,
                        t.name(),
                        c.iters_to_stop.unwrap_or(0),
                    )?,
                    _ => writeln!(out, "cell {:>4} failed: {}", c.cell.index, c.error.as_deref().unwrap_or("unknown"))?,
                }
            }
            writeln!(out, "manifest: {}", outcome.manifest_path.display())?;
            Ok(())
        }
        Command::RipProbe(args) => rip_probe(&args, out, err),
        Command::TheoryCheck { samples, seed, csv } => {
            let report = theory_checks(samples, seed)?;
            write!(out, "{}", report.to_text())?;
            if let Some(path) = csv {
                write_file(&path, &report.to_csv())?;
            }
            Ok(())
        }
        Command::Rate {
            chi,
            epsilon,
            lambda,
            opnorm,
        } => {
            let inputs = RateInputs::from_op_norm(chi, epsilon, lambda, opnorm);
            let rho = contraction_rate(&inputs)?;
            writeln!(out, "rho = {rho:.12}")?;
            writeln!(out, "(1 - rho) * chi^2 = {:.12}", (1.0 - rho) * chi * chi)?;
            writeln!(out, "simplified rho = {:.12}", simplified_rate(chi))?;
            Ok(())
        }
    }
}

fn solve(args: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let p = args.p.resolve(args.n, args.r);
    let gt = generate_ground_truth(
        args.m,
        args.n,
        args.r,
        args.d,
        args.kappa,
        args.seed,
        !args.raw_scale,
    )?;
    let ensemble = make_gaussian_ensemble(args.m, args.n, p, args.seed, args.storage.into())?;
    let y = ensemble.forward(&gt.materialize())?;
    let meas: Measurements = corrupt(&y, args.outlier_fraction, args.amplitude, args.seed)?;
    let ctx = LossContext::new(&ensemble, &meas)?;
    let config = SolverConfig {
        lambda: args.lambda,
        method: args.method,
        step_policy: match args.step {
            StepKind::Polyak => StepPolicy::Polyak {
                opt_value: args.opt_value,
            },
            StepKind::Geometric => StepPolicy::Geometric {
                eta0: args.eta0,
                q: args.q,
            },
        },
        init: match args.init {
            InitKind::Spectral => Init::Spectral {
                truncation_quantile: args.truncation_quantile,
            },
            InitKind::Planted => Init::FromFactors(gt.planted_factors()),
        },
        max_iters: args.max_iters,
        rel_err_stop: args.rel_err_stop,
        seed: args.seed,
        dist_every: args.dist_every,
        pinv_cutoff: args.pinv_cutoff,
        record_wall_time: args.wall_time,
    };
    let trace = solver::run(&gt, &ctx, &config)?;
    if let Some(path) = &args.out {
        write_file(path, &write_trace_csv(&trace.records))?;
    }
    let last = trace.last();
    writeln!(out, "method: {}", config.method)?;
    writeln!(out, "p: {p}")?;
    writeln!(out, "termination: {}", trace.termination.name())?;
    writeln!(out, "iterations: {}", trace.iterations())?;
    writeln!(out, "initial rel_error: {:.6e}", trace.records[0].rel_error)?;
    writeln!(out, "final rel_error: {:.6e}", last.rel_error)?;
    writeln!(out, "final loss: {:.6e}", last.loss)?;
    for w in &trace.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

fn rip_probe(args: &RipArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let ensemble = make_gaussian_ensemble(args.m, args.n, args.p, args.seed, args.storage.into())?;
    let (estimate, csv) = if args.outlier_fraction > 0.0 {
        let support = outlier_support(args.p, args.outlier_fraction, args.seed)?;
        let (est, splits) =
            rip::estimate_with_outliers(&ensemble, &support, args.two_d, args.trials, args.seed)?;
        (est, rip::splits_csv(&splits))
    } else {
        let ratios = rip::rip_ratios(&ensemble, args.two_d, args.trials, args.seed)?;
        let est = rip::RipEstimate::from_ratios(&ratios, args.two_d, args.seed);
        (est, rip::ratios_csv(&ratios))
    };
    let mut summary = format!(
        "trials={} rank={} delta_minus={:.6} delta_plus={:.6}",
        estimate.trials, estimate.rank_tested, estimate.delta_minus, estimate.delta_plus
    );
    if let Some(d0) = estimate.delta_zero {
        summary.push_str(&format!(" delta_zero={d0:.6}"));
    }
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            writeln!(out, "{summary}")?;
        }
        None => {
            write!(out, "{csv}")?;
            writeln!(err, "{summary}")?;
        }
    }
    Ok(())
}
