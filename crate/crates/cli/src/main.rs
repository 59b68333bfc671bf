//! `paslab`: config-driven experiments for PCA-based adaptive search.
//!
//! Exit codes: 0 success, 2 invalid config or input, 3 numerical failure,
//! 4 I/O or integrity failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use artifacts::{commit, Artifacts, Manifest, RunInfo};
use commands::{Context, RunSummary, SUMMARY_NAME};
use config::ExperimentConfig;

pub const ENV_OUT_DIR: &str = "PASLAB_OUT_DIR";
pub const ENV_THREADS: &str = "PASLAB_THREADS";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
    Integrity(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) | CliError::Integrity(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Integrity(m) => write!(f, "integrity error: {m}"),
        }
    }
}

impl From<pas_core::PasError> for CliError {
    fn from(e: pas_core::PasError) -> Self {
        use pas_core::PasError;
        match e {
            PasError::Io(io) => CliError::Io(io.to_string()),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "paslab", version, about = "PCA-based adaptive search experiments on analytic score models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides PASLAB_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides PASLAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TableArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Correction table produced by `train-pas`.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the student time grid and its teacher refinement.
    Schedule(RunArgs),
    /// Sample with the configured solver; write trajectories and error curves.
    Sample(RunArgs),
    /// Train a correction table against teacher trajectories.
    TrainPas(RunArgs),
    /// Sample with a correction table and compare against the uncorrected solver.
    CorrectSample(TableArgs),
    /// Cumulative explained variance of single and pooled trajectories.
    AnalyzeSubspace(RunArgs),
    /// Truncation-error curves, optionally with a correction table.
    ErrorCurve(TableArgs),
    /// Verify a run directory and print its summary.
    Report {
        /// Run directory containing manifest.json.
        dir: PathBuf,
    },
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(ENV_THREADS) {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("{ENV_THREADS}: expected a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_out(flag: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| std::env::var_os(ENV_OUT_DIR).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Validation(format!("no output directory: pass --out, set {ENV_OUT_DIR}, or set output_dir")))
}

fn run(
    name: &str,
    args: RunArgs,
    table: Option<PathBuf>,
    body: fn(&Context, &mut Artifacts) -> Result<RunSummary, CliError>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let config = ExperimentConfig::load(&args.config)?.finalize(args.seed)?;
    let out_dir = resolve_out(args.out, &config)?;
    let threads = match resolve_threads(args.threads)? {
        Some(0) => return Err(CliError::Validation("--threads: must be >= 1".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;

    let mut hashed = config.clone();
    hashed.output_dir = None;
    let config_json = hashed.canonical_json();
    let ctx = Context::new(config, table.as_deref())?;

    let mut staged = Artifacts::default();
    let summary = pool.install(|| body(&ctx, &mut staged))?;
    let mut config_text = serde_json::to_string_pretty(&hashed).expect("config serializes");
    config_text.push('\n');
    staged.add_text("config.json", config_text);
    staged.add_json(SUMMARY_NAME, &summary);

    let inputs = ctx.table.as_ref().map(|(p, b, _)| vec![(p.clone(), b.clone())]).unwrap_or_default();
    let manifest = commit(
        &out_dir,
        staged,
        RunInfo {
            subcommand: name,
            config_json: &config_json,
            seed: ctx.config.seed,
            threads,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            inputs,
        },
    )?;
    println!("{}", commands::render_report(&manifest, &summary));
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn report(dir: PathBuf) -> Result<(), CliError> {
    let manifest = Manifest::load(&dir)?;
    manifest.verify(&dir)?;
    if manifest.artifact(SUMMARY_NAME).is_none() {
        return Err(CliError::Integrity(format!("{SUMMARY_NAME} is not listed in the manifest")));
    }
    let text = std::fs::read_to_string(dir.join(SUMMARY_NAME))
        .map_err(|e| CliError::Io(format!("{SUMMARY_NAME}: {e}")))?;
    let summary: RunSummary =
        serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("{SUMMARY_NAME}: {e}")))?;
    println!("{}", commands::render_report(&manifest, &summary));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Schedule(a) => run("schedule", a, None, commands::schedule),
        Command::Sample(a) => run("sample", a, None, commands::sample_cmd),
        Command::TrainPas(a) => run("train-pas", a, None, commands::train_cmd),
        Command::CorrectSample(a) => run("correct-sample", a.run, a.table, commands::correct_cmd),
        Command::AnalyzeSubspace(a) => run("analyze-subspace", a, None, commands::analyze_cmd),
        Command::ErrorCurve(a) => run("error-curve", a.run, a.table, commands::error_curve_cmd),
        Command::Report { dir } => report(dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
