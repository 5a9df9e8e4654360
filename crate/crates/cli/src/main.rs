//! `fluctlab`: runs one experiment from a TOML config and writes its
//! artifacts, plus a manifest, into an output directory.
//!
//! Exit status is 0 on success, 2 for usage or config errors and 1 for
//! failures during the run. Errors are printed to stderr as one JSON
//! object.

mod config;
mod experiments;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{ExperimentConfig, ExperimentKind, Overrides, SCHEMA_VERSION};
use output::{sha256_hex, Artifacts};

#[derive(Parser)]
#[command(name = "fluctlab", version, about = "Seeded experiments on energy-conserving rotation dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate trajectories and record energy and field modes.
    Simulate(RunArgs),
    /// Ritz minimisation of the diffusion coefficient.
    DiffusionCoefficient(RunArgs),
    /// Equilibrium time covariances of the fluctuation field.
    Fluctuations(RunArgs),
    /// Time variances of the boundary and current observables.
    CltVariances(RunArgs),
    /// Residual of the current decomposition for two candidates.
    BgResidual(RunArgs),
    /// Moment, divergence, telescoping and path inequalities on spheres.
    SphereChecks(RunArgs),
    /// Relaxation-time scaling with chain length.
    SpectralGap(RunArgs),
    /// Difference between sphere and Gaussian expectations.
    EnsembleGap(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replaces `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; replaces `threads`. Falls back to FLUCTLAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; replaces `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Simulate(a) => (ExperimentKind::Simulate, a),
            Command::DiffusionCoefficient(a) => (ExperimentKind::DiffusionCoefficient, a),
            Command::Fluctuations(a) => (ExperimentKind::Fluctuations, a),
            Command::CltVariances(a) => (ExperimentKind::CltVariances, a),
            Command::BgResidual(a) => (ExperimentKind::BgResidual, a),
            Command::SphereChecks(a) => (ExperimentKind::SphereChecks, a),
            Command::SpectralGap(a) => (ExperimentKind::SpectralGap, a),
            Command::EnsembleGap(a) => (ExperimentKind::EnsembleGap, a),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime {
        module: &'static str,
        operation: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn runtime(module: &'static str, operation: &'static str, message: String) -> Self {
        CliError::Runtime {
            module,
            operation,
            message,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Usage(msg) => json!({ "error": { "kind": "usage", "message": msg } }),
            CliError::Runtime {
                module,
                operation,
                message,
            } => json!({ "error": { "kind": "runtime", "module": module, "operation": operation, "message": message } }),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

fn thread_count(cfg: &ExperimentConfig) -> Result<Option<usize>, CliError> {
    if cfg.threads.is_some() {
        return Ok(cfg.threads);
    }
    match std::env::var("FLUCTLAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!("FLUCTLAB_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Hash of everything that determines the numbers: the config without
/// `threads` and `out`, and the code version.
fn manifest_hash(echo: &Value) -> String {
    let mut hashed = echo.clone();
    if let Some(obj) = hashed.as_object_mut() {
        obj.remove("threads");
        obj.remove("out");
    }
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": hashed,
    });
    sha256_hex(doc.to_string().as_bytes())
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let overrides = Overrides {
        seed: args.seed,
        threads: args.threads,
        out: args.out,
    };
    let cfg = ExperimentConfig::parse(&text)?.resolve(kind, &overrides)?;
    if let Some(t) = thread_count(&cfg)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::runtime("cli", "run_experiment", e.to_string()))?;
    }
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let hash = manifest_hash(&echo);
    let mut art = Artifacts::create(&cfg.out, hash.clone())?;
    log::info!("running {} with seed {} into {}", kind.name(), cfg.seed, cfg.out.display());
    let start = Instant::now();
    let summary = experiments::run(kind, &cfg, &mut art)?;
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": kind.name(),
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "threads": rayon::current_num_threads(),
        "config": echo,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    let dest = art.finish(manifest)?;
    log::info!("{} finished in {:.2} s", kind.name(), start.elapsed().as_secs_f64());
    Ok(json!({
        "status": "ok",
        "experiment": kind.name(),
        "out": dest.display().to_string(),
        "manifest_hash": hash,
        "summary": summary,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{err}");
            return ExitCode::from(err.exit_code());
        }
    };
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
