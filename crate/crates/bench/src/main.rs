use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtsgd_bench::config::{parse_config, Experiment, RunConfig};
use mtsgd_bench::experiments::run_experiment;
use mtsgd_bench::BenchError;

/// Thread count for the sampler's parallel loops; unset means all cores.
const THREADS_ENV: &str = "MTSGD_THREADS";

#[derive(Parser)]
#[command(name = "mtsgd-bench", version, about = "Run multi-target sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Three two-component mixtures with a common high-density region.
    #[command(name = "sample3mix")]
    Sample3Mix(Flags),
    /// ZDT3 objectives as Gibbs targets on [0, 1]^30.
    #[command(name = "zdt3")]
    Zdt3(Flags),
    /// Shared-trunk multi-task ensemble on a synthetic dataset.
    #[command(name = "mtl_toy")]
    MtlToy(Flags),
    /// Wall time and QP-solve counts versus particle count.
    #[command(name = "bench_runtime")]
    BenchRuntime(Flags),
    /// Mixtures given by `target` lines in the config.
    #[command(name = "custom")]
    Custom(Flags),
}

#[derive(Args)]
struct Flags {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(experiment: Experiment, flags: &Flags) -> Result<RunConfig, BenchError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
                path: path.clone(),
                source,
            })?;
            let cfg = parse_config(&text)?;
            if cfg.experiment != experiment {
                return Err(BenchError::config(
                    None,
                    format!("config is for '{}' but '{}' was requested", cfg.experiment, experiment),
                ));
            }
            cfg
        }
        None => RunConfig::defaults(experiment),
    };
    if let Some(out) = &flags.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = flags.seed {
        cfg.step.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), BenchError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| BenchError::config(None, format!("{THREADS_ENV} must be a thread count, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| BenchError::config(None, format!("{THREADS_ENV}: {e}")))
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    configure_threads()?;
    let (experiment, flags) = match &cli.command {
        Command::Sample3Mix(f) => (Experiment::Sample3Mix, f),
        Command::Zdt3(f) => (Experiment::Zdt3, f),
        Command::MtlToy(f) => (Experiment::MtlToy, f),
        Command::BenchRuntime(f) => (Experiment::BenchRuntime, f),
        Command::Custom(f) => (Experiment::Custom, f),
    };
    let cfg = load(experiment, flags)?;
    let outputs = run_experiment(&cfg)?;
    for path in outputs.write(&cfg.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
