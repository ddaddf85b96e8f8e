//! Command-line harness for DPSMC and the baseline samplers.

mod commands;
mod error;
mod output;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::EvalArgs;
use crate::error::CliResult;
use crate::spec::{EvalParams, Metric};

#[derive(Parser)]
#[command(name = "dpsmc", version, about = "Diffusion-path SMC sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampler configuration and write samples, diagnostics and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seeds with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a samples CSV against reference samples or an exact target.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long = "ref", conflicts_with = "target")]
        reference: Option<PathBuf>,
        /// Benchmark name (gmm40, rings, funnel, ionosphere), target JSON or
        /// a run manifest.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = dpsmc::metrics::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = dpsmc::metrics::DEFAULT_PROJECTIONS)]
        n_proj: usize,
        #[arg(long, default_value_t = 10_000)]
        n_reference: usize,
        #[arg(long, default_value_t = 5_000)]
        max_iter: usize,
        #[arg(long, default_value_t = dpsmc::metrics::EVAL_SEED)]
        eval_seed: u64,
        /// Metrics CSV to append to; defaults to `<out dir>/metrics.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the cross product of a parameter grid and the config's seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Worker threads; all cores when unset.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score-estimator MSE along the path with exact posterior samples.
    ScoreMse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a manifest and check the samples reproduce bitwise.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run { config, seed, out } => commands::run(&config, seed, out),
        Command::Eval { metric, samples, reference, target, epsilon, n_proj, n_reference, max_iter, eval_seed, report } => {
            commands::eval(EvalArgs {
                metric,
                samples,
                reference,
                target,
                params: EvalParams { epsilon, n_proj, n_reference, max_iter, seed: eval_seed },
                report,
            })
        }
        Command::Sweep { config, grid, jobs, out } => commands::sweep(&config, &grid, jobs, out),
        Command::ScoreMse { config, out } => commands::score_mse(&config, &out),
        Command::Replay { manifest, out } => commands::replay(&manifest, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
