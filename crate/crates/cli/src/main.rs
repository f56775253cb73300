//! `isac` runs the seeded experiments and writes CSV and SVG results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_core::harness::{
    emit_outputs, init_thread_pool, load_config, run_detection_validation, run_power_convergence, run_rate_sweep,
    sweep_axis_label, threads_from_env, Config, HarnessError,
};

#[derive(Parser)]
#[command(name = "isac", version, about = "Uplink ISAC power allocation and beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Objective traces of the power allocation and combiner algorithms.
    Converge(RunArgs),
    /// Average sum rate and sensing SINR over a parameter sweep.
    Sweep(RunArgs),
    /// Theoretical versus simulated detection probability.
    Detect(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials per sweep value; overrides the configuration.
    #[arg(long)]
    trials: Option<usize>,
    /// Use one user placement for every trial.
    #[arg(long)]
    fix_placement: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(Config, PathBuf), HarnessError> {
        let mut cfg = load_config(&self.config)?;
        let e = &mut cfg.experiment;
        if let Some(s) = self.seed {
            e.seed = s;
        }
        if let Some(t) = self.trials {
            e.trials = t;
        }
        e.fix_placement |= self.fix_placement;
        e.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| e.outputs.clone())
            .unwrap_or_else(|| PathBuf::from("results"));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, HarnessError> {
    init_thread_pool(threads_from_env()?);
    let (args, runner, converge): (_, fn(&Config) -> _, bool) = match &cli.command {
        Command::Converge(a) => (a, run_power_convergence, true),
        Command::Sweep(a) => (a, run_rate_sweep, false),
        Command::Detect(a) => (a, run_detection_validation, false),
    };
    let (cfg, out) = args.load()?;
    let rows = runner(&cfg)?;
    let x_label = if converge {
        "iteration"
    } else {
        sweep_axis_label(&cfg.experiment)
    };
    emit_outputs(&rows, &cfg.experiment, &out, x_label)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
