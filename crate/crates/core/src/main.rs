use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dkrr::experiments::{run_simulation, ConfigFile, ExperimentConfig, Simulation};
use dkrr::Result;

/// Distributed kernel ridge regression experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaging without communication as machines are added.
    Motivation(RunArgs),
    /// Relative error against the number of machines.
    Sim1(RunArgs),
    /// Errors against the sample size.
    Sim2(RunArgs),
    /// Training time, communication and the optimal machine count.
    Sim3(RunArgs),
    /// One configuration in detail.
    Single(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; metadata is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
}

fn run(simulation: Simulation, args: RunArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut cfg = ExperimentConfig::from_file(simulation, file)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    let report = run_simulation(&cfg)?;
    let meta = report.write(&cfg.out)?;
    for note in &report.metadata.notes {
        eprintln!("note: {note}");
    }
    eprintln!(
        "wrote {} rows to {} (metadata in {})",
        report.records.len(),
        cfg.out.display(),
        meta.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (simulation, args) = match cli.command {
        Command::Motivation(a) => (Simulation::Motivation, a),
        Command::Sim1(a) => (Simulation::Sim1, a),
        Command::Sim2(a) => (Simulation::Sim2, a),
        Command::Sim3(a) => (Simulation::Sim3, a),
        Command::Single(a) => (Simulation::Single, a),
    };
    match run(simulation, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
