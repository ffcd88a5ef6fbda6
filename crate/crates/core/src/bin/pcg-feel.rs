use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pcg_feel::experiment::{
    cmd_evaluate, cmd_generate_data, cmd_report_comm, cmd_simulate, cmd_train, ExperimentConfig,
    SimulationSource, TrainMode,
};

#[derive(Parser)]
#[command(name = "pcg-feel", version, about = "Prosumer community federated forecasting and trading simulator")]
struct Cli {
    /// TOML experiment config; the full-size preset is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the reduced CI preset instead of the full-size preset when no config is given.
    #[arg(long, global = true)]
    ci: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing generated data.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Federated,
    Centralized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Forecasts {
    Personalized,
    Global,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic community as CSV.
    GenerateData,
    Train {
        #[arg(long, value_enum, default_value = "federated")]
        mode: Mode,
    },
    /// Per-signal RMSE table and 24-hour traces.
    Evaluate,
    /// Trading decisions over the test period.
    Simulate {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "personalized")]
        forecasts: Forecasts,
    },
    /// Federated versus centralized communication totals.
    ReportComm,
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if cli.ci => ExperimentConfig::ci(),
        None => ExperimentConfig::full(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::GenerateData => {
            let dir = cmd_generate_data(&cfg, cli.force)?;
            println!("wrote {}", dir.display());
        }
        Command::Train { mode } => {
            let mode = match mode {
                Mode::Federated => TrainMode::Federated,
                Mode::Centralized => TrainMode::Centralized,
            };
            let dir = cmd_train(&cfg, mode)?;
            println!("wrote {}", dir.display());
        }
        Command::Evaluate => {
            println!("signal,model_variant,rmse_mean,rmse_std,n_prosumers");
            for r in cmd_evaluate(&cfg)? {
                println!(
                    "{},{},{:.4},{:.4},{}",
                    r.signal.file_stem(),
                    r.variant.as_str(),
                    r.rmse_mean,
                    r.rmse_std,
                    r.n_prosumers
                );
            }
        }
        Command::Simulate { steps, forecasts } => {
            let source = match forecasts {
                Forecasts::Personalized => SimulationSource::Personalized,
                Forecasts::Global => SimulationSource::Global,
                Forecasts::Oracle => SimulationSource::Oracle,
            };
            let summary = cmd_simulate(&cfg, steps.unwrap_or(cfg.decision.steps), source)?;
            summary.write_csv(std::io::stdout().lock())?;
        }
        Command::ReportComm => {
            for r in cmd_report_comm(&cfg)? {
                let c = r.report.crossover.map(|c| c.minutes).unwrap_or(0);
                println!(
                    "{}: {} params, federated {} B, centralized {} B, crossover after {} min",
                    r.signal.file_stem(),
                    r.param_count,
                    r.report.federated_total,
                    r.report.centralized_baseline_bytes,
                    c
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
