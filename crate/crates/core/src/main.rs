use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dosa::harness::{
    cmd_ablate_gradflow, cmd_ablate_layers, cmd_report, cmd_run_cmll, cmd_run_mll, ExperimentConfig,
};
use dosa::losses::LossVariant;
use dosa::{DosaError, Result};

/// Dual-output spiking network experiments.
#[derive(Parser)]
#[command(name = "dosa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate on one dataset.
    RunMll(RunArgs),
    /// Run a task sequence and score it in combined mode.
    RunCmll(RunArgs),
    /// Sweep the number of hidden layers.
    AblateLayers {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        layers: Vec<usize>,
    },
    /// Compare the importance factor with and without gradient flow.
    AblateGradflow(RunArgs),
    /// Aggregate run results into CSV tables and SVG plots.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    loss: Option<LossVariant>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(loss) = self.loss {
            cfg.loss.variant = loss;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::RunMll(a) => cmd_run_mll(&a.load()?),
        Command::RunCmll(a) => cmd_run_cmll(&a.load()?),
        Command::AblateLayers { run, layers } => cmd_ablate_layers(&run.load()?, &layers),
        Command::AblateGradflow(a) => cmd_ablate_gradflow(&a.load()?),
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn report_error(e: &DosaError) {
    let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{body}");
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
            report_error(&e);
            ExitCode::FAILURE
        }
    }
}
