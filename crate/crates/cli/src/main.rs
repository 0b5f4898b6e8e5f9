mod commands;
mod config;
mod error;
mod io;
mod selftest;
mod svg;

use clap::{Parser, Subcommand};
use commands::{Ctx, PlotMode, SampleArgs};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Reconstruct training data from trained classifiers without access to the data.
///
/// Exit codes: 0 success, 2 usage or config error, 3 verification failure,
/// 4 numeric failure.
#[derive(Parser)]
#[command(name = "kktgen", version)]
struct Cli {
    /// Output root; overrides the config and the KKTGEN_OUT variable.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier(s) of a run to the max-margin regime.
    TrainClassifier {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate and verify the scaling profile of classifier checkpoints.
    EstimateLambda {
        #[arg(long)]
        config: PathBuf,
        /// A single checkpoint instead of all classifiers of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the conditional generator against the frozen classifier(s).
    TrainGenerator {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the existing generator checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total steps instead of the configured count.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Draw conditional samples from the trained generator.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        label: Option<usize>,
        /// Fix the classifier index instead of drawing it per label.
        #[arg(long)]
        t: Option<usize>,
        /// Samples per label.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Coverage and KKT diagnostics of a sample file.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// SVG scatter plot or image grid of a sample file.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "scatter")]
        mode: PlotMode,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Quick numerical checks of the core library.
    Selftest,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::TrainClassifier { config } => {
            commands::train_classifier_cmd(&Ctx::new(&config, out)?)
        }
        Command::EstimateLambda { config, checkpoint } => {
            commands::estimate_lambda_cmd(&Ctx::new(&config, out)?, checkpoint.as_deref())
        }
        Command::TrainGenerator {
            config,
            resume,
            until,
        } => commands::train_generator_cmd(&Ctx::new(&config, out)?, resume, until),
        Command::Sample {
            config,
            label,
            t,
            n,
            seed,
            output,
        } => commands::sample_cmd(
            &Ctx::new(&config, out)?,
            &SampleArgs {
                label,
                t,
                n,
                seed,
                output,
            },
        ),
        Command::Evaluate { config, samples } => {
            commands::evaluate_cmd(&Ctx::new(&config, out)?, samples.as_deref())
        }
        Command::Plot {
            config,
            samples,
            mode,
            output,
        } => commands::plot_cmd(
            &Ctx::new(&config, out)?,
            samples.as_deref(),
            mode,
            output.as_deref(),
        ),
        Command::Selftest => selftest::selftest_cmd(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
