use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dced_cli::commands::{self, CliError, EXIT_USAGE};
use dced_core::dataset::DatasetTag;

#[derive(Parser)]
#[command(
    name = "dced",
    version,
    about = "Multi-level encoder-decoder segmentation of blood-smear images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic smear dataset with ground-truth masks.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        images: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_tag)]
        tag: Option<DatasetTag>,
    },
    /// Enhance and resize a raw dataset into network-ready form.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a network on a preprocessed dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run k-fold cross-validation instead of a single split.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Segment one raw image.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_tag(s: &str) -> Result<DatasetTag, String> {
    DatasetTag::ALL
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| format!("expected healthy or anaemic, got {s:?}"))
}

fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Generate {
            config,
            out,
            images,
            seed,
            tag,
        } => commands::generate(&commands::GenerateArgs {
            config,
            out,
            images,
            seed,
            tag,
        }),
        Command::Preprocess { input, out, config } => {
            commands::preprocess(&commands::PreprocessArgs { input, out, config })
        }
        Command::Train {
            data,
            config,
            checkpoint,
            folds,
        } => commands::train(&commands::TrainArgs {
            data,
            config,
            checkpoint,
            folds,
        }),
        Command::Segment { checkpoint, input, out } => {
            commands::segment(&commands::SegmentArgs { checkpoint, input, out })
        }
        Command::Evaluate { pred, truth, report } => {
            commands::evaluate(&commands::EvaluateArgs { pred, truth, report })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
