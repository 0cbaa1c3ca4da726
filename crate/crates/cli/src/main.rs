//! `sketchdiff`: generate, preprocess, train, sample, render and verify.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed run, 2 when a
//! verification check fails.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sketch_diffusion::verify::Suite;

use commands::{CliError, SampleSource, TrainOverrides};

#[derive(Parser)]
#[command(name = "sketchdiff", version, about = "Joint continuous/discrete diffusion for CAD sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic JSONL corpus.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append this many row-shuffled copies of earlier records.
        #[arg(long, default_value_t = 0)]
        duplicates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize every sketch and drop quantized duplicates.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser; flags override the TOML config.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Diffusion steps T.
        #[arg(long)]
        steps: Option<usize>,
        /// sgd or adam.
        #[arg(long)]
        optimizer: Option<String>,
    },
    /// Draw sketches from a checkpoint, or from the oracle for one sketch.
    Sample {
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        ckpt: Option<PathBuf>,
        /// Id of the sketch the oracle denoiser returns; needs --data.
        #[arg(long, requires = "data")]
        oracle: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Diffusion steps for oracle sampling.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg_dir: Option<PathBuf>,
    },
    /// Render a JSONL file to one SVG per sketch.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        palette_seed: u64,
    },
    /// Monte Carlo retention curves of the raw and augmented schedules, as CSV.
    Curves {
        #[arg(long = "T", default_value_t = 100)]
        steps: usize,
        #[arg(long = "D", default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 0.99)]
        k: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numbered checks; exit 2 if any fails.
    Verify {
        #[arg(long, default_value = "fast")]
        suite: Suite,
        /// Run only these checks (repeatable), ignoring --suite.
        #[arg(long = "check")]
        checks: Vec<u8>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { count, seed, duplicates, out } => commands::gen_data(count, seed, duplicates, &out),
        Command::Preprocess { input, out } => commands::preprocess(&input, &out),
        Command::Train { data, config, out, epochs, seed, learning_rate, batch_size, steps, optimizer } => {
            let o = TrainOverrides { epochs, seed, learning_rate, batch_size, steps, optimizer };
            commands::train(&data, config.as_deref(), &o, &out)
        }
        Command::Sample { ckpt, oracle, data, steps, count, seed, out, svg_dir } => {
            let source = match (&ckpt, &oracle, &data) {
                (Some(path), _, _) => SampleSource::Checkpoint(path),
                (None, Some(id), Some(data)) => SampleSource::Oracle { id, data, steps },
                _ => return Err(CliError::Validation("pass --ckpt, or --oracle with --data".into())),
            };
            commands::sample(source, count, seed, out.as_deref(), svg_dir.as_deref())
        }
        Command::Render { input, out, palette_seed } => commands::render(&input, &out, palette_seed),
        Command::Curves { steps, classes, k, trials, seed, out } => {
            commands::curves(steps, classes, k, trials, seed, &out)
        }
        Command::Verify { suite, checks } => commands::verify(suite, &checks),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with status 2, which is reserved here for
    // verification failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
