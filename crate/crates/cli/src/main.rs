//! `psrgan`: degrade, train, super-resolve, evaluate and verify from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psrgan::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "psrgan", version, about = "Progressive GAN super-resolution")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum Preset {
    /// Paper-sized networks.
    #[default]
    Default,
    /// Desk-scale networks and schedule for the synthetic corpus.
    Toy,
}

/// Options shared by every subcommand. Later sources win: preset, config
/// file, `--set`, then the dedicated flags.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// Starting point for the configuration.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total upscaling factor (train), decimation factor (degrade), target
    /// factor (superres) or label (eval).
    #[arg(long, global = true)]
    scale: Option<usize>,
    /// Iterations of pretraining and of each adversarial phase.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Noise as `kind:param`, e.g. `gaussian:0.005`.
    #[arg(long, global = true, value_name = "KIND:PARAM")]
    noise: Option<String>,
    /// One worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize LR images from a directory of HR images.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the progressive pipeline, writing checkpoints and a metrics log.
    Train {
        /// Output directory; defaults to the configured `output_dir`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
        /// Stop after this many iterations (a checkpoint is written).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Upscale an image or a directory of images with a trained checkpoint.
    Superres {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score SR images against HR images with matching file names.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// Method label of the SR set.
        #[arg(long)]
        label: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Add a deliberately wrong gradient (negative control).
        #[arg(long, hide = true)]
        inject_broken: bool,
    },
    /// Write the built-in synthetic corpus as 16-bit PNGs.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = commands::init_threads(cli.common.deterministic).and_then(|()| match cli.command {
        Command::Degrade { input, output } => commands::degrade(&cli.common, &input, &output),
        Command::Train {
            output,
            resume,
            max_steps,
        } => commands::train(&cli.common, output, resume.as_deref(), max_steps),
        Command::Superres {
            checkpoint,
            input,
            output,
        } => commands::superres(&cli.common, &checkpoint, &input, &output),
        Command::Eval { sr, hr, label, output } => commands::eval(&cli.common, &sr, &hr, &label, &output),
        Command::Gradcheck { inject_broken } => commands::gradcheck(&cli.common, inject_broken),
        Command::Synth { output, count, size } => commands::synth(&cli.common, &output, count, size),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
