//! `oucd`: dataset synthesis, training, inference, evaluation, ablation and diagnostics.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oucd_core::ErrorClass;

#[derive(Parser)]
#[command(name = "oucd", version, about = "Over-and-under complete deraining network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration flags shared by every command that reads a run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML run configuration with [model] [train] [loss] [rain] [data] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Write (rainy, clean) PNG pairs and a split manifest.
    Synth {
        /// Directory of clean RGB PNGs to add rain to.
        #[arg(long)]
        clean_dir: Option<PathBuf>,
        /// Generate this many procedural clean scenes instead of reading --clean-dir.
        #[arg(long, conflicts_with = "clean_dir")]
        scenes: Option<usize>,
        /// Scene size for --scenes, as SIZE or HEIGHTxWIDTH.
        #[arg(long, default_value = "128")]
        size: String,
        /// Rain generator parameters (TOML with the fields of the [rain] section).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Scale the streak count range by image area relative to a 128x128 patch.
        #[arg(long)]
        scale_rain: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, visible_alias = "output-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a network on the train split of a dataset.
    Train {
        #[arg(long)]
        output_dir: PathBuf,
        /// Dataset root; overrides data.dir.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Derain a PNG or every PNG in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Defaults to the config.toml stored next to the checkpoint.
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// PSNR and SSIM on a dataset split, as text and JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also time inference on a square image of this side.
        #[arg(long)]
        timing_size: Option<usize>,
        #[arg(long, default_value_t = 5)]
        timing_reps: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate the four architecture variants under one seed and budget.
    Ablate {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Receptive-field side per block for both branches.
    RfReport {
        #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
        kernel: i64,
        #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
        max_layer: i64,
    },
    /// Finite-difference check of every differentiable primitive.
    Gradcheck {
        /// `all` or a comma-separated list of op names.
        #[arg(long, default_value = "all")]
        ops: String,
        /// Relative-error threshold; defaults to 1e-2 (32-bit) and 1e-5 (64-bit).
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, value_enum, default_value = "both")]
        precision: PrecisionArg,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write intermediate feature maps as grayscale PNGs.
    DumpFeatures {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated layer names or prefixes ending in `*`, e.g. `oc.enc.*,fused`.
        #[arg(long)]
        layers: String,
        #[arg(long)]
        output_dir: PathBuf,
        /// Use these weights instead of a seeded initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        max_channels: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(cli: Cli) -> oucd_core::Result<ExitCode> {
    match cli.command {
        Command::Synth { clean_dir, scenes, size, params, scale_rain, seed, out_dir, cfg } => {
            commands::synth(commands::SynthArgs { clean_dir, scenes, size, params, scale_rain, seed, out_dir, cfg })
        }
        Command::Train { output_dir, data_dir, resume, cfg } => {
            commands::train(&output_dir, data_dir, resume.as_deref(), &cfg)
        }
        Command::Infer { checkpoint, input, output_dir, cfg } => {
            commands::infer(&checkpoint, &input, &output_dir, &cfg)
        }
        Command::Eval { checkpoint, output_dir, data_dir, split, timing_size, timing_reps, cfg } => {
            commands::eval(&checkpoint, &output_dir, data_dir, split, timing_size.map(|s| (s, timing_reps)), &cfg)
        }
        Command::Ablate { output_dir, data_dir, cfg } => commands::ablate(&output_dir, data_dir, &cfg),
        Command::RfReport { kernel, max_layer } => commands::rf_report(kernel, max_layer),
        Command::Gradcheck { ops, tolerance, precision, cases, seed } => {
            commands::gradcheck(&ops, tolerance, precision, cases, seed)
        }
        Command::DumpFeatures { input, layers, output_dir, checkpoint, max_channels, cfg } => {
            commands::dump_features(&input, &layers, &output_dir, checkpoint.as_deref(), max_channels, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Integrity => 3,
                ErrorClass::Internal => 1,
            })
        }
    }
}
