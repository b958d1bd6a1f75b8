use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "mfdet", version, about = "Multi-frame object detection by frame stacking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic video dataset.
    Generate {
        /// clean, occlusion, blur, boundary-exit, glare or mixed.
        #[arg(long, default_value = "mixed")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        sequences: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        /// Square frame size in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Static unlabeled look-alike objects per sequence.
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        #[arg(long, default_value_t = 25.0)]
        fps: f32,
    },
    /// Train a detector. Run-config keys may be overridden with trailing `--key value` pairs.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Adapt a single-frame checkpoint to a frame stack.
    Surgery {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// early_fusion or grouped.
        #[arg(long, default_value = "early_fusion")]
        mode: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the output even if verification fails.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated frame counts; each row adapts the single-frame checkpoint to n frames.
        #[arg(long)]
        sweep: Option<String>,
        /// Surgery used by --sweep: early_fusion or grouped.
        #[arg(long, default_value = "early_fusion")]
        sweep_mode: String,
        /// Timed forward passes per row (0 disables timing).
        #[arg(long, default_value_t = 0)]
        latency_runs: usize,
        /// Score the ground truth itself instead of the model.
        #[arg(long, hide = true)]
        oracle: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Draw detections on target frames.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sequence id, for example 000.
        #[arg(long)]
        sequence: String,
        /// Target frame; every frame when absent.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Grad-CAM++ overlays of the penultimate layer on target frames.
    Cam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Parameter and FLOP counts.
    Flops {
        /// Count this checkpoint instead of --modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "single,early_fusion:3,grouped:3,early_fusion:7,grouped:7")]
        modes: String,
        #[arg(long, default_value_t = 640)]
        input_size: usize,
        #[arg(long, default_value_t = 32)]
        base_width: usize,
    },
    /// Forward-pass latency.
    Bench {
        #[arg(long, default_value = "single,early_fusion:7")]
        modes: String,
        #[arg(long, default_value_t = 256)]
        input_size: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 30)]
        runs: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
