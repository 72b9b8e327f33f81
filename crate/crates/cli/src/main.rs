//! `egogaze`: synthesize or ingest recordings, split them by path, train
//! the gaze model, evaluate against baselines and render overlays.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use egogaze::model::BackboneKind;

use config::Preset;

#[derive(Debug, Parser)]
#[command(name = "egogaze", version, about = "Egocentric gaze prediction toolkit")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Dataset root holding one directory per recording.
    #[arg(long, global = true, env = "EGOGAZE_DATA", default_value = "data")]
    pub data: PathBuf,

    /// Artifact directory for the command's outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align and resize raw recordings into the dataset layout.
    Ingest(IngestArgs),
    /// Generate synthetic recordings into the data root (or --out).
    Synth(SynthArgs),
    /// Partition the dataset's paths into train and test sets.
    Split(SplitArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score checkpoints and baselines on a split and write a leaderboard.
    Eval(EvalArgs),
    /// Predict the gaze map of one clip.
    Predict(PredictArgs),
    /// Score a stored prediction map against a clip's gaze.
    Metrics(MetricsArgs),
    /// Render loss curves, per-clip overlays and a montage.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A raw recording directory, or a directory of them.
    #[arg(long)]
    pub raw: PathBuf,
    /// Square output frame size.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub recordings_per_path: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Share of paths used for training.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// split.json from the `split` command; all recordings when omitted.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub backbone: Option<BackboneKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Baseline {
    CenterPrior,
    Uniform,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct Models {
    /// Trained checkpoint (repeatable).
    #[arg(long)]
    pub ckpt: Vec<PathBuf>,
    /// Reference predictor (repeatable).
    #[arg(long, value_enum)]
    pub baseline: Vec<Baseline>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("models").args(["ckpt", "baseline"]).required(true).multiple(true)))]
pub struct EvalArgs {
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    #[command(flatten)]
    pub models: Models,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Clip id `<recording>@<window start>`.
    #[arg(long)]
    pub clip: String,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Prediction map in the f32 array format (as written by `predict`).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub clip: String,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("inputs").args(["report", "ckpt", "baseline"]).required(true).multiple(true)))]
pub struct PlotArgs {
    /// train_report.json whose step losses become loss.png.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// Number of clips (montage rows).
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[command(flatten)]
    pub models: Models,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn eval_needs_a_model() {
        let err = Cli::try_parse_from(["egogaze", "eval"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(Cli::try_parse_from(["egogaze", "eval", "--baseline", "uniform"]).is_ok());
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(Cli::try_parse_from(["egogaze", "frobnicate"]).unwrap_err().exit_code(), 2);
    }
}
