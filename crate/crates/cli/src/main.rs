//! `fredformer`: generate controlled-spectrum datasets, train the
//! frequency-band forecaster, evaluate checkpoints, and render bias
//! diagnostics. Every run starts by writing a manifest with its fully
//! resolved settings so it can be replayed exactly.

mod cmd;
mod error;
mod manifest;
mod plot;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::error::CliError;
use crate::spec::RunSpec;

#[derive(Parser)]
#[command(name = "fredformer", version, about = "Frequency-debiased transformer forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce a synthetic dataset or a spectrum-rearranged copy of one.
    Generate {
        #[command(subcommand)]
        mode: GenerateMode,
    },
    /// Fit a model; writes checkpoint, loss history, bias trace, metrics.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Render a bias trace as a matrix, or probe a checkpoint afresh.
    BiasReport(BiasArgs),
    /// Forecast one window and write it at the original scale.
    Forecast(ForecastArgs),
}

#[derive(Subcommand)]
enum GenerateMode {
    /// Three planted sinusoids in one channel.
    Case1(PlantArgs),
    /// Swap a dataset's dominant low bins into the mid band.
    #[command(name = "case2-rearrange")]
    Case2Rearrange(RearrangeArgs),
    /// Four planted sinusoids, optionally multi-channel.
    #[command(name = "case2-plant")]
    Case2Plant(PlantArgs),
}

/// Flags every command understands.
#[derive(Args)]
struct OutArgs {
    /// Directory for all artifacts [default: fredformer-out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// TOML file supplying any flag's value; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl OutArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            out_dir: self.out_dir.as_ref().map(|p| p.display().to_string()),
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct PlantArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Series length in samples [default: 10000].
    #[arg(long)]
    length: Option<usize>,
    /// Planted frequency bins, comma separated.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    /// Planted amplitudes, comma separated, same count as --bins.
    #[arg(long, value_delimiter = ',')]
    amps: Option<Vec<f64>>,
    /// Gaussian noise level [default: 0.1 x smallest amplitude].
    #[arg(long)]
    noise_std: Option<f64>,
    /// Channels to emit [default: 1].
    #[arg(long)]
    channels: Option<usize>,
    /// Half-width of the per-channel gain jitter, in [0, 1) [default: 0].
    #[arg(long)]
    gain_spread: Option<f64>,
    /// Seed for phases, gains, and noise [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

impl PlantArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            length: self.length,
            bins: self.bins.clone(),
            amps: self.amps.clone(),
            noise_std: self.noise_std,
            channels: self.channels,
            gain_spread: self.gain_spread,
            seed: self.seed,
            ..Default::default()
        }
        .merged(self.out.spec())
    }
}

#[derive(Args)]
struct RearrangeArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Dataset CSV to rearrange (first column `date`).
    #[arg(long, alias = "input")]
    data: Option<PathBuf>,
}

impl RearrangeArgs {
    fn spec(&self) -> RunSpec {
        RunSpec { data: path_string(&self.data), ..Default::default() }.merged(self.out.spec())
    }
}

/// Architecture knobs shared by training invocations.
#[derive(Args)]
struct ModelArgs {
    /// Look-back window length [default: 96].
    #[arg(long)]
    lookback: Option<usize>,
    /// Forecast horizon [default: 96].
    #[arg(long)]
    horizon: Option<usize>,
    /// Frequency bins per band [default: 8].
    #[arg(long)]
    patch_len: Option<usize>,
    /// Token embedding width [default: 32].
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Attention heads [default: 4].
    #[arg(long)]
    heads: Option<usize>,
    /// Width per head [default: 8].
    #[arg(long)]
    head_dim: Option<usize>,
    /// Encoder blocks per band [default: 2].
    #[arg(long)]
    depth: Option<usize>,
    /// Feed-forward hidden width [default: 64].
    #[arg(long)]
    mlp_dim: Option<usize>,
    /// Approximate attention with landmark sampling.
    #[arg(long, action = ArgAction::SetTrue)]
    nystrom: Option<bool>,
    /// Landmark count for --nystrom [default: the channel count].
    #[arg(long)]
    landmarks: Option<usize>,
    /// Share one encoder parameter set across all bands.
    #[arg(long, action = ArgAction::SetTrue)]
    share_band_weights: Option<bool>,
    /// Skip per-window standardization of model inputs.
    #[arg(long, action = ArgAction::SetTrue)]
    no_instance_norm: Option<bool>,
    /// full, no-channel-attention, or no-frequency-refinement [default: full].
    #[arg(long)]
    ablation: Option<String>,
    /// Parameter-init and shuffle seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            lookback: self.lookback,
            horizon: self.horizon,
            patch_len: self.patch_len,
            embed_dim: self.embed_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            depth: self.depth,
            mlp_dim: self.mlp_dim,
            nystrom: self.nystrom,
            landmarks: self.landmarks,
            share_band_weights: self.share_band_weights,
            instance_norm: self.no_instance_norm.map(|b| !b),
            ablation: self.ablation.clone(),
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Training dataset CSV (first column `date`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optimization epochs [default: 50].
    #[arg(long)]
    epochs: Option<usize>,
    /// Windows per gradient step [default: 32].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Step size [default: 1e-4].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Non-improving validation epochs tolerated [default: 3].
    #[arg(long)]
    patience: Option<usize>,
    /// Window stride over train/val rows [default: 1].
    #[arg(long)]
    stride: Option<usize>,
    /// `ett` months or fractions like 0.7,0.1,0.2 [default: 0.7,0.1,0.2].
    #[arg(long)]
    split_scheme: Option<String>,
    /// Band width of the bias trace [default: --patch-len].
    #[arg(long)]
    band_size: Option<usize>,
    /// Channel probed by the bias trace [default: 0].
    #[arg(long)]
    channel: Option<usize>,
    /// Validation windows in the bias probe [default: 32].
    #[arg(long)]
    probe_windows: Option<usize>,
    /// Also render a loss-curve image.
    #[arg(long, action = ArgAction::SetTrue)]
    plot: Option<bool>,
}

impl TrainArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            data: path_string(&self.data),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: self.patience,
            stride: self.stride,
            split_scheme: self.split_scheme.clone(),
            band_size: self.band_size,
            channel: self.channel,
            probe_windows: self.probe_windows,
            plot: self.plot,
            ..Default::default()
        }
        .merged(self.model.spec())
        .merged(self.out.spec())
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Dataset CSV to score on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint archive from a training run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which part to score: train, val, or test [default: test].
    #[arg(long)]
    split: Option<String>,
    /// `ett` months or fractions like 0.7,0.1,0.2 [default: 0.7,0.1,0.2].
    #[arg(long)]
    split_scheme: Option<String>,
    /// Window stride [default: 1].
    #[arg(long)]
    stride: Option<usize>,
    /// Worker threads over independent instances [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// Include per-step metrics in the JSON.
    #[arg(long, action = ArgAction::SetTrue)]
    per_horizon: Option<bool>,
}

impl EvaluateArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            data: path_string(&self.data),
            checkpoint: path_string(&self.checkpoint),
            split: self.split.clone(),
            split_scheme: self.split_scheme.clone(),
            stride: self.stride,
            jobs: self.jobs,
            per_horizon: self.per_horizon,
            ..Default::default()
        }
        .merged(self.out.spec())
    }
}

#[derive(Args)]
struct BiasArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Bias trace CSV from a training run.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Checkpoint to probe instead of a recorded trace.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Probe dataset CSV (required with --checkpoint).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Which part to probe: train, val, or test [default: val].
    #[arg(long)]
    split: Option<String>,
    /// `ett` months or fractions like 0.7,0.1,0.2 [default: 0.7,0.1,0.2].
    #[arg(long)]
    split_scheme: Option<String>,
    /// Detection band width in bins [default: the checkpoint's patch length].
    #[arg(long)]
    band_size: Option<usize>,
    /// Channel to probe [default: 0].
    #[arg(long)]
    channel: Option<usize>,
    /// Probe windows [default: 32].
    #[arg(long)]
    probe_windows: Option<usize>,
    /// Also render images of the matrix and the spectrum overlay.
    #[arg(long, action = ArgAction::SetTrue)]
    plot: Option<bool>,
}

impl BiasArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            trace: path_string(&self.trace),
            checkpoint: path_string(&self.checkpoint),
            data: path_string(&self.data),
            split: self.split.clone(),
            split_scheme: self.split_scheme.clone(),
            band_size: self.band_size,
            channel: self.channel,
            probe_windows: self.probe_windows,
            plot: self.plot,
            ..Default::default()
        }
        .merged(self.out.spec())
    }
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Dataset CSV to forecast from.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint archive from a training run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which part to draw the window from: train, val, test [default: test].
    #[arg(long)]
    split: Option<String>,
    /// `ett` months or fractions like 0.7,0.1,0.2 [default: 0.7,0.1,0.2].
    #[arg(long)]
    split_scheme: Option<String>,
    /// Window index within the split [default: the last one].
    #[arg(long)]
    index: Option<usize>,
}

impl ForecastArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            data: path_string(&self.data),
            checkpoint: path_string(&self.checkpoint),
            split: self.split.clone(),
            split_scheme: self.split_scheme.clone(),
            index: self.index,
            ..Default::default()
        }
        .merged(self.out.spec())
    }
}

fn path_string(path: &Option<PathBuf>) -> Option<String> {
    path.as_ref().map(|p| p.display().to_string())
}

/// Defaults, then the config file, then explicit flags.
fn layered(config: &Option<PathBuf>, flags: RunSpec) -> Result<RunSpec, CliError> {
    let base = match config {
        Some(path) => RunSpec::from_file(path)?,
        None => RunSpec::default(),
    };
    Ok(base.merged(flags))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { mode } => match mode {
            GenerateMode::Case1(a) => cmd::generate::case1(layered(&a.out.config, a.spec())?),
            GenerateMode::Case2Rearrange(a) => {
                cmd::generate::case2_rearrange(layered(&a.out.config, a.spec())?)
            }
            GenerateMode::Case2Plant(a) => {
                cmd::generate::case2_plant(layered(&a.out.config, a.spec())?)
            }
        },
        Command::Train(a) => cmd::train::run(layered(&a.out.config, a.spec())?),
        Command::Evaluate(a) => cmd::evaluate::run(layered(&a.out.config, a.spec())?),
        Command::BiasReport(a) => cmd::bias::run(layered(&a.out.config, a.spec())?),
        Command::Forecast(a) => cmd::forecast::run(layered(&a.out.config, a.spec())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
