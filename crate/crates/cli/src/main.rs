//! `d4d`: batch driver for synthesis, diffusion training and generation,
//! merging, depth-estimator training and evaluation, distances and rendering.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "d4d", version, about = "RGBD diffusion augmentation pipeline")]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "D4D_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural RGBD dataset.
    Synth(SynthArgs),
    /// Train a diffusion model on a dataset.
    TrainDiffusion(TrainDiffusionArgs),
    /// Sample a dataset from a diffusion checkpoint.
    Generate(GenerateArgs),
    /// Merge generated s1/s2 sets, optionally with the original data.
    Merge(MergeArgs),
    /// Train the depth estimator.
    TrainMde(TrainMdeArgs),
    /// Evaluate a depth-estimator checkpoint on a dataset.
    Eval(EvalArgs),
    /// Feature-space distances between two datasets.
    Featdist(FeatdistArgs),
    /// Render a sample or a prediction error map as PPM.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    /// WIDTHxHEIGHT.
    #[arg(long, default_value = "16x12", value_parser = parse_res)]
    res: (usize, usize),
    #[arg(long, default_value_t = 4)]
    max_shapes: usize,
    /// Depth of a normalized value of 1, in meters.
    #[arg(long, default_value_t = 10.0)]
    max_depth: f32,
    /// Multiplies every scene depth range; values below 1 give nearer scenes.
    #[arg(long, default_value_t = 1.0)]
    depth_scale: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConfigName {
    S1,
    S2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variance {
    Posterior,
    Beta,
}

#[derive(Args, Debug)]
struct TrainDiffusionArgs {
    #[arg(long, value_enum)]
    config: ConfigName,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Diffusion steps T.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Epochs at which the learning rate is multiplied by --decay.
    #[arg(long, value_delimiter = ',', default_value = "100,125")]
    milestones: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    #[arg(long, value_enum, default_value_t = Variance::Posterior)]
    variance: Variance,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    cosine_offset: Option<f64>,
    #[arg(long)]
    beta_clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// Left out: the result holds generated samples only.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long)]
    s1: PathBuf,
    #[arg(long)]
    s2: PathBuf,
    /// Generated samples to add, split evenly with s1 taking the odd one.
    #[arg(long)]
    add: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainMdeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ChannelName {
    Rgb,
    Depth,
}

#[derive(Args, Debug)]
struct FeatdistArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = ChannelName::Rgb)]
    channel: ChannelName,
    #[arg(long, default_value_t = d4d_core::featspace::DEFAULT_EXTRACTOR_SEED)]
    extractor_seed: u64,
    /// Name recorded for --a; defaults to its file stem.
    #[arg(long)]
    label_a: Option<String>,
    #[arg(long)]
    label_b: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RenderMode {
    Rgb,
    Depth,
    Diff,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, value_enum)]
    mode: RenderMode,
    /// Depth-estimator checkpoint; required by `--mode diff`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    Ok((w, h))
}

/// Invalid flags or flag combinations found after parsing; exits with 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TrainDiffusion(a) => commands::train_diffusion(a),
        Command::Generate(a) => commands::generate(a),
        Command::Merge(a) => commands::merge(a),
        Command::TrainMde(a) => commands::train_mde(a),
        Command::Eval(a) => commands::eval(a),
        Command::Featdist(a) => commands::featdist(a),
        Command::Render(a) => commands::render(a),
    }
}
