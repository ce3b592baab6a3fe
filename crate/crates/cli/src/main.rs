//! `spoint`: synthetic data, training, Homographic Adaptation labeling, detection, matching,
//! benchmarks and the appendix experiments.

mod commands;
mod config;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Ctx;
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "spoint", version, about = "Self-supervised interest point detection and description")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// key=value run configuration (`section.key` prefixes)
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set synth.count=10`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Master seed (overrides the `seed` key)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force single-worker execution
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (overrides the `threads` key)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset (keys: synth.*)
    Synth,
    /// Train the detector on streamed synthetic shapes (keys: magicpoint.*)
    TrainMagicpoint,
    /// Label an image directory with Homographic Adaptation (keys: adapt.*)
    AdaptLabel,
    /// Joint detector/descriptor training from labels (keys: superpoint.*)
    TrainSuperpoint,
    /// Detect interest points and write .pts files plus overlays
    Detect {
        /// Weights file or a classical detector name (fast, harris, shi)
        model: String,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Match two images: matches CSV, estimated homography, side-by-side overlay
    Match {
        weights: PathBuf,
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Repeatability and localization error on warped pairs (keys: eval_detector.*)
    EvalDetector,
    /// Homography estimation and descriptor metrics on warped pairs (keys: eval_matching.*)
    EvalMatching,
    /// mAP/MLE while blending clean -> noisy -> random images (keys: noise_sweep.*)
    ExpNoiseSweep,
    /// mAP per single corruption type (keys: noise_types.*)
    ExpNoiseTypes,
    /// Corner and blob-center confidences of a growing square
    ExpSquareSweep {
        weights: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Repeatability of the adapted detector versus the number of warps (keys: nh_sweep.*)
    ExpNhSweep,
}

fn context(g: &Global) -> Result<Ctx, ConfigError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &g.sets {
        cfg.set(s)?;
    }
    let seed = match g.seed {
        Some(s) => s,
        None => cfg.get("seed", 0u64)?,
    };
    let threads = match (g.deterministic, g.threads) {
        (true, _) => 1,
        (false, Some(t)) => t,
        (false, None) => cfg.get("threads", 1usize)?,
    };
    if threads == 0 {
        return Err(ConfigError("threads must be >= 1".into()));
    }
    Ok(Ctx { cfg, seed, threads })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = context(&cli.global)?;
    match &cli.cmd {
        Cmd::Synth => commands::synth(&ctx),
        Cmd::TrainMagicpoint => commands::train_mp(&ctx),
        Cmd::AdaptLabel => commands::adapt_label(&ctx),
        Cmd::TrainSuperpoint => commands::train_sp(&ctx),
        Cmd::Detect { model, images, out } => commands::detect(&ctx, model, images, out),
        Cmd::Match { weights, image_a, image_b, out } => commands::match_pair(&ctx, weights, image_a, image_b, out),
        Cmd::EvalDetector => commands::eval_detector(&ctx),
        Cmd::EvalMatching => commands::eval_matching(&ctx),
        Cmd::ExpNoiseSweep => commands::exp_noise_sweep(&ctx),
        Cmd::ExpNoiseTypes => commands::exp_noise_types(&ctx),
        Cmd::ExpSquareSweep { weights, out } => commands::exp_square_sweep(&ctx, weights, out.as_deref()),
        Cmd::ExpNhSweep => commands::exp_nh_sweep(&ctx),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let is_config = e.chain().any(|c| {
        c.is::<ConfigError>() || matches!(c.downcast_ref::<spoint::Error>(), Some(spoint::Error::InvalidConfig(_) | spoint::Error::WidthOutOfRange(_)))
    });
    if is_config {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
