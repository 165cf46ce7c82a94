//! `djscc`: train the codec, sweep it against the raw-sample baseline, send
//! single images, and inspect knowledge bases.
//!
//! Exit status is 0 on success, 2 for configuration or input problems and
//! 1 for anything else.

mod commands;
mod config;
mod error;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use djscc::evaluation::Scheme;
use djscc::link::ChannelKind;
use djscc::training::DatasetKind;

use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "djscc",
    version,
    about = "Deep joint source-channel coding over a cross-technology link"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder, decoder and codebook; writes a checkpoint directory.
    Train {
        #[command(flatten)]
        common: Overrides,
    },
    /// Sweep MSE, SSIM and packet loss over SNR; writes sweep.csv and plots.
    Sweep {
        #[command(flatten)]
        common: Overrides,
        /// Checkpoint directory; repeat for several datasets.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Comma-separated schemes, e.g. `webee` or `djscc,webee`.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        /// Comma-separated SNR points in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        /// Datasets for a baseline-only sweep without checkpoints.
        #[arg(long, value_delimiter = ',')]
        datasets: Option<Vec<DatasetKind>>,
        /// Test images per point.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Send one image through the trained codec and the simulated link.
    Roundtrip {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG input; grayscale for MNIST, RGB for CIFAR-10.
        #[arg(long)]
        image: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        snr: f64,
        /// Replaces the configured channel kind.
        #[arg(long, value_parser = parse_channel)]
        channel: Option<ChannelKind>,
    },
    /// Print K, J, content hash and codebook utilization.
    InspectKb {
        /// Knowledge base file or checkpoint directory.
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Test images used to measure utilization.
        #[arg(long, default_value_t = 1000)]
        images: usize,
    },
}

fn parse_channel(s: &str) -> Result<ChannelKind, String> {
    match s {
        "identity" => Ok(ChannelKind::Identity),
        "awgn_bsc" => Ok(ChannelKind::AwgnBsc),
        "erasure" => Ok(ChannelKind::Erasure),
        "composite" => Ok(ChannelKind::Composite),
        other => Err(format!(
            "unknown channel `{other}`; expected identity, awgn_bsc, erasure or composite"
        )),
    }
}

fn resolve(common: &Overrides, fallback: DatasetKind) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::published(fallback),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            if common.config.is_none() {
                return Err(CliError::Usage("train needs --config".into()));
            }
            commands::cmd_train(&resolve(&common, DatasetKind::Mnist)?)?;
        }
        Command::Sweep {
            common,
            checkpoint,
            schemes,
            snr,
            datasets,
            images,
        } => {
            let mut cfg = resolve(&common, DatasetKind::Mnist)?;
            cfg.sweep.checkpoints.extend(checkpoint);
            if let Some(s) = schemes {
                cfg.sweep.schemes = s;
            }
            if let Some(s) = snr {
                cfg.sweep.snr_list_db = s;
            }
            if datasets.is_some() {
                cfg.sweep.datasets = datasets;
            }
            if let Some(n) = images {
                cfg.sweep.images_per_point = n;
            }
            cfg.sweep_config(cfg.dataset).validate()?;
            commands::cmd_sweep(&cfg)?;
        }
        Command::Roundtrip {
            common,
            checkpoint,
            image,
            snr,
            channel,
        } => {
            let cfg = resolve(&common, DatasetKind::Mnist)?;
            commands::cmd_roundtrip(&cfg, &checkpoint, &image, snr, channel)?;
        }
        Command::InspectKb {
            path,
            config,
            images,
        } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            commands::cmd_inspect_kb(&path, cfg.as_ref(), images)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
