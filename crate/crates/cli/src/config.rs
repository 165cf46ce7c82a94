//! Experiment configuration files: TOML with every section optional and
//! unknown keys rejected. Missing values take the published settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use djscc::codec::CodecConfig;
use djscc::evaluation::{Scheme, SweepConfig};
use djscc::link::{ChannelKind, ChannelModel};
use djscc::nn::NAdamConfig;
use djscc::training::{published_codec, DatasetKind, NormMode, TrainChannel, TrainConfig};

use crate::error::CliError;

/// Environment variable naming the directory with the dataset archives.
pub const DATA_ROOT_ENV: &str = "DJSCC_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub seed: u64,
    /// Where commands write their outputs.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Dataset archive directory; the environment variable wins over it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub channel: ChannelSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    /// Latent width `J`; the input shape follows from the dataset.
    pub hidden_width: usize,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { hidden_width: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub mu: f64,
    pub lambda: f64,
    pub codebook_size: usize,
    pub norm: NormMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    pub optimizer: NAdamConfig,
    pub train_channel: TrainChannel,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainConfig::published(DatasetKind::Mnist);
        Self {
            epochs: p.epochs,
            batch_size: p.batch_size,
            mu: p.mu,
            lambda: p.lambda,
            codebook_size: p.codebook_size,
            norm: p.norm,
            train_limit: p.train_limit,
            optimizer: p.optimizer,
            train_channel: p.train_channel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub snr_list_db: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub images_per_point: usize,
    pub eval_batch: usize,
    /// Trained checkpoints to evaluate, at most one per dataset.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<PathBuf>,
    /// Datasets to sweep when no checkpoint names them; defaults to the
    /// top-level dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub datasets: Option<Vec<DatasetKind>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let p = SweepConfig::published(DatasetKind::Mnist);
        Self {
            snr_list_db: p.snr_list_db,
            schemes: p.schemes,
            images_per_point: p.images_per_point,
            eval_batch: p.eval_batch,
            checkpoints: Vec::new(),
            datasets: None,
        }
    }
}

/// Link parameters shared by every sweep point; SNR and seed vary per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub kind: ChannelKind,
    pub ber_floor: f64,
    pub header_bits: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ber_override: Option<Vec<(f64, f64)>>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let m = ChannelModel::new(ChannelKind::Composite, 0.0, 0);
        Self {
            kind: m.kind,
            ber_floor: m.ber_floor,
            header_bits: m.header_bits,
            ber_override: m.ber_override,
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    pub fn published(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            seed: 0,
            out: default_out(),
            data_root: None,
            codec: CodecSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            channel: ChannelSection::default(),
        }
    }

    /// Parses `text`; errors carry `path:line:column`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, col) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            CliError::Config {
                path: path.to_path_buf(),
                line,
                col,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            line: 1,
            col: 1,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    fn validate(&self) -> Result<(), String> {
        self.codec().map_err(|e| e.to_string())?;
        self.train_config().validate().map_err(|e| e.to_string())?;
        self.sweep_config(self.dataset)
            .validate()
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn codec(&self) -> djscc::Result<CodecConfig> {
        let p = published_codec(self.dataset);
        CodecConfig::new(p.in_channels, self.codec.hidden_width, p.image_side)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            dataset: self.dataset,
            epochs: t.epochs,
            batch_size: t.batch_size,
            mu: t.mu,
            lambda: t.lambda,
            codebook_size: t.codebook_size,
            optimizer: t.optimizer.clone(),
            train_channel: t.train_channel.clone(),
            norm: t.norm,
            seed: self.seed,
            train_limit: t.train_limit,
        }
    }

    pub fn channel_model(&self, snr_db: f64) -> ChannelModel {
        let c = &self.channel;
        ChannelModel {
            kind: c.kind,
            snr_db,
            ber_floor: c.ber_floor,
            header_bits: c.header_bits,
            seed: self.seed,
            ber_override: c.ber_override.clone(),
        }
    }

    pub fn sweep_config(&self, dataset: DatasetKind) -> SweepConfig {
        let s = &self.sweep;
        SweepConfig {
            snr_list_db: s.snr_list_db.clone(),
            dataset,
            schemes: s.schemes.clone(),
            images_per_point: s.images_per_point,
            seed: self.seed,
            channel: self.channel_model(0.0),
            eval_batch: s.eval_batch,
        }
    }

    /// Dataset directory: environment first, then the config file.
    pub fn data_root(&self) -> Result<PathBuf, CliError> {
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => self.data_root.clone().ok_or_else(|| {
                CliError::Usage(format!(
                    "no dataset root: set {DATA_ROOT_ENV} or `data_root` in the config"
                ))
            }),
        }
    }

    /// The resolved configuration as a loadable file.
    pub fn snapshot(&self) -> String {
        let body = toml::to_string(self).expect("configuration serializes");
        format!("# resolved configuration; rerun with --config pointing at this file\n{body}")
    }
}
