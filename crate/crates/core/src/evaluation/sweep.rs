use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_forward, encode_batch, quantize_batch, IndexChannel};
use crate::error::{contract, Error, Result};
use crate::image::{unbatch, Image};
use crate::link::{
    bits_per_index, webee_framing, webee_transmit, ChannelKind, ChannelModel, ChannelStats,
    CtcLink, Framing, Transmission,
};
use crate::semantic_kb::{lookup, IndexGrid};
use crate::training::{Checkpoint, DatasetKind, ImageSet};

use super::metrics::{mse, ssim};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Learned codec sending codebook indices.
    Djscc,
    /// Raw 8-bit pixels.
    Webee,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Djscc => "djscc",
            Self::Webee => "webee",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Self::Djscc => 1,
            Self::Webee => 2,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "djscc" => Ok(Self::Djscc),
            "webee" => Ok(Self::Webee),
            other => Err(contract(format!(
                "unknown scheme {other:?}; expected djscc or webee"
            ))),
        }
    }
}

/// Wire bits for one image under the fixed framing.
pub fn bits_per_image(scheme: Scheme, dataset: DatasetKind, k: usize) -> Result<usize> {
    Ok(match scheme {
        Scheme::Djscc => {
            let slots = (dataset.side() / 4).pow(2);
            Framing::dense(bits_per_index(k)?)?.wire_bits(slots)
        }
        Scheme::Webee => webee_framing().wire_bits(dataset.samples_per_image()),
    })
}

/// Fraction of baseline bits the learned scheme saves.
pub fn bit_reduction(dataset: DatasetKind, k: usize) -> Result<f64> {
    let ours = bits_per_image(Scheme::Djscc, dataset, k)? as f64;
    let base = bits_per_image(Scheme::Webee, dataset, k)? as f64;
    Ok(1.0 - ours / base)
}

fn default_images() -> usize {
    1000
}

fn default_batch() -> usize {
    100
}

fn default_channel() -> ChannelModel {
    ChannelModel::new(ChannelKind::Composite, 0.0, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_list_db: Vec<f64>,
    pub dataset: DatasetKind,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_images")]
    pub images_per_point: usize,
    #[serde(default)]
    pub seed: u64,
    /// Channel template; its SNR and seed are replaced per point.
    #[serde(default = "default_channel")]
    pub channel: ChannelModel,
    /// Images pushed through the networks at once.
    #[serde(default = "default_batch")]
    pub eval_batch: usize,
}

impl SweepConfig {
    pub fn published(dataset: DatasetKind) -> Self {
        Self {
            snr_list_db: vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            dataset,
            schemes: vec![Scheme::Djscc, Scheme::Webee],
            images_per_point: default_images(),
            seed: 0,
            channel: default_channel(),
            eval_batch: default_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_list_db.is_empty() {
            return Err(contract("snr_list_db must not be empty"));
        }
        if self.snr_list_db.iter().any(|s| s.is_nan()) {
            return Err(contract("snr_list_db contains NaN"));
        }
        if self.images_per_point == 0 || self.eval_batch == 0 {
            return Err(contract(
                "images_per_point and eval_batch must be at least 1",
            ));
        }
        if self.schemes.is_empty() {
            return Err(contract("schemes must not be empty"));
        }
        self.channel.validate()
    }

    /// Independent stream per (scheme, SNR point).
    pub fn point_seed(&self, scheme: Scheme, point: usize) -> u64 {
        let mut z =
            self.seed ^ (scheme.tag() << 56) ^ (point as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        // splitmix64 finalizer
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub dataset: DatasetKind,
    pub scheme: Scheme,
    pub mse: f64,
    pub mse_stderr: f64,
    pub ssim: f64,
    pub ssim_stderr: f64,
    pub bits_per_image: usize,
    pub packet_loss_fraction: f64,
    /// Empty when no packet survived to measure it.
    pub empirical_ber: Option<f64>,
    pub images: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn extend(&mut self, other: SweepResult) {
        self.rows.extend(other.rows);
    }

    /// Rows of one series in SNR order of appearance.
    pub fn series(&self, dataset: DatasetKind, scheme: Scheme) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.dataset == dataset && r.scheme == scheme)
            .collect()
    }

    pub fn row(&self, dataset: DatasetKind, scheme: Scheme, snr_db: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.scheme == scheme && r.snr_db == snr_db)
    }
}

/// Mean and standard error of the mean.
fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn row(
    cfg: &SweepConfig,
    snr_db: f64,
    scheme: Scheme,
    bits: usize,
    mses: &[f64],
    ssims: &[f64],
    stats: &ChannelStats,
) -> SweepRow {
    let (mse, mse_stderr) = mean_stderr(mses);
    let (ssim, ssim_stderr) = mean_stderr(ssims);
    SweepRow {
        snr_db,
        dataset: cfg.dataset,
        scheme,
        mse,
        mse_stderr,
        ssim,
        ssim_stderr,
        bits_per_image: bits,
        packet_loss_fraction: stats.loss_fraction(),
        empirical_ber: stats.empirical_ber(),
        images: mses.len(),
    }
}

/// Result of sending a single image with the learned scheme.
#[derive(Clone, Debug)]
pub struct RoundTrip {
    pub image: Image,
    pub transmission: Transmission,
    pub sent: IndexGrid,
    pub received: IndexGrid,
}

/// Encode, quantize, transmit, impute, decode one image.
pub fn djscc_roundtrip(image: &Image, ck: &Checkpoint, model: &ChannelModel) -> Result<RoundTrip> {
    ck.verify_kb()?;
    let latent = encode_batch(&[image], &ck.params, &ck.codec)?;
    let sent = quantize_batch(&latent, &ck.kb)?.remove(0);
    let mut link = CtcLink::fixed_width(model)?;
    let received = link.carry(&sent, ck.kb.size())?;
    let out = decode_forward(&lookup(&received, &ck.kb)?, &ck.params, &ck.codec)?;
    Ok(RoundTrip {
        image: out.clamped(),
        transmission: link.last_transmission(),
        sent,
        received,
    })
}

fn run_djscc(cfg: &SweepConfig, ck: &Checkpoint, images: &[Image]) -> Result<Vec<SweepRow>> {
    ck.verify_kb()?;
    if ck.dataset != cfg.dataset {
        return Err(contract(format!(
            "checkpoint was trained on {}, sweep is for {}",
            ck.dataset, cfg.dataset
        )));
    }
    let k = ck.kb.size();
    let bits = Framing::dense(bits_per_index(k)?)?.wire_bits(ck.codec.slots());
    // indices do not depend on the channel, so encode once
    let mut sent = Vec::with_capacity(images.len());
    for chunk in images.chunks(cfg.eval_batch) {
        let refs: Vec<&Image> = chunk.iter().collect();
        sent.extend(quantize_batch(
            &encode_batch(&refs, &ck.params, &ck.codec)?,
            &ck.kb,
        )?);
    }
    let mut rows = Vec::with_capacity(cfg.snr_list_db.len());
    for (p, &snr) in cfg.snr_list_db.iter().enumerate() {
        let model = cfg
            .channel
            .with_snr(snr)
            .with_seed(cfg.point_seed(Scheme::Djscc, p));
        let mut link = CtcLink::fixed_width(&model)?;
        let mut mses = Vec::with_capacity(images.len());
        let mut ssims = Vec::with_capacity(images.len());
        for (chunk, grids) in images
            .chunks(cfg.eval_batch)
            .zip(sent.chunks(cfg.eval_batch))
        {
            let received = grids
                .iter()
                .map(|g| link.carry(g, k))
                .collect::<Result<Vec<_>>>()?;
            let q = crate::codec::lookup_batch(&received, &ck.kb)?;
            let recon = unbatch(&ck.params.decoder.apply(&q));
            for (src, out) in chunk.iter().zip(&recon) {
                let out = out.clamped();
                mses.push(mse(src, &out)?);
                ssims.push(ssim(src, &out)?);
            }
        }
        rows.push(row(
            cfg,
            snr,
            Scheme::Djscc,
            bits,
            &mses,
            &ssims,
            &link.stats(),
        ));
    }
    Ok(rows)
}

fn run_webee(cfg: &SweepConfig, images: &[Image]) -> Result<Vec<SweepRow>> {
    let bits = bits_per_image(Scheme::Webee, cfg.dataset, 2)?;
    let mut rows = Vec::with_capacity(cfg.snr_list_db.len());
    for (p, &snr) in cfg.snr_list_db.iter().enumerate() {
        let model = cfg
            .channel
            .with_snr(snr)
            .with_seed(cfg.point_seed(Scheme::Webee, p));
        let mut channel = model.realize()?;
        let mut mses = Vec::with_capacity(images.len());
        let mut ssims = Vec::with_capacity(images.len());
        for src in images {
            // the baseline carries the 8-bit source, so score against it
            let src = src.quantized();
            let out = webee_transmit(&src, &mut channel)?.image;
            mses.push(mse(&src, &out)?);
            ssims.push(ssim(&src, &out)?);
        }
        rows.push(row(
            cfg,
            snr,
            Scheme::Webee,
            bits,
            &mses,
            &ssims,
            &channel.stats(),
        ));
    }
    Ok(rows)
}

/// Runs every configured (scheme, SNR) point over the first
/// `images_per_point` images of `test`.
pub fn run_sweep(
    cfg: &SweepConfig,
    checkpoint: Option<&Checkpoint>,
    test: &ImageSet,
) -> Result<SweepResult> {
    cfg.validate()?;
    let (side, channels) = (cfg.dataset.side(), cfg.dataset.channels());
    if test.shape() != (side, side, channels) {
        return Err(contract(format!(
            "test images are {:?}, {} needs {:?}",
            test.shape(),
            cfg.dataset,
            (side, side, channels)
        )));
    }
    if test.len() < cfg.images_per_point {
        return Err(contract(format!(
            "{} test images available, images_per_point is {}",
            test.len(),
            cfg.images_per_point
        )));
    }
    let images = test.images(0..cfg.images_per_point);
    let mut result = SweepResult::default();
    for &scheme in &cfg.schemes {
        let rows = match scheme {
            Scheme::Djscc => {
                let ck = checkpoint
                    .ok_or_else(|| contract("the djscc scheme needs a trained checkpoint"))?;
                run_djscc(cfg, ck, &images)?
            }
            Scheme::Webee => run_webee(cfg, &images)?,
        };
        result.rows.extend(rows);
    }
    Ok(result)
}
