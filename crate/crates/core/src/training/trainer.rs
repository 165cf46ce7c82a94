use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, CodecParameters, IndexChannel, Lossless, StraightThroughGrads};
use crate::error::{contract, Error, Result};
use crate::image::{batch_tensor, Image};
use crate::link::{ChannelKind, ChannelModel, CtcLink};
use crate::nn::{Mode, NAdam, NAdamConfig, Param, Tensor4};
use crate::semantic_kb::{IndexGrid, SemanticCodebook};

use super::dataset::{DatasetKind, ImageSet};
use super::loss::{loss_and_grads, LossParts, NormMode};

/// What sits between quantizer and lookup during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainChannel {
    /// Indices reach the decoder unchanged.
    #[default]
    Identity,
    /// The simulated link, with a fresh SNR drawn uniformly per batch.
    Noisy {
        channel: ChannelKind,
        snr_db_min: f64,
        snr_db_max: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub mu: f64,
    pub lambda: f64,
    /// Number of semantic vectors, `K`.
    pub codebook_size: usize,
    #[serde(default)]
    pub optimizer: NAdamConfig,
    #[serde(default)]
    pub train_channel: TrainChannel,
    #[serde(default)]
    pub norm: NormMode,
    #[serde(default)]
    pub seed: u64,
    /// Train on only the first `n` training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
}

impl TrainConfig {
    /// 40 epochs of batch 128, `μ = 0.5`, `λ = 0.25`, `K = 512`.
    pub fn published(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            epochs: 40,
            batch_size: 128,
            mu: 0.5,
            lambda: 0.25,
            codebook_size: 512,
            optimizer: NAdamConfig::default(),
            train_channel: TrainChannel::Identity,
            norm: NormMode::Euclidean,
            seed: 0,
            train_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(contract("epochs and batch_size must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.lambda >= 0.0) {
            return Err(contract("mu and lambda must be non-negative"));
        }
        if self.codebook_size < 2 {
            return Err(contract("codebook_size must be at least 2"));
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return Err(contract("learning_rate must be positive"));
        }
        if let TrainChannel::Noisy {
            snr_db_min,
            snr_db_max,
            ..
        } = self.train_channel
        {
            if snr_db_min.is_nan() || snr_db_max.is_nan() || snr_db_min > snr_db_max {
                return Err(contract("train_channel needs snr_db_min <= snr_db_max"));
            }
        }
        Ok(())
    }
}

/// Published geometry for a dataset: `J = 256`.
pub fn published_codec(dataset: DatasetKind) -> CodecConfig {
    CodecConfig {
        in_channels: dataset.channels(),
        hidden_width: 256,
        image_side: dataset.side(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
    /// Distinct indices chosen during the epoch over `K`.
    pub utilization: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<Result<Vec<EpochReport>, _>>()?;
        Ok(Self { epochs })
    }

    pub fn last(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

/// Outcome of one forward/backward pass, before the optimizer moves.
#[derive(Clone, Debug)]
pub struct GradientProbe {
    pub parts: LossParts,
    /// Encoder output of the pass.
    pub latent: Tensor4<f32>,
    pub grads: StraightThroughGrads,
    pub sent: Vec<IndexGrid>,
    pub received: Vec<IndexGrid>,
}

impl GradientProbe {
    /// Whether the encoder-output gradient copy equals the decoder-input
    /// gradient bit for bit.
    pub fn copy_identity_holds(&self) -> bool {
        self.grads.copied.data().len() == self.grads.retrieved.data().len()
            && self
                .grads
                .copied
                .data()
                .iter()
                .zip(self.grads.retrieved.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub parts: LossParts,
    pub copy_identity_held: bool,
    /// Distinct codebook indices sent in this batch.
    pub distinct_indices: usize,
}

/// Scatters the gradient at the retrieved vectors onto codebook rows.
/// Erased slots were filled with the codebook mean, so each of their
/// gradients is shared equally by all `K` rows.
pub fn route_codebook_grad(grad: &Tensor4<f32>, received: &[IndexGrid], k: usize, out: &mut [f32]) {
    let j = grad.channels();
    debug_assert_eq!(out.len(), k * j);
    let (h, w) = (grad.height(), grad.width());
    let mut shared = vec![0f64; j];
    for (s, g) in received.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let slot = y * w + x;
                if g.erased()[slot] {
                    for (c, acc) in shared.iter_mut().enumerate() {
                        *acc += grad.data()[grad.index(c, s, y, x)] as f64;
                    }
                } else {
                    let row = g.indices()[slot] as usize * j;
                    for c in 0..j {
                        out[row + c] += grad.data()[grad.index(c, s, y, x)];
                    }
                }
            }
        }
    }
    if shared.iter().any(|&v| v != 0.0) {
        for row in out.chunks_exact_mut(j) {
            for (o, &v) in row.iter_mut().zip(&shared) {
                *o += (v / k as f64) as f32;
            }
        }
    }
}

/// Joint optimizer state for encoder, decoder and codebook.
pub struct Trainer {
    cfg: TrainConfig,
    codec: CodecConfig,
    params: CodecParameters<f32>,
    codebook: Param<f32>,
    opt: NAdam<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, codec: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        codec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = CodecParameters::init(&codec, &mut rng);
        let kb = SemanticCodebook::random(cfg.codebook_size, codec.hidden_width, &mut rng)?;
        Self::from_parts(cfg, codec, params, kb, rng)
    }

    /// Starts from given networks and codebook.
    pub fn with_state(
        cfg: TrainConfig,
        codec: CodecConfig,
        params: CodecParameters<f32>,
        kb: SemanticCodebook,
    ) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::from_parts(cfg, codec, params, kb, rng)
    }

    fn from_parts(
        cfg: TrainConfig,
        codec: CodecConfig,
        params: CodecParameters<f32>,
        kb: SemanticCodebook,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        codec.validate()?;
        if kb.size() != cfg.codebook_size || kb.dim() != codec.hidden_width {
            return Err(contract(format!(
                "codebook is {}x{}, configuration needs {}x{}",
                kb.size(),
                kb.dim(),
                cfg.codebook_size,
                codec.hidden_width
            )));
        }
        Ok(Self {
            opt: NAdam::new(cfg.optimizer.clone()),
            cfg,
            codec,
            params,
            codebook: Param::new(kb.into_vectors()),
            rng,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn codec(&self) -> &CodecConfig {
        &self.codec
    }

    pub fn params(&self) -> &CodecParameters<f32> {
        &self.params
    }

    pub fn codebook_param(&self) -> &Param<f32> {
        &self.codebook
    }

    pub fn codebook(&self) -> Result<SemanticCodebook> {
        SemanticCodebook::new(
            self.cfg.codebook_size,
            self.codec.hidden_width,
            self.codebook.value.clone(),
        )
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn link(&mut self) -> Result<Box<dyn IndexChannel>> {
        Ok(match self.cfg.train_channel {
            TrainChannel::Identity => Box::new(Lossless),
            TrainChannel::Noisy {
                channel,
                snr_db_min,
                snr_db_max,
            } => {
                let snr = if snr_db_max > snr_db_min {
                    self.rng.gen_range(snr_db_min..snr_db_max)
                } else {
                    snr_db_min
                };
                Box::new(CtcLink::fixed_width(&ChannelModel::new(
                    channel,
                    snr,
                    self.rng.gen(),
                ))?)
            }
        })
    }

    /// Clears gradients, runs the straight-through forward and backward
    /// passes and leaves the gradients in place for inspection.
    pub fn compute_gradients(&mut self, images: &[&Image]) -> Result<GradientProbe> {
        let x = batch_tensor::<f32>(images)?;
        if (x.channels(), x.height(), x.width())
            != (
                self.codec.in_channels,
                self.codec.image_side,
                self.codec.image_side,
            )
        {
            return Err(contract(format!(
                "training images are {}x{}x{}, codec expects {}x{}x{}",
                x.height(),
                x.width(),
                x.channels(),
                self.codec.image_side,
                self.codec.image_side,
                self.codec.in_channels
            )));
        }
        self.params.zero_grad();
        self.codebook.zero_grad();
        let kb = self.codebook()?;
        let mut link = self.link()?;
        let pass = self
            .params
            .straight_through_forward(&x, &kb, link.as_mut(), Mode::Train)?;
        let loss = loss_and_grads(
            &pass.reconstruction,
            &x,
            &pass.latent,
            &pass.retrieved,
            self.cfg.mu,
            self.cfg.lambda,
            self.cfg.norm,
        )?;
        if !loss.parts.total.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                step: self.step,
                what: "loss",
            });
        }
        let grads = self.params.straight_through_backward(
            &pass,
            &loss.grad_reconstruction,
            Some(&loss.grad_latent),
        );
        route_codebook_grad(
            &loss.grad_retrieved,
            &pass.received,
            kb.size(),
            &mut self.codebook.grad,
        );
        Ok(GradientProbe {
            parts: loss.parts,
            latent: pass.latent,
            grads,
            sent: pass.sent,
            received: pass.received,
        })
    }

    /// One optimizer update of all three parameter groups.
    pub fn step(&mut self, images: &[&Image]) -> Result<StepReport> {
        let probe = self.compute_gradients(images)?;
        let mut all = self.params.params_mut();
        all.push(&mut self.codebook);
        self.opt.step(&mut all);
        self.step += 1;
        if !self.params.is_finite() || self.codebook.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.epoch,
                step: self.step,
                what: "parameters",
            });
        }
        let mut used = vec![false; self.cfg.codebook_size];
        for g in &probe.sent {
            for &z in g.indices() {
                used[z as usize] = true;
            }
        }
        Ok(StepReport {
            copy_identity_held: probe.copy_identity_holds(),
            distinct_indices: used.iter().filter(|&&u| u).count(),
            parts: probe.parts,
        })
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn run_epoch(&mut self, data: &ImageSet) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(contract("training set is empty"));
        }
        let started = Instant::now();
        self.epoch += 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let k = self.cfg.codebook_size;
        let mut used = vec![false; k];
        let mut sums = [0f64; 3];
        let mut weight = 0usize;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let images: Vec<Image> = chunk.iter().map(|&i| data.image(i)).collect();
            let refs: Vec<&Image> = images.iter().collect();
            let probe = self.compute_gradients(&refs)?;
            for g in &probe.sent {
                for &z in g.indices() {
                    used[z as usize] = true;
                }
            }
            let mut all = self.params.params_mut();
            all.push(&mut self.codebook);
            self.opt.step(&mut all);
            self.step += 1;
            steps += 1;
            if !self.params.is_finite() || self.codebook.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    step: self.step,
                    what: "parameters",
                });
            }
            let n = chunk.len();
            sums[0] += probe.parts.reconstruction * n as f64;
            sums[1] += probe.parts.codebook * n as f64;
            sums[2] += probe.parts.commitment * n as f64;
            weight += n;
        }
        let [rec, kb, commit] = sums.map(|s| s / weight as f64);
        let parts = LossParts::combine(rec, kb, commit, self.cfg.mu, self.cfg.lambda);
        Ok(EpochReport {
            epoch: self.epoch,
            steps,
            reconstruction: parts.reconstruction,
            codebook: parts.codebook,
            commitment: parts.commitment,
            total: parts.total,
            utilization: used.iter().filter(|&&u| u).count() as f64 / k as f64,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn into_parts(self) -> Result<(CodecParameters<f32>, SemanticCodebook)> {
        let kb = self.codebook()?;
        Ok((self.params, kb))
    }
}

/// Final artifacts of a training run.
pub struct TrainOutcome {
    pub params: CodecParameters<f32>,
    pub kb: SemanticCodebook,
    pub report: TrainReport,
}

/// Trains for `cfg.epochs` epochs, reporting each epoch as it finishes.
pub fn train(
    cfg: &TrainConfig,
    codec: &CodecConfig,
    data: &ImageSet,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    let data = match cfg.train_limit {
        Some(n) => data.head(n),
        None => data.clone(),
    };
    if data.shape() != codec.image_shape() {
        return Err(contract(format!(
            "training images are {:?}, codec expects {:?}",
            data.shape(),
            codec.image_shape()
        )));
    }
    let mut trainer = Trainer::new(cfg.clone(), *codec)?;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let e = trainer.run_epoch(&data)?;
        on_epoch(&e);
        report.epochs.push(e);
    }
    let (params, kb) = trainer.into_parts()?;
    Ok(TrainOutcome { params, kb, report })
}
