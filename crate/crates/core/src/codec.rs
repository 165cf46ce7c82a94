//! The deep encoder and decoder networks and the straight-through pipeline
//! that splices quantization and the link between them.
//!
//! Encoder: `Conv(w/2,k4,s2,p1) BN ReLU Conv(w,k4,s2,p1) BN ReLU Res BN Res BN`.
//! Decoder: `Res BN Res BN ConvT(w/2,k4,s2,p1) BN ReLU ConvT(C,k4,s2,p1)`.
//! Every stride-2 stage halves (or doubles) the spatial side, so an
//! `S×S` image maps to an `S/4 × S/4` grid of `w`-dimensional latent slots.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::image::{batch_tensor, unbatch, Image};
use crate::nn::{
    relu, relu_backward, BatchNorm2d, Conv2d, ConvCache, ConvTranspose2d, Mode, NormCache, Param,
    Real, ResBlock, ResCache, Tensor4,
};
use crate::semantic_kb::{lookup, nearest_row, IndexGrid, LatentGrid, SemanticCodebook};

/// Network geometry. `hidden_width` equals the codebook dimension `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub in_channels: usize,
    pub hidden_width: usize,
    pub image_side: usize,
}

impl CodecConfig {
    pub fn new(in_channels: usize, hidden_width: usize, image_side: usize) -> Result<Self> {
        let cfg = Self {
            in_channels,
            hidden_width,
            image_side,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(contract("in_channels must be positive"));
        }
        if self.hidden_width < 2 || !self.hidden_width.is_multiple_of(2) {
            return Err(contract(format!(
                "hidden_width must be an even number >= 2, got {}",
                self.hidden_width
            )));
        }
        if self.image_side == 0 || !self.image_side.is_multiple_of(4) {
            return Err(contract(format!(
                "image_side must be a positive multiple of 4, got {}",
                self.image_side
            )));
        }
        Ok(())
    }

    /// Side of the latent grid: two stride-2 stages quarter the image side.
    pub fn grid_side(&self) -> usize {
        self.image_side / 4
    }

    pub fn slots(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.image_side, self.image_side, self.in_channels)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    conv1: ConvCache<T>,
    norm1: NormCache<T>,
    relu1: Tensor4<T>,
    conv2: ConvCache<T>,
    norm2: NormCache<T>,
    relu2: Tensor4<T>,
    res1: ResCache<T>,
    norm3: NormCache<T>,
    res2: ResCache<T>,
    norm4: NormCache<T>,
}

impl<T: Real> EncoderCache<T> {
    /// Signs of every ReLU in the pass.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let active = |t: &Tensor4<T>| t.data().iter().map(|&v| v > T::zero()).collect::<Vec<_>>();
        let mut out = active(&self.relu1);
        out.extend(active(&self.relu2));
        out.extend(self.res1.activation_pattern());
        out.extend(self.res2.activation_pattern());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub conv1: Conv2d<T>,
    pub norm1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub norm2: BatchNorm2d<T>,
    pub res1: ResBlock<T>,
    pub norm3: BatchNorm2d<T>,
    pub res2: ResBlock<T>,
    pub norm4: BatchNorm2d<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &CodecConfig) -> Self {
        let (c, w) = (cfg.in_channels, cfg.hidden_width);
        Self {
            conv1: Conv2d::new(rng, c, w / 2, 4, 2, 1),
            norm1: BatchNorm2d::new(w / 2),
            conv2: Conv2d::new(rng, w / 2, w, 4, 2, 1),
            norm2: BatchNorm2d::new(w),
            res1: ResBlock::new(rng, w),
            norm3: BatchNorm2d::new(w),
            res2: ResBlock::new(rng, w),
            norm4: BatchNorm2d::new(w),
        }
    }

    /// All weights zero, normalization at identity.
    pub fn zeroed(cfg: &CodecConfig) -> Self {
        let (c, w) = (cfg.in_channels, cfg.hidden_width);
        Self {
            conv1: Conv2d::zeroed(c, w / 2, 4, 2, 1),
            norm1: BatchNorm2d::new(w / 2),
            conv2: Conv2d::zeroed(w / 2, w, 4, 2, 1),
            norm2: BatchNorm2d::new(w),
            res1: ResBlock::zeroed(w),
            norm3: BatchNorm2d::new(w),
            res2: ResBlock::zeroed(w),
            norm4: BatchNorm2d::new(w),
        }
    }

    /// Inference forward using running normalization statistics.
    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        let h = relu(&self.norm1.apply(&self.conv1.apply(x)));
        let h = relu(&self.norm2.apply(&self.conv2.apply(&h)));
        let h = self.norm3.apply(&self.res1.apply(&h));
        self.norm4.apply(&self.res2.apply(&h))
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> (Tensor4<T>, EncoderCache<T>) {
        let (h, conv1) = self.conv1.forward(x);
        let (h, norm1) = self.norm1.forward(&h, mode);
        let relu1 = relu(&h);
        let (h, conv2) = self.conv2.forward(&relu1);
        let (h, norm2) = self.norm2.forward(&h, mode);
        let relu2 = relu(&h);
        let (h, res1) = self.res1.forward(&relu2);
        let (h, norm3) = self.norm3.forward(&h, mode);
        let (h, res2) = self.res2.forward(&h);
        let (y, norm4) = self.norm4.forward(&h, mode);
        let cache = EncoderCache {
            conv1,
            norm1,
            relu1,
            conv2,
            norm2,
            relu2,
            res1,
            norm3,
            res2,
            norm4,
        };
        (y, cache)
    }

    /// Accumulates parameter gradients from the gradient at the encoder output.
    pub fn backward(&mut self, cache: &EncoderCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let g = self.norm4.backward(&cache.norm4, dy);
        let g = self.res2.backward(&cache.res2, &g);
        let g = self.norm3.backward(&cache.norm3, &g);
        let g = self.res1.backward(&cache.res1, &g);
        let g = relu_backward(&cache.relu2, &g);
        let g = self.norm2.backward(&cache.norm2, &g);
        let g = self.conv2.backward(&cache.conv2, &g);
        let g = relu_backward(&cache.relu1, &g);
        let g = self.norm1.backward(&cache.norm1, &g);
        self.conv1.backward(&cache.conv1, &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.norm1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.norm2.params_mut());
        p.extend(self.res1.params_mut());
        p.extend(self.norm3.params_mut());
        p.extend(self.res2.params_mut());
        p.extend(self.norm4.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.conv1.params();
        p.extend(self.norm1.params());
        p.extend(self.conv2.params());
        p.extend(self.norm2.params());
        p.extend(self.res1.params());
        p.extend(self.norm3.params());
        p.extend(self.res2.params());
        p.extend(self.norm4.params());
        p
    }

    fn norms(&self) -> [&BatchNorm2d<T>; 4] {
        [&self.norm1, &self.norm2, &self.norm3, &self.norm4]
    }

    fn norms_mut(&mut self) -> [&mut BatchNorm2d<T>; 4] {
        [
            &mut self.norm1,
            &mut self.norm2,
            &mut self.norm3,
            &mut self.norm4,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct DecoderCache<T> {
    res1: ResCache<T>,
    norm1: NormCache<T>,
    res2: ResCache<T>,
    norm2: NormCache<T>,
    up1: ConvCache<T>,
    norm3: NormCache<T>,
    relu3: Tensor4<T>,
    up2: ConvCache<T>,
}

impl<T: Real> DecoderCache<T> {
    /// Signs of every ReLU in the pass. Two passes with equal patterns lie
    /// on the same smooth piece of the decoder.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.res1
            .activation_pattern()
            .chain(self.res2.activation_pattern())
            .chain(self.relu3.data().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub res1: ResBlock<T>,
    pub norm1: BatchNorm2d<T>,
    pub res2: ResBlock<T>,
    pub norm2: BatchNorm2d<T>,
    pub up1: ConvTranspose2d<T>,
    pub norm3: BatchNorm2d<T>,
    pub up2: ConvTranspose2d<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &CodecConfig) -> Self {
        let (c, w) = (cfg.in_channels, cfg.hidden_width);
        Self {
            res1: ResBlock::new(rng, w),
            norm1: BatchNorm2d::new(w),
            res2: ResBlock::new(rng, w),
            norm2: BatchNorm2d::new(w),
            up1: ConvTranspose2d::new(rng, w, w / 2, 4, 2, 1),
            norm3: BatchNorm2d::new(w / 2),
            up2: ConvTranspose2d::new(rng, w / 2, c, 4, 2, 1),
        }
    }

    pub fn zeroed(cfg: &CodecConfig) -> Self {
        let (c, w) = (cfg.in_channels, cfg.hidden_width);
        Self {
            res1: ResBlock::zeroed(w),
            norm1: BatchNorm2d::new(w),
            res2: ResBlock::zeroed(w),
            norm2: BatchNorm2d::new(w),
            up1: ConvTranspose2d::zeroed(w, w / 2, 4, 2, 1),
            norm3: BatchNorm2d::new(w / 2),
            up2: ConvTranspose2d::zeroed(w / 2, c, 4, 2, 1),
        }
    }

    pub fn apply(&self, q: &Tensor4<T>) -> Tensor4<T> {
        let h = self.norm1.apply(&self.res1.apply(q));
        let h = self.norm2.apply(&self.res2.apply(&h));
        let h = relu(&self.norm3.apply(&self.up1.apply(&h)));
        self.up2.apply(&h)
    }

    pub fn forward(&mut self, q: &Tensor4<T>, mode: Mode) -> (Tensor4<T>, DecoderCache<T>) {
        let (h, res1) = self.res1.forward(q);
        let (h, norm1) = self.norm1.forward(&h, mode);
        let (h, res2) = self.res2.forward(&h);
        let (h, norm2) = self.norm2.forward(&h, mode);
        let (h, up1) = self.up1.forward(&h);
        let (h, norm3) = self.norm3.forward(&h, mode);
        let relu3 = relu(&h);
        let (y, up2) = self.up2.forward(&relu3);
        let cache = DecoderCache {
            res1,
            norm1,
            res2,
            norm2,
            up1,
            norm3,
            relu3,
            up2,
        };
        (y, cache)
    }

    /// Accumulates parameter gradients and returns the gradient at the
    /// decoder input.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let g = self.up2.backward(&cache.up2, dy);
        let g = relu_backward(&cache.relu3, &g);
        let g = self.norm3.backward(&cache.norm3, &g);
        let g = self.up1.backward(&cache.up1, &g);
        let g = self.norm2.backward(&cache.norm2, &g);
        let g = self.res2.backward(&cache.res2, &g);
        let g = self.norm1.backward(&cache.norm1, &g);
        self.res1.backward(&cache.res1, &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.res1.params_mut();
        p.extend(self.norm1.params_mut());
        p.extend(self.res2.params_mut());
        p.extend(self.norm2.params_mut());
        p.extend(self.up1.params_mut());
        p.extend(self.norm3.params_mut());
        p.extend(self.up2.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.res1.params();
        p.extend(self.norm1.params());
        p.extend(self.res2.params());
        p.extend(self.norm2.params());
        p.extend(self.up1.params());
        p.extend(self.norm3.params());
        p.extend(self.up2.params());
        p
    }

    fn norms(&self) -> [&BatchNorm2d<T>; 3] {
        [&self.norm1, &self.norm2, &self.norm3]
    }

    fn norms_mut(&mut self) -> [&mut BatchNorm2d<T>; 3] {
        [&mut self.norm1, &mut self.norm2, &mut self.norm3]
    }
}

/// Trainable state of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParameters<T> {
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> CodecParameters<T> {
    /// Fan-in scaled uniform convolution weights, unit/zero normalization.
    pub fn init<R: Rng + ?Sized>(cfg: &CodecConfig, rng: &mut R) -> Self {
        let encoder = Encoder::new(rng, cfg);
        let decoder = Decoder::new(rng, cfg);
        Self { encoder, decoder }
    }

    pub fn zeroed(cfg: &CodecConfig) -> Self {
        Self {
            encoder: Encoder::zeroed(cfg),
            decoder: Decoder::zeroed(cfg),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Every stored tensor in a fixed order: parameters, then running
    /// normalization statistics.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self
            .params()
            .into_iter()
            .map(|p| p.value.as_slice())
            .collect();
        for bn in self.encoder.norms().into_iter().chain(self.decoder.norms()) {
            out.extend(bn.buffers().into_iter().map(|b| b.as_slice()));
        }
        out
    }

    /// Visits the same tensors as [`Self::tensors`], in the same order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Vec<T>)) {
        for p in self.params_mut() {
            f(&mut p.value);
        }
        for bn in self.encoder.norms_mut() {
            bn.buffers_mut().into_iter().for_each(&mut f);
        }
        for bn in self.decoder.norms_mut() {
            bn.buffers_mut().into_iter().for_each(&mut f);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn check_image(image: &Image, cfg: &CodecConfig) -> Result<()> {
    if image.shape() != cfg.image_shape() {
        return Err(contract(format!(
            "image shape {:?} does not match the codec's expected {:?}",
            image.shape(),
            cfg.image_shape()
        )));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(contract("image pixel values must lie in [0, 1]"));
    }
    Ok(())
}

/// Encoder output for one sample, re-ordered slot-major.
pub fn latent_grid<T: Real>(t: &Tensor4<T>, sample: usize) -> Result<LatentGrid> {
    let (j, h, w) = (t.channels(), t.height(), t.width());
    let mut values = vec![0f32; h * w * j];
    for c in 0..j {
        for y in 0..h {
            for x in 0..w {
                values[(y * w + x) * j + c] = t.data()[t.index(c, sample, y, x)]
                    .to_f32()
                    .unwrap_or(f32::NAN);
            }
        }
    }
    LatentGrid::new(h, w, j, values)
}

/// Stacks same-shaped latent grids into a channel-major batch tensor.
pub fn latent_tensor<T: Real>(grids: &[LatentGrid]) -> Result<Tensor4<T>> {
    let first = grids
        .first()
        .ok_or_else(|| contract("empty latent batch"))?;
    let (h, w, j) = (first.rows(), first.cols(), first.dim());
    let n = grids.len();
    let mut t = Tensor4::zeros(j, n, h, w);
    for (s, g) in grids.iter().enumerate() {
        if (g.rows(), g.cols(), g.dim()) != (h, w, j) {
            return Err(contract("mixed latent grid shapes in batch"));
        }
        for y in 0..h {
            for x in 0..w {
                let slot = g.slot(y * w + x);
                for (c, &v) in slot.iter().enumerate() {
                    let idx = t.index(c, s, y, x);
                    t.data_mut()[idx] = T::lit(v as f64);
                }
            }
        }
    }
    Ok(t)
}

/// `X = F_enc(M)` for a single image, normalization in inference mode.
pub fn encode_forward(
    image: &Image,
    params: &CodecParameters<f32>,
    cfg: &CodecConfig,
) -> Result<LatentGrid> {
    check_image(image, cfg)?;
    let x = batch_tensor::<f32>(&[image])?;
    latent_grid(&params.encoder.apply(&x), 0)
}

/// `M̂ = F_dec(Q̂)` for a single latent grid. The output is not clamped.
pub fn decode_forward(
    latent: &LatentGrid,
    params: &CodecParameters<f32>,
    cfg: &CodecConfig,
) -> Result<Image> {
    let g = cfg.grid_side();
    if (latent.rows(), latent.cols(), latent.dim()) != (g, g, cfg.hidden_width) {
        return Err(contract(format!(
            "latent shape {:?} does not match the codec's expected {:?}",
            (latent.rows(), latent.cols(), latent.dim()),
            (g, g, cfg.hidden_width)
        )));
    }
    let q = latent_tensor::<f32>(std::slice::from_ref(latent))?;
    Ok(unbatch(&params.decoder.apply(&q)).remove(0))
}

/// Batched inference encoder.
pub fn encode_batch(
    images: &[&Image],
    params: &CodecParameters<f32>,
    cfg: &CodecConfig,
) -> Result<Tensor4<f32>> {
    for im in images {
        check_image(im, cfg)?;
    }
    Ok(params.encoder.apply(&batch_tensor(images)?))
}

/// Nearest-vector indices for every sample of a latent batch tensor.
pub fn quantize_batch(latent: &Tensor4<f32>, kb: &SemanticCodebook) -> Result<Vec<IndexGrid>> {
    if latent.channels() != kb.dim() {
        return Err(contract(format!(
            "latent channels {} differ from codebook dimension {}",
            latent.channels(),
            kb.dim()
        )));
    }
    let (j, h, w) = (latent.channels(), latent.height(), latent.width());
    let mut query = vec![0f32; j];
    (0..latent.batch())
        .map(|s| {
            let mut indices = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    for (c, q) in query.iter_mut().enumerate() {
                        *q = latent.data()[latent.index(c, s, y, x)];
                    }
                    indices.push(nearest_row(kb.vectors(), j, &query));
                }
            }
            IndexGrid::new(h, w, indices)
        })
        .collect()
}

/// Retrieved vectors for a batch of (possibly erased) index grids.
pub fn lookup_batch(grids: &[IndexGrid], kb: &SemanticCodebook) -> Result<Tensor4<f32>> {
    let latents = grids
        .iter()
        .map(|g| lookup(g, kb))
        .collect::<Result<Vec<_>>>()?;
    latent_tensor(&latents)
}

/// Carries index grids from the encoder to the decoder.
pub trait IndexChannel {
    fn carry(&mut self, sent: &IndexGrid, codebook_size: usize) -> Result<IndexGrid>;
}

/// Delivers every index unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Lossless;

impl IndexChannel for Lossless {
    fn carry(&mut self, sent: &IndexGrid, _codebook_size: usize) -> Result<IndexGrid> {
        Ok(sent.clone())
    }
}

/// Everything produced by one training-graph forward pass.
#[derive(Debug)]
pub struct StraightThroughPass {
    pub reconstruction: Tensor4<f32>,
    pub latent: Tensor4<f32>,
    pub retrieved: Tensor4<f32>,
    pub sent: Vec<IndexGrid>,
    pub received: Vec<IndexGrid>,
    encoder: EncoderCache<f32>,
    decoder: DecoderCache<f32>,
}

/// Gradients at the two ends of the non-differentiable gap.
#[derive(Clone, Debug, PartialEq)]
pub struct StraightThroughGrads {
    /// Gradient of the loss at the decoder input, `∂L/∂Q̂`.
    pub retrieved: Tensor4<f32>,
    /// The copy of `retrieved` handed to the encoder output, before any
    /// loss term acting directly on `X` is added.
    pub copied: Tensor4<f32>,
    /// Total gradient applied at the encoder output.
    pub latent: Tensor4<f32>,
}

impl CodecParameters<f32> {
    /// Encoder → quantize → link → lookup → decoder.
    pub fn straight_through_forward(
        &mut self,
        images: &Tensor4<f32>,
        kb: &SemanticCodebook,
        link: &mut dyn IndexChannel,
        mode: Mode,
    ) -> Result<StraightThroughPass> {
        let (latent, encoder) = self.encoder.forward(images, mode);
        let sent = quantize_batch(&latent, kb)?;
        let received = sent
            .iter()
            .map(|g| link.carry(g, kb.size()))
            .collect::<Result<Vec<_>>>()?;
        let retrieved = lookup_batch(&received, kb)?;
        let (reconstruction, decoder) = self.decoder.forward(&retrieved, mode);
        Ok(StraightThroughPass {
            reconstruction,
            latent,
            retrieved,
            sent,
            received,
            encoder,
            decoder,
        })
    }

    /// Backpropagates `grad_reconstruction` through the decoder, copies the
    /// decoder-input gradient verbatim onto the encoder output (bypassing
    /// quantization and the link), adds `grad_latent_direct`, and
    /// backpropagates through the encoder.
    pub fn straight_through_backward(
        &mut self,
        pass: &StraightThroughPass,
        grad_reconstruction: &Tensor4<f32>,
        grad_latent_direct: Option<&Tensor4<f32>>,
    ) -> StraightThroughGrads {
        let retrieved = self.decoder.backward(&pass.decoder, grad_reconstruction);
        let copied = retrieved.clone();
        let mut latent = copied.clone();
        if let Some(direct) = grad_latent_direct {
            latent.add_assign(direct);
        }
        self.encoder.backward(&pass.encoder, &latent);
        StraightThroughGrads {
            retrieved,
            copied,
            latent,
        }
    }
}
