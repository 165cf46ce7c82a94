use crate::error::{contract, Result};
use crate::nn::{Real, Tensor4};

/// A real-valued image stored row-major with interleaved channels (`H×W×C`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(contract(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(contract(format!(
                "image buffer holds {} values, {height}x{width}x{channels} needs {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image from 8-bit samples scaled to `[0, 1]`.
    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn clamped(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Raster-order 8-bit samples of the clamped image.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// The image as it survives 8-bit quantization.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.to_bytes().iter().map(|&b| b as f32 / 255.0).collect(),
            ..self.clone()
        }
    }
}

/// Packs same-shaped images into a channel-major batch tensor.
pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor4<T>> {
    let first = images
        .first()
        .ok_or_else(|| contract("empty image batch"))?;
    let (h, w, c) = first.shape();
    if let Some(bad) = images.iter().find(|im| im.shape() != (h, w, c)) {
        return Err(contract(format!(
            "mixed image shapes in batch: {:?} and {:?}",
            (h, w, c),
            bad.shape()
        )));
    }
    let n = images.len();
    let mut t = Tensor4::zeros(c, n, h, w);
    let data = t.data_mut();
    for (s, im) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[((ch * n + s) * h + y) * w + x] = T::lit(im.get(y, x, ch) as f64);
                }
            }
        }
    }
    Ok(t)
}

/// Splits a channel-major batch tensor back into images.
pub fn unbatch<T: Real>(t: &Tensor4<T>) -> Vec<Image> {
    let (c, n, h, w) = (t.channels(), t.batch(), t.height(), t.width());
    (0..n)
        .map(|s| {
            let mut data = vec![0f32; h * w * c];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data[(y * w + x) * c + ch] =
                            t.data()[t.index(ch, s, y, x)].to_f32().unwrap_or(f32::NAN);
                    }
                }
            }
            Image {
                height: h,
                width: w,
                channels: c,
                data,
            }
        })
        .collect()
}
