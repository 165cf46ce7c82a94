use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::nn::{Real, Tensor4};

/// How each of the three distances is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Plain Euclidean norm.
    #[default]
    Euclidean,
    /// Squared Euclidean norm, the usual vector-quantization convention.
    Squared,
}

/// Loss values, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

impl LossParts {
    pub fn combine(
        reconstruction: f64,
        codebook: f64,
        commitment: f64,
        mu: f64,
        lambda: f64,
    ) -> Self {
        Self {
            reconstruction,
            codebook,
            commitment,
            total: reconstruction + mu * codebook + lambda * commitment,
        }
    }
}

/// The loss and its gradient with respect to each input. Stop-gradients
/// decide where each term lands: `retrieved` carries only the codebook
/// term, `latent` only the commitment term, `reconstruction` only the
/// reconstruction term.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub parts: LossParts,
    pub grad_reconstruction: Tensor4<T>,
    pub grad_retrieved: Tensor4<T>,
    pub grad_latent: Tensor4<T>,
}

/// Per-sample distance between `a` and `b` plus its gradient with respect
/// to `a`, scaled by `weight`.
fn distance<T: Real>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    mode: NormMode,
    weight: f64,
) -> (Vec<f64>, Tensor4<T>) {
    let (c, n) = (a.channels(), a.batch());
    let spatial = a.spatial();
    let mut sq = vec![0f64; n];
    for ch in 0..c {
        let (ra, rb) = (a.channel(ch), b.channel(ch));
        for (s, acc) in sq.iter_mut().enumerate() {
            let lo = s * spatial;
            *acc += ra[lo..lo + spatial]
                .iter()
                .zip(&rb[lo..lo + spatial])
                .map(|(&x, &y)| {
                    let d = (x - y).to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum::<f64>();
        }
    }
    let (values, scale): (Vec<f64>, Vec<f64>) = match mode {
        NormMode::Euclidean => sq
            .iter()
            .map(|&q| {
                let norm = q.sqrt();
                // the norm is not differentiable at zero; take the zero subgradient
                (norm, if norm > 0.0 { weight / norm } else { 0.0 })
            })
            .unzip(),
        NormMode::Squared => sq.iter().map(|&q| (q, 2.0 * weight)).unzip(),
    };
    let mut grad = Tensor4::zeros(c, n, a.height(), a.width());
    for ch in 0..c {
        let (ra, rb) = (a.channel(ch), b.channel(ch));
        let g = grad.channel_mut(ch);
        for (s, &w) in scale.iter().enumerate() {
            let k = T::lit(w);
            let lo = s * spatial;
            for i in lo..lo + spatial {
                g[i] = k * (ra[i] - rb[i]);
            }
        }
    }
    (values, grad)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `‖M̂ − M‖ + μ‖sg[X] − Q̂‖ + λ‖X − sg[Q̂]‖`, each norm taken per sample
/// and averaged over the batch.
pub fn loss_and_grads<T: Real>(
    reconstruction: &Tensor4<T>,
    source: &Tensor4<T>,
    latent: &Tensor4<T>,
    retrieved: &Tensor4<T>,
    mu: f64,
    lambda: f64,
    mode: NormMode,
) -> Result<LossOutput<T>> {
    if !reconstruction.same_shape(source) {
        return Err(contract(format!(
            "reconstruction {:?} and source {:?} differ in shape",
            reconstruction.dims(),
            source.dims()
        )));
    }
    if !latent.same_shape(retrieved) {
        return Err(contract(format!(
            "latent {:?} and retrieved {:?} differ in shape",
            latent.dims(),
            retrieved.dims()
        )));
    }
    if latent.batch() != source.batch() || source.batch() == 0 {
        return Err(contract("loss inputs need the same non-zero batch size"));
    }
    if mu < 0.0 || lambda < 0.0 {
        return Err(contract("loss weights must be non-negative"));
    }
    let n = source.batch() as f64;
    let (rec, grad_reconstruction) = distance(reconstruction, source, mode, 1.0 / n);
    let (kb, grad_retrieved) = distance(retrieved, latent, mode, mu / n);
    let (commit, grad_latent) = distance(latent, retrieved, mode, lambda / n);
    Ok(LossOutput {
        parts: LossParts::combine(mean(&rec), mean(&kb), mean(&commit), mu, lambda),
        grad_reconstruction,
        grad_retrieved,
        grad_latent,
    })
}
