use crate::error::{contract, Result};
use crate::image::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const RANGE: f64 = 1.0;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(contract(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error between the two images after clamping to `[0, 1]`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.clamp(0.0, 1.0) as f64 - y.clamp(0.0, 1.0) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Normalized 1-D Gaussian taps.
fn gaussian(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Structural similarity with an 11×11 Gaussian window (`σ = 1.5`),
/// `K1 = 0.01`, `K2 = 0.03`, `L = 1`, averaged over valid window
/// positions and then over channels. Images smaller than the window use
/// the largest odd window that fits.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w, channels) = a.shape();
    if h.min(w) < 2 {
        return Err(contract(format!(
            "SSIM needs images of at least 2x2, got {h}x{w}"
        )));
    }
    let mut size = WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let taps = gaussian(size);
    let c1 = (K1 * RANGE).powi(2);
    let c2 = (K2 * RANGE).powi(2);
    let mut total = 0.0;
    for c in 0..channels {
        let plane = |im: &Image| -> Vec<f64> {
            (0..h * w)
                .map(|i| im.data()[i * channels + c].clamp(0.0, 1.0) as f64)
                .collect()
        };
        let (x, y) = (plane(a), plane(b));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter(&x, h, w, &taps);
        let my = filter(&y, h, w, &taps);
        let sxx = filter(&xx, h, w, &taps);
        let syy = filter(&yy, h, w, &taps);
        let sxy = filter(&xy, h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (m1, m2) = (mx[i], my[i]);
            let v1 = sxx[i] - m1 * m1;
            let v2 = syy[i] - m2 * m2;
            let cov = sxy[i] - m1 * m2;
            acc += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2))
                / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / channels as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, c, (0..h * w * c).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let z = Image::filled(4, 4, 3, 0.0);
        let o = Image::filled(4, 4, 3, 1.0);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        // out-of-range values are clamped first
        assert_eq!(
            mse(&Image::filled(4, 4, 3, -2.0), &Image::filled(4, 4, 3, 3.0)).unwrap(),
            1.0
        );
        assert!(mse(&z, &Image::filled(4, 4, 1, 0.0)).is_err());
    }

    #[test]
    fn mse_matches_two_pass_oracle() {
        for seed in 0..20 {
            let (a, b) = (random(32, 32, 3, seed), random(32, 32, 3, seed + 100));
            // first pass: differences; second pass: compensated sum of squares
            let diffs: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x as f64 - y as f64)
                .collect();
            let (mut sum, mut comp) = (0f64, 0f64);
            for d in &diffs {
                let yv = d * d - comp;
                let t = sum + yv;
                comp = (t - sum) - yv;
                sum = t;
            }
            let oracle = sum / diffs.len() as f64;
            assert!((mse(&a, &b).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random(32, 32, 3, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let m = random(28, 28, 1, 2);
        assert!((ssim(&m, &m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_shift_is_luminance_term() {
        let (c, shift) = (0.25f64, 0.5f64);
        let a = Image::filled(16, 16, 1, c as f32);
        let b = Image::filled(16, 16, 1, (c + shift) as f32);
        let c1 = 0.01f64.powi(2);
        let m2 = (c + shift) as f32 as f64;
        let expected = (2.0 * c * m2 + c1) / (c * c + m2 * m2 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_small_images() {
        let a = random(4, 5, 1, 3);
        let b = random(4, 5, 1, 4);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!(ssim(&Image::filled(1, 1, 1, 0.5), &Image::filled(1, 1, 1, 0.5)).is_err());
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = random(32, 32, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy = |amp: f32, rng: &mut ChaCha8Rng| {
            Image::new(
                32,
                32,
                1,
                a.data()
                    .iter()
                    .map(|v| (v + amp * (rng.gen::<f32>() - 0.5)).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap()
        };
        let slight = ssim(&a, &noisy(0.05, &mut rng)).unwrap();
        let heavy = ssim(&a, &noisy(0.8, &mut rng)).unwrap();
        assert!(slight > heavy);
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), h in 2usize..20, w in 2usize..20, c in 1usize..4) {
            let a = random(h, w, c, seed);
            let b = random(h, w, c, seed ^ 0xdead_beef);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!(ab < 1.0 - 1e-9);
        }

        #[test]
        fn mse_is_symmetric_and_non_negative(seed in any::<u64>()) {
            let a = random(8, 8, 3, seed);
            let b = random(8, 8, 3, seed.wrapping_add(1));
            let m = mse(&a, &b).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert_eq!(m, mse(&b, &a).unwrap());
        }
    }
}
