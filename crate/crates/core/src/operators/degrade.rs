use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` (in `[0, 1]` units).
pub fn degrade_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(
            "degrade_noise",
            format!("sigma must be non-negative, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("degrade_noise", e))?;
    let data: Vec<f64> = img
        .data()
        .iter()
        .map(|&v| v + normal.sample(&mut rng))
        .collect();
    log_clamped("degrade_noise", &data);
    Image::new(img.channels(), img.height(), img.width(), data)
}

/// Catmull-Rom cubic (`a = -0.5`).
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn resize_axis(
    src: &[f64],
    len_in: usize,
    len_out: usize,
    lines: usize,
    stride_in: usize,
    stride_line: usize,
) -> Vec<f64> {
    // Returns `lines x len_out` values, row-major by line.
    let scale = len_in as f64 / len_out as f64;
    let mut out = vec![0.0; lines * len_out];
    for i in 0..len_out {
        let pos = (i as f64 + 0.5) * scale - 0.5;
        let base = pos.floor() as isize;
        let frac = pos - base as f64;
        let taps: [(usize, f64); 4] = std::array::from_fn(|k| {
            let off = k as isize - 1;
            let idx = (base + off).clamp(0, len_in as isize - 1) as usize;
            (idx, cubic_weight(frac - off as f64))
        });
        for line in 0..lines {
            let mut acc = 0.0;
            for &(idx, wt) in &taps {
                acc += wt * src[line * stride_line + idx * stride_in];
            }
            out[line * len_out + i] = acc;
        }
    }
    out
}

/// Pixel-center aligned bicubic resize with clamp-to-edge sampling. Values are not clamped
/// between passes; the result is clamped into `[0, 1]`.
pub fn resize_bicubic(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(
            "resize_bicubic",
            "target size must be positive",
        ));
    }
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(img.channels() * height * width);
    for c in 0..img.channels() {
        // Horizontal: h lines of w -> width.
        let tmp = resize_axis(img.plane(c), w, width, h, 1, w);
        // Vertical: width lines of h -> height (output is column-major; transpose back).
        let cols = resize_axis(&tmp, h, height, width, width, 1);
        for y in 0..height {
            for x in 0..width {
                data.push(cols[x * height + y]);
            }
        }
    }
    log_clamped("resize_bicubic", &data);
    Image::new(img.channels(), height, width, data)
}

fn log_clamped(op: &str, raw: &[f64]) {
    let n = Image::count_out_of_range(raw);
    if n > 0 {
        log::debug!("{op} clamped {n} of {} values", raw.len());
    }
}

/// Bicubic downsampling by `scale` followed by bicubic upsampling to the original size.
pub fn degrade_sr(img: &Image, scale: usize) -> Result<Image> {
    if !(2..=4).contains(&scale) {
        return Err(Error::invalid(
            "degrade_sr",
            format!("scale must be 2, 3 or 4, got {scale}"),
        ));
    }
    let (h, w) = (img.height(), img.width());
    let small = resize_bicubic(img, (h / scale).max(1), (w / scale).max(1))?;
    resize_bicubic(&small, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::from_fn(3, 4, 4, |c, y, x| (c + y + x) as f64 / 12.0).unwrap();
        assert_eq!(degrade_noise(&img, 0.0, 3).unwrap(), img);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let img = Image::constant(3, 16, 16, 0.5).unwrap();
        let a = degrade_noise(&img, 25.0 / 255.0, 42).unwrap();
        assert_eq!(a, degrade_noise(&img, 25.0 / 255.0, 42).unwrap());
        assert_ne!(a, degrade_noise(&img, 25.0 / 255.0, 43).unwrap());
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let img = Image::constant(3, 128, 128, 0.5).unwrap();
        for s in [15.0, 25.0, 50.0] {
            let sigma = s / 255.0;
            let noisy = degrade_noise(&img, sigma, 7).unwrap();
            let diffs: Vec<f64> = noisy
                .data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| a - b)
                .collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((std / sigma - 1.0).abs() < 0.05, "std {std} vs {sigma}");
            // E|N(0, σ)| = σ·sqrt(2/π)
            let mad = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
            assert!((mad / (sigma * (2.0 / std::f64::consts::PI).sqrt()) - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn catmull_rom_interpolates() {
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
        for t in [0.1, 0.37, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|k| cubic_weight(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_survives_sr_round_trip() {
        let img = Image::constant(3, 12, 18, 0.61).unwrap();
        for s in 2..=4 {
            let out = degrade_sr(&img, s).unwrap();
            assert_eq!((out.height(), out.width()), (12, 18));
            for v in out.data() {
                assert!((v - 0.61).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn low_frequency_image_survives_scale_two() {
        // Period-8 sinusoid of amplitude 0.15 along x. Clamp-to-edge sampling distorts the
        // outer 4 pixels, so the bound applies to the interior.
        let img = Image::from_fn(3, 32, 32, |c, _, x| {
            0.5 + 0.15 * (2.0 * std::f64::consts::PI * (x as f64 + c as f64) / 8.0).sin()
        })
        .unwrap();
        let out = degrade_sr(&img, 2).unwrap();
        let mut worst = 0.0f64;
        for c in 0..3 {
            for y in 4..28 {
                for x in 4..28 {
                    worst = worst.max((img.get(c, y, x) - out.get(c, y, x)).abs());
                }
            }
        }
        assert!(worst < 2e-2, "max interior deviation {worst}");
    }

    #[test]
    fn invalid_scale_is_rejected() {
        let img = Image::constant(3, 8, 8, 0.5).unwrap();
        assert!(degrade_sr(&img, 1).is_err());
        assert!(degrade_sr(&img, 5).is_err());
    }
}
