//! Quality metrics and effective receptive fields.

use std::io::Write;

use log::warn;

use crate::basenet::{self, BaseNetConfig, InjectedWeights};
use crate::error::{ensure_dim, Error, Result};
use crate::image::Image;
use crate::model::Model;
use crate::tensor::{Shape, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Fraction of the largest input gradient that puts a pixel into the receptive field.
pub const RF_THRESHOLD: f64 = 0.025;

fn same_size(ctx: &'static str, a: &Image, b: &Image) -> Result<()> {
    ensure_dim(ctx, "channels", a.channels(), b.channels())?;
    ensure_dim(ctx, "height", a.height(), b.height())?;
    ensure_dim(ctx, "width", a.width(), b.width())
}

/// `10·log10(1 / mse)` for `[0, 1]` images, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_size("psnr", a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over every 8x8 window (stride 1) of every channel, with population
/// statistics and dynamic range 1. Images smaller than the window use one window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_size("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for y0 in 0..=h - wh {
            for x0 in 0..=w - ww {
                let idx = |y: usize, x: usize| (y0 + y) * w + x0 + x;
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..wh {
                    for x in 0..ww {
                        ma += pa[idx(y, x)];
                        mb += pb[idx(y, x)];
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..wh {
                    for x in 0..ww {
                        let (da, db) = (pa[idx(y, x)] - ma, pb[idx(y, x)] - mb);
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Pixels whose input gradient exceeds the relative threshold when only output
/// point `point` is back-propagated.
#[derive(Clone, Debug, PartialEq)]
pub struct RfMask {
    pub height: usize,
    pub width: usize,
    /// Row-major, `true` inside the field.
    pub mask: Vec<bool>,
    /// Query point `(x, y)`.
    pub point: (usize, usize),
    pub gamma: Vec<f64>,
    pub threshold_ratio: f64,
    pub max_gradient: f64,
    pub warning: Option<String>,
}

impl RfMask {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Bounding box `(x0, y0, x1, y1)`, inclusive, of the masked pixels.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.contains(x, y) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }

    /// Green mask blended over the luma of `img`.
    pub fn overlay(&self, img: &Image) -> Result<Image> {
        ensure_dim("RfMask::overlay", "height", self.height, img.height())?;
        ensure_dim("RfMask::overlay", "width", self.width, img.width())?;
        let gray = img.luma();
        Image::from_fn(3, self.height, self.width, |c, y, x| {
            let g = gray.get(0, y, x);
            if self.contains(x, y) {
                if c == 1 {
                    0.4 * g + 0.6
                } else {
                    0.4 * g
                }
            } else {
                g
            }
        })
    }

    /// `x,y` rows of the masked pixels.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y")?;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.contains(x, y) {
                    writeln!(out, "{x},{y}")?;
                }
            }
        }
        Ok(())
    }
}

/// Receptive field of `point` for a network input `input` (1x4xHxW). The cotangent is
/// `scale` at the point in every output channel; gradient magnitude per pixel is
/// the largest absolute value over input channels, and the threshold is relative to
/// the global maximum.
pub fn receptive_field(
    input: &Tensor<f64>,
    weights: &InjectedWeights<f64>,
    config: &BaseNetConfig,
    point: (usize, usize),
    scale: f64,
) -> Result<RfMask> {
    let s = input.shape();
    ensure_dim("receptive_field", "batch", 1, s.n)?;
    let (px, py) = point;
    if px >= s.w || py >= s.h {
        return Err(Error::invalid(
            "receptive_field",
            format!("point ({px}, {py}) outside {}x{} image", s.w, s.h),
        ));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid(
            "receptive_field",
            "cotangent scale must be positive",
        ));
    }
    let m = config.size_multiple();
    let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    let padded = if (ph, pw) == (s.h, s.w) {
        input.clone()
    } else {
        basenet::reflect_pad(input, ph, pw)?
    };
    let (out, cache) = basenet::forward(&padded, weights, config)?;
    let os = out.shape();
    let mut cot = Tensor::zeros(os);
    for c in 0..os.c {
        cot.set(0, c, py, px, scale);
    }
    let grads = basenet::backward(&cache, weights, config, &cot)?;
    let mut mag = vec![0.0f64; s.h * s.w];
    for c in 0..s.c {
        for y in 0..s.h {
            for x in 0..s.w {
                let v = grads.input.get(0, c, y, x).abs();
                let e = &mut mag[y * s.w + x];
                *e = e.max(v);
            }
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let (mask, warning) = if max > 0.0 {
        (mag.iter().map(|&g| g > RF_THRESHOLD * max).collect(), None)
    } else {
        let msg = format!("all input gradients are zero at ({px}, {py}); receptive field is empty");
        warn!("{msg}");
        (vec![false; s.h * s.w], Some(msg))
    };
    Ok(RfMask {
        height: s.h,
        width: s.w,
        mask,
        point,
        gamma: Vec::new(),
        threshold_ratio: RF_THRESHOLD,
        max_gradient: max,
        warning,
    })
}

/// Receptive field of a trained model at raw operator parameters `raw`.
pub fn effective_receptive_field(
    model: &Model,
    operator: &str,
    raw: &[f64],
    img: &Image,
    point: (usize, usize),
) -> Result<RfMask> {
    let weights = model.weights::<f64>(operator, raw)?;
    let input = Model::prepare(img)?.to_tensor::<f64>();
    let mut mask = receptive_field(&input, &weights, &model.base, point, 1.0)?;
    mask.gamma = raw.to_vec();
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfAreaRow {
    pub point: (usize, usize),
    pub gamma: Vec<f64>,
    pub area: usize,
}

/// Receptive-field area for every (point, γ) combination, points outermost.
pub fn rf_area_report(
    model: &Model,
    operator: &str,
    img: &Image,
    points: &[(usize, usize)],
    gammas: &[Vec<f64>],
) -> Result<Vec<RfAreaRow>> {
    let mut rows = Vec::with_capacity(points.len() * gammas.len());
    for &p in points {
        for g in gammas {
            let m = effective_receptive_field(model, operator, g, img, p)?;
            rows.push(RfAreaRow {
                point: p,
                gamma: g.clone(),
                area: m.area(),
            });
        }
    }
    Ok(rows)
}

pub fn write_rf_report_csv<W: Write>(mut out: W, rows: &[RfAreaRow]) -> Result<()> {
    writeln!(out, "x,y,gamma,area")?;
    for r in rows {
        let g: Vec<String> = r.gamma.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.point.0,
            r.point.1,
            g.join(";"),
            r.area
        )?;
    }
    Ok(())
}

/// Input of ones in every channel, handy for probing untrained networks.
pub fn probe_input(channels: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::full(Shape::new(1, channels, h, w), 1.0)
}
