use crate::error::{Error, Result};
use crate::image::Image;

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

fn convolve_axis(src: &[f64], h: usize, w: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let d = k as isize - r;
                let (yy, xx) = if horizontal {
                    (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                } else {
                    ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                };
                acc += t * src[yy * w + xx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with replicate border.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(
            "gaussian_smooth",
            format!("sigma must be positive, got {sigma}"),
        ));
    }
    let taps = gaussian_kernel(sigma);
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let tmp = convolve_axis(img.plane(c), h, w, &taps, true);
        data.extend(convolve_axis(&tmp, h, w, &taps, false));
    }
    Image::new(img.channels(), h, w, data)
}
