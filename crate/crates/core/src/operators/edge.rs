use crate::error::{Error, Result};
use crate::image::Image;

/// Mean over color channels of the four absolute neighbor differences,
/// `E = 1/4 · Σ_c (|I - I_left| + |I - I_right| + |I - I_up| + |I - I_down|)`.
/// Neighbors outside the image replicate the border pixel.
pub fn edge_map(img: &Image) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(Error::invalid(
            "edge_map",
            format!("image {h}x{w} is smaller than 2x2"),
        ));
    }
    let mut out = vec![0.0; h * w];
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..h {
            let up = y.saturating_sub(1);
            let down = (y + 1).min(h - 1);
            for x in 0..w {
                let left = x.saturating_sub(1);
                let right = (x + 1).min(w - 1);
                let v = p[y * w + x];
                out[y * w + x] += (v - p[y * w + left]).abs()
                    + (v - p[y * w + right]).abs()
                    + (v - p[up * w + x]).abs()
                    + (v - p[down * w + x]).abs();
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= 0.25);
    Image::raw(1, h, w, out)
}
