use super::{Scalar, Tensor};
use crate::error::{ensure_dim, Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Saved state of an instance-norm forward pass.
#[derive(Clone, Debug)]
pub struct InstanceNormCache<T> {
    /// Normalized output.
    pub y: Tensor<T>,
    /// `1 / sqrt(var + eps)` per `(n, c)`.
    pub inv_std: Vec<T>,
}

/// Per-sample, per-channel standardization over the spatial axes (no affine terms).
pub fn instance_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, InstanceNormCache<T>)> {
    let s = x.shape();
    let plane = s.plane();
    if plane < 2 {
        return Err(Error::invalid(
            "instance_norm_forward",
            "spatial size H*W must be at least 2",
        ));
    }
    let count = T::of(plane as f64);
    let mut y = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            // shifted by the first value so a constant plane has an exact mean and normalizes to 0
            let mean = src[0] + src.iter().map(|&v| v - src[0]).sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + T::of(eps)).sqrt();
            for (d, &v) in y.plane_mut(n, c).iter_mut().zip(src) {
                *d = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
    }
    Ok((y.clone(), InstanceNormCache { y, inv_std }))
}

/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))` per `(n, c)`.
pub fn instance_norm_backward<T: Scalar>(
    cache: &InstanceNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = cache.y.shape();
    let g = grad_out.shape();
    ensure_dim("instance_norm_backward", "batch", s.n, g.n)?;
    ensure_dim("instance_norm_backward", "channels", s.c, g.c)?;
    ensure_dim("instance_norm_backward", "height", s.h, g.h)?;
    ensure_dim("instance_norm_backward", "width", s.w, g.w)?;
    let count = T::of(s.plane() as f64);
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let y = cache.y.plane(n, c);
            let dy = grad_out.plane(n, c);
            let mean_dy = dy.iter().copied().sum::<T>() / count;
            let mean_dyy = dy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / count;
            let inv = cache.inv_std[n * s.c + c];
            for ((d, &a), &b) in dx.plane_mut(n, c).iter_mut().zip(dy).zip(y) {
                *d = inv * (a - mean_dy - b * mean_dyy);
            }
        }
    }
    Ok(dx)
}
