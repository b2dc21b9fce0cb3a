//! Dense 4-D tensors and the small set of layers the base and weight networks need.
//!
//! Every layer is a pure function: forward passes return fresh tensors (plus a cache
//! where the backward pass needs one) and backward passes return fresh gradients.

mod conv;
mod norm;
mod ops;
mod scalar;

pub use conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, mirror,
    ConvGrads, ConvSpec, PadMode,
};
pub use norm::{instance_norm_backward, instance_norm_forward, InstanceNormCache, DEFAULT_EPS};
pub use ops::{add, fc_backward, fc_forward, mse_loss, relu_backward, relu_forward};
pub use scalar::{Precision, Scalar};

pub(crate) use scalar::gemm;

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `N x C x H x W` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                "data length",
                shape.len(),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let o = self.offset(n, c, h, w);
        self.data[o] = v;
    }

    /// Channel plane `(n, c)` as a slice.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Contiguous `(c, h, w)` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.c * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.c * self.shape.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element type conversion (for example `f32 -> f64` for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Copies channels `[start, start + count)` into a new tensor.
    pub fn channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.c {
            return Err(Error::shape(
                "Tensor::channels",
                "channels",
                start + count,
                self.shape.c,
            ));
        }
        let out_shape = Shape::new(self.shape.n, count, self.shape.h, self.shape.w);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..self.shape.n {
            for c in 0..count {
                out.plane_mut(n, c)
                    .copy_from_slice(self.plane(n, start + c));
            }
        }
        Ok(out)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.shape, other.shape);
        crate::error::ensure_dim("Tensor::concat_channels", "batch", a.n, b.n)?;
        crate::error::ensure_dim("Tensor::concat_channels", "height", a.h, b.h)?;
        crate::error::ensure_dim("Tensor::concat_channels", "width", a.w, b.w)?;
        let mut out = Tensor::zeros(Shape::new(a.n, a.c + b.c, a.h, a.w));
        for n in 0..a.n {
            for c in 0..a.c {
                out.plane_mut(n, c).copy_from_slice(self.plane(n, c));
            }
            for c in 0..b.c {
                out.plane_mut(n, a.c + c).copy_from_slice(other.plane(n, c));
            }
        }
        Ok(out)
    }
}
