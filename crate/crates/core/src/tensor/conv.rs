use serde::{Deserialize, Serialize};

use super::{gemm, Scalar, Shape, Tensor};
use crate::error::{ensure_dim, Error, Result};

/// How a regular convolution reads outside the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    #[default]
    Zero,
    /// Mirror about the edge pixel without repeating it (`… 2 1 | 0 1 2 …`), folded
    /// again as often as needed, so any padding works on any size.
    Reflect,
}

/// Mirrors `i` into `0..n`.
pub fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Geometry of a (possibly transposed) 2-D convolution layer.
///
/// Regular kernels are laid out `[out, in, kh, kw]`; transposed kernels `[in, out, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub transposed: bool,
    /// Transposed convolutions only support [`PadMode::Zero`].
    #[serde(default)]
    pub pad_mode: PadMode,
}

impl ConvSpec {
    /// Stride-1 square convolution with "same" padding.
    pub fn same(in_channels: usize, out_channels: usize, k: usize, dilation: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            dilation,
            padding: dilation * (k - 1) / 2,
            transposed: false,
            pad_mode: PadMode::Zero,
        }
    }

    /// 3x3 stride-2 downsampling convolution.
    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            stride: 2,
            ..ConvSpec::same(in_channels, out_channels, 3, 1)
        }
    }

    /// 4x4 stride-2 transposed convolution; padding 1 gives exactly twice the input size.
    pub fn up(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (4, 4),
            stride: 2,
            dilation: 1,
            padding: 1,
            transposed: true,
            pad_mode: PadMode::Zero,
        }
    }

    pub fn with_pad_mode(self, pad_mode: PadMode) -> Self {
        ConvSpec { pad_mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride > 0
            && self.dilation > 0
            && !(self.transposed && self.pad_mode == PadMode::Reflect);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "ConvSpec",
                format!("non-positive field in {self:?}"),
            ))
        }
    }

    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.kernel;
        if self.transposed {
            Shape::new(self.in_channels, self.out_channels, kh, kw)
        } else {
            Shape::new(self.out_channels, self.in_channels, kh, kw)
        }
    }

    /// Number of kernel entries plus biases.
    pub fn param_len(&self) -> usize {
        self.weight_shape().len() + self.out_channels
    }

    fn extent(&self, axis: usize) -> usize {
        let k = if axis == 0 {
            self.kernel.0
        } else {
            self.kernel.1
        };
        self.dilation * (k - 1) + 1
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |size: usize, axis: usize, name: &'static str| -> Result<usize> {
            let ext = self.extent(axis);
            if self.transposed {
                let full = (size.max(1) - 1) * self.stride + ext;
                if size == 0 || full <= 2 * self.padding {
                    return Err(Error::shape(
                        "ConvSpec::output_hw",
                        name,
                        2 * self.padding + 1,
                        full,
                    ));
                }
                Ok(full - 2 * self.padding)
            } else {
                let padded = size + 2 * self.padding;
                if padded < ext {
                    return Err(Error::shape("ConvSpec::output_hw", name, ext, padded));
                }
                Ok((padded - ext) / self.stride + 1)
            }
        };
        Ok((axis(h, 0, "height")?, axis(w, 1, "width")?))
    }
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Vec<T>,
}

/// Sliding-window geometry shared by im2col and col2im. `c, h, w` describe the
/// padded-side image, `oh, ow` the grid of window positions.
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    mode: PadMode,
    oh: usize,
    ow: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Image index read by window `o` at kernel tap `k` along an axis of length `n`.
    #[inline]
    fn index(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k * self.dil) as isize - self.pad as isize;
        if i >= 0 && i < n as isize {
            Some(i as usize)
        } else {
            match self.mode {
                PadMode::Zero => None,
                PadMode::Reflect => Some(mirror(i, n)),
            }
        }
    }

    fn im2col<T: Scalar>(&self, img: &[T], col: &mut [T]) {
        let n = self.cols();
        for ci in 0..self.c {
            let src = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let Some(iy) = self.index(oy, ki, self.h) else {
                            d.fill(T::zero());
                            continue;
                        };
                        let line = &src[iy * self.w..(iy + 1) * self.w];
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = self.index(ox, kj, self.w).map_or(T::zero(), |ix| line[ix]);
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], img: &mut [T]) {
        let n = self.cols();
        for ci in 0..self.c {
            let dst = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let Some(iy) = self.index(oy, ki, self.h) else {
                            continue;
                        };
                        let line = &mut dst[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in src[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            if let Some(ix) = self.index(ox, kj, self.w) {
                                line[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_operands<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
    transposed: bool,
    ctx: &'static str,
) -> Result<()> {
    spec.validate()?;
    if spec.transposed != transposed {
        return Err(Error::invalid(
            ctx,
            format!("spec.transposed must be {transposed}"),
        ));
    }
    ensure_dim(ctx, "input channels", spec.in_channels, x.shape().c)?;
    let ws = spec.weight_shape();
    let got = w.shape();
    ensure_dim(ctx, "kernel dim 0", ws.n, got.n)?;
    ensure_dim(ctx, "kernel dim 1", ws.c, got.c)?;
    ensure_dim(ctx, "kernel height", ws.h, got.h)?;
    ensure_dim(ctx, "kernel width", ws.w, got.w)?;
    ensure_dim(ctx, "bias length", spec.out_channels, b.len())
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, b: &[T]) {
    let s = out.shape();
    for n in 0..s.n {
        for (c, &bc) in b.iter().enumerate() {
            out.plane_mut(n, c).iter_mut().for_each(|v| *v += bc);
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &Tensor<T>) -> Vec<T> {
    let s = grad_out.shape();
    (0..s.c)
        .map(|c| {
            (0..s.n)
                .map(|n| grad_out.plane(n, c).iter().copied().sum::<T>())
                .sum()
        })
        .collect()
}

/// Geometry of a regular convolution: image = input, windows = output grid.
fn forward_patches(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Patches {
    Patches {
        c: spec.in_channels,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
        mode: spec.pad_mode,
        oh,
        ow,
    }
}

/// Geometry of a transposed convolution: image = output, windows = input grid.
fn transposed_patches(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Patches {
    Patches {
        c: spec.out_channels,
        h: oh,
        w: ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
        mode: PadMode::Zero,
        oh: h,
        ow: w,
    }
}

/// Cross-correlation `y = W * x + b`, padded per `spec.pad_mode`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands(x, w, b, spec, false, "conv2d_forward")?;
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let p = forward_patches(spec, s.h, s.w, oh, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
    let mut col = vec![T::zero(); p.rows() * p.cols()];
    for n in 0..s.n {
        p.im2col(x.item(n), &mut col);
        gemm(
            spec.out_channels,
            p.rows(),
            p.cols(),
            w.data(),
            false,
            &col,
            false,
            T::zero(),
            out.item_mut(n),
        );
    }
    add_bias(&mut out, b);
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let zero_bias = vec![T::zero(); spec.out_channels];
    check_operands(x, w, &zero_bias, spec, false, "conv2d_backward")?;
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let g = grad_out.shape();
    ensure_dim("conv2d_backward", "grad batch", s.n, g.n)?;
    ensure_dim("conv2d_backward", "grad channels", spec.out_channels, g.c)?;
    ensure_dim("conv2d_backward", "grad height", oh, g.h)?;
    ensure_dim("conv2d_backward", "grad width", ow, g.w)?;

    let p = forward_patches(spec, s.h, s.w, oh, ow);
    let mut col = vec![T::zero(); p.rows() * p.cols()];
    let mut grad_w = Tensor::zeros(spec.weight_shape());
    let mut grad_x = Tensor::zeros(s);
    for n in 0..s.n {
        p.im2col(x.item(n), &mut col);
        // dW += dY · colᵀ
        gemm(
            spec.out_channels,
            p.cols(),
            p.rows(),
            grad_out.item(n),
            false,
            &col,
            true,
            T::one(),
            grad_w.data_mut(),
        );
        // dcol = Wᵀ · dY
        gemm(
            p.rows(),
            spec.out_channels,
            p.cols(),
            w.data(),
            true,
            grad_out.item(n),
            false,
            T::zero(),
            &mut col,
        );
        p.col2im(&col, grad_x.item_mut(n));
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b: bias_grad(grad_out),
    })
}

/// Transposed convolution, the adjoint of a strided convolution with the same geometry.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands(x, w, b, spec, true, "conv_transpose2d_forward")?;
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let p = transposed_patches(spec, s.h, s.w, oh, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
    let mut col = vec![T::zero(); p.rows() * p.cols()];
    for n in 0..s.n {
        // col = W_matᵀ · x, W_mat: in x (out·kh·kw)
        gemm(
            p.rows(),
            spec.in_channels,
            p.cols(),
            w.data(),
            true,
            x.item(n),
            false,
            T::zero(),
            &mut col,
        );
        p.col2im(&col, out.item_mut(n));
    }
    add_bias(&mut out, b);
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let zero_bias = vec![T::zero(); spec.out_channels];
    check_operands(x, w, &zero_bias, spec, true, "conv_transpose2d_backward")?;
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let g = grad_out.shape();
    ensure_dim("conv_transpose2d_backward", "grad batch", s.n, g.n)?;
    ensure_dim(
        "conv_transpose2d_backward",
        "grad channels",
        spec.out_channels,
        g.c,
    )?;
    ensure_dim("conv_transpose2d_backward", "grad height", oh, g.h)?;
    ensure_dim("conv_transpose2d_backward", "grad width", ow, g.w)?;

    let p = transposed_patches(spec, s.h, s.w, oh, ow);
    let mut col = vec![T::zero(); p.rows() * p.cols()];
    let mut grad_w = Tensor::zeros(spec.weight_shape());
    let mut grad_x = Tensor::zeros(s);
    for n in 0..s.n {
        p.im2col(grad_out.item(n), &mut col);
        // dx = W_mat · dcol
        gemm(
            spec.in_channels,
            p.rows(),
            p.cols(),
            w.data(),
            false,
            &col,
            false,
            T::zero(),
            grad_x.item_mut(n),
        );
        // dW_mat += x · dcolᵀ
        gemm(
            spec.in_channels,
            p.cols(),
            p.rows(),
            x.item(n),
            false,
            &col,
            true,
            T::one(),
            grad_w.data_mut(),
        );
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b: bias_grad(grad_out),
    })
}
