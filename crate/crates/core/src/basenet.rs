//! The fixed-topology base network. It owns no weights: every forward pass runs on
//! an externally supplied [`InjectedWeights`] set.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{
    add, conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    instance_norm_backward, instance_norm_forward, mirror, relu_backward, relu_forward, ConvSpec,
    InstanceNormCache, PadMode, Scalar, Shape, Tensor, DEFAULT_EPS,
};

pub const DEFAULT_WIDTH: usize = 24;
pub const STANDARD_DEPTH: usize = 20;
pub const RESIDUAL_BLOCKS: usize = 7;
/// Per-block dilation of the seven residual blocks: the two middle blocks are dilated.
pub const DEFAULT_DILATIONS: [usize; RESIDUAL_BLOCKS] = [1, 1, 2, 4, 1, 1, 1];

/// Position of a layer inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    None,
    /// First convolution of a block; its input is the skip tensor.
    Start,
    /// Second convolution; the skip tensor is added to its output before normalization.
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub conv: ConvSpec,
    pub norm: bool,
    pub relu: bool,
    pub residual: Residual,
}

impl LayerSpec {
    pub fn plain(conv: ConvSpec) -> Self {
        LayerSpec {
            conv,
            norm: true,
            relu: true,
            residual: Residual::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseNetConfig {
    pub layers: Vec<LayerSpec>,
    /// Add the RGB input channels to the final layer output.
    #[serde(default)]
    pub input_skip: bool,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl Default for BaseNetConfig {
    fn default() -> Self {
        BaseNetConfig::standard(DEFAULT_WIDTH, DEFAULT_DILATIONS)
    }
}

impl BaseNetConfig {
    /// The 20-layer architecture: two convolutions, a stride-2 convolution, seven
    /// residual blocks, a 4x4 transposed convolution, and two output convolutions.
    pub fn standard(width: usize, dilations: [usize; RESIDUAL_BLOCKS]) -> Self {
        let mut layers = vec![
            LayerSpec::plain(ConvSpec::same(4, width, 3, 1)),
            LayerSpec::plain(ConvSpec::same(width, width, 3, 1)),
            LayerSpec::plain(ConvSpec::down(width, width)),
        ];
        for d in dilations {
            layers.push(LayerSpec {
                residual: Residual::Start,
                ..LayerSpec::plain(ConvSpec::same(width, width, 3, d))
            });
            layers.push(LayerSpec {
                residual: Residual::End,
                ..LayerSpec::plain(ConvSpec::same(width, width, 3, d))
            });
        }
        layers.push(LayerSpec::plain(ConvSpec::up(width, width)));
        layers.push(LayerSpec::plain(ConvSpec::same(width, width, 3, 1)));
        layers.push(LayerSpec {
            norm: false,
            relu: false,
            ..LayerSpec::plain(ConvSpec::same(width, 3, 3, 1))
        });
        BaseNetConfig {
            layers,
            input_skip: false,
            eps: DEFAULT_EPS,
        }
    }

    /// Standard architecture with the output added to the RGB input.
    pub fn with_input_skip(mut self, on: bool) -> Self {
        self.input_skip = on;
        self
    }

    /// Sets the padding of every regular convolution; the transposed one stays zero-padded.
    pub fn with_pad_mode(mut self, mode: PadMode) -> Self {
        for l in self.layers.iter_mut().filter(|l| !l.conv.transposed) {
            l.conv.pad_mode = mode;
        }
        self
    }

    pub fn width(&self) -> usize {
        self.layers
            .first()
            .map(|l| l.conv.out_channels)
            .unwrap_or(0)
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map(|l| l.conv.in_channels).unwrap_or(0)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.conv.out_channels).unwrap_or(0)
    }

    /// Flat size `n_wi` (kernel entries plus biases) of every layer.
    pub fn total_weight_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.conv.param_len()).collect()
    }

    /// Checks channel chaining and residual-block pairing.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("BaseNetConfig", "no layers"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("BaseNetConfig", "eps must be positive"));
        }
        let mut open: Option<usize> = None;
        for (i, pair) in self.layers.windows(2).enumerate() {
            ensure_dim(
                "BaseNetConfig",
                "chained channels",
                pair[0].conv.out_channels,
                pair[1].conv.in_channels,
            )
            .map_err(|e| Error::invalid("BaseNetConfig", format!("layer {}: {e}", i + 2)))?;
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.conv.validate()?;
            match (l.residual, open) {
                (Residual::Start, None) => open = Some(i),
                (Residual::End, Some(s)) => {
                    let skip_c = self.layers[s].conv.in_channels;
                    if skip_c != l.conv.out_channels
                        || l.conv.stride != 1
                        || self.layers[s].conv.stride != 1
                    {
                        return Err(Error::invalid(
                            "BaseNetConfig",
                            format!("residual block {s}..={i} changes shape"),
                        ));
                    }
                    open = None;
                }
                (Residual::None, None) => {}
                _ => {
                    return Err(Error::invalid(
                        "BaseNetConfig",
                        format!("unbalanced residual marker at layer {}", i + 1),
                    ))
                }
            }
        }
        if open.is_some() {
            return Err(Error::invalid(
                "BaseNetConfig",
                "unterminated residual block",
            ));
        }
        if self.input_skip && (self.in_channels() < self.out_channels()) {
            return Err(Error::invalid(
                "BaseNetConfig",
                "input skip needs at least as many input as output channels",
            ));
        }
        Ok(())
    }

    /// Checks the fixed 20-layer architecture contract on top of [`validate`](Self::validate).
    pub fn validate_standard(&self) -> Result<()> {
        self.validate()?;
        let l = &self.layers;
        let bad = |msg: &str| Err(Error::invalid("BaseNetConfig::validate_standard", msg));
        if l.len() != STANDARD_DEPTH {
            return bad("expected exactly 20 convolution layers");
        }
        if self.in_channels() != 4 || self.out_channels() != 3 {
            return bad("expected 4 input channels and 3 output channels");
        }
        if l[2].conv.stride != 2 || l[2].conv.transposed {
            return bad("layer 3 must be the stride-2 convolution");
        }
        let up = &l[17].conv;
        if !(up.transposed && up.kernel == (4, 4) && up.stride == 2 && up.padding == 1) {
            return bad("layer 18 must be the 4x4 stride-2 transposed convolution");
        }
        for (i, layer) in l.iter().enumerate() {
            let expect = match i {
                3..=16 if (i - 3) % 2 == 0 => Residual::Start,
                3..=16 => Residual::End,
                _ => Residual::None,
            };
            if layer.residual != expect {
                return bad("layers 4-17 must form seven two-convolution residual blocks");
            }
            let last = i + 1 == l.len();
            if layer.norm == last || layer.relu == last {
                return bad(
                    "every layer except the last must be followed by instance norm and ReLU",
                );
            }
            if i != 17 && layer.conv.kernel != (3, 3) {
                return bad("convolution layers use 3x3 kernels");
            }
        }
        Ok(())
    }

    /// Input height and width must be multiples of this (4 for the standard network).
    pub fn size_multiple(&self) -> usize {
        let down: usize = self
            .layers
            .iter()
            .filter(|l| !l.conv.transposed)
            .map(|l| l.conv.stride)
            .product();
        if down > 1 {
            2 * down
        } else {
            1
        }
    }
}

/// Kernel and bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

/// Externally supplied parameters for every base-network layer.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectedWeights<T> {
    pub layers: Vec<LayerWeights<T>>,
}

impl<T: Scalar> InjectedWeights<T> {
    pub fn zeros(config: &BaseNetConfig) -> Self {
        InjectedWeights {
            layers: config
                .layers
                .iter()
                .map(|l| LayerWeights {
                    kernel: Tensor::zeros(l.conv.weight_shape()),
                    bias: vec![T::zero(); l.conv.out_channels],
                })
                .collect(),
        }
    }

    /// Splits per-layer flat vectors laid out as `[kernel (row-major), bias]`.
    pub fn from_flat(config: &BaseNetConfig, flat: Vec<Vec<T>>) -> Result<Self> {
        ensure_dim(
            "InjectedWeights::from_flat",
            "layer count",
            config.layers.len(),
            flat.len(),
        )?;
        let layers = config
            .layers
            .iter()
            .zip(flat)
            .map(|(l, mut v)| {
                ensure_dim(
                    "InjectedWeights::from_flat",
                    "layer flat size",
                    l.conv.param_len(),
                    v.len(),
                )?;
                let bias = v.split_off(l.conv.weight_shape().len());
                Ok(LayerWeights {
                    kernel: Tensor::from_vec(l.conv.weight_shape(), v)?,
                    bias,
                })
            })
            .collect::<Result<_>>()?;
        Ok(InjectedWeights { layers })
    }

    pub fn to_flat(&self) -> Vec<Vec<T>> {
        self.layers
            .iter()
            .map(|l| l.kernel.data().iter().chain(&l.bias).copied().collect())
            .collect()
    }

    /// Verifies every kernel and bias against the configuration.
    pub fn check(&self, config: &BaseNetConfig) -> Result<()> {
        ensure_dim(
            "InjectedWeights",
            "layer count",
            config.layers.len(),
            self.layers.len(),
        )?;
        for (l, w) in config.layers.iter().zip(&self.layers) {
            let ws = l.conv.weight_shape();
            let got = w.kernel.shape();
            ensure_dim("InjectedWeights", "kernel dim 0", ws.n, got.n)?;
            ensure_dim("InjectedWeights", "kernel dim 1", ws.c, got.c)?;
            ensure_dim("InjectedWeights", "kernel height", ws.h, got.h)?;
            ensure_dim("InjectedWeights", "kernel width", ws.w, got.w)?;
            ensure_dim(
                "InjectedWeights",
                "bias length",
                l.conv.out_channels,
                w.bias.len(),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    input: Tensor<T>,
    norm: Option<InstanceNormCache<T>>,
    /// Value fed to the ReLU, when the layer has one.
    pre_relu: Option<Tensor<T>>,
}

/// Activations saved by [`forward`] for one backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    input_shape: Shape,
    input_skip: bool,
}

/// Gradients with respect to every injected weight and the network input.
#[derive(Clone, Debug)]
pub struct BaseGrads<T> {
    pub weights: InjectedWeights<T>,
    pub input: Tensor<T>,
}

fn conv_any<T: Scalar>(x: &Tensor<T>, w: &LayerWeights<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if spec.transposed {
        conv_transpose2d_forward(x, &w.kernel, &w.bias, spec)
    } else {
        conv2d_forward(x, &w.kernel, &w.bias, spec)
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, config: &BaseNetConfig) -> Result<()> {
    let s = input.shape();
    ensure_dim(
        "basenet::forward",
        "input channels",
        config.in_channels(),
        s.c,
    )?;
    let m = config.size_multiple();
    if s.h % m != 0 || s.w % m != 0 {
        return Err(Error::invalid(
            "basenet::forward",
            format!(
                "input {}x{} not divisible by {m}; pad with `infer_padded`",
                s.h, s.w
            ),
        ));
    }
    Ok(())
}

/// Runs the network and keeps the activations the backward pass needs.
pub fn forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &InjectedWeights<T>,
    config: &BaseNetConfig,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    config.validate()?;
    weights.check(config)?;
    check_input(input, config)?;
    let mut caches = Vec::with_capacity(config.layers.len());
    let mut skips: Vec<Tensor<T>> = Vec::new();
    let mut h = input.clone();
    for (layer, w) in config.layers.iter().zip(&weights.layers) {
        if layer.residual == Residual::Start {
            skips.push(h.clone());
        }
        let mut z = conv_any(&h, w, &layer.conv)?;
        if layer.residual == Residual::End {
            let skip = skips.pop().expect("validated residual pairing");
            z = add(&z, &skip)?;
        }
        let (z, norm) = if layer.norm {
            let (y, c) = instance_norm_forward(&z, config.eps)?;
            (y, Some(c))
        } else {
            (z, None)
        };
        let (out, pre_relu) = if layer.relu {
            (relu_forward(&z), Some(z))
        } else {
            (z, None)
        };
        caches.push(LayerCache {
            input: h,
            norm,
            pre_relu,
        });
        h = out;
    }
    if config.input_skip {
        let rgb = input.channels(0, config.out_channels())?;
        h = add(&h, &rgb)?;
    }
    let shape = h.shape();
    ensure_dim(
        "basenet::forward",
        "output height",
        input.shape().h,
        shape.h,
    )?;
    ensure_dim("basenet::forward", "output width", input.shape().w, shape.w)?;
    Ok((
        h,
        ForwardCache {
            layers: caches,
            input_shape: input.shape(),
            input_skip: config.input_skip,
        },
    ))
}

/// Reverse pass through the cached activations.
pub fn backward<T: Scalar>(
    cache: &ForwardCache<T>,
    weights: &InjectedWeights<T>,
    config: &BaseNetConfig,
    grad_output: &Tensor<T>,
) -> Result<BaseGrads<T>> {
    ensure_dim(
        "basenet::backward",
        "layer count",
        config.layers.len(),
        cache.layers.len(),
    )?;
    let mut g = grad_output.clone();
    let mut grads: Vec<Option<LayerWeights<T>>> = vec![None; config.layers.len()];
    let mut skip_grads: Vec<Tensor<T>> = Vec::new();
    for (i, (layer, lc)) in config.layers.iter().zip(&cache.layers).enumerate().rev() {
        if let Some(pre) = &lc.pre_relu {
            g = relu_backward(pre, &g)?;
        }
        if let Some(nc) = &lc.norm {
            g = instance_norm_backward(nc, &g)?;
        }
        if layer.residual == Residual::End {
            skip_grads.push(g.clone());
        }
        let cg = if layer.conv.transposed {
            conv_transpose2d_backward(&lc.input, &weights.layers[i].kernel, &layer.conv, &g)?
        } else {
            conv2d_backward(&lc.input, &weights.layers[i].kernel, &layer.conv, &g)?
        };
        grads[i] = Some(LayerWeights {
            kernel: cg.grad_w,
            bias: cg.grad_b,
        });
        g = cg.grad_x;
        if layer.residual == Residual::Start {
            let skip = skip_grads.pop().expect("validated residual pairing");
            g = add(&g, &skip)?;
        }
    }
    if cache.input_skip {
        let s = cache.input_shape;
        for n in 0..s.n {
            for c in 0..grad_output.shape().c {
                for (d, &v) in g.plane_mut(n, c).iter_mut().zip(grad_output.plane(n, c)) {
                    *d += v;
                }
            }
        }
    }
    Ok(BaseGrads {
        weights: InjectedWeights {
            layers: grads
                .into_iter()
                .map(|l| l.expect("every layer visited"))
                .collect(),
        },
        input: g,
    })
}

/// Forward pass for arbitrary input sizes: reflect-pads up to the size multiple and crops back.
pub fn infer_padded<T: Scalar>(
    input: &Tensor<T>,
    weights: &InjectedWeights<T>,
    config: &BaseNetConfig,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let m = config.size_multiple();
    let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    if ph == s.h && pw == s.w {
        return forward(input, weights, config).map(|(y, _)| y);
    }
    let padded = reflect_pad(input, ph, pw)?;
    let (y, _) = forward(&padded, weights, config)?;
    let ys = y.shape();
    Ok(Tensor::from_fn(
        Shape::new(ys.n, ys.c, s.h, s.w),
        |n, c, h, w| y.get(n, c, h, w),
    ))
}

/// Mirror-pads the bottom and right edges up to `h x w`.
pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if h < s.h || w < s.w {
        return Err(Error::invalid("reflect_pad", "target smaller than input"));
    }
    Ok(Tensor::from_fn(
        Shape::new(s.n, s.c, h, w),
        |n, c, y, xx| x.get(n, c, mirror(y as isize, s.h), mirror(xx as isize, s.w)),
    ))
}
