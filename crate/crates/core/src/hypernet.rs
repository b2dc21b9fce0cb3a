//! The weight-generating network: one affine map per base-network layer,
//! `W_i = A_i·γ + B_i`, producing that layer's flattened kernel followed by its bias.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;

use crate::basenet::{BaseNetConfig, InjectedWeights};
use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{
    conv2d_forward, conv_transpose2d_forward, fc_backward, fc_forward, Scalar, Tensor,
};

/// Affine map for one base-network layer. `a` is row-major `n x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
}

/// Parameters of the weight-generating network (also used for its gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams<T> {
    /// Dimension of the parameter vector γ.
    pub m: usize,
    pub layers: Vec<FcLayer<T>>,
}

impl<T: Scalar> HyperParams<T> {
    pub fn zeros(config: &BaseNetConfig, m: usize) -> Self {
        HyperParams {
            m,
            layers: config
                .total_weight_dims()
                .into_iter()
                .map(|n| FcLayer {
                    a: vec![T::zero(); n * m],
                    b: vec![T::zero(); n],
                })
                .collect(),
        }
    }

    /// Fan-in scaled uniform init: `B ~ U(±1/sqrt(fan_in))`, `A ~ U(±0.1/sqrt(fan_in))`,
    /// with `fan_in = in_channels·kh·kw`.
    pub fn init<R: Rng>(config: &BaseNetConfig, m: usize, rng: &mut R) -> Self {
        let layers = config
            .layers
            .iter()
            .map(|l| {
                let n = l.conv.param_len();
                let fan_in = (l.conv.in_channels * l.conv.kernel.0 * l.conv.kernel.1) as f64;
                let bound = 1.0 / fan_in.sqrt();
                let b = (0..n)
                    .map(|_| T::of(rng.gen_range(-bound..bound)))
                    .collect();
                let a = (0..n * m)
                    .map(|_| T::of(0.1 * rng.gen_range(-bound..bound)))
                    .collect();
                FcLayer { a, b }
            })
            .collect();
        HyperParams { m, layers }
    }

    pub fn check(&self, config: &BaseNetConfig) -> Result<()> {
        let dims = config.total_weight_dims();
        ensure_dim("HyperParams", "layer count", dims.len(), self.layers.len())?;
        for (n, l) in dims.into_iter().zip(&self.layers) {
            ensure_dim("HyperParams", "bias length n_wi", n, l.b.len())?;
            ensure_dim("HyperParams", "matrix size n_wi*m", n * self.m, l.a.len())?;
        }
        Ok(())
    }

    fn check_gamma(&self, gamma: &[T]) -> Result<()> {
        ensure_dim("HyperParams", "parameter dimension m", self.m, gamma.len())
    }

    /// Flat `A_i·γ + B_i` for every layer.
    pub fn generate_flat(&self, gamma: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_gamma(gamma)?;
        self.layers
            .iter()
            .map(|l| fc_forward(gamma, &l.a, &l.b))
            .collect()
    }

    pub fn generate_weights(
        &self,
        config: &BaseNetConfig,
        gamma: &[T],
    ) -> Result<InjectedWeights<T>> {
        self.check(config)?;
        InjectedWeights::from_flat(config, self.generate_flat(gamma)?)
    }

    /// Chain rule through the affine maps: `grad_A_i = grad_W_i ⊗ γᵀ`, `grad_B_i = grad_W_i`.
    pub fn backward(
        &self,
        gamma: &[T],
        grad_weights: &InjectedWeights<T>,
    ) -> Result<HyperParams<T>> {
        self.check_gamma(gamma)?;
        hyper_backward(gamma, &grad_weights.to_flat())
    }

    pub fn cast<U: Scalar>(&self) -> HyperParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        HyperParams {
            m: self.m,
            layers: self
                .layers
                .iter()
                .map(|l| FcLayer {
                    a: conv(&l.a),
                    b: conv(&l.b),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.a.len() + l.b.len()).sum()
    }

    /// All entries, layer by layer, `A_i` before `B_i`.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.a.iter().chain(&l.b))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.a.iter_mut().chain(l.b.iter_mut()))
    }
}

/// Gradients of the affine maps given per-layer flat weight gradients.
pub fn hyper_backward<T: Scalar>(gamma: &[T], grad_weights: &[Vec<T>]) -> Result<HyperParams<T>> {
    let layers = grad_weights
        .iter()
        .map(|g| {
            let (a, b) = fc_backward(gamma, g);
            FcLayer { a, b }
        })
        .collect();
    Ok(HyperParams {
        m: gamma.len(),
        layers,
    })
}

/// Evaluates one generated layer as parallel convolutions:
/// `Σ_k γ_k·conv(x, A_ik) + conv(x, B_i)`, where column `k` of `A_i` is read as a kernel and bias.
pub fn multipath_equivalent<T: Scalar>(
    hp: &HyperParams<T>,
    config: &BaseNetConfig,
    gamma: &[T],
    layer_index: usize,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    hp.check(config)?;
    hp.check_gamma(gamma)?;
    let spec = config
        .layers
        .get(layer_index)
        .ok_or_else(|| Error::invalid("multipath_equivalent", format!("no layer {layer_index}")))?
        .conv;
    let fc = &hp.layers[layer_index];
    let klen = spec.weight_shape().len();
    let conv = |flat: Vec<T>| -> Result<Tensor<T>> {
        let (k, b) = flat.split_at(klen);
        let kernel = Tensor::from_vec(spec.weight_shape(), k.to_vec())?;
        if spec.transposed {
            conv_transpose2d_forward(x, &kernel, b, &spec)
        } else {
            conv2d_forward(x, &kernel, b, &spec)
        }
    };
    let mut out = conv(fc.b.clone())?;
    for (k, &g) in gamma.iter().enumerate() {
        let column = fc.a.iter().skip(k).step_by(hp.m).copied().collect();
        let path = conv(column)?;
        for (o, &p) in out.data_mut().iter_mut().zip(path.data()) {
            *o += g * p;
        }
    }
    Ok(out)
}

/// Largest deviation between the weights generated at an interpolated γ and the
/// interpolation of the weights generated at the endpoints.
pub fn affine_structure_check<T: Scalar>(
    hp: &HyperParams<T>,
    gamma_a: &[T],
    gamma_b: &[T],
    t: T,
) -> Result<f64> {
    ensure_dim(
        "affine_structure_check",
        "gamma dimension",
        gamma_a.len(),
        gamma_b.len(),
    )?;
    let mix: Vec<T> = gamma_a
        .iter()
        .zip(gamma_b)
        .map(|(&a, &b)| t * a + (T::one() - t) * b)
        .collect();
    let wa = hp.generate_flat(gamma_a)?;
    let wb = hp.generate_flat(gamma_b)?;
    let wm = hp.generate_flat(&mix)?;
    let mut dev = 0.0f64;
    for ((la, lb), lm) in wa.iter().zip(&wb).zip(&wm) {
        for ((&a, &b), &m) in la.iter().zip(lb).zip(lm) {
            dev = dev.max((m - (t * a + (T::one() - t) * b)).abs().as_f64());
        }
    }
    Ok(dev)
}

/// Generated weights of one layer for every γ in `grid`, one row per γ.
pub fn export_weight_trajectory<T: Scalar>(
    hp: &HyperParams<T>,
    grid: &[Vec<T>],
    layer_index: usize,
) -> Result<Vec<Vec<f64>>> {
    let fc = hp.layers.get(layer_index).ok_or_else(|| {
        Error::invalid(
            "export_weight_trajectory",
            format!("no layer {layer_index}"),
        )
    })?;
    grid.iter()
        .map(|g| {
            hp.check_gamma(g)?;
            Ok(fc_forward(g, &fc.a, &fc.b)?
                .into_iter()
                .map(|v| v.as_f64())
                .collect())
        })
        .collect()
}

/// Writes a trajectory as CSV: header `gamma_0..,w_0..`, then one row per γ.
pub fn write_trajectory_csv<W: Write, T: Scalar>(
    mut out: W,
    grid: &[Vec<T>],
    rows: &[Vec<f64>],
) -> Result<()> {
    ensure_dim("write_trajectory_csv", "row count", grid.len(), rows.len())?;
    let m = grid.first().map_or(0, Vec::len);
    let n = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..m)
        .map(|k| format!("gamma_{k}"))
        .chain((0..n).map(|j| format!("w_{j}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (g, r) in grid.iter().zip(rows) {
        let line: Vec<String> = g
            .iter()
            .map(|v| v.as_f64().to_string())
            .chain(r.iter().map(|v| v.to_string()))
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

fn centered(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::invalid("pca", "empty matrix"));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid("pca", "ragged rows"));
    }
    let mut m = DMatrix::from_fn(r, c, |i, j| rows[i][j]);
    for j in 0..c {
        let mean = m.column(j).mean();
        m.column_mut(j).add_scalar_mut(-mean);
    }
    Ok(m)
}

/// Singular values of the row-centered matrix, descending.
pub fn centered_singular_values(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = centered(rows)?;
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Principal-component projection of the trajectory rows.
#[derive(Clone, Debug)]
pub struct Projection {
    /// One `dims`-long coordinate vector per input row.
    pub coords: Vec<Vec<f64>>,
    /// Fraction of total variance captured by each component.
    pub explained: Vec<f64>,
}

pub fn pca_project(rows: &[Vec<f64>], dims: usize) -> Result<Projection> {
    let m = centered(rows)?;
    let svd = m.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::invalid("pca", "SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let take: Vec<usize> = order.into_iter().take(dims).collect();
    let explained = take
        .iter()
        .map(|&k| {
            if total > 0.0 {
                svd.singular_values[k].powi(2) / total
            } else {
                0.0
            }
        })
        .collect();
    let coords = (0..m.nrows())
        .map(|i| take.iter().map(|&k| m.row(i).dot(&vt.row(k))).collect())
        .collect();
    Ok(Projection { coords, explained })
}
