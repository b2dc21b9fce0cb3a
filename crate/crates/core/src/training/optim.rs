use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Result};
use crate::hypernet::HyperParams;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr } => lr,
        }
    }
}

/// Optimizer with its per-parameter state, laid out like [`HyperParams::iter`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    /// First and second moments (Adam only; empty for SGD).
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Self {
        let n = match config {
            OptimizerConfig::Adam { .. } => param_count,
            OptimizerConfig::Sgd { .. } => 0,
        };
        Optimizer {
            config,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    /// Applies one update of `params` from `grads` (same layout).
    pub fn update(&mut self, params: &mut HyperParams<T>, grads: &HyperParams<T>) -> Result<()> {
        ensure_dim(
            "Optimizer::update",
            "parameter count",
            params.param_count(),
            grads.param_count(),
        )?;
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                let lr = T::of(lr);
                for (p, &g) in params.iter_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                ensure_dim(
                    "Optimizer::update",
                    "moment length",
                    params.param_count(),
                    self.m.len(),
                )?;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let step = T::of(lr / c1);
                let c2 = T::of(c2);
                let (one, m, v) = (T::one(), &mut self.m, &mut self.v);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p -= step * *m / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basenet::{BaseNetConfig, LayerSpec};
    use crate::hypernet::FcLayer;
    use crate::tensor::ConvSpec;

    fn scalar_params(v: f64) -> HyperParams<f64> {
        HyperParams {
            m: 1,
            layers: vec![FcLayer {
                a: vec![v],
                b: vec![0.0],
            }],
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(0.37);
        let mut opt = Optimizer::new(OptimizerConfig::default(), 2);
        opt.update(&mut p, &g).unwrap();
        // Bias-corrected first step is lr·sign(g) up to eps.
        assert!((p.layers[0].a[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert_eq!(p.layers[0].b[0], 0.0);
    }

    #[test]
    fn sgd_step_and_zero_lr() {
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.5 }, 2);
        opt.update(&mut p, &scalar_params(2.0)).unwrap();
        assert_eq!(p.layers[0].a[0], 0.0);
        let mut q = scalar_params(1.0);
        let mut still = Optimizer::new(
            OptimizerConfig::Adam {
                lr: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            2,
        );
        still.update(&mut q, &scalar_params(3.0)).unwrap();
        assert_eq!(q, scalar_params(1.0));
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = scalar_params(3.0);
        let mut opt = Optimizer::new(
            OptimizerConfig::Adam {
                lr: 0.1,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            2,
        );
        for _ in 0..500 {
            let g = scalar_params(2.0 * p.layers[0].a[0]);
            opt.update(&mut p, &g).unwrap();
        }
        assert!(p.layers[0].a[0].abs() < 1e-2, "{}", p.layers[0].a[0]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let cfg = BaseNetConfig {
            layers: vec![LayerSpec::plain(ConvSpec::same(1, 1, 1, 1))],
            input_skip: false,
            eps: 1e-5,
        };
        let mut p = HyperParams::<f64>::zeros(&cfg, 2);
        let g = HyperParams::<f64>::zeros(&cfg, 1);
        assert!(Optimizer::new(OptimizerConfig::default(), p.param_count())
            .update(&mut p, &g)
            .is_err());
    }
}
