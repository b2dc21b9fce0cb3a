use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Category, OperatorKind, OperatorSpec, Sampling};

/// How operator parameters become the γ fed to the weight network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// One operator: γ is its rescaled parameter vector.
    Single,
    /// Several operators: γ = `[id_code, rescaled parameter]`.
    Joint,
}

impl GammaMode {
    pub fn for_operators(ops: &[OperatorSpec]) -> GammaMode {
        if ops.len() > 1 {
            GammaMode::Joint
        } else {
            GammaMode::Single
        }
    }

    /// Dimension of γ for the given operator list.
    pub fn dim(self, ops: &[OperatorSpec]) -> usize {
        let widest = ops.iter().map(|o| o.param_dim()).max().unwrap_or(1);
        match self {
            GammaMode::Single => widest,
            GammaMode::Joint => 1 + widest,
        }
    }
}

/// Id code of the operator at position `index` in a joint list: 0.1, 0.2, ..., 1.0.
pub fn id_code_for_index(index: usize) -> f64 {
    0.1 * (index + 1) as f64
}

/// Draws a raw parameter vector inside the operator bounds, uniformly in log space
/// for log-sampled operators. Scales for super-resolution are whole numbers.
pub fn sample_parameter<R: Rng + ?Sized>(spec: &OperatorSpec, rng: &mut R) -> Vec<f64> {
    spec.bounds
        .iter()
        .map(|b| {
            if b.lower == b.upper {
                return b.lower;
            }
            let u: f64 = rng.gen();
            let v = match spec.sampling {
                Sampling::Log => {
                    let (a, z) = (b.lower.ln(), b.upper.ln());
                    (a + u * (z - a)).exp()
                }
                Sampling::Linear => b.lower + u * (b.upper - b.lower),
            };
            let v = if spec.kind == OperatorKind::SuperResolution {
                v.round()
            } else {
                v
            };
            v.clamp(b.lower, b.upper)
        })
        .collect()
}

/// Maps each raw component onto `[0, 1]`; log-sampled ranges are rescaled in log space.
pub fn rescale(spec: &OperatorSpec, raw: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(raw)?;
    Ok(raw
        .iter()
        .zip(&spec.bounds)
        .map(|(&g, b)| {
            if b.upper == b.lower {
                0.0
            } else {
                match spec.sampling {
                    Sampling::Log => (g.ln() - b.lower.ln()) / (b.upper.ln() - b.lower.ln()),
                    Sampling::Linear => (g - b.lower) / (b.upper - b.lower),
                }
            }
        })
        .collect())
}

/// Encoded γ for the weight network.
pub fn encode_gamma(
    spec: &OperatorSpec,
    raw: &[f64],
    mode: GammaMode,
    dim: usize,
) -> Result<Vec<f64>> {
    let params = rescale(spec, raw)?;
    let mut out = match mode {
        GammaMode::Single => params,
        GammaMode::Joint => {
            let mut v = vec![spec.id_code];
            if spec.category() == Category::Filtering {
                v.extend(params);
            }
            v
        }
    };
    if out.len() > dim {
        return Err(Error::shape(
            "encode_gamma",
            "gamma dimension",
            dim,
            out.len(),
        ));
    }
    out.resize(dim, 0.0);
    Ok(out)
}
