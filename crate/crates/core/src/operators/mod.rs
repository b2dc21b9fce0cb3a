//! Ground-truth parameterized operators `f(γ, I)` and training-pair synthesis.

mod degrade;
mod edge;
mod gaussian;
mod l0;

pub use degrade::{cubic_weight, degrade_noise, degrade_sr, resize_bicubic};
pub use edge::edge_map;
pub use gaussian::{gaussian_kernel, gaussian_smooth};
pub use l0::{l0_smooth, l0_smooth_traced, total_variation, L0Step, L0Trace, BETA_MAX, KAPPA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Ratio `upper / lower` at or above which parameters are drawn in log space.
pub const LOG_RATIO_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// L0 gradient smoothing, parameter λ.
    L0,
    /// Isotropic Gaussian blur, parameter σ (pixels).
    Gaussian,
    /// Separable Gaussian blur with independent `(σ_x, σ_y)`.
    AnisotropicGaussian,
    /// Additive Gaussian noise, parameter σ in `[0, 1]` intensity units.
    Noise,
    /// Bicubic down/up sampling, parameter = integer scale.
    SuperResolution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Target is the operator output on the clean image.
    Filtering,
    /// Input is the degraded image, target the clean one.
    Restoration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Log,
    Linear,
}

impl Sampling {
    pub fn for_bounds(bounds: &[Bound]) -> Sampling {
        if bounds
            .iter()
            .any(|b| b.upper / b.lower >= LOG_RATIO_THRESHOLD)
        {
            Sampling::Log
        } else {
            Sampling::Linear
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub fn new(lower: f64, upper: f64) -> Self {
        Bound { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// An operator together with its parameter range and its code for joint training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub name: String,
    pub kind: OperatorKind,
    pub bounds: Vec<Bound>,
    pub sampling: Sampling,
    pub id_code: f64,
}

impl OperatorSpec {
    /// Built-in operator with its default range.
    pub fn builtin(kind: OperatorKind) -> Self {
        let (name, bounds) = match kind {
            OperatorKind::L0 => ("l0", vec![Bound::new(0.002, 0.2)]),
            OperatorKind::Gaussian => ("gaussian", vec![Bound::new(0.5, 2.0)]),
            OperatorKind::AnisotropicGaussian => (
                "aniso_gaussian",
                vec![Bound::new(0.5, 2.0), Bound::new(0.5, 2.0)],
            ),
            OperatorKind::Noise => ("noise", vec![Bound::new(15.0 / 255.0, 50.0 / 255.0)]),
            OperatorKind::SuperResolution => ("sr", vec![Bound::new(2.0, 4.0)]),
        };
        OperatorSpec {
            name: name.to_string(),
            kind,
            sampling: Sampling::for_bounds(&bounds),
            bounds,
            id_code: 0.1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let kind = match name {
            "l0" => OperatorKind::L0,
            "gaussian" => OperatorKind::Gaussian,
            "aniso_gaussian" => OperatorKind::AnisotropicGaussian,
            "noise" => OperatorKind::Noise,
            "sr" => OperatorKind::SuperResolution,
            other => {
                return Err(Error::invalid(
                    "OperatorSpec::by_name",
                    format!("unknown operator `{other}`"),
                ))
            }
        };
        Ok(OperatorSpec::builtin(kind))
    }

    /// Replaces the range of a one-parameter operator (`lower == upper` pins it).
    pub fn with_range(mut self, lower: f64, upper: f64) -> Self {
        self.bounds = vec![Bound::new(lower, upper); self.bounds.len()];
        self.sampling = Sampling::for_bounds(&self.bounds);
        self
    }

    pub fn with_id_code(mut self, code: f64) -> Self {
        self.id_code = code;
        self
    }

    pub fn param_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn category(&self) -> Category {
        match self.kind {
            OperatorKind::Noise | OperatorKind::SuperResolution => Category::Restoration,
            _ => Category::Filtering,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = "OperatorSpec";
        let expected = OperatorSpec::builtin(self.kind).param_dim();
        if self.bounds.len() != expected {
            return Err(Error::shape(
                ctx,
                "parameter dimension",
                expected,
                self.bounds.len(),
            ));
        }
        for b in &self.bounds {
            if !(b.lower > 0.0) || !(b.upper >= b.lower) || !b.upper.is_finite() {
                return Err(Error::invalid(
                    ctx,
                    format!("{}: invalid bound [{}, {}]", self.name, b.lower, b.upper),
                ));
            }
        }
        if Sampling::for_bounds(&self.bounds) == Sampling::Log && self.sampling != Sampling::Log {
            return Err(Error::invalid(
                ctx,
                format!("{}: range ratio >= 10 requires log sampling", self.name),
            ));
        }
        if !(0.1 - 1e-12..=1.0 + 1e-12).contains(&self.id_code) {
            return Err(Error::invalid(
                ctx,
                format!("{}: id code {} outside [0.1, 1.0]", self.name, self.id_code),
            ));
        }
        Ok(())
    }

    /// Rejects parameter vectors of the wrong length or outside the bounds.
    pub fn check_params(&self, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.param_dim() {
            return Err(Error::shape(
                "OperatorSpec::check_params",
                "parameter count",
                self.param_dim(),
                gamma.len(),
            ));
        }
        for (k, (&g, b)) in gamma.iter().zip(&self.bounds).enumerate() {
            if !b.contains(g) {
                return Err(Error::OutOfBounds {
                    name: if self.param_dim() == 1 {
                        self.name.clone()
                    } else {
                        format!("{}[{k}]", self.name)
                    },
                    lower: b.lower,
                    upper: b.upper,
                    given: g,
                });
            }
        }
        Ok(())
    }

    /// Applies `f(γ, I)` (filtering) or the degradation (restoration). `seed` drives noise.
    pub fn apply(&self, gamma: &[f64], img: &Image, seed: u64) -> Result<Image> {
        self.check_params(gamma)?;
        match self.kind {
            OperatorKind::L0 => l0_smooth(img, gamma[0]),
            OperatorKind::Gaussian => gaussian_smooth(img, gamma[0]),
            OperatorKind::AnisotropicGaussian => anisotropic_gaussian(img, gamma[0], gamma[1]),
            OperatorKind::Noise => degrade_noise(img, gamma[0], seed),
            OperatorKind::SuperResolution => degrade_sr(img, gamma[0].round() as usize),
        }
    }
}

fn anisotropic_gaussian(img: &Image, sigma_x: f64, sigma_y: f64) -> Result<Image> {
    // Separable: blur rows with σ_x on the image, then columns with σ_y on the transpose.
    let rows = gaussian_rows(img, sigma_x)?;
    let t = transpose(&rows)?;
    transpose(&gaussian_rows(&t, sigma_y)?)
}

fn gaussian_rows(img: &Image, sigma: f64) -> Result<Image> {
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    Image::from_fn(img.channels(), h, w, |c, y, x| {
        taps.iter()
            .enumerate()
            .map(|(k, &t)| {
                t * img.get(
                    c,
                    y,
                    (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize,
                )
            })
            .sum()
    })
}

fn transpose(img: &Image) -> Result<Image> {
    Image::from_fn(img.channels(), img.width(), img.height(), |c, y, x| {
        img.get(c, x, y)
    })
}

/// A network input (image plus edge channel) and its target.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub input: Image,
    pub target: Image,
}

/// Builds a training pair. The edge map is always computed on the network input.
pub fn make_pair(spec: &OperatorSpec, gamma: &[f64], img: &Image, seed: u64) -> Result<Pair> {
    let out = spec.apply(gamma, img, seed)?;
    let (source, target) = match spec.category() {
        Category::Filtering => (img.clone(), out),
        Category::Restoration => (out, img.clone()),
    };
    let input = source.stack(&edge_map(&source)?)?;
    Ok(Pair { input, target })
}
