//! Inference over a loaded checkpoint.

use std::path::Path;

use crate::basenet::{self, BaseNetConfig, InjectedWeights};
use crate::error::{ensure_dim, Error, Result};
use crate::hypernet::HyperParams;
use crate::image::Image;
use crate::operators::{edge_map, OperatorSpec};
use crate::tensor::Scalar;
use crate::training::{encode_gamma, Checkpoint, GammaMode};

/// Immutable trained model: architecture, operator registry and weight-network parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub base: BaseNetConfig,
    pub operators: Vec<OperatorSpec>,
    pub mode: GammaMode,
    hyper: HyperParams<f32>,
}

impl Model {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        ck.hyper.check(&ck.base)?;
        Ok(Model {
            base: ck.base.clone(),
            operators: ck.operators.clone(),
            mode: ck.mode,
            hyper: ck.hyper.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn hyper(&self) -> &HyperParams<f32> {
        &self.hyper
    }

    pub fn operator(&self, name: &str) -> Result<&OperatorSpec> {
        self.operators
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::invalid("Model", format!("operator `{name}` not in model")))
    }

    /// Encoded γ for raw operator parameters; out-of-range values are rejected.
    pub fn gamma(&self, operator: &str, raw: &[f64]) -> Result<Vec<f64>> {
        encode_gamma(self.operator(operator)?, raw, self.mode, self.hyper.m)
    }

    pub fn weights<T: Scalar>(&self, operator: &str, raw: &[f64]) -> Result<InjectedWeights<T>> {
        let gamma: Vec<T> = self.gamma(operator, raw)?.into_iter().map(T::of).collect();
        self.hyper.cast::<T>().generate_weights(&self.base, &gamma)
    }

    /// RGB image plus its edge map, the network's input layout.
    pub fn prepare(img: &Image) -> Result<Image> {
        ensure_dim("Model::prepare", "image channels", 3, img.channels())?;
        img.stack(&edge_map(img)?)
    }

    /// Runs on an already prepared 4-channel input.
    pub fn run_prepared(&self, operator: &str, raw: &[f64], input: &Image) -> Result<Image> {
        let weights = self.weights::<f32>(operator, raw)?;
        let y = basenet::infer_padded(&input.to_tensor::<f32>(), &weights, &self.base)?;
        Image::from_tensor(&y)
    }

    /// Applies the learned operator to an RGB image.
    pub fn infer(&self, operator: &str, raw: &[f64], img: &Image) -> Result<Image> {
        self.run_prepared(operator, raw, &Model::prepare(img)?)
    }
}
