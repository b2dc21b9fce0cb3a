use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basenet::BaseNetConfig;
use crate::error::{Error, Result};
use crate::hypernet::{FcLayer, HyperParams};
use crate::operators::OperatorSpec;
use crate::tensor::Scalar;

use super::optim::{Optimizer, OptimizerConfig};
use super::params::GammaMode;

pub const MAGIC: &[u8; 8] = b"PNETCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// JSON header stored between the fixed preamble and the float arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub base: BaseNetConfig,
    pub operators: Vec<OperatorSpec>,
    pub mode: GammaMode,
    pub gamma_dim: usize,
    pub layer_dims: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub optimizer_step: u64,
    pub has_moments: bool,
    pub iteration: u64,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub precision: String,
    pub patch_size: Option<usize>,
    pub batch_size: usize,
    pub final_loss: Option<f64>,
}

/// A trained model plus the state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub base: BaseNetConfig,
    pub operators: Vec<OperatorSpec>,
    pub mode: GammaMode,
    pub hyper: HyperParams<f32>,
    pub optimizer: Optimizer<f32>,
    pub iteration: u64,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        base: BaseNetConfig,
        operators: Vec<OperatorSpec>,
        mode: GammaMode,
        hyper: &HyperParams<T>,
        optimizer: &Optimizer<T>,
        iteration: u64,
        metadata: Metadata,
    ) -> Self {
        let cast = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect();
        Checkpoint {
            base,
            operators,
            mode,
            hyper: hyper.cast(),
            optimizer: Optimizer {
                config: optimizer.config,
                step: optimizer.step,
                m: cast(&optimizer.m),
                v: cast(&optimizer.v),
            },
            iteration,
            metadata,
        }
    }

    pub fn operator(&self, name: &str) -> Result<&OperatorSpec> {
        self.operators
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| {
                Error::invalid("Checkpoint", format!("operator `{name}` not in checkpoint"))
            })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        self.hyper.check(&self.base)?;
        let has_moments = !self.optimizer.m.is_empty();
        if has_moments
            && (self.optimizer.m.len() != self.hyper.param_count()
                || self.optimizer.v.len() != self.hyper.param_count())
        {
            return Err(Error::Format(
                "optimizer moments do not match parameter count".into(),
            ));
        }
        let header = Header {
            base: self.base.clone(),
            operators: self.operators.clone(),
            mode: self.mode,
            gamma_dim: self.hyper.m,
            layer_dims: self.base.total_weight_dims(),
            optimizer: self.optimizer.config,
            optimizer_step: self.optimizer.step,
            has_moments,
            iteration: self.iteration,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        write_floats(&mut out, self.hyper.iter().copied())?;
        if has_moments {
            write_floats(&mut out, self.optimizer.m.iter().copied())?;
            write_floats(&mut out, self.optimizer.v.iter().copied())?;
        }
        out.write_all(&self.iteration.to_le_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut input)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = u64::from_le_bytes(read_array(&mut input)?) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
        header.base.validate()?;
        if header.layer_dims != header.base.total_weight_dims() {
            return Err(Error::Format(
                "layer sizes disagree with the architecture".into(),
            ));
        }
        let m = header.gamma_dim;
        let mut layers = Vec::with_capacity(header.layer_dims.len());
        for &n in &header.layer_dims {
            let a = read_floats(&mut input, n * m)?;
            let b = read_floats(&mut input, n)?;
            layers.push(FcLayer { a, b });
        }
        let hyper = HyperParams { m, layers };
        let count = hyper.param_count();
        let (mv, vv) = if header.has_moments {
            (
                read_floats(&mut input, count)?,
                read_floats(&mut input, count)?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let trailer = u64::from_le_bytes(read_array(&mut input)?);
        if trailer != header.iteration {
            return Err(Error::Format(
                "iteration trailer does not match header".into(),
            ));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            base: header.base,
            operators: header.operators,
            mode: header.mode,
            hyper,
            optimizer: Optimizer {
                config: header.optimizer,
                step: header.optimizer_step,
                m: mv,
                v: vv,
            },
            iteration: header.iteration,
            metadata: header.metadata,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        Checkpoint::read_from(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn write_floats<W: Write>(out: &mut W, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(b)
}

fn read_floats<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
