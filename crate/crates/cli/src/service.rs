//! Logic shared by the command line and the HTTP service.

use paramnet_core::analysis::{psnr, ssim};
use paramnet_core::image::{decode_png, encode_png, is_png, png_dimensions, Image};
use paramnet_core::model::Model;
use paramnet_core::operators::{Bound, OperatorSpec, Sampling};
use paramnet_core::Error;
use serde::Serialize;

/// Failures a client can act on, each mapped to an HTTP status and a CLI exit code.
#[derive(Debug)]
pub enum ServiceError {
    OutOfBounds {
        field: String,
        side: &'static str,
        bound: f64,
        given: f64,
    },
    BadRequest(String),
    TooLarge {
        width: usize,
        height: usize,
        max: usize,
    },
    NotPng,
    Internal(String),
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceError::OutOfBounds {
                field,
                side,
                bound,
                given,
            } => {
                write!(f, "{field} = {given} is outside the {side} bound {bound}")
            }
            ServiceError::BadRequest(m) => write!(f, "{m}"),
            ServiceError::TooLarge { width, height, max } => {
                write!(f, "image {width}x{height} exceeds {max}x{max}")
            }
            ServiceError::NotPng => write!(f, "payload is not a PNG image"),
            ServiceError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ServiceError {}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        match e {
            Error::OutOfBounds {
                name,
                lower,
                upper,
                given,
            } => {
                let (side, bound) = if given < lower || given.is_nan() {
                    ("lower", lower)
                } else {
                    ("upper", upper)
                };
                ServiceError::OutOfBounds {
                    field: name,
                    side,
                    bound,
                    given,
                }
            }
            Error::Shape { .. } | Error::Invalid { .. } | Error::Format(_) => {
                ServiceError::BadRequest(e.to_string())
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorInfo {
    pub name: String,
    pub bounds: Vec<Bound>,
    pub sampling: Sampling,
    pub param_dim: usize,
}

impl From<&OperatorSpec> for OperatorInfo {
    fn from(o: &OperatorSpec) -> Self {
        OperatorInfo {
            name: o.name.clone(),
            bounds: o.bounds.clone(),
            sampling: o.sampling,
            param_dim: o.param_dim(),
        }
    }
}

pub fn operator_list(model: &Model) -> Vec<OperatorInfo> {
    model.operators.iter().map(OperatorInfo::from).collect()
}

/// Parses `a,b,...` into numbers.
pub fn parse_params(text: &str) -> Result<Vec<f64>, ServiceError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| ServiceError::BadRequest(format!("`{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(ServiceError::BadRequest("no parameter values given".into()))
            } else {
                Ok(v)
            }
        })
}

/// Parses a γ list: vectors separated by `,`, components by `:` (`0.5,1,2` or `1:2,2:1`).
pub fn parse_gamma_list(text: &str) -> Result<Vec<Vec<f64>>, ServiceError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|g| {
            g.split(':')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| ServiceError::BadRequest(format!("`{s}` is not a number")))
                })
                .collect()
        })
        .collect()
}

/// Resolves the operator name, defaulting to the only or first one.
pub fn pick_operator<'a>(
    model: &'a Model,
    name: Option<&str>,
) -> Result<&'a OperatorSpec, ServiceError> {
    match name {
        Some(n) => model
            .operator(n)
            .map_err(|_| ServiceError::BadRequest(format!("unknown operator `{n}`"))),
        None => model
            .operators
            .first()
            .ok_or_else(|| ServiceError::BadRequest("model has no operators".into())),
    }
}

/// Validates and decodes a PNG payload against the size limit.
pub fn decode_upload(bytes: &[u8], max_side: usize) -> Result<Image, ServiceError> {
    if !is_png(bytes) {
        return Err(ServiceError::NotPng);
    }
    let (width, height) = png_dimensions(bytes)?;
    if width > max_side || height > max_side {
        return Err(ServiceError::TooLarge {
            width,
            height,
            max: max_side,
        });
    }
    Ok(decode_png(bytes)?)
}

/// Scores of an output against a reference image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

/// Runs the model and encodes the result as PNG; scores it when a reference is given.
pub fn infer_png(
    model: &Model,
    operator: &str,
    params: &[f64],
    img: &Image,
    reference: Option<&Image>,
) -> Result<(Vec<u8>, Option<Scores>), ServiceError> {
    let spec = pick_operator(model, Some(operator))?;
    spec.check_params(params)?;
    let out = model.infer(operator, params, img)?;
    let scores = match reference {
        Some(r) => {
            let q = out.quantized();
            Some(Scores {
                psnr: psnr(&q, r)?,
                ssim: ssim(&q, r)?,
            })
        }
        None => None,
    };
    Ok((encode_png(&out)?, scores))
}
