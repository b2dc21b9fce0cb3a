use std::path::{Path, PathBuf};

use crate::basenet::{BaseNetConfig, DEFAULT_DILATIONS, DEFAULT_WIDTH, RESIDUAL_BLOCKS};
use crate::error::{Error, Result};
use crate::operators::OperatorSpec;
use crate::tensor::{PadMode, Precision};

use super::optim::OptimizerConfig;
use super::params::id_code_for_index;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub operators: Vec<OperatorSpec>,
    /// Square crop size; `None` trains on whole images.
    pub patch_size: Option<usize>,
    pub iterations: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub precision: Precision,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub width: usize,
    pub dilations: [usize; RESIDUAL_BLOCKS],
    pub input_skip: bool,
    pub padding: PadMode,
    pub synthetic_images: usize,
    pub synthetic_size: usize,
    pub image_dir: Option<PathBuf>,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            operators: vec![OperatorSpec::by_name("gaussian").expect("builtin")],
            patch_size: Some(32),
            iterations: 1000,
            batch_size: 1,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            precision: Precision::Single,
            checkpoint_interval: 0,
            checkpoint_path: None,
            width: DEFAULT_WIDTH,
            dilations: DEFAULT_DILATIONS,
            input_skip: true,
            padding: PadMode::Reflect,
            synthetic_images: 64,
            synthetic_size: 64,
            image_dir: None,
            log_interval: 100,
        }
    }
}

/// Keys accepted by [`TrainConfig::parse`].
pub const KEYS: &[&str] = &[
    "operators",
    "range.<operator>",
    "patch_size",
    "iterations",
    "batch_size",
    "optimizer",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
    "precision",
    "checkpoint_interval",
    "checkpoint",
    "width",
    "dilations",
    "input_skip",
    "padding",
    "synthetic_images",
    "synthetic_size",
    "image_dir",
    "log_interval",
];

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::invalid("TrainConfig", format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(line, format!("`{key}` expects a number, got `{v}`")))
}

fn list(v: &str) -> Vec<&str> {
    v.split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

impl TrainConfig {
    /// Parses `key = value` lines. `#` starts a comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut names: Option<Vec<String>> = None;
        let mut ranges: Vec<(usize, String, f64, f64)> = Vec::new();
        let (mut lr, mut beta1, mut beta2, mut eps, mut kind) = (None, None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| bad(line, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "operators" => names = Some(list(value).into_iter().map(String::from).collect()),
                "patch_size" => {
                    cfg.patch_size = if value == "full" {
                        None
                    } else {
                        Some(num(line, key, value)?)
                    };
                }
                "iterations" => cfg.iterations = num(line, key, value)?,
                "batch_size" => cfg.batch_size = num(line, key, value)?,
                "optimizer" => kind = Some(value.to_string()),
                "learning_rate" => lr = Some(num::<f64>(line, key, value)?),
                "beta1" => beta1 = Some(num::<f64>(line, key, value)?),
                "beta2" => beta2 = Some(num::<f64>(line, key, value)?),
                "adam_eps" => eps = Some(num::<f64>(line, key, value)?),
                "seed" => cfg.seed = num(line, key, value)?,
                "precision" => {
                    cfg.precision = match value {
                        "single" => Precision::Single,
                        "double" => Precision::Double,
                        other => {
                            return Err(bad(
                                line,
                                format!("precision must be single or double, got `{other}`"),
                            ))
                        }
                    }
                }
                "checkpoint_interval" => cfg.checkpoint_interval = num(line, key, value)?,
                "checkpoint" => cfg.checkpoint_path = Some(PathBuf::from(value)),
                "width" => cfg.width = num(line, key, value)?,
                "dilations" => {
                    let d = list(value)
                        .into_iter()
                        .map(|v| num::<usize>(line, key, v))
                        .collect::<Result<Vec<_>>>()?;
                    cfg.dilations = d.try_into().map_err(|_| {
                        bad(line, format!("`dilations` needs {RESIDUAL_BLOCKS} values"))
                    })?;
                }
                "input_skip" => {
                    cfg.input_skip = value
                        .parse()
                        .map_err(|_| bad(line, "`input_skip` expects true or false"))?;
                }
                "padding" => {
                    cfg.padding = match value {
                        "zero" => PadMode::Zero,
                        "reflect" => PadMode::Reflect,
                        other => {
                            return Err(bad(
                                line,
                                format!("padding must be zero or reflect, got `{other}`"),
                            ))
                        }
                    }
                }
                "synthetic_images" => cfg.synthetic_images = num(line, key, value)?,
                "synthetic_size" => cfg.synthetic_size = num(line, key, value)?,
                "image_dir" => cfg.image_dir = Some(PathBuf::from(value)),
                "log_interval" => cfg.log_interval = num(line, key, value)?,
                k if k.starts_with("range.") => {
                    let bounds = list(value);
                    if bounds.len() != 2 {
                        return Err(bad(line, format!("`{k}` expects `lower, upper`")));
                    }
                    ranges.push((
                        line,
                        k["range.".len()..].to_string(),
                        num(line, k, bounds[0])?,
                        num(line, k, bounds[1])?,
                    ));
                }
                other => return Err(bad(line, format!("unknown key `{other}`"))),
            }
        }
        if let Some(names) = names {
            cfg.operators = names
                .iter()
                .map(|n| OperatorSpec::by_name(n))
                .collect::<Result<_>>()?;
        }
        for (line, name, lo, hi) in ranges {
            let op = cfg
                .operators
                .iter_mut()
                .find(|o| o.name == name)
                .ok_or_else(|| {
                    bad(
                        line,
                        format!("range for operator `{name}` that is not listed"),
                    )
                })?;
            *op = op.clone().with_range(lo, hi);
        }
        cfg.optimizer = match kind.as_deref().unwrap_or("adam") {
            "adam" => {
                let OptimizerConfig::Adam {
                    lr: l0,
                    beta1: b1,
                    beta2: b2,
                    eps: e0,
                } = OptimizerConfig::default()
                else {
                    unreachable!()
                };
                OptimizerConfig::Adam {
                    lr: lr.unwrap_or(l0),
                    beta1: beta1.unwrap_or(b1),
                    beta2: beta2.unwrap_or(b2),
                    eps: eps.unwrap_or(e0),
                }
            }
            "sgd" => OptimizerConfig::Sgd {
                lr: lr.unwrap_or(1e-4),
            },
            other => {
                return Err(Error::invalid(
                    "TrainConfig",
                    format!("unknown optimizer `{other}`"),
                ))
            }
        };
        cfg.assign_id_codes();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets id codes 0.1, 0.2, ... by list position.
    pub fn assign_id_codes(&mut self) {
        for (k, op) in self.operators.iter_mut().enumerate() {
            op.id_code = id_code_for_index(k);
        }
    }

    pub fn base_config(&self) -> BaseNetConfig {
        BaseNetConfig::standard(self.width, self.dilations)
            .with_input_skip(self.input_skip)
            .with_pad_mode(self.padding)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = "TrainConfig";
        if self.operators.is_empty() {
            return Err(Error::invalid(ctx, "at least one operator is required"));
        }
        if self.operators.len() > 10 {
            return Err(Error::invalid(
                ctx,
                "at most 10 operators can be trained jointly",
            ));
        }
        for (i, op) in self.operators.iter().enumerate() {
            op.validate()?;
            if self.operators[..i]
                .iter()
                .any(|o| o.name == op.name || (o.id_code - op.id_code).abs() < 1e-12)
            {
                return Err(Error::invalid(
                    ctx,
                    format!("duplicate operator name or id code: {}", op.name),
                ));
            }
        }
        if let Some(p) = self.patch_size {
            if p == 0 || p % 4 != 0 {
                return Err(Error::invalid(
                    ctx,
                    format!("patch_size {p} must be a positive multiple of 4"),
                ));
            }
        }
        if self.batch_size == 0 || self.width == 0 || self.dilations.contains(&0) {
            return Err(Error::invalid(
                ctx,
                "batch_size, width and dilations must be positive",
            ));
        }
        if !(self.optimizer.lr() >= 0.0) {
            return Err(Error::invalid(ctx, "learning rate must be non-negative"));
        }
        if self.synthetic_images == 0 && self.image_dir.is_none() {
            return Err(Error::invalid(
                ctx,
                "no training images: set synthetic_images or image_dir",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_file() {
        let cfg = TrainConfig::parse(
            "# joint run\n\
             operators = gaussian, noise\n\
             range.gaussian = 0.5, 2.0\n\
             iterations = 20   # short\n\
             patch_size = 16\n\
             optimizer = adam\n\
             learning_rate = 0.001\n\
             seed = 9\n\
             precision = double\n\
             width = 8\n\
             dilations = 1 1 2 4 1 1 1\n\
             input_skip = false\n",
        )
        .unwrap();
        assert_eq!(cfg.operators.len(), 2);
        assert_eq!(cfg.operators[1].id_code, 0.2);
        assert_eq!(cfg.iterations, 20);
        assert_eq!(cfg.patch_size, Some(16));
        assert_eq!(cfg.optimizer.lr(), 0.001);
        assert_eq!(cfg.precision, Precision::Double);
        assert!(!cfg.input_skip);
        assert_eq!(cfg.base_config().width(), 8);
    }

    #[test]
    fn defaults_match_declared_values() {
        let cfg = TrainConfig::parse("").unwrap();
        assert_eq!(cfg.patch_size, Some(32));
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.width, 24);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = red",
            "iterations = lots",
            "patch_size = 30",
            "operators = gaussian, gaussian",
            "operators = blur",
            "range.noise = 0.1, 0.2",
            "optimizer = rmsprop",
            "dilations = 1 2",
            "just words",
        ] {
            assert!(TrainConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = TrainConfig::parse("seed = 1\nbogus = 2")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    }
}
