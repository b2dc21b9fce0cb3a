//! Parameter sampling and encoding, data pipeline, optimizer, checkpoints and the
//! joint training loop of the weight network and the base network.

mod checkpoint;
mod config;
mod data;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, Header, Metadata, FORMAT_VERSION, MAGIC};
pub use config::{TrainConfig, KEYS};
pub use data::{next_batch, Batch, BatchSpec, Corpus, SampleRecord};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{encode_gamma, id_code_for_index, rescale, sample_parameter, GammaMode};

use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{psnr, ssim};
use crate::basenet::{self, BaseNetConfig};
use crate::error::{Error, Result};
use crate::hypernet::HyperParams;
use crate::image::Image;
use crate::model::Model;
use crate::operators::{make_pair, OperatorSpec};
use crate::tensor::{mse_loss, Precision, Scalar};

/// Loss and gradient norm of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

fn norm<T: Scalar>(v: impl Iterator<Item = T>) -> f64 {
    v.map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Weight generation, base forward, L2 loss, both backward passes and one update.
/// A non-finite loss or gradient aborts before anything is modified.
pub fn train_step<T: Scalar>(
    hyper: &mut HyperParams<T>,
    optimizer: &mut Optimizer<T>,
    base: &BaseNetConfig,
    batch: &Batch<T>,
    iteration: u64,
) -> Result<StepStats> {
    let weights = hyper.generate_weights(base, &batch.gamma)?;
    let (pred, cache) = basenet::forward(&batch.input, &weights, base)?;
    let (loss, grad) = mse_loss(&pred, &batch.target)?;
    let loss = loss.as_f64();
    let grads = basenet::backward(&cache, &weights, base, &grad)?;
    let hgrads = hyper.backward(&batch.gamma, &grads.weights)?;
    let grad_norm = norm(hgrads.iter().copied());
    if !loss.is_finite() || !grad_norm.is_finite() {
        let per_layer: Vec<String> = hgrads
            .layers
            .iter()
            .map(|l| format!("{:.3e}", norm(l.a.iter().chain(&l.b).copied())))
            .collect();
        let gamma: Vec<f64> = batch.gamma.iter().map(|g| g.as_f64()).collect();
        return Err(Error::NonFinite {
            iteration,
            detail: format!(
                "loss {loss}, gamma {gamma:?}, gradient norm {grad_norm}, per layer [{}]",
                per_layer.join(", ")
            ),
        });
    }
    optimizer.update(hyper, &hgrads)?;
    Ok(StepStats { loss, grad_norm })
}

/// Training state for one run.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub base: BaseNetConfig,
    pub mode: GammaMode,
    pub gamma_dim: usize,
    pub hyper: HyperParams<T>,
    pub optimizer: Optimizer<T>,
    pub iteration: u64,
    pub last_loss: Option<f64>,
    corpus: Corpus,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    /// Initializes parameters from `config.seed`; batches use a separate stream.
    pub fn new(config: TrainConfig, corpus: Corpus) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("Trainer", "empty corpus"));
        }
        let base = config.base_config();
        base.validate()?;
        let mode = GammaMode::for_operators(&config.operators);
        let gamma_dim = mode.dim(&config.operators);
        let hyper = HyperParams::init(
            &base,
            gamma_dim,
            &mut ChaCha8Rng::seed_from_u64(config.seed),
        );
        let optimizer = Optimizer::new(config.optimizer, hyper.param_count());
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Ok(Trainer {
            config,
            base,
            mode,
            gamma_dim,
            hyper,
            optimizer,
            iteration: 0,
            last_loss: None,
            corpus,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch<T>> {
        let spec = BatchSpec {
            operators: &self.config.operators,
            mode: self.mode,
            gamma_dim: self.gamma_dim,
            patch: self.config.patch_size,
            batch_size: self.config.batch_size,
        };
        next_batch(&spec, &self.corpus, &mut self.rng)
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.next_batch()?;
        let stats = train_step(
            &mut self.hyper,
            &mut self.optimizer,
            &self.base,
            &batch,
            self.iteration,
        )?;
        self.iteration += 1;
        self.last_loss = Some(stats.loss);
        Ok(stats)
    }

    /// Runs the remaining iterations, calling `observe` after each step.
    pub fn run(&mut self, mut observe: impl FnMut(u64, &StepStats)) -> Result<()> {
        while self.iteration < self.config.iterations {
            let stats = self.step()?;
            observe(self.iteration, &stats);
            let every = self.config.log_interval;
            if every > 0 && self.iteration % every == 0 {
                info!(
                    "iteration {} loss {:.6e} grad {:.3e}",
                    self.iteration, stats.loss, stats.grad_norm
                );
            }
            let every = self.config.checkpoint_interval;
            if every > 0 && self.iteration % every == 0 {
                if let Some(path) = &self.config.checkpoint_path {
                    self.checkpoint().save(path)?;
                    debug!("checkpoint written at iteration {}", self.iteration);
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.base.clone(),
            self.config.operators.clone(),
            self.mode,
            &self.hyper,
            &self.optimizer,
            self.iteration,
            Metadata {
                seed: self.config.seed,
                precision: match T::PRECISION {
                    Precision::Single => "single".into(),
                    Precision::Double => "double".into(),
                },
                patch_size: self.config.patch_size,
                batch_size: self.config.batch_size,
                final_loss: self.last_loss,
            },
        )
    }
}

/// Training images: the synthetic set plus everything in `image_dir`.
pub fn build_corpus(config: &TrainConfig) -> Result<Corpus> {
    let mut corpus = Corpus::synthetic(
        config.synthetic_images,
        config.synthetic_size,
        config.seed ^ 0x5eed_c0de,
    )?;
    if let Some(dir) = &config.image_dir {
        corpus.extend(Corpus::from_dir(dir)?);
    }
    Ok(corpus)
}

/// Trains from scratch and returns the final checkpoint (also saved when a path is set).
pub fn train(config: &TrainConfig) -> Result<Checkpoint> {
    let corpus = build_corpus(config)?;
    let ck = match config.precision {
        Precision::Single => run_training::<f32>(config, corpus)?,
        Precision::Double => run_training::<f64>(config, corpus)?,
    };
    if let Some(path) = &config.checkpoint_path {
        ck.save(path)?;
    }
    Ok(ck)
}

fn run_training<T: Scalar>(config: &TrainConfig, corpus: Corpus) -> Result<Checkpoint> {
    let mut trainer = Trainer::<T>::new(config.clone(), corpus)?;
    trainer.run(|_, _| {})?;
    Ok(trainer.checkpoint())
}

/// Mean scores of one model at one parameter value over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub gamma: Vec<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Scores `operator` at each raw parameter vector. Restoration inputs use noise
/// seeded by image index, so repeated evaluations agree exactly.
pub fn evaluate(
    model: &Model,
    operator: &str,
    gammas: &[Vec<f64>],
    images: &[Image],
) -> Result<Vec<EvalRow>> {
    let spec = model.operator(operator)?.clone();
    if images.is_empty() {
        return Err(Error::invalid("evaluate", "empty test set"));
    }
    gammas
        .iter()
        .map(|g| {
            let (mut p, mut s) = (0.0, 0.0);
            for (i, img) in images.iter().enumerate() {
                let (out, target) = run_on_pair(model, &spec, g, img, i as u64)?;
                p += psnr(&out, &target)?;
                s += ssim(&out, &target)?;
            }
            let n = images.len() as f64;
            Ok(EvalRow {
                gamma: g.clone(),
                psnr: p / n,
                ssim: s / n,
            })
        })
        .collect()
}

fn run_on_pair(
    model: &Model,
    spec: &OperatorSpec,
    gamma: &[f64],
    img: &Image,
    seed: u64,
) -> Result<(Image, Image)> {
    let pair = make_pair(spec, gamma, img, seed)?;
    let out = model.run_prepared(&spec.name, gamma, &pair.input)?;
    Ok((out, pair.target))
}

/// One row of the single-versus-numerous comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub gamma: Vec<f64>,
    pub psnr_single: f64,
    pub psnr_numerous: f64,
    /// `|psnr_single − psnr_numerous|`.
    pub diff: f64,
}

pub fn compare(single: &[EvalRow], numerous: &[EvalRow]) -> Result<Vec<ComparisonRow>> {
    if single.len() != numerous.len() {
        return Err(Error::shape(
            "compare",
            "row count",
            single.len(),
            numerous.len(),
        ));
    }
    single
        .iter()
        .zip(numerous)
        .map(|(s, n)| {
            if s.gamma != n.gamma {
                return Err(Error::invalid(
                    "compare",
                    format!("gamma {:?} vs {:?}", s.gamma, n.gamma),
                ));
            }
            Ok(ComparisonRow {
                gamma: s.gamma.clone(),
                psnr_single: s.psnr,
                psnr_numerous: n.psnr,
                diff: (s.psnr - n.psnr).abs(),
            })
        })
        .collect()
}

fn gamma_field(g: &[f64]) -> String {
    g.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_comparison_csv<W: Write>(mut out: W, rows: &[ComparisonRow]) -> Result<()> {
    writeln!(out, "gamma,psnr_single,psnr_numerous,diff")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4}",
            gamma_field(&r.gamma),
            r.psnr_single,
            r.psnr_numerous,
            r.diff
        )?;
    }
    Ok(())
}

pub fn write_eval_csv<W: Write>(mut out: W, rows: &[EvalRow]) -> Result<()> {
    writeln!(out, "gamma,psnr,ssim")?;
    for r in rows {
        writeln!(out, "{},{:.4},{:.6}", gamma_field(&r.gamma), r.psnr, r.ssim)?;
    }
    Ok(())
}
