use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{self, Image};
use crate::operators::{make_pair, OperatorSpec};
use crate::tensor::{Scalar, Shape, Tensor};

use super::params::{encode_gamma, sample_parameter, GammaMode};

/// Images that training patches are cut from.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub images: Vec<Image>,
}

impl Corpus {
    /// Procedural RGB images: a smooth gradient, a few flat polygons, optional
    /// oriented texture and mild grain.
    pub fn synthetic(count: usize, size: usize, seed: u64) -> Result<Corpus> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..count)
            .map(|_| synthetic_image(size, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Corpus { images })
    }

    /// Every PNG / PPM file in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<Corpus> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| e.to_ascii_lowercase())
                        .as_deref(),
                    Some("png" | "ppm")
                )
            })
            .collect();
        paths.sort();
        let images = paths
            .iter()
            .map(|p| image::load(p))
            .collect::<Result<_>>()?;
        Ok(Corpus { images })
    }

    pub fn extend(&mut self, other: Corpus) {
        self.images.extend(other.images);
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn synthetic_image<R: Rng>(size: usize, rng: &mut R) -> Result<Image> {
    let s = size as f64;
    let base: Vec<[f64; 3]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.2..0.8),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ]
        })
        .collect();
    let polygons: Vec<(Vec<(f64, f64)>, [f64; 3])> = (0..rng.gen_range(2..6))
        .map(|_| {
            let (cx, cy, r) = (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.1..0.35),
            );
            let corners = rng.gen_range(3..7);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let pts = (0..corners)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / corners as f64;
                    let rr = r * rng.gen_range(0.6..1.0);
                    (cx + rr * a.cos(), cy + rr * a.sin())
                })
                .collect();
            (pts, [rng.gen(), rng.gen(), rng.gen()])
        })
        .collect();
    let texture = rng.gen_bool(0.5).then(|| {
        let f = rng.gen_range(2.0..10.0);
        (f, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let grain = Normal::new(0.0, 0.02).expect("valid std");
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / s, y as f64 / s);
            let mut px = [0.0; 3];
            for (c, b) in base.iter().enumerate() {
                px[c] = b[0] + b[1] * u + b[2] * v;
            }
            for (pts, col) in &polygons {
                if inside(pts, u, v) {
                    px = *col;
                }
            }
            let tex = texture.map_or(0.0, |(f, a, b)| {
                0.08 * (std::f64::consts::TAU * f * (a * u + b * v)).sin()
            });
            for (c, p) in px.iter().enumerate() {
                data[(c * size + y) * size + x] = p + tex + grain.sample(rng);
            }
        }
    }
    Image::new(3, size, size, data)
}

fn inside(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let ((xi, yi), (xj, yj)) = (pts[i], pts[j]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Where one training sample came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub operator: usize,
    pub raw_gamma: Vec<f64>,
    pub encoded_gamma: Vec<f64>,
    pub image: usize,
    /// Top-left corner `(y, x)` of the patch.
    pub offset: (usize, usize),
    pub seed: u64,
}

/// One minibatch. All items share one operator and one γ.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub gamma: Vec<T>,
    pub records: Vec<SampleRecord>,
}

/// What [`next_batch`] needs to know about the run.
#[derive(Clone, Debug)]
pub struct BatchSpec<'a> {
    pub operators: &'a [OperatorSpec],
    pub mode: GammaMode,
    pub gamma_dim: usize,
    /// Patch edge; `None` uses whole images (all must share one size).
    pub patch: Option<usize>,
    pub batch_size: usize,
}

/// Draws an operator uniformly, one γ for the batch, then one crop per item.
pub fn next_batch<T: Scalar, R: Rng>(
    spec: &BatchSpec,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<Batch<T>> {
    if corpus.is_empty() || spec.operators.is_empty() || spec.batch_size == 0 {
        return Err(Error::invalid(
            "next_batch",
            "empty corpus, operator list or batch",
        ));
    }
    let operator = rng.gen_range(0..spec.operators.len());
    let op = &spec.operators[operator];
    let raw = sample_parameter(op, rng);
    let encoded = encode_gamma(op, &raw, spec.mode, spec.gamma_dim)?;
    let mut inputs = Vec::with_capacity(spec.batch_size);
    let mut targets = Vec::with_capacity(spec.batch_size);
    let mut records = Vec::with_capacity(spec.batch_size);
    for _ in 0..spec.batch_size {
        let index = rng.gen_range(0..corpus.len());
        let img = &corpus.images[index];
        let (patch, offset) = match spec.patch {
            Some(p) => {
                if img.height() < p || img.width() < p {
                    return Err(Error::invalid(
                        "next_batch",
                        format!("image {index} smaller than patch {p}"),
                    ));
                }
                let y = rng.gen_range(0..=img.height() - p);
                let x = rng.gen_range(0..=img.width() - p);
                (img.crop(y, x, p, p)?, (y, x))
            }
            None => (img.clone(), (0, 0)),
        };
        let seed: u64 = rng.gen();
        let pair = make_pair(op, &raw, &patch, seed)?;
        inputs.push(pair.input.to_tensor::<T>());
        targets.push(pair.target.to_tensor::<T>());
        records.push(SampleRecord {
            operator,
            raw_gamma: raw.clone(),
            encoded_gamma: encoded.clone(),
            image: index,
            offset,
            seed,
        });
    }
    Ok(Batch {
        input: stack(&inputs)?,
        target: stack(&targets)?,
        gamma: encoded.iter().map(|&g| T::of(g)).collect(),
        records,
    })
}

fn stack<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let s = items[0].shape();
    let mut data = Vec::with_capacity(s.len() * items.len());
    for t in items {
        if t.shape() != s {
            return Err(Error::invalid("next_batch", "batch items differ in size"));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(items.len(), s.c, s.h, s.w), data)
}
