#![allow(dead_code)]

use std::path::{Path, PathBuf};

use paramnet_core::image::{encode_png, Image};
use paramnet_core::operators::OperatorSpec;
use paramnet_core::training::{train, TrainConfig};

/// Small quickly trained checkpoint for contract tests.
pub fn checkpoint(dir: &Path, operators: &[&str]) -> PathBuf {
    let path = dir.join(format!("{}.ckpt", operators.join("_")));
    let mut cfg = TrainConfig {
        operators: operators
            .iter()
            .map(|n| OperatorSpec::by_name(n).unwrap())
            .collect(),
        iterations: 4,
        width: 4,
        patch_size: Some(16),
        synthetic_images: 2,
        synthetic_size: 24,
        seed: 3,
        checkpoint_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    cfg.assign_id_codes();
    train(&cfg).unwrap();
    path
}

pub fn scene(h: usize, w: usize) -> Image {
    Image::from_fn(3, h, w, |c, y, x| {
        if (h / 4..3 * h / 4).contains(&y) && (w / 4..3 * w / 4).contains(&x) {
            0.8 - 0.2 * c as f64
        } else {
            0.1 + 0.02 * ((x + 2 * y) % 10) as f64
        }
    })
    .unwrap()
}

pub fn png(img: &Image) -> Vec<u8> {
    encode_png(img).unwrap()
}

pub fn write_png(path: &Path, img: &Image) {
    std::fs::write(path, png(img)).unwrap();
}
