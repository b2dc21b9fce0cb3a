//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Trains the desk-scale models (about 35 minutes on one core), so it is a
//! `harness = false` target that prints a readable report.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paramnet_cli::server::{router, AppState};
use paramnet_core::analysis::{receptive_field, rf_area_report, RfMask};
use paramnet_core::basenet::{BaseNetConfig, InjectedWeights, LayerSpec, DEFAULT_DILATIONS};
use paramnet_core::gradcheck::fixture;
use paramnet_core::gradsuite::gradient_suite;
use paramnet_core::hypernet::{
    affine_structure_check, centered_singular_values, export_weight_trajectory,
    multipath_equivalent, HyperParams,
};
use paramnet_core::image::{decode_png, encode_png, Image};
use paramnet_core::model::Model;
use paramnet_core::operators::{edge_map, l0_smooth_traced, OperatorSpec, Sampling};
use paramnet_core::tensor::{
    conv2d_forward, conv_transpose2d_forward, ConvSpec, Precision, Shape, Tensor,
};
use paramnet_core::training::{
    compare, evaluate, sample_parameter, train, write_comparison_csv, Corpus, EvalRow,
    OptimizerConfig, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Outcome = Result<String, String>;

struct Report {
    failed: usize,
}

impl Report {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let reports = gradient_suite().map_err(e2s)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("non-empty suite");
    let bad: Vec<String> = reports
        .iter()
        .filter(|r| !(r.max_rel_error < 1e-5))
        .map(|r| format!("{} {:.2e}", r.name, r.max_rel_error))
        .collect();
    verdict(
        bad.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst {} at {:.2e}, suite {secs:.1}s{}",
            reports.len(),
            worst.name,
            worst.max_rel_error,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; over 1e-5: {}", bad.join(", "))
            }
        ),
    )
}

fn algebra(trained: Option<&Model>) -> Outcome {
    let config = BaseNetConfig::standard(6, DEFAULT_DILATIONS).with_input_skip(true);
    let hp = HyperParams::<f64>::init(&config, 2, &mut ChaCha8Rng::seed_from_u64(5));
    let gamma = [0.2, 0.7];
    let weights = hp.generate_weights(&config, &gamma).map_err(e2s)?;
    let mut multipath = 0.0f64;
    for (i, layer) in config.layers.iter().enumerate() {
        let spec: ConvSpec = layer.conv;
        let x = Tensor::from_vec(
            Shape::new(1, spec.in_channels, 8, 8),
            fixture(100 + i as u64, spec.in_channels * 64),
        )
        .map_err(e2s)?;
        let w = &weights.layers[i];
        let standard = if spec.transposed {
            conv_transpose2d_forward(&x, &w.kernel, &w.bias, &spec)
        } else {
            conv2d_forward(&x, &w.kernel, &w.bias, &spec)
        }
        .map_err(e2s)?;
        let paths = multipath_equivalent(&hp, &config, &gamma, i, &x).map_err(e2s)?;
        for (a, b) in standard.data().iter().zip(paths.data()) {
            multipath = multipath.max((a - b).abs());
        }
    }
    let mut affine = 0.0f64;
    for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
        affine = affine.max(affine_structure_check(&hp, &[0.1, 0.0], &[0.1, 1.0], t).map_err(e2s)?);
    }
    let grid: Vec<Vec<f64>> = (0..=10).map(|k| vec![0.1, k as f64 / 10.0]).collect();
    let mut ratio = 0.0f64;
    let mut check_rank = |h: &HyperParams<f64>, grid: &[Vec<f64>]| -> Result<(), String> {
        for layer in [0, 9, h.layers.len() - 1] {
            let s =
                centered_singular_values(&export_weight_trajectory(h, grid, layer).map_err(e2s)?)
                    .map_err(e2s)?;
            ratio = ratio.max(s[1] / s[0]);
        }
        Ok(())
    };
    check_rank(&hp, &grid)?;
    if let Some(model) = trained {
        let h = model.hyper().cast::<f64>();
        for op in &model.operators {
            let grid: Vec<Vec<f64>> = (0..=10)
                .map(|k| vec![op.id_code, k as f64 / 10.0])
                .collect();
            check_rank(&h, &grid)?;
        }
    }
    verdict(
        multipath <= 1e-12 && affine <= 1e-12 && ratio < 1e-8,
        format!(
            "multipath max |diff| {multipath:.2e}, affine {affine:.2e}, trajectory s2/s1 {ratio:.2e}{}",
            if trained.is_some() { " (random and trained joint hyper-net)" } else { "" }
        ),
    )
}

/// Direct per-pixel evaluation with replicate border.
fn edge_oracle(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let at = |c: usize, y: isize, x: isize| {
        img.get(c, y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize)
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for c in 0..img.channels() {
                let v = at(c, y, x);
                sum += (v - at(c, y, x - 1)).abs()
                    + (v - at(c, y, x + 1)).abs()
                    + (v - at(c, y - 1, x)).abs()
                    + (v - at(c, y + 1, x)).abs();
            }
            out.push(0.25 * sum);
        }
    }
    out
}

fn edges() -> Outcome {
    let mut oracle_ok = true;
    let mut homogeneous = true;
    for seed in 0..10u64 {
        let (h, w) = (2 + seed as usize, 9 - seed as usize / 2);
        let v = fixture(seed, 3 * h * w)
            .into_iter()
            .map(|x| 0.5 + 0.5 * x)
            .collect();
        let img = Image::new(3, h, w, v).map_err(e2s)?;
        let e = edge_map(&img).map_err(e2s)?;
        oracle_ok &= e.data() == edge_oracle(&img).as_slice();
        for s in [0.5, 0.25, 0.125] {
            let scaled =
                Image::new(3, h, w, img.data().iter().map(|x| s * x).collect()).map_err(e2s)?;
            let es = edge_map(&scaled).map_err(e2s)?;
            homogeneous &= es.data().iter().zip(e.data()).all(|(a, b)| *a == s * b);
        }
    }
    let zero = [0.0, 0.3, 1.0].iter().all(|&c| {
        edge_map(&Image::constant(3, 5, 7, c).unwrap())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0)
    });
    verdict(
        oracle_ok && homogeneous && zero,
        format!("oracle equality {oracle_ok}, zero on constant {zero}, exact homogeneity (s = 1/2, 1/4, 1/8) {homogeneous}"),
    )
}

fn sampling() -> Outcome {
    let spec = OperatorSpec::by_name("l0").map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| sample_parameter(&spec, &mut rng)[0])
        .collect();
    draws.sort_by(f64::total_cmp);
    let median = 0.5 * (draws[49_999] + draws[50_000]);
    let rel = (median - 0.02).abs() / 0.02;
    let b = spec.bounds[0];
    let outside = (0..1_000_000)
        .filter(|_| !b.contains(sample_parameter(&spec, &mut rng)[0]))
        .count();
    verdict(
        rel <= 0.05 && outside == 0 && spec.sampling == Sampling::Log,
        format!(
            "median {median:.5} ({:.2}% from 0.02), {outside} of 1e6 outside [0.002, 0.2]",
            100.0 * rel
        ),
    )
}

fn l0() -> Outcome {
    let corpus = Corpus::synthetic(20, 32, 77).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let spec = OperatorSpec::by_name("l0").map_err(e2s)?;
    let (mut worst, mut worst_literal) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for img in &corpus.images {
        let lambda = sample_parameter(&spec, &mut rng)[0];
        let (_, trace) = l0_smooth_traced(img, lambda).map_err(e2s)?;
        worst = worst.max(trace.max_energy_increase());
        for pair in trace.steps.windows(2) {
            worst_literal = worst_literal.max(pair[1].objective - pair[0].objective);
        }
    }
    let mut fixed = true;
    for (c, lambda) in [(0.0, 0.002), (0.37, 0.05), (1.0, 0.2)] {
        let img = Image::constant(3, 16, 12, c).map_err(e2s)?;
        fixed &= l0_smooth_traced(&img, lambda).map_err(e2s)?.0 == img;
    }
    println!("      info: largest rise of Σ(S−I)² + λ·C(S) between outer iterations {worst_literal:.3e} (reported, not asserted)");
    verdict(
        worst <= 1e-9 && fixed,
        format!("20 images: largest splitting-energy rise per outer iteration {worst:.3e} (slack 1e-9); constant fixed point exact {fixed}"),
    )
}

fn toy_stack(k: usize) -> BaseNetConfig {
    let mut layers: Vec<LayerSpec> = (0..k)
        .map(|i| LayerSpec {
            norm: false,
            ..LayerSpec::plain(ConvSpec::same(if i == 0 { 4 } else { 3 }, 3, 3, 1))
        })
        .collect();
    layers.last_mut().expect("k > 0").relu = false;
    BaseNetConfig {
        layers,
        input_skip: false,
        eps: 1e-5,
    }
}

fn toy_weights(config: &BaseNetConfig, seed: u64) -> InjectedWeights<f64> {
    let flat = config
        .total_weight_dims()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            fixture(seed + i as u64, n)
                .into_iter()
                .map(|v| 0.5 + 0.5 * v.abs())
                .collect()
        })
        .collect();
    InjectedWeights::from_flat(config, flat).expect("sizes match")
}

fn receptive() -> Outcome {
    let probe = |h: usize, w: usize| {
        Tensor::from_vec(
            Shape::new(1, 4, h, w),
            fixture(9, 4 * h * w)
                .into_iter()
                .map(|v| 0.5 + 0.4 * v)
                .collect(),
        )
        .unwrap()
    };
    let cfg = toy_stack(1);
    let w = toy_weights(&cfg, 1);
    let m = receptive_field(&probe(11, 11), &w, &cfg, (4, 6), 1.0).map_err(e2s)?;
    let expected: Vec<bool> = (0..11 * 11usize)
        .map(|i| (i % 11).abs_diff(4) <= 1 && (i / 11).abs_diff(6) <= 1)
        .collect();
    let toy = m.mask == expected;
    let mut invariant = true;
    let mut contained = true;
    for k in 1..=5 {
        let cfg = toy_stack(k);
        let w = toy_weights(&cfg, 20 + k as u64);
        let x = probe(20, 20);
        let base: RfMask = receptive_field(&x, &w, &cfg, (9, 10), 1.0).map_err(e2s)?;
        for s in [1e-6, 0.5, 3.0, 1e6] {
            invariant &= receptive_field(&x, &w, &cfg, (9, 10), s).map_err(e2s)?.mask == base.mask;
        }
        for y in 0..20 {
            for xx in 0..20 {
                if base.contains(xx, y) {
                    contained &= xx.abs_diff(9) <= k && y.abs_diff(10) <= k;
                }
            }
        }
    }
    verdict(
        toy && invariant && contained,
        format!("3x3 toy mask exact {toy}, cotangent-scale invariant {invariant}, depth-k (k = 1..5) containment {contained}"),
    )
}

fn train_config(operators: Vec<OperatorSpec>) -> TrainConfig {
    let mut cfg = TrainConfig {
        operators,
        iterations: 20_000,
        width: 24,
        patch_size: Some(32),
        batch_size: 1,
        optimizer: OptimizerConfig::Adam {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        seed: 1,
        precision: Precision::Single,
        synthetic_images: 64,
        synthetic_size: 64,
        log_interval: 0,
        ..TrainConfig::default()
    };
    cfg.assign_id_codes();
    cfg
}

fn train_model(label: &str, cfg: &TrainConfig, dir: &Path) -> Result<(Model, PathBuf), String> {
    let t = Instant::now();
    let path = dir.join(format!("{label}.ckpt"));
    let cfg = TrainConfig {
        checkpoint_path: Some(path.clone()),
        ..cfg.clone()
    };
    let ck = train(&cfg).map_err(e2s)?;
    eprintln!(
        "      trained {label} ({} iterations) in {:.0}s",
        cfg.iterations,
        t.elapsed().as_secs_f64()
    );
    Ok((Model::from_checkpoint(&ck).map_err(e2s)?, path))
}

fn mean_psnr(rows: &[EvalRow]) -> f64 {
    rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64
}

fn fmt_rows(rows: &[EvalRow]) -> String {
    rows.iter()
        .map(|r| format!("{:.2}", r.psnr))
        .collect::<Vec<_>>()
        .join("/")
}

struct Trained {
    gaussian: Model,
    gaussian_path: PathBuf,
}

const SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];

fn single_vs_numerous(
    dir: &Path,
    test: &[Image],
    out: &Path,
    keep: &mut Option<Trained>,
) -> Outcome {
    let gauss = || OperatorSpec::by_name("gaussian").unwrap();
    let mut single = Vec::new();
    for s in SIGMAS {
        let (m, _) = train_model(
            &format!("gaussian_{s}"),
            &train_config(vec![gauss().with_range(s, s)]),
            dir,
        )?;
        single.extend(evaluate(&m, "gaussian", &[vec![s]], test).map_err(e2s)?);
    }
    let (numerous, path) = train_model("gaussian", &train_config(vec![gauss()]), dir)?;
    let gammas: Vec<Vec<f64>> = SIGMAS.iter().map(|&s| vec![s]).collect();
    let rows = compare(
        &single,
        &evaluate(&numerous, "gaussian", &gammas, test).map_err(e2s)?,
    )
    .map_err(e2s)?;
    write_comparison_csv(
        std::fs::File::create(out.join("single_vs_numerous.csv")).map_err(e2s)?,
        &rows,
    )
    .map_err(e2s)?;
    *keep = Some(Trained {
        gaussian: numerous,
        gaussian_path: path,
    });
    for r in &rows {
        println!(
            "      sigma {:.1}: single {:.2} dB, numerous {:.2} dB, diff {:.2}",
            r.gamma[0], r.psnr_single, r.psnr_numerous, r.diff
        );
    }
    let ok = rows
        .iter()
        .all(|r| r.diff <= 2.0 && r.psnr_single > 30.0 && r.psnr_numerous > 30.0);
    let worst = rows.iter().map(|r| r.diff).fold(0.0, f64::max);
    let low = rows
        .iter()
        .map(|r| r.psnr_single.min(r.psnr_numerous))
        .fold(f64::INFINITY, f64::min);
    verdict(
        ok,
        format!("largest diff {worst:.2} dB (limit 2.0), lowest PSNR {low:.2} dB (must exceed 30)"),
    )
}

fn joint(
    dir: &Path,
    test: &[Image],
    gaussian: Option<&Model>,
    joint_out: &mut Option<Model>,
) -> Outcome {
    let gauss_gammas: Vec<Vec<f64>> = SIGMAS.iter().map(|&s| vec![s]).collect();
    let noise_gammas: Vec<Vec<f64>> = [15.0, 25.0, 50.0]
        .iter()
        .map(|&s| vec![s / 255.0])
        .collect();
    let per_gauss = match gaussian {
        Some(m) => evaluate(m, "gaussian", &gauss_gammas, test).map_err(e2s)?,
        None => {
            let (m, _) = train_model(
                "gaussian",
                &train_config(vec![OperatorSpec::by_name("gaussian").unwrap()]),
                dir,
            )?;
            evaluate(&m, "gaussian", &gauss_gammas, test).map_err(e2s)?
        }
    };
    let (noise, _) = train_model(
        "noise",
        &train_config(vec![OperatorSpec::by_name("noise").unwrap()]),
        dir,
    )?;
    let per_noise = evaluate(&noise, "noise", &noise_gammas, test).map_err(e2s)?;
    let ops = vec![
        OperatorSpec::by_name("gaussian").unwrap(),
        OperatorSpec::by_name("noise").unwrap(),
    ];
    let (model, _) = train_model("joint", &train_config(ops), dir)?;
    if model.hyper().m != 2 {
        return Err(format!("joint model has a {}-dim gamma", model.hyper().m));
    }
    let j_gauss = evaluate(&model, "gaussian", &gauss_gammas, test).map_err(e2s)?;
    let j_noise = evaluate(&model, "noise", &noise_gammas, test).map_err(e2s)?;
    let per = (mean_psnr(&per_gauss) + mean_psnr(&per_noise)) / 2.0;
    let joint = (mean_psnr(&j_gauss) + mean_psnr(&j_noise)) / 2.0;
    println!(
        "      per-operator gaussian {} noise {} | joint gaussian {} noise {}",
        fmt_rows(&per_gauss),
        fmt_rows(&per_noise),
        fmt_rows(&j_gauss),
        fmt_rows(&j_noise)
    );
    *joint_out = Some(model);
    verdict(
        per - joint <= 2.5,
        format!(
            "average PSNR per-operator {per:.2} dB, joint {joint:.2} dB, loss {:.2} dB (limit 2.5)",
            per - joint
        ),
    )
}

fn paramnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_paramnet"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn determinism(dir: &Path, gaussian: Option<&Trained>) -> Outcome {
    let cfg = TrainConfig {
        operators: vec![OperatorSpec::by_name("gaussian").unwrap()],
        iterations: 30,
        width: 6,
        patch_size: Some(16),
        synthetic_images: 4,
        synthetic_size: 24,
        precision: Precision::Double,
        seed: 11,
        log_interval: 0,
        ..TrainConfig::default()
    };
    let a = train(&cfg).map_err(e2s)?.to_bytes().map_err(e2s)?;
    let b = train(&cfg).map_err(e2s)?.to_bytes().map_err(e2s)?;
    let ckpt_same = a == b;
    let path = match gaussian {
        Some(t) => t.gaussian_path.clone(),
        None => {
            let p = dir.join("det.ckpt");
            std::fs::write(&p, &a).map_err(e2s)?;
            p
        }
    };
    let img = dir.join("det_in.png");
    std::fs::write(
        &img,
        encode_png(&Corpus::synthetic(1, 48, 5).map_err(e2s)?.images[0]).map_err(e2s)?,
    )
    .map_err(e2s)?;
    let mut outs = Vec::new();
    for k in 0..3 {
        let out = dir.join(format!("det_out_{k}.png"));
        let o = paramnet(&[
            "infer",
            "--checkpoint",
            path.to_str().unwrap(),
            "--image",
            img.to_str().unwrap(),
            "--param",
            "1.3",
            "--out",
            out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return Err(format!(
                "infer failed: {}",
                String::from_utf8_lossy(&o.stderr)
            ));
        }
        outs.push(std::fs::read(&out).map_err(e2s)?);
    }
    let png_same = outs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        ckpt_same && png_same,
        format!("double-precision checkpoints ({} bytes) identical {ckpt_same}, 3 CLI infer PNGs identical {png_same}", a.len()),
    )
}

const BOUNDARY: &str = "acceptance-boundary";

fn multipart(fields: &[(&str, &[u8])]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, data) in fields {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes(),
        );
        if matches!(*name, "image" | "reference") {
            body.extend_from_slice(b"; filename=\"x.png\"\r\nContent-Type: image/png");
        }
        body.extend_from_slice(b"\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/infer")
        .header(
            "content-type",
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(body))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    (
        status,
        headers,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn service(dir: &Path, trained: Option<&Trained>) -> Outcome {
    let trained = trained.ok_or("no trained gaussian checkpoint")?;
    let rt = tokio::runtime::Runtime::new().map_err(e2s)?;
    let scene = Corpus::synthetic(1, 40, 6).map_err(e2s)?.images.remove(0);
    let mut state = AppState::new(
        Model::load(&trained.gaussian_path).map_err(e2s)?,
        scene.clone(),
    );
    state.max_side = 128;
    let app = router(state);
    let scene_png = encode_png(&scene).map_err(e2s)?;
    let big_png = encode_png(&Image::constant(3, 16, 200, 0.5).unwrap()).map_err(e2s)?;
    let flat = Image::constant(3, 32, 32, 0.42).unwrap();
    let flat_png = encode_png(&flat).map_err(e2s)?;
    let mut notes = Vec::new();
    let mut fail = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if ok {
            notes.push(what.to_string());
        } else {
            fail.push(what.to_string());
        }
    };
    let http_png = rt.block_on(async {
        let (s, _, b) = call(&app, get("/health")).await;
        check(s == StatusCode::OK && b == b"ok", "/health");
        let (s, _, b) = call(&app, get("/operators")).await;
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap_or_default();
        check(
            s == StatusCode::OK
                && v == serde_json::json!([{ "name": "gaussian", "bounds": [{ "lower": 0.5, "upper": 2.0 }], "sampling": "linear", "param_dim": 1 }]),
            "/operators",
        );
        let (s, h, out) = call(&app, multipart(&[("image", &scene_png), ("operator", b"gaussian"), ("params", b"1.3"), ("reference", &scene_png)])).await;
        let decoded = decode_png(&out).ok();
        check(
            s == StatusCode::OK
                && h.get("content-type").map(|v| v == "image/png").unwrap_or(false)
                && decoded.map(|d| (d.width(), d.height()) == (40, 40)).unwrap_or(false)
                && h.contains_key("x-psnr")
                && h.contains_key("x-ssim"),
            "/infer PNG with scores",
        );
        let (s, _, b) = call(&app, multipart(&[("image", &scene_png), ("params", b"0.2")])).await;
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap_or_default();
        check(
            s == StatusCode::BAD_REQUEST && v["field"] == "gaussian" && v["bound"] == 0.5 && v["given"] == 0.2,
            "/infer out-of-bounds 400 names field and bound",
        );
        let (s, _, _) = call(&app, multipart(&[("image", &big_png), ("params", b"1")])).await;
        check(s == StatusCode::PAYLOAD_TOO_LARGE, "/infer 413");
        let (s, _, _) = call(&app, multipart(&[("image", b"GIF89a not a png"), ("params", b"1")])).await;
        check(s == StatusCode::UNSUPPORTED_MEDIA_TYPE, "/infer 415");
        let (s, _, b) = call(&app, get("/rf?x=20&y=12&gamma=1.0")).await;
        let (s2, _, b2) = call(&app, get("/rf?x=20&y=12&gamma=1.0")).await;
        check(
            s == StatusCode::OK && s2 == StatusCode::OK && b == b2 && decode_png(&b).map(|d| d.width() == 40).unwrap_or(false),
            "/rf overlay",
        );
        let (s, _, _) = call(&app, get("/rf?x=20&y=12&gamma=9")).await;
        let (s2, _, _) = call(&app, get("/rf?x=400&y=12&gamma=1")).await;
        check(s == StatusCode::BAD_REQUEST && s2 == StatusCode::BAD_REQUEST, "/rf rejects bad gamma and point");
        let (s, _, fixed) = call(&app, multipart(&[("image", &flat_png), ("params", b"0.5")])).await;
        let max_step = decode_png(&fixed)
            .map(|d| d.quantized().to_bytes().iter().zip(flat.to_bytes()).map(|(a, b)| a.abs_diff(b)).max().unwrap_or(255))
            .unwrap_or(255);
        println!("      constant image at the lower bound: largest 8-bit deviation {max_step}");
        check(s == StatusCode::OK && max_step <= 1, "constant-image fixed point at the lower bound");
        out
    });
    let img = dir.join("svc_in.png");
    let out = dir.join("svc_out.png");
    std::fs::write(&img, &scene_png).map_err(e2s)?;
    let o = paramnet(&[
        "infer",
        "--checkpoint",
        trained.gaussian_path.to_str().unwrap(),
        "--image",
        img.to_str().unwrap(),
        "--param",
        "1.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    check(
        o.status.success() && std::fs::read(&out).map(|b| b == http_png).unwrap_or(false),
        "CLI and HTTP infer byte-identical",
    );
    let o = paramnet(&[
        "infer",
        "--checkpoint",
        trained.gaussian_path.to_str().unwrap(),
        "--image",
        img.to_str().unwrap(),
        "--param",
        "0.2",
    ]);
    check(o.status.code() == Some(2), "CLI out-of-bounds exits 2");
    if fail.is_empty() {
        Ok(notes.join(", "))
    } else {
        Err(format!("failed: {}", fail.join(", ")))
    }
}

fn rf_table(model: &Model, test: &[Image]) {
    let img = &test[0];
    let points = [(8, 8), (32, 32), (56, 40)];
    let gammas: Vec<Vec<f64>> = SIGMAS.iter().map(|&s| vec![s]).collect();
    match rf_area_report(model, "gaussian", img, &points, &gammas) {
        Ok(rows) => {
            for r in rows {
                println!(
                    "      rf area at ({}, {}) sigma {:.1}: {}",
                    r.point.0, r.point.1, r.gamma[0], r.area
                );
            }
        }
        Err(e) => println!("      rf area table unavailable: {e}"),
    }
}

fn main() {
    let quick_filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if quick_filter.is_some() {
        println!("acceptance: skipped, the run does not take test filters");
        return;
    }
    let work = tempfile::tempdir().expect("temp dir");
    let out = PathBuf::from(option_env!("CARGO_TARGET_TMPDIR").unwrap_or("."));
    let test = Corpus::synthetic(16, 64, 999).expect("test set").images;
    let mut r = Report { failed: 0 };
    r.run("gradient correctness", gradients);
    r.run("edge map", edges);
    r.run("log sampling", sampling);
    r.run("L0 oracle", l0);
    r.run("receptive-field procedure", receptive);
    let mut trained = None;
    r.run("single vs numerous (Gaussian smoothing)", || {
        single_vs_numerous(work.path(), &test, &out, &mut trained)
    });
    let mut joint_model = None;
    r.run("joint Gaussian + denoising", || {
        joint(
            work.path(),
            &test,
            trained.as_ref().map(|t| &t.gaussian),
            &mut joint_model,
        )
    });
    r.run("weight algebra", || algebra(joint_model.as_ref()));
    r.run("determinism", || determinism(work.path(), trained.as_ref()));
    r.run("service contract", || {
        service(work.path(), trained.as_ref())
    });
    if let Some(t) = &trained {
        rf_table(&t.gaussian, &test);
    }
    println!("acceptance: {} failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
