//! Command-line entry points.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paramnet_core::analysis::{effective_receptive_field, write_rf_report_csv, RfAreaRow};
use paramnet_core::hypernet::{export_weight_trajectory, pca_project, write_trajectory_csv};
use paramnet_core::image::{self, decode_png, encode_png, Image};
use paramnet_core::model::Model;
use paramnet_core::operators::{OperatorSpec, Sampling};
use paramnet_core::training::{
    compare, evaluate, train, write_comparison_csv, write_eval_csv, Corpus, EvalRow, TrainConfig,
};

use crate::server::{self, AppState, DEFAULT_MAX_SIDE};
use crate::service::{infer_png, parse_gamma_list, parse_params, pick_operator, ServiceError};

#[derive(Debug, Parser)]
#[command(
    name = "paramnet",
    version,
    about = "Train and run parameter-conditioned image operator networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (overrides `checkpoint` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint over a list of parameter values.
    Eval(EvalArgs),
    /// Apply a trained operator to one image.
    Infer(InferArgs),
    /// Effective receptive field of one output pixel.
    AnalyzeRf(RfArgs),
    /// Export generated weights of one layer over a parameter grid.
    ExportTrajectory(TrajectoryArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw parameter values, e.g. `0.5,1,2` (components of one vector joined by `:`).
    #[arg(long)]
    pub gammas: String,
    /// Directory of PNG/PPM test images.
    #[arg(long)]
    pub testdir: PathBuf,
    #[arg(long)]
    pub operator: Option<String>,
    /// Single-parameter checkpoints; each γ is scored by the one whose range contains it,
    /// producing the single-versus-numerous table.
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub operator: Option<String>,
    /// Raw parameter value(s), comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub param: String,
    #[arg(long, default_value = "out.png")]
    pub out: PathBuf,
    /// Reference image for PSNR/SSIM.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RfArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Query pixel as `x,y`.
    #[arg(long)]
    pub point: String,
    #[arg(long)]
    pub gammas: String,
    #[arg(long)]
    pub operator: Option<String>,
    /// Where overlays (`rf_<k>.png`), masks (`rf_<k>.csv`) and `areas.csv` go.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub operator: Option<String>,
    /// Grid points per parameter dimension.
    #[arg(long)]
    pub grid: usize,
    /// Zero-based base-network layer.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long, default_value = "trajectory.csv")]
    pub out: PathBuf,
    /// Also write a 2-D PCA projection here.
    #[arg(long)]
    pub pca: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Largest accepted image side.
    #[arg(long, default_value_t = DEFAULT_MAX_SIDE)]
    pub max_side: usize,
    /// Image probed by `GET /rf` (default: a built-in synthetic scene).
    #[arg(long)]
    pub rf_image: Option<PathBuf>,
}

/// A failed command: exit status and a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let code = match e {
            ServiceError::Internal(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<paramnet_core::Error> for Failure {
    fn from(e: paramnet_core::Error) -> Self {
        ServiceError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| invalid(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::load(path)
        .map_err(|e| invalid(format!("cannot load checkpoint {}: {e}", path.display())))
}

fn load_image(path: &Path) -> Result<Image, Failure> {
    let bytes = read_input(path, "image")?;
    let img = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
    {
        image::decode_ppm(&bytes)
    } else {
        decode_png(&bytes)
    };
    img.map_err(|e| invalid(format!("cannot decode {}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, out: path } => {
            let mut cfg = TrainConfig::from_file(&config).map_err(|e| invalid(e.to_string()))?;
            if path.is_some() {
                cfg.checkpoint_path = path;
            }
            let ck = train(&cfg)?;
            writeln!(
                out,
                "trained {} iterations, final loss {:.6e}",
                ck.iteration,
                ck.metadata.final_loss.unwrap_or(f64::NAN)
            )?;
            if let Some(p) = &cfg.checkpoint_path {
                writeln!(out, "checkpoint written to {}", p.display())?;
            }
            Ok(())
        }
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => {
            let model = load_model(&a.checkpoint)?;
            let op = pick_operator(&model, a.operator.as_deref())?.name.clone();
            let params = parse_params(&a.param)?;
            let img = load_image(&a.image)?;
            let reference = a.reference.as_deref().map(load_image).transpose()?;
            let (png, scores) = infer_png(&model, &op, &params, &img, reference.as_ref())?;
            std::fs::write(&a.out, png).map_err(|e| Failure {
                code: 1,
                message: format!("cannot write {}: {e}", a.out.display()),
            })?;
            writeln!(out, "wrote {}", a.out.display())?;
            if let Some(s) = scores {
                writeln!(out, "PSNR {:.4} dB SSIM {:.6}", s.psnr, s.ssim)?;
            }
            Ok(())
        }
        Command::AnalyzeRf(a) => analyze_rf(a, out),
        Command::ExportTrajectory(a) => export_trajectory(a, out),
        Command::Serve(a) => {
            let model = load_model(&a.checkpoint)?;
            let rf_image = match &a.rf_image {
                Some(p) => load_image(p)?,
                None => Corpus::synthetic(1, 64, 7)?.images.remove(0),
            };
            let addr: SocketAddr = format!("{}:{}", a.host, a.port)
                .parse()
                .map_err(|e| invalid(format!("bad address: {e}")))?;
            let mut state = AppState::new(model, rf_image);
            state.max_side = a.max_side;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(state, addr))?;
            Ok(())
        }
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(&a.checkpoint)?;
    let op = pick_operator(&model, a.operator.as_deref())?.clone();
    let gammas = parse_gamma_list(&a.gammas)?;
    if gammas.is_empty() {
        return Err(invalid("no gamma values given"));
    }
    let corpus = Corpus::from_dir(&a.testdir)
        .map_err(|e| invalid(format!("cannot read test directory: {e}")))?;
    if corpus.is_empty() {
        return Err(invalid(format!(
            "no PNG/PPM images in {}",
            a.testdir.display()
        )));
    }
    let numerous = evaluate(&model, &op.name, &gammas, &corpus.images)?;
    let mut buf: Vec<u8> = Vec::new();
    if a.baseline.is_empty() {
        write_eval_csv(&mut buf, &numerous)?;
    } else {
        let baselines = a
            .baseline
            .iter()
            .map(|p| load_model(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut single: Vec<EvalRow> = Vec::new();
        for g in &gammas {
            let m = baselines
                .iter()
                .find(|m| {
                    m.operator(&op.name)
                        .is_ok_and(|s| s.check_params(g).is_ok())
                })
                .ok_or_else(|| {
                    invalid(format!("no baseline checkpoint covers {} = {g:?}", op.name))
                })?;
            single.extend(evaluate(
                m,
                &op.name,
                std::slice::from_ref(g),
                &corpus.images,
            )?);
        }
        write_comparison_csv(&mut buf, &compare(&single, &numerous)?)?;
    }
    match &a.out {
        Some(p) => writer(p)?.write_all(&buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn parse_point(text: &str) -> Result<(usize, usize), Failure> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| invalid(format!("point `{text}` must be `x,y`")))?;
    let p = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("point `{text}` must be `x,y`")))
    };
    Ok((p(x)?, p(y)?))
}

fn analyze_rf(a: RfArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(&a.checkpoint)?;
    let op = pick_operator(&model, a.operator.as_deref())?.clone();
    let img = load_image(&a.image)?;
    let point = parse_point(&a.point)?;
    if point.0 >= img.width() || point.1 >= img.height() {
        return Err(invalid(format!(
            "point ({}, {}) outside {}x{} image",
            point.0,
            point.1,
            img.width(),
            img.height()
        )));
    }
    let gammas = parse_gamma_list(&a.gammas)?;
    for g in &gammas {
        op.check_params(g)?;
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let mut rows = Vec::new();
    for (k, g) in gammas.iter().enumerate() {
        let mask = effective_receptive_field(&model, &op.name, g, &img, point)?;
        if let Some(w) = &mask.warning {
            writeln!(out, "warning: {w}")?;
        }
        std::fs::write(
            a.out_dir.join(format!("rf_{k}.png")),
            encode_png(&mask.overlay(&img)?)?,
        )?;
        mask.write_csv(writer(&a.out_dir.join(format!("rf_{k}.csv")))?)?;
        writeln!(out, "gamma {g:?}: area {}", mask.area())?;
        rows.push(RfAreaRow {
            point,
            gamma: g.clone(),
            area: mask.area(),
        });
    }
    write_rf_report_csv(writer(&a.out_dir.join("areas.csv"))?, &rows)?;
    Ok(())
}

/// `n` raw values spanning one bound, log spaced for log-sampled operators.
fn axis(spec: &OperatorSpec, k: usize, n: usize) -> Vec<f64> {
    let b = spec.bounds[k];
    (0..n)
        .map(|i| {
            let t = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            if t == 0.0 || t == 1.0 {
                return if t == 0.0 { b.lower } else { b.upper };
            }
            let v = match spec.sampling {
                Sampling::Log => (b.lower.ln() + t * (b.upper.ln() - b.lower.ln())).exp(),
                Sampling::Linear => b.lower + t * (b.upper - b.lower),
            };
            v.clamp(b.lower, b.upper)
        })
        .collect()
}

fn export_trajectory(a: TrajectoryArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.grid == 0 {
        return Err(invalid("grid must be at least 1"));
    }
    let model = load_model(&a.checkpoint)?;
    let op = pick_operator(&model, a.operator.as_deref())?.clone();
    let mut raws: Vec<Vec<f64>> = vec![Vec::new()];
    for k in 0..op.param_dim() {
        let values = axis(&op, k, a.grid);
        raws = raws
            .into_iter()
            .flat_map(|r| {
                values.iter().map(move |&v| {
                    let mut r = r.clone();
                    r.push(v);
                    r
                })
            })
            .collect();
    }
    let grid: Vec<Vec<f32>> = raws
        .iter()
        .map(|r| {
            Ok(model
                .gamma(&op.name, r)?
                .into_iter()
                .map(|g| g as f32)
                .collect())
        })
        .collect::<Result<_, paramnet_core::Error>>()?;
    let rows = export_weight_trajectory(model.hyper(), &grid, a.layer)?;
    write_trajectory_csv(writer(&a.out)?, &grid, &rows)?;
    writeln!(
        out,
        "wrote {} rows of {} weights to {}",
        rows.len(),
        rows.first().map_or(0, Vec::len),
        a.out.display()
    )?;
    if let Some(p) = &a.pca {
        let proj = pca_project(&rows, 2)?;
        let mut w = writer(p)?;
        writeln!(w, "pc1,pc2")?;
        for c in &proj.coords {
            writeln!(
                w,
                "{},{}",
                c.first().copied().unwrap_or(0.0),
                c.get(1).copied().unwrap_or(0.0)
            )?;
        }
        writeln!(out, "explained variance {:?}", proj.explained)?;
    }
    Ok(())
}
