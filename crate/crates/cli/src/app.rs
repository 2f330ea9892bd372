use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use far_core::evalkit::{ced, pt2pt_error, ErrorIndices};
use far_core::shapewarp::{
    build_shape_model, modes_for_variance, PiecewiseAffine, Shape, ShapeModel, ShapeModelFile,
    Texture,
};
use far_core::solver::{fit, frontalize, SolverConfig};
use far_core::subspace::{build_basis, load_basis, save_basis, write_atomic, AppearanceBasis};
use far_core::synth::{gen_instance, scene, InstanceParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_frame, RunConfig};
use crate::pgm::{read_image, write_image};
use crate::pts::{parse_pts, write_pts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "far",
    version,
    about = "Joint face alignment and low-rank frontal reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the shape model and appearance basis from images and landmarks.
    BuildBasis(BuildBasisArgs),
    /// Fit landmarks to an image (or every image in a directory).
    Fit(FitArgs),
    /// Fit, then write the low-rank frontal texture as a PGM.
    Frontalize(FitArgs),
    /// Write a synthetic instance with its ground truth, basis and model.
    Synth(SynthArgs),
    /// Point-to-point landmark error and its cumulative distribution.
    Eval(EvalArgs),
}

/// Settings overridable on every subcommand; unset flags fall back to the
/// config file, then to the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML file with `[solver]`, `frame`, `k` and `seed` entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    eps3: Option<f64>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Number of principal appearance components.
    #[arg(long)]
    k: Option<usize>,
    /// Reference frame as WxH.
    #[arg(long, value_parser = parse_frame)]
    frame: Option<far_core::shapewarp::Frame>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct BuildBasisArgs {
    /// Directory of training images (.pgm or .ppm).
    #[arg(long)]
    images: PathBuf,
    /// Directory of `<image stem>.pts` landmark files.
    #[arg(long)]
    landmarks: PathBuf,
    /// Output basis file; the shape model goes next to it as `<stem>.model.json`.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of shape variance kept by the deformation modes.
    #[arg(long, default_value_t = 0.95)]
    shape_variance: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct FitArgs {
    /// Input image, or a directory of images for batch mode.
    #[arg(long)]
    image: PathBuf,
    /// Initial landmarks, or a directory of `<image stem>.pts` files.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// Shape model JSON; defaults to `<basis stem>.model.json`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output file, or a directory in batch mode.
    #[arg(long)]
    out: PathBuf,
    /// Inner-loop trace CSV, or a directory in batch mode.
    #[arg(long)]
    diag: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    translation: f64,
    #[arg(long, default_value_t = 0.0)]
    rotation: f64,
    /// Scale change in percent.
    #[arg(long, default_value_t = 0.0)]
    scale: f64,
    /// Fraction of pixels replaced by spikes.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 0.5)]
    spike_mag: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct EvalArgs {
    /// Predicted landmarks: a .pts file or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: a .pts or gt.json file, or a directory of `<stem>.pts`
    /// / `<stem>.json` files.
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated CED thresholds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.1"
    )]
    thresholds: Vec<f64>,
    /// CED output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-file error CSV.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Failure kinds mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Compute(e)
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    let s = &mut cfg.solver;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut s.lambda, common.lambda);
    set(&mut s.rho, common.rho);
    set(&mut s.mu0, common.mu0);
    set(&mut s.eps1, common.eps1);
    set(&mut s.eps2, common.eps2);
    set(&mut s.eps3, common.eps3);
    if let Some(v) = common.max_inner {
        s.max_inner = v;
    }
    if let Some(v) = common.max_outer {
        s.max_outer = v;
    }
    if let Some(v) = common.k {
        cfg.k = v;
    }
    if let Some(v) = common.frame {
        cfg.frame = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::BuildBasis(a) => build_basis_cmd(a),
        Command::Fit(a) => fit_cmd(a, Mode::Fit),
        Command::Frontalize(a) => fit_cmd(a, Mode::Frontalize),
        Command::Synth(a) => synth_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

/// Default location of the shape model that accompanies a basis file.
pub fn model_path_for(basis: &Path) -> PathBuf {
    basis.with_extension("model.json")
}

pub fn save_model(model: &ShapeModel, path: &Path) -> anyhow::Result<()> {
    let json = serde_json::to_vec_pretty(&ShapeModelFile::from(model))?;
    write_atomic(path, &json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> anyhow::Result<ShapeModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ShapeModelFile =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(ShapeModel::try_from(file)?)
}

pub fn read_pts(path: &Path) -> anyhow::Result<Shape> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pts(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn save_pts(shape: &Shape, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, &write_pts(shape))?;
    Ok(())
}

/// Ground-truth sidecar written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gt_shape: Vec<[f64; 2]>,
    pub gt_params: Vec<f64>,
    pub gt_error_support: Vec<usize>,
    pub seed: u64,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm")
    )
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn sorted_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && keep(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn build_basis_cmd(a: BuildBasisArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    if !(a.shape_variance > 0.0 && a.shape_variance <= 1.0) {
        return Err(Failure::Usage(format!(
            "--shape-variance must lie in (0, 1], got {}",
            a.shape_variance
        )));
    }
    let mut samples: Vec<(Texture, Shape)> = Vec::new();
    for image in sorted_files(&a.images, is_image)? {
        let pts = a.landmarks.join(format!("{}.pts", stem(&image)));
        if !pts.exists() {
            eprintln!("skipping {}: no {}", image.display(), pts.display());
            continue;
        }
        let tex = read_image(&image).with_context(|| format!("reading {}", image.display()))?;
        samples.push((tex, read_pts(&pts)?));
    }
    if samples.len() < 2 {
        return Err(Failure::Compute(anyhow!(
            "need at least 2 image/landmark pairs, found {}",
            samples.len()
        )));
    }
    let shapes: Vec<Shape> = samples.iter().map(|(_, s)| s.clone()).collect();
    let n_s = modes_for_variance(&shapes, a.shape_variance).map_err(anyhow::Error::from)?;
    let model = build_shape_model(&shapes, n_s, cfg.frame).map_err(anyhow::Error::from)?;
    let pa = PiecewiseAffine::from_model(model).map_err(anyhow::Error::from)?;
    let built = build_basis(&samples, &pa, cfg.k).map_err(anyhow::Error::from)?;
    if built.truncated {
        eprintln!(
            "warning: k reduced from {} to {} (not enough independent samples)",
            cfg.k, built.components
        );
    }
    save_basis(&built.basis, &a.out).map_err(anyhow::Error::from)?;
    save_model(pa.model(), &model_path_for(&a.out))?;
    println!(
        "basis: {} columns over {} pixels; shape model: {} deformation modes",
        built.basis.k(),
        built.basis.mask().iter().filter(|m| **m).count(),
        pa.model().n_deformation()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Fit,
    Frontalize,
}

struct Job {
    name: String,
    image: PathBuf,
    init: PathBuf,
    out: PathBuf,
    diag: Option<PathBuf>,
}

fn run_job(
    job: &Job,
    mode: Mode,
    pa: &PiecewiseAffine,
    basis: &AppearanceBasis,
    cfg: &SolverConfig,
) -> anyhow::Result<String> {
    let image =
        read_image(&job.image).with_context(|| format!("reading {}", job.image.display()))?;
    let init = read_pts(&job.init)?;
    let (trace, summary) = match mode {
        Mode::Fit => {
            let r = fit(&image, &init, pa, basis, cfg)?;
            save_pts(&r.shape, &job.out)?;
            let s = format!(
                "{}: {} outer iterations, converged {}",
                job.name,
                r.outer.len(),
                r.converged_outer
            );
            (r.trace, s)
        }
        Mode::Frontalize => {
            let r = frontalize(&image, &init, pa, basis, cfg)?;
            write_image(&r.frontal, &job.out)?;
            let (x, y, w, h) = r.crop;
            let s = format!("{}: frontal {w}x{h} cropped at ({x}, {y})", job.name);
            (r.fit.trace, s)
        }
    };
    if let Some(diag) = &job.diag {
        write_atomic(diag, trace.to_csv().as_bytes())?;
    }
    Ok(summary)
}

fn fit_cmd(a: FitArgs, mode: Mode) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    let basis =
        load_basis(&a.basis).with_context(|| format!("loading basis {}", a.basis.display()))?;
    let model_path = a.model.clone().unwrap_or_else(|| model_path_for(&a.basis));
    let pa = PiecewiseAffine::from_model(load_model(&model_path)?).map_err(anyhow::Error::from)?;
    let out_ext = match mode {
        Mode::Fit => "pts",
        Mode::Frontalize => "pgm",
    };

    let jobs = if a.image.is_dir() {
        if !a.init.is_dir() {
            return Err(Failure::Usage(
                "--init must be a directory when --image is a directory".into(),
            ));
        }
        std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        if let Some(d) = &a.diag {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        sorted_files(&a.image, is_image)?
            .into_iter()
            .map(|image| {
                let name = stem(&image);
                Job {
                    init: a.init.join(format!("{name}.pts")),
                    out: a.out.join(format!("{name}.{out_ext}")),
                    diag: a.diag.as_ref().map(|d| d.join(format!("{name}.csv"))),
                    image,
                    name,
                }
            })
            .collect()
    } else {
        vec![Job {
            name: stem(&a.image),
            image: a.image.clone(),
            init: a.init.clone(),
            out: a.out.clone(),
            diag: a.diag.clone(),
        }]
    };
    if jobs.is_empty() {
        return Err(Failure::Compute(anyhow!(
            "no images found in {}",
            a.image.display()
        )));
    }

    let results: Vec<anyhow::Result<String>> = jobs
        .par_iter()
        .map(|job| run_job(job, mode, &pa, &basis, &cfg.solver))
        .collect();
    let mut failed = 0;
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(summary) => println!("{summary}"),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e:#}", job.name);
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Compute(anyhow!(
            "{failed} of {} inputs failed",
            jobs.len()
        )));
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    let params = InstanceParams {
        translation_px: a.translation,
        rotation_deg: a.rotation,
        scale_pct: a.scale,
        sparsity: a.sparsity,
        spike_mag: a.spike_mag,
    };
    if !(0.0..1.0).contains(&params.sparsity) || !(0.0..=0.5).contains(&params.spike_mag) {
        return Err(Failure::Usage(
            "--sparsity must lie in [0, 1) and --spike-mag in [0, 0.5]".into(),
        ));
    }
    // `k` counts principal components; the scene adds the mean direction.
    let sc = scene(cfg.seed, cfg.frame, cfg.k + 1).map_err(anyhow::Error::from)?;
    let inst = gen_instance(&sc, cfg.seed, &params).map_err(anyhow::Error::from)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    write_image(&inst.image, &a.out.join("image.pgm"))?;
    save_pts(sc.pa.model().mean(), &a.out.join("init.pts"))?;
    let gt = GroundTruth {
        gt_shape: inst.gt_shape.points.iter().map(|p| [p.x, p.y]).collect(),
        gt_params: inst.gt_params.0.iter().copied().collect(),
        gt_error_support: inst.gt_error_support.clone(),
        seed: cfg.seed,
    };
    let json = serde_json::to_vec_pretty(&gt).map_err(anyhow::Error::from)?;
    write_atomic(&a.out.join("gt.json"), &json).map_err(anyhow::Error::from)?;
    let basis_path = a.out.join("basis.farb");
    save_basis(&sc.basis, &basis_path).map_err(anyhow::Error::from)?;
    save_model(sc.pa.model(), &model_path_for(&basis_path))?;
    println!(
        "synthetic instance (seed {}) written to {}",
        cfg.seed,
        a.out.display()
    );
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> anyhow::Result<Shape> {
    if has_extension(path, "json") {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let gt: GroundTruth = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(Shape::from_xy(&gt.gt_shape)?)
    } else {
        read_pts(path)
    }
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    resolve(&a.common)?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        if !a.gt.is_dir() {
            return Err(Failure::Usage(
                "--gt must be a directory when --pred is a directory".into(),
            ));
        }
        sorted_files(&a.pred, |p| has_extension(p, "pts"))?
            .into_iter()
            .map(|pred| {
                let name = stem(&pred);
                let pts = a.gt.join(format!("{name}.pts"));
                let gt = if pts.exists() {
                    pts
                } else {
                    a.gt.join(format!("{name}.json"))
                };
                (name, pred, gt)
            })
            .collect()
    } else {
        vec![(stem(&a.pred), a.pred.clone(), a.gt.clone())]
    };
    if pairs.is_empty() {
        return Err(Failure::Compute(anyhow!(
            "no .pts files in {}",
            a.pred.display()
        )));
    }

    let idx = ErrorIndices::default();
    let mut rows = String::from("name,pt2pt,mean_px\n");
    let mut errors = Vec::with_capacity(pairs.len());
    let mut px_total = 0.0;
    for (name, pred, gt) in &pairs {
        let p = read_pts(pred)?;
        let g = read_ground_truth(gt)?;
        let e = pt2pt_error(&p, &g, &idx).map_err(|e| anyhow!("{name}: {e}"))?;
        let px = p.mean_distance(&g);
        rows.push_str(&format!("{name},{e},{px}\n"));
        errors.push(e);
        px_total += px;
    }
    let curve = ced(&errors, &a.thresholds).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(path) = &a.out {
        write_atomic(path, curve.to_csv().as_bytes()).map_err(anyhow::Error::from)?;
    }
    if let Some(path) = &a.errors {
        write_atomic(path, rows.as_bytes()).map_err(anyhow::Error::from)?;
    }
    let n = errors.len() as f64;
    println!(
        "{} cases: mean pt2pt {:.6}, mean landmark distance {:.6} px",
        errors.len(),
        errors.iter().sum::<f64>() / n,
        px_total / n
    );
    Ok(())
}
