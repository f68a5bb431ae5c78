use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mmfsk_core::config::{ExperimentConfig, Method, PriorMode};
use mmfsk_core::correlate::{correlate_grid, CandidateGrid, GridGeometry};
use mmfsk_core::experiment::{
    base_prior, evaluate_image, filter, frequency_union, ground_truth, plan, prior_for, reconstruct_job, run_sweep,
    simulate, subset_indices, Job, Record, Report, SweepReport,
};
use mmfsk_core::io::{read_fskt, read_pfm, write_fskc, write_fskt, write_pfm, write_ply};
use mmfsk_core::reconstruct::RadarImage;
use mmfsk_core::scene::make_scene;
use mmfsk_core::sim::NOISE_RNG;
use mmfsk_core::Error;

use crate::{Cli, Command, OUTPUT_DIR_ENV};

const SEED_DERIVATION: &str = "splitmix64 finalizer of seed ^ purpose·0x9E3779B97F4A7C15 (noise 1, prior error 2, camera 3)";

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    hash: String,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    config_sha256: &'a str,
    rng: &'a str,
    seed_derivation: &'a str,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn setup(cli: &Cli, command: &str) -> Result<Ctx> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().context("configuring the thread pool")?;
    }
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &overrides)?,
        None => ExperimentConfig::from_toml_str("", &overrides)?,
    };
    let out = cli
        .output
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("mmfsk-out"));
    // The snapshot describes the experiment, not where it was written.
    cfg.output_dir = None;
    let resolved = cfg.to_toml()?;
    let hash = format!("{:x}", Sha256::digest(resolved.as_bytes()));
    let ctx = Ctx { cfg, out, hash };
    write_text(&ctx.path("resolved.toml"), &resolved)?;
    let meta = Meta {
        tool: "mmfsk",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: ctx.cfg.seed,
        config_sha256: &ctx.hash,
        rng: NOISE_RNG,
        seed_derivation: SEED_DERIVATION,
    };
    write_text(&ctx.path(&format!("{command}.meta.toml")), &toml::to_string(&meta)?)?;
    info!("mmfsk {} {command}: seed {}, config sha256 {}", env!("CARGO_PKG_VERSION"), ctx.cfg.seed, ctx.hash);
    Ok(ctx)
}

pub(crate) fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => cmd_simulate(&setup(&cli, "simulate")?),
        Command::Prior => cmd_prior(&setup(&cli, "prior")?),
        Command::Reconstruct { methods, save_correlation } => {
            let mut ctx = setup(&cli, "reconstruct")?;
            if !methods.is_empty() {
                ctx.cfg.reconstruct.methods = methods.iter().map(|m| Method::parse(m)).collect::<mmfsk_core::Result<_>>()?;
                ctx.cfg.validate()?;
            }
            cmd_reconstruct(&ctx, *save_correlation)
        }
        Command::Eval => cmd_eval(&setup(&cli, "eval")?),
        Command::Sweep => cmd_sweep(&setup(&cli, "sweep")?),
        Command::Report => cmd_report(&cli),
    }
}

/// Depth values for a PFM: NaN marks invalid pixels.
fn masked(values: &[f64], valid: &[bool]) -> Vec<f64> {
    values.iter().zip(valid).map(|(v, ok)| if *ok { *v } else { f64::NAN }).collect()
}

/// A PFM on the radar grid (bottom row first, which is grid row 0). NaN
/// pixels come back invalid.
fn load_grid_pfm(path: &Path, geometry: &GridGeometry) -> Result<(Vec<f64>, Vec<bool>)> {
    let pfm = read_pfm(path)?;
    if pfm.width != geometry.width || pfm.height != geometry.height {
        return Err(Error::Dimension(format!(
            "{} is {}x{}, the radar grid is {}x{}",
            path.display(),
            pfm.width,
            pfm.height,
            geometry.width,
            geometry.height
        ))
        .into());
    }
    let depth: Vec<f64> = pfm.data.iter().map(|v| *v as f64).collect();
    let valid = depth.iter().map(|d| d.is_finite()).collect();
    Ok((depth, valid))
}

fn load_prior(path: &Path, geometry: &GridGeometry) -> Result<CandidateGrid> {
    let (depth, valid) = load_grid_pfm(path, geometry)?;
    let depth = depth.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect();
    Ok(CandidateGrid::new(*geometry, depth, valid)?)
}

fn file_prior(ctx: &Ctx) -> Result<Option<CandidateGrid>> {
    if ctx.cfg.prior.mode != PriorMode::File {
        return Ok(None);
    }
    let path = ctx.cfg.prior.path.as_ref().context("prior.path is not set")?;
    Ok(Some(load_prior(path, &ctx.cfg.grid())?))
}

#[derive(Serialize)]
struct FrequencyListing {
    simulated_hz: Vec<f64>,
    #[serde(rename = "config")]
    configs: Vec<ConfigListing>,
}

#[derive(Serialize)]
struct ConfigListing {
    method: String,
    name: String,
    label: String,
    frequencies_hz: Vec<f64>,
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let sim = simulate(cfg)?;
    let (t, r, f) = sim.baseband.dims();
    write_fskt(&ctx.path("baseband.fskt"), &sim.baseband)?;
    let listing = FrequencyListing {
        simulated_hz: sim.freqs.as_slice().to_vec(),
        configs: plan(cfg)?
            .into_iter()
            .map(|j| ConfigListing {
                method: j.method.as_str().into(),
                name: j.freqs.name.clone(),
                label: j.freqs.label.clone(),
                frequencies_hz: j.freqs.set.as_slice().to_vec(),
            })
            .collect(),
    };
    write_text(&ctx.path("frequencies.toml"), &toml::to_string(&listing)?)?;
    let targets: Vec<_> = sim.scene.targets.iter().map(|p| (p.position, p.reflectivity.norm())).collect();
    write_ply(&ctx.path("scene.ply"), &targets)?;
    let gt = ground_truth(cfg, &sim.scene)?;
    write_ply(&ctx.path("gt_points.ply"), &gt.points.iter().map(|p| (*p, 1.0)).collect::<Vec<_>>())?;
    let g = gt.map.geometry;
    write_pfm(&ctx.path("gt_depth.pfm"), g.width, g.height, &masked(&gt.map.depth, &gt.map.valid))?;
    info!("simulated {} targets, baseband {t}x{r}x{f} -> {}", sim.scene.len(), ctx.out.display());
    Ok(())
}

fn prior_file_name(job: &Job) -> String {
    format!("prior-{}.pfm", job.freqs.name)
}

fn cmd_prior(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = make_scene(&cfg.scene)?;
    let gt = ground_truth(cfg, &scene)?;
    let product = base_prior(cfg, &scene, &gt.map, file_prior(ctx)?)?;
    let g = product.base.geometry;
    write_pfm(&ctx.path("prior.pfm"), g.width, g.height, &masked(&product.base.prior_depth, &product.base.valid))?;
    if let Some(cam) = &product.camera {
        // Camera rows run downward; PFM stores the bottom row first.
        let flipped: Vec<f64> = (0..cam.height)
            .rev()
            .flat_map(|v| (0..cam.width).map(move |u| v * cam.width + u))
            .map(|i| if cam.valid[i] { cam.depth[i] } else { f64::NAN })
            .collect();
        write_pfm(&ctx.path("camera_depth.pfm"), cam.width, cam.height, &flipped)?;
    }
    let mut written = Vec::new();
    for job in plan(cfg)?.into_iter().filter(|j| j.method == Method::Mm2fsk) {
        let grid = prior_for(cfg, &product.base, &job.freqs.set)?;
        let name = prior_file_name(&job);
        write_pfm(&ctx.path(&name), g.width, g.height, &masked(&grid.prior_depth, &grid.valid))?;
        written.push(name);
    }
    info!("prior: {} of {} pixels valid; wrote prior.pfm {}", product.base.valid_count(), g.len(), written.join(" "));
    Ok(())
}

fn write_image(ctx: &Ctx, stem: &str, img: &RadarImage) -> Result<()> {
    let g = img.geometry;
    write_pfm(&ctx.path(&format!("{stem}_depth.pfm")), g.width, g.height, &masked(&img.depth, &img.valid))?;
    write_pfm(&ctx.path(&format!("{stem}_magnitude.pfm")), g.width, g.height, &img.magnitude)?;
    write_pfm(&ctx.path(&format!("{stem}_joint_magnitude.pfm")), g.width, g.height, &img.joint_magnitude)?;
    write_ply(&ctx.path(&format!("{stem}.ply")), &img.points())?;
    Ok(())
}

fn cmd_reconstruct(ctx: &Ctx, save_correlation: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let baseband = read_fskt(&ctx.path("baseband.fskt"))?;
    let jobs = plan(cfg)?;
    let union = frequency_union(&jobs)?;
    let array = cfg.array.build()?;
    baseband.check_dims(&array, &union).with_context(|| {
        format!("{} does not match the configured array and frequencies", ctx.path("baseband.fskt").display())
    })?;
    let mut empty = Vec::new();
    for job in &jobs {
        let bb = baseband.select_frequencies(&subset_indices(&union, &job.freqs.set)?)?;
        let prior = match job.method {
            Method::Mm2fsk => Some(load_prior(&ctx.path(&prior_file_name(job)), &cfg.grid())?),
            _ => None,
        };
        let raw = reconstruct_job(cfg, job, &bb, &array, prior.as_ref())?;
        if save_correlation && job.method != Method::Bp {
            let grid = match &prior {
                Some(p) => p.clone(),
                None => CandidateGrid::scalar(cfg.grid(), cfg.prior.scalar_depth)?,
            };
            let field = correlate_grid(&bb, &grid, &array, &job.freqs.set)?;
            write_fskc(&ctx.path(&format!("{}_correlation.fskc", job.stem())), &field)?;
        }
        match filter(cfg, &raw) {
            Ok(img) => {
                write_image(ctx, &job.stem(), &img)?;
                info!("{}: {} of {} pixels kept", job.stem(), img.valid_count(), img.geometry.len());
            }
            Err(e @ Error::EmptyImage(_)) => {
                warn!("{}: {e}", job.stem());
                empty.push(job.stem());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if !empty.is_empty() {
        return Err(Error::EmptyImage(format!("no pixel survived filtering for {}", empty.join(", "))).into());
    }
    Ok(())
}

fn image_geometry(cfg: &ExperimentConfig, job: &Job) -> GridGeometry {
    match job.method {
        Method::Bp => cfg.voxels().lateral(),
        _ => cfg.grid(),
    }
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = make_scene(&cfg.scene)?;
    let gt = ground_truth(cfg, &scene)?;
    let mut records = Vec::new();
    for job in plan(cfg)? {
        let geometry = image_geometry(cfg, &job);
        let (depth, valid) = load_grid_pfm(&ctx.path(&format!("{}_depth.pfm", job.stem())), &geometry)?;
        let ones = vec![1.0; geometry.len()];
        let image = RadarImage::new(geometry, depth, ones.clone(), ones, valid)?;
        let mut record = Record {
            method: job.method.as_str().into(),
            config: job.freqs.name.clone(),
            label: job.freqs.label.clone(),
            delta_f_hz: job.delta_f(),
            seed: cfg.seed,
            status: "ok".into(),
            metrics: None,
        };
        match evaluate_image(cfg, &scene, &gt, &image) {
            Ok(r) => record.metrics = Some(r),
            Err(Error::InsufficientData(m)) => record.status = format!("insufficient data: {m}"),
            Err(e) => return Err(e.into()),
        }
        records.push(record);
    }
    let report = Report { records };
    write_text(&ctx.path("report.toml"), &report.to_toml()?)?;
    let text = report.to_text();
    write_text(&ctx.path("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let (sweep, records) = run_sweep(&ctx.cfg, file_prior(ctx)?)?;
    write_text(&ctx.path("sweep_records.toml"), &Report { records }.to_toml()?)?;
    write_text(&ctx.path("sweep.toml"), &sweep.to_toml()?)?;
    let text = sweep.to_text();
    write_text(&ctx.path("sweep.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    // Reports only read; the configuration matters only for the output directory.
    let out = match (&cli.output, std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty())) {
        (Some(o), _) => o.clone(),
        (None, Some(v)) => PathBuf::from(v),
        (None, None) => match &cli.config {
            Some(p) => ExperimentConfig::load(p, &cli.set)?.output_dir.unwrap_or_else(|| PathBuf::from("mmfsk-out")),
            None => PathBuf::from("mmfsk-out"),
        },
    };
    let (report, sweep) = (out.join("report.toml"), out.join("sweep.toml"));
    if !report.exists() && !sweep.exists() {
        return Err(Error::io(&report, std::io::Error::new(std::io::ErrorKind::NotFound, "no report.toml or sweep.toml")).into());
    }
    if report.exists() {
        let text = Report::from_toml(&read_text(&report)?).map_err(|e| Error::format(&report, e.to_string()))?.to_text();
        write_text(&out.join("report.txt"), &text)?;
        print!("{text}");
    }
    if sweep.exists() {
        let text = SweepReport::from_toml(&read_text(&sweep)?).map_err(|e| Error::format(&sweep, e.to_string()))?.to_text();
        write_text(&out.join("sweep.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}
