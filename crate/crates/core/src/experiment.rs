//! Experiment pipeline: simulate, build priors, reconstruct, evaluate and
//! aggregate sweeps. The CLI writes the intermediate products to disk; the
//! functions here keep them in memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, PriorError, PriorMode};
use crate::correlate::CandidateGrid;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, gt_depth_map, resample_gt, EvalReport, GroundTruthMap};
use crate::prior::{build_prior, render_scene_depth, render_surface_depth, Extrinsics, OpticalDepthMap};
use crate::reconstruct::{backproject, fsk2_reconstruct, fsk3_reconstruct, magnitude_filter_with, RadarImage};
use crate::scene::make_scene;
use crate::signal::{max_unambiguous_depth, AntennaArray, BasebandTensor, FrequencySet, NamedFrequencies, Scene, Vec3};
use crate::sim::{simulate_baseband_with, NoiseSpec, SimOptions};

/// Purposes for [`derive_seed`].
pub const SEED_NOISE: u64 = 1;
pub const SEED_PRIOR_ERROR: u64 = 2;
pub const SEED_CAMERA: u64 = 3;

/// Independent sub-seed for one purpose (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One reconstruction to run: a method on a named frequency configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub method: Method,
    pub freqs: NamedFrequencies,
}

impl Job {
    /// Stem of the output files, e.g. `mm2fsk-d10.0`.
    pub fn stem(&self) -> String {
        format!("{}-{}", self.method.as_str(), self.freqs.name)
    }

    /// Largest frequency difference of the configuration (for 2FSK the only one).
    pub fn delta_f(&self) -> f64 {
        self.freqs.set.bandwidth()
    }
}

/// Expand methods × configurations: two-frequency methods run on every
/// two-frequency configuration, 3FSK on every three-frequency one, BP once.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let configs = cfg.frequencies.resolve()?;
    let mut jobs = Vec::new();
    for &method in &cfg.reconstruct.methods {
        match method.frequency_count() {
            Some(n) => {
                for c in configs.iter().filter(|c| c.set.len() == n) {
                    jobs.push(Job { method, freqs: c.clone() });
                }
            }
            None => jobs.push(Job { method, freqs: cfg.bp_frequencies()? }),
        }
    }
    Ok(jobs)
}

/// Sorted union of all frequencies the jobs need.
pub fn frequency_union(jobs: &[Job]) -> Result<FrequencySet> {
    let mut all: Vec<f64> = jobs.iter().flat_map(|j| j.freqs.set.as_slice().to_vec()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    FrequencySet::new(all)
}

/// Indices of `subset` inside `set`; every frequency must be present exactly.
pub fn subset_indices(set: &FrequencySet, subset: &FrequencySet) -> Result<Vec<usize>> {
    subset
        .as_slice()
        .iter()
        .map(|f| {
            set.as_slice()
                .iter()
                .position(|g| g == f)
                .ok_or_else(|| Error::Validation(format!("frequency {f} Hz is not in the simulated set")))
        })
        .collect()
}

/// Simulated measurement and the geometry behind it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub scene: Scene,
    pub array: AntennaArray,
    pub freqs: FrequencySet,
    pub baseband: BasebandTensor,
}

impl Simulation {
    /// Baseband restricted to one configuration.
    pub fn baseband_for(&self, set: &FrequencySet) -> Result<BasebandTensor> {
        self.baseband.select_frequencies(&subset_indices(&self.freqs, set)?)
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let jobs = plan(cfg)?;
    let freqs = frequency_union(&jobs)?;
    let scene = make_scene(&cfg.scene)?;
    let array = cfg.array.build()?;
    let noise = match cfg.noise.snr_db {
        Some(snr) => NoiseSpec::with_snr(snr, derive_seed(cfg.seed, SEED_NOISE)),
        None => NoiseSpec::none(),
    };
    let baseband = simulate_baseband_with(&scene, &array, &freqs, &noise, SimOptions { path_loss: cfg.noise.path_loss })?;
    Ok(Simulation { scene, array, freqs, baseband })
}

/// Ground truth on the radar grid and as a point cloud.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub map: GroundTruthMap,
    pub points: Vec<Vec3>,
}

pub fn ground_truth(cfg: &ExperimentConfig, scene: &Scene) -> Result<GroundTruth> {
    let grid = cfg.grid();
    let pitch = grid.pitch();
    let spacing = cfg.eval.gt_spacing.unwrap_or_else(|| {
        let p = pitch[0].min(pitch[1]);
        if p > 0.0 { p } else { pitch[0].max(pitch[1]).max(1e-3) }
    });
    // Only the part of the surface inside the radar grid's footprint can be imaged.
    let half = [grid.extent[0] / 2.0 + pitch[0] / 2.0, grid.extent[1] / 2.0 + pitch[1] / 2.0];
    let points = resample_gt(&cfg.scene, spacing)?
        .into_iter()
        .filter(|p| (p[0] - grid.center[0]).abs() <= half[0] && (p[1] - grid.center[1]).abs() <= half[1])
        .collect();
    Ok(GroundTruth { map: gt_depth_map(&cfg.scene, scene, &grid), points })
}

/// Prior before configuration-dependent error, plus the camera image it
/// came from (camera mode only).
#[derive(Clone, Debug)]
pub struct PriorProduct {
    pub base: CandidateGrid,
    pub camera: Option<OpticalDepthMap>,
}

/// Build the prior named by `prior.mode`. `file` mode takes the already
/// loaded grid through `file_prior`.
pub fn base_prior(
    cfg: &ExperimentConfig,
    scene: &Scene,
    gt: &GroundTruthMap,
    file_prior: Option<CandidateGrid>,
) -> Result<PriorProduct> {
    let grid = cfg.grid();
    let pc = &cfg.prior;
    match pc.mode {
        PriorMode::Scalar => Ok(PriorProduct { base: CandidateGrid::scalar(grid, pc.scalar_depth)?, camera: None }),
        PriorMode::GroundTruth => {
            let depth = gt.depth.iter().map(|d| if d.is_finite() { *d } else { 0.0 }).collect();
            Ok(PriorProduct { base: CandidateGrid::new(grid, depth, gt.valid.clone())?, camera: None })
        }
        PriorMode::File => {
            let base = file_prior.ok_or_else(|| Error::Config("file prior mode needs a loaded prior".into()))?;
            if base.geometry != grid {
                return Err(Error::Dimension("prior file grid does not match the radar grid".into()));
            }
            Ok(PriorProduct { base, camera: None })
        }
        PriorMode::Camera => {
            let cam = &pc.camera;
            let pose = cam.pose()?;
            let mut map = match cfg.scene.surface() {
                Some(s) => render_surface_depth(&s, &cam.intrinsics, &pose, cam.width, cam.height)?,
                None => render_scene_depth(scene, &cam.intrinsics, &pose, cam.width, cam.height)?,
            };
            if cam.depth_noise > 0.0 || cam.dropout > 0.0 {
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SEED_CAMERA));
                for i in 0..map.depth.len() {
                    let g: f64 = rng.sample(StandardNormal);
                    let drop = rng.random::<f64>() < cam.dropout;
                    if map.valid[i] {
                        map.depth[i] += cam.depth_noise * g;
                        map.valid[i] = !drop && map.depth[i] > 0.0;
                    }
                }
                map = OpticalDepthMap::new(map.width, map.height, map.depth, map.valid)?;
            }
            let o = cam.calibration_offset;
            let t = pose.translation;
            let calibrated = Extrinsics::new(pose.rotation, [t[0] + o[0], t[1] + o[1], t[2] + o[2]])?;
            let base = build_prior(&map, &cam.intrinsics, &calibrated, &grid, &pc.raster)?;
            Ok(PriorProduct { base, camera: Some(map) })
        }
    }
}

/// Apply the configured synthetic prior error for one frequency
/// configuration. The same per-pixel draws are reused across
/// configurations; only the scale changes.
pub fn prior_for(cfg: &ExperimentConfig, base: &CandidateGrid, freqs: &FrequencySet) -> Result<CandidateGrid> {
    let scale = match cfg.prior.error {
        PriorError::None => return Ok(base.clone()),
        PriorError::Gaussian { sigma } => sigma,
        PriorError::UniformWindow { fraction } => {
            let s = freqs.as_slice();
            let smallest = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            fraction * max_unambiguous_depth(smallest)?
        }
    };
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SEED_PRIOR_ERROR));
    let depth = base
        .prior_depth
        .iter()
        .map(|d| {
            let e: f64 = match cfg.prior.error {
                PriorError::UniformWindow { .. } => rng.random_range(-1.0..=1.0),
                _ => rng.sample(StandardNormal),
            };
            d + scale * e
        })
        .collect();
    base.with_depths(depth)
}

/// Unfiltered reconstruction for one job. `prior` is the per-pixel prior
/// for MM-2FSK; the single-prior baselines use `prior.scalar_depth`.
pub fn reconstruct_job(
    cfg: &ExperimentConfig,
    job: &Job,
    baseband: &BasebandTensor,
    array: &AntennaArray,
    prior: Option<&CandidateGrid>,
) -> Result<RadarImage> {
    let set = &job.freqs.set;
    match job.method {
        Method::Fsk2 => fsk2_reconstruct(baseband, &CandidateGrid::scalar(cfg.grid(), cfg.prior.scalar_depth)?, array, set),
        Method::Fsk3 => fsk3_reconstruct(baseband, &CandidateGrid::scalar(cfg.grid(), cfg.prior.scalar_depth)?, array, set),
        Method::Mm2fsk => {
            let p = prior.ok_or_else(|| Error::Config("MM-2FSK needs a per-pixel prior".into()))?;
            fsk2_reconstruct(baseband, p, array, set)
        }
        Method::Bp => backproject(baseband, &cfg.voxels(), array, set),
    }
}

pub fn filter(cfg: &ExperimentConfig, image: &RadarImage) -> Result<RadarImage> {
    magnitude_filter_with(image, cfg.reconstruct.threshold_db, cfg.reconstruct.filter_magnitude)
}

/// Evaluate against ground truth, re-rasterizing the depth map when the
/// image lives on a different lateral grid (e.g. a custom BP volume).
pub fn evaluate_image(cfg: &ExperimentConfig, scene: &Scene, gt: &GroundTruth, image: &RadarImage) -> Result<EvalReport> {
    if image.geometry == gt.map.geometry {
        evaluate(image, &gt.map, &gt.points, cfg.eval.erode)
    } else {
        let map = gt_depth_map(&cfg.scene, scene, &image.geometry);
        evaluate(image, &map, &gt.points, cfg.eval.erode)
    }
}

/// One evaluated row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: String,
    pub config: String,
    pub label: String,
    pub delta_f_hz: f64,
    pub seed: u64,
    /// `ok`, or the reason the row has no metrics.
    pub status: String,
    pub metrics: Option<EvalReport>,
}

/// Outcome of a full in-memory run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub job: Job,
    pub image: Option<RadarImage>,
    pub record: Record,
}

fn status_of(e: &Error) -> Option<String> {
    match e {
        Error::EmptyImage(m) => Some(format!("empty image: {m}")),
        Error::InsufficientData(m) => Some(format!("insufficient data: {m}")),
        _ => None,
    }
}

/// simulate → prior → reconstruct → filter → evaluate for every job.
/// Numerical failures of one job become a row status; other errors abort.
pub fn run_pipeline(cfg: &ExperimentConfig, file_prior: Option<CandidateGrid>) -> Result<Vec<Outcome>> {
    let sim = simulate(cfg)?;
    let gt = ground_truth(cfg, &sim.scene)?;
    let needs_prior = cfg.reconstruct.methods.contains(&Method::Mm2fsk);
    let prior = if needs_prior { Some(base_prior(cfg, &sim.scene, &gt.map, file_prior)?) } else { None };
    let mut out = Vec::new();
    for job in plan(cfg)? {
        let bb = sim.baseband_for(&job.freqs.set)?;
        let p = match (&prior, job.method) {
            (Some(p), Method::Mm2fsk) => Some(prior_for(cfg, &p.base, &job.freqs.set)?),
            _ => None,
        };
        let result = reconstruct_job(cfg, &job, &bb, &sim.array, p.as_ref())
            .and_then(|raw| filter(cfg, &raw))
            .and_then(|img| evaluate_image(cfg, &sim.scene, &gt, &img).map(|r| (img, r)));
        let mut record = Record {
            method: job.method.as_str().into(),
            config: job.freqs.name.clone(),
            label: job.freqs.label.clone(),
            delta_f_hz: job.delta_f(),
            seed: cfg.seed,
            status: "ok".into(),
            metrics: None,
        };
        let image = match result {
            Ok((img, report)) => {
                record.metrics = Some(report);
                Some(img)
            }
            Err(e) => match status_of(&e) {
                Some(s) => {
                    record.status = s;
                    None
                }
                None => return Err(e),
            },
        };
        out.push(Outcome { job, image, record });
    }
    Ok(out)
}

/// Evaluation report file contents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(rename = "record", default)]
    pub records: Vec<Record>,
}

fn cm(v: f64) -> String {
    if v.is_finite() { format!("{:.3}", v * 100.0) } else { "-".into() }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join(" | ").trim_end().to_string() + "\n"
    };
    let mut s = line(header.iter().map(|h| h.to_string()).collect());
    s += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-") + "\n");
    for r in rows {
        s += &line(r.clone());
    }
    s
}

fn method_display(name: &str) -> String {
    Method::parse(name).map(|m| m.display().to_string()).unwrap_or_else(|_| name.to_string())
}

impl Report {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Aligned table, distances in centimeters.
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                let m = r.metrics.as_ref();
                let f = |g: fn(&EvalReport) -> f64| m.map(g).map(cm).unwrap_or_else(|| "-".into());
                vec![
                    method_display(&r.method),
                    r.label.clone(),
                    f(|e| e.c_gt_to_r),
                    f(|e| e.c_r_to_gt),
                    f(|e| e.p_masked),
                    f(|e| e.p_eroded),
                    r.status.clone(),
                ]
            })
            .collect();
        table(&["Method", "Config", "C_GT→R [cm]", "C_R→GT [cm]", "P [cm]", "P_eroded [cm]", "Status"], &rows)
    }
}

/// Median with NaN treated as +∞ (a failed run counts as the worst case).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.iter().map(|x| if x.is_nan() { f64::INFINITY } else { *x }).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks). NaN when either
/// side is constant or fewer than two samples are given.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx).powi(2);
        syy += (ry[i] - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Median metrics of one (method, configuration) across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub method: String,
    pub config: String,
    pub label: String,
    pub delta_f_hz: f64,
    pub runs: usize,
    pub failures: usize,
    pub median_c_gt_to_r: f64,
    pub median_c_r_to_gt: f64,
    pub median_p_masked: f64,
    pub median_p_eroded: f64,
}

/// Error-versus-Δf trend of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub method: String,
    pub configs: usize,
    pub spearman: f64,
    /// `non-increasing`, `not monotone` or `no trend`.
    pub verdict: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    #[serde(rename = "entry", default)]
    pub entries: Vec<SweepEntry>,
    #[serde(rename = "trend", default)]
    pub trends: Vec<Trend>,
}

/// Aggregate per-seed records into medians and per-method trends.
pub fn aggregate(seeds: Vec<u64>, records: &[Record], spearman_threshold: f64) -> SweepReport {
    let mut entries: Vec<SweepEntry> = Vec::new();
    for r in records {
        if entries.iter().any(|e| e.method == r.method && e.config == r.config) {
            continue;
        }
        let same: Vec<&Record> = records.iter().filter(|s| s.method == r.method && s.config == r.config).collect();
        let pick = |g: fn(&EvalReport) -> f64| -> f64 {
            median(&same.iter().map(|s| s.metrics.as_ref().map(g).unwrap_or(f64::NAN)).collect::<Vec<_>>())
        };
        entries.push(SweepEntry {
            method: r.method.clone(),
            config: r.config.clone(),
            label: r.label.clone(),
            delta_f_hz: r.delta_f_hz,
            runs: same.len(),
            failures: same.iter().filter(|s| s.metrics.is_none()).count(),
            median_c_gt_to_r: pick(|e| e.c_gt_to_r),
            median_c_r_to_gt: pick(|e| e.c_r_to_gt),
            median_p_masked: pick(|e| e.p_masked),
            median_p_eroded: pick(|e| e.p_eroded),
        });
    }
    let mut trends = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for e in &entries {
        if !methods.contains(&e.method.as_str()) {
            methods.push(&e.method);
        }
    }
    for m in methods {
        if m == Method::Bp.as_str() {
            continue;
        }
        let rows: Vec<&SweepEntry> = entries.iter().filter(|e| e.method == m).collect();
        let df: Vec<f64> = rows.iter().map(|e| e.delta_f_hz).collect();
        let p: Vec<f64> = rows.iter().map(|e| e.median_p_eroded).collect();
        let rho = spearman(&df, &p);
        let verdict = if rows.len() < 2 || rho.is_nan() {
            "no trend"
        } else if rho <= spearman_threshold {
            "non-increasing"
        } else {
            "not monotone"
        };
        trends.push(Trend { method: m.to_string(), configs: rows.len(), spearman: rho, verdict: verdict.into() });
    }
    SweepReport { seeds, entries, trends }
}

impl SweepReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| {
                vec![
                    method_display(&e.method),
                    e.label.clone(),
                    cm(e.median_c_gt_to_r),
                    cm(e.median_c_r_to_gt),
                    cm(e.median_p_masked),
                    cm(e.median_p_eroded),
                    format!("{}/{}", e.runs - e.failures, e.runs),
                ]
            })
            .collect();
        let mut s = format!("Medians over {} seed(s)\n", self.seeds.len());
        s += &table(&["Method", "Config", "C_GT→R [cm]", "C_R→GT [cm]", "P [cm]", "P_eroded [cm]", "OK"], &rows);
        s += "\n";
        for t in &self.trends {
            s += &format!(
                "{}: {} (Spearman {} over {} configs)\n",
                method_display(&t.method),
                t.verdict,
                if t.spearman.is_nan() { "n/a".to_string() } else { format!("{:.3}", t.spearman) },
                t.configs
            );
        }
        s
    }
}

/// Run the pipeline for `sweep.seeds` consecutive seeds and aggregate.
pub fn run_sweep(cfg: &ExperimentConfig, file_prior: Option<CandidateGrid>) -> Result<(SweepReport, Vec<Record>)> {
    let mut records = Vec::new();
    let mut seeds = Vec::new();
    for i in 0..cfg.sweep.seeds as u64 {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i);
        seeds.push(c.seed);
        records.extend(run_pipeline(&c, file_prior.clone())?.into_iter().map(|o| o.record));
    }
    Ok((aggregate(seeds, &records, cfg.sweep.spearman_threshold), records))
}
