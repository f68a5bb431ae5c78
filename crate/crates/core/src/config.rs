//! Experiment configuration: one TOML document per experiment, with
//! profile defaults filled in by [`ExperimentConfig::resolve`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlate::GridGeometry;
use crate::error::{Error, Result};
use crate::prior::{CameraIntrinsics, Extrinsics, RasterOptions};
use crate::reconstruct::{FilterMagnitude, VoxelGridSpec, DEFAULT_THRESHOLD_DB};
use crate::scene::SceneSpec;
use crate::signal::{named_frequencies, AntennaArray, FrequencySet, NamedFrequencies, Vec3};

/// Aperture and grid presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 16×16 boundary array, 5 cm side; 64×64 grid at 0.5 mm pitch.
    #[default]
    Desk,
    /// 94×94 boundary array, 50 cm side; 301×301 grid at 1 mm pitch. Slow.
    Qar50,
}

impl Profile {
    fn array(self) -> (usize, usize, f64) {
        match self {
            Profile::Desk => (16, 16, 0.05),
            Profile::Qar50 => (94, 94, 0.5),
        }
    }

    fn grid(self) -> GridGeometry {
        match self {
            Profile::Desk => GridGeometry { width: 64, height: 64, extent: [0.0315, 0.0315], center: [0.0, 0.0] },
            Profile::Qar50 => GridGeometry { width: 301, height: 301, extent: [0.3, 0.3], center: [0.0, 0.0] },
        }
    }

    fn voxels(self) -> VoxelGridSpec {
        match self {
            Profile::Desk => VoxelGridSpec { extent: [0.0315, 0.0315, 0.2], resolution: [64, 64, 201], center: [0.0, 0.0, 0.3] },
            Profile::Qar50 => VoxelGridSpec { extent: [0.3, 0.3, 0.2], resolution: [301, 301, 201], center: [0.0, 0.0, 0.3] },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    #[serde(default)]
    pub profile: Profile,
    pub tx: Option<usize>,
    pub rx: Option<usize>,
    /// Side length of the square boundary layout, meters.
    pub side: Option<f64>,
    /// Explicit element positions; override the boundary layout when both are set.
    pub tx_positions: Option<Vec<Vec3>>,
    pub rx_positions: Option<Vec<Vec3>>,
}

impl ArrayConfig {
    pub fn build(&self) -> Result<AntennaArray> {
        match (&self.tx_positions, &self.rx_positions) {
            (Some(tx), Some(rx)) => AntennaArray::new(tx.clone(), rx.clone()),
            (None, None) => {
                let (t, r, s) = self.profile.array();
                AntennaArray::boundary(self.tx.unwrap_or(t), self.rx.unwrap_or(r), self.side.unwrap_or(s))
            }
            _ => Err(Error::Config("array: set both tx_positions and rx_positions, or neither".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    /// Named configurations (`d0.5` … `d10.0`, `3fsk-…`, `fscw-N`).
    #[serde(default = "default_configs")]
    pub configs: Vec<String>,
    /// Extra explicit sets in hertz, named `custom-1`, `custom-2`, …
    #[serde(default)]
    pub custom: Vec<Vec<f64>>,
}

fn default_configs() -> Vec<String> {
    vec!["d0.5".into(), "d10.0".into()]
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig { configs: default_configs(), custom: Vec::new() }
    }
}

impl FrequencyConfig {
    pub fn resolve(&self) -> Result<Vec<NamedFrequencies>> {
        let mut out = Vec::new();
        for name in &self.configs {
            out.push(named_frequencies(name)?);
        }
        for (i, f) in self.custom.iter().enumerate() {
            let set = FrequencySet::new(f.clone())?;
            out.push(NamedFrequencies { name: format!("custom-{}", i + 1), label: format!("custom-{}", i + 1), set });
        }
        if out.is_empty() {
            return Err(Error::Config("no frequency configurations".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Omit for noise-free simulation.
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub path_loss: bool,
}

/// How the per-pixel prior for the multimodal method is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Same depth everywhere (`scalar_depth`).
    Scalar,
    /// Synthetic depth camera rendered from the scene, then triangulated.
    #[default]
    Camera,
    /// A PFM depth map on the radar grid (NaN marks holes).
    File,
    /// Ground-truth depth map plus synthetic per-pixel error.
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub eye: Vec3,
    pub target: Vec3,
    #[serde(default = "default_down")]
    pub down: Vec3,
    /// Gaussian depth noise of the camera, meters.
    #[serde(default)]
    pub depth_noise: f64,
    /// Fraction of camera pixels dropped at random.
    #[serde(default)]
    pub dropout: f64,
    /// Error added to the calibrated translation, meters.
    #[serde(default)]
    pub calibration_offset: Vec3,
}

fn default_down() -> Vec3 {
    [0.0, 1.0, 0.0]
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 160,
            height: 120,
            intrinsics: CameraIntrinsics { fu: 200.0, fv: 200.0, cu: 79.5, cv: 59.5 },
            eye: [0.06, 0.0, 0.0],
            target: [0.0, 0.0, 0.3],
            down: default_down(),
            depth_noise: 0.0,
            dropout: 0.0,
            calibration_offset: [0.0; 3],
        }
    }
}

impl CameraConfig {
    pub fn pose(&self) -> Result<Extrinsics> {
        Extrinsics::look_at(self.eye, self.target, self.down)
    }
}

/// Synthetic error added to a ground-truth prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorError {
    None,
    Gaussian { sigma: f64 },
    /// Uniform within `±fraction·Δd_max` of each two-frequency configuration.
    UniformWindow { fraction: f64 },
}

impl Default for PriorError {
    fn default() -> Self {
        PriorError::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub mode: PriorMode,
    /// Scalar prior used by the single-prior methods (and by `scalar` mode).
    #[serde(default = "default_scalar_depth")]
    pub scalar_depth: f64,
    #[serde(default)]
    pub camera: CameraConfig,
    /// PFM prior for `file` mode.
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub error: PriorError,
    #[serde(default)]
    pub raster: RasterOptions,
}

fn default_scalar_depth() -> f64 {
    0.40
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            mode: PriorMode::default(),
            scalar_depth: default_scalar_depth(),
            camera: CameraConfig::default(),
            path: None,
            error: PriorError::None,
            raster: RasterOptions::default(),
        }
    }
}

/// Imaging method names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "2fsk")]
    Fsk2,
    #[serde(rename = "mm2fsk")]
    Mm2fsk,
    #[serde(rename = "3fsk")]
    Fsk3,
    #[serde(rename = "bp")]
    Bp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fsk2 => "2fsk",
            Method::Mm2fsk => "mm2fsk",
            Method::Fsk3 => "3fsk",
            Method::Bp => "bp",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Method::Fsk2 => "2FSK",
            Method::Mm2fsk => "MM-2FSK",
            Method::Fsk3 => "3FSK",
            Method::Bp => "BP",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2fsk" => Ok(Method::Fsk2),
            "mm2fsk" => Ok(Method::Mm2fsk),
            "3fsk" => Ok(Method::Fsk3),
            "bp" => Ok(Method::Bp),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected 2fsk, mm2fsk, 3fsk or bp)"))),
        }
    }

    /// Frequency count the method consumes, if fixed.
    pub fn frequency_count(self) -> Option<usize> {
        match self {
            Method::Fsk2 | Method::Mm2fsk => Some(2),
            Method::Fsk3 => Some(3),
            Method::Bp => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpConfig {
    /// Frequency configuration name used by backprojection.
    pub frequencies: Option<String>,
    pub voxels: Option<VoxelGridSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_threshold")]
    pub threshold_db: f64,
    #[serde(default)]
    pub filter_magnitude: FilterMagnitude,
    #[serde(default)]
    pub bp: BpConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Fsk2, Method::Mm2fsk]
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_DB
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            methods: default_methods(),
            threshold_db: default_threshold(),
            filter_magnitude: FilterMagnitude::default(),
            bp: BpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_erode")]
    pub erode: usize,
    /// Ground-truth resampling pitch; defaults to the grid pitch.
    pub gt_spacing: Option<f64>,
}

fn default_erode() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { erode: default_erode(), gt_spacing: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Number of seeds, starting at the experiment seed.
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
    /// Spearman correlation at or below which a trend counts as non-increasing.
    #[serde(default = "default_spearman")]
    pub spearman_threshold: f64,
}

fn default_sweep_seeds() -> usize {
    1
}

fn default_spearman() -> f64 {
    -0.8
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { seeds: default_sweep_seeds(), spearman_threshold: default_spearman() }
    }
}

fn default_scene() -> SceneSpec {
    SceneSpec::Plane { z: 0.3, extent: 0.08, spacing: 0.001, tilt_deg: 0.0, center_xy: [0.0, 0.0] }
}

/// Everything one experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_scene")]
    pub scene: SceneSpec,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub frequencies: FrequencyConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub grid: Option<GridGeometry>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

/// Split `a.b.c=value`; the value is parsed as a TOML value and falls back
/// to a plain string.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{arg}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

/// Set a dotted key inside a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{}` crosses a non-table value", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fill profile defaults and validate every section.
    pub fn resolve(mut self) -> Result<Self> {
        let profile = self.array.profile;
        if self.array.tx_positions.is_none() {
            let (t, r, s) = profile.array();
            self.array.tx.get_or_insert(t);
            self.array.rx.get_or_insert(r);
            self.array.side.get_or_insert(s);
        }
        self.grid.get_or_insert(profile.grid());
        self.reconstruct.bp.frequencies.get_or_insert_with(|| "fscw-16".into());
        self.reconstruct.bp.voxels.get_or_insert(profile.voxels());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.array.build()?;
        self.grid().validate()?;
        let configs = self.frequencies.resolve()?;
        if let Some(bp) = &self.reconstruct.bp.frequencies {
            named_frequencies(bp)?;
        }
        if let Some(v) = &self.reconstruct.bp.voxels {
            v.validate()?;
        }
        if let Some(s) = self.noise.snr_db {
            if !s.is_finite() {
                return Err(Error::Config("noise.snr_db must be finite".into()));
            }
        }
        if !self.prior.scalar_depth.is_finite() {
            return Err(Error::Config("prior.scalar_depth must be finite".into()));
        }
        if self.prior.mode == PriorMode::File && self.prior.path.is_none() {
            return Err(Error::Config("prior.mode = \"file\" needs prior.path".into()));
        }
        if self.prior.mode == PriorMode::Camera {
            let c = &self.prior.camera;
            c.intrinsics.validate()?;
            c.pose()?;
            if c.width == 0 || c.height == 0 || !(0.0..1.0).contains(&c.dropout) || !(c.depth_noise >= 0.0) {
                return Err(Error::Config("prior.camera: need a non-empty image, dropout in [0,1) and depth_noise >= 0".into()));
            }
        }
        match self.prior.error {
            PriorError::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(Error::Config(format!("prior error sigma must be >= 0, got {sigma}")))
            }
            PriorError::UniformWindow { fraction } if !(0.0..=1.0).contains(&fraction) => {
                return Err(Error::Config(format!("prior error fraction must be in [0,1], got {fraction}")))
            }
            _ => {}
        }
        if self.reconstruct.methods.is_empty() {
            return Err(Error::Config("reconstruct.methods is empty".into()));
        }
        if !self.reconstruct.threshold_db.is_finite() {
            return Err(Error::Config("reconstruct.threshold_db must be finite".into()));
        }
        for m in &self.reconstruct.methods {
            if let Some(n) = m.frequency_count() {
                if !configs.iter().any(|c| c.set.len() == n) {
                    return Err(Error::Config(format!(
                        "method {} needs a {n}-frequency configuration, none listed",
                        m.as_str()
                    )));
                }
            }
        }
        if self.sweep.seeds == 0 {
            return Err(Error::Config("sweep.seeds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridGeometry {
        self.grid.unwrap_or_else(|| self.array.profile.grid())
    }

    pub fn voxels(&self) -> VoxelGridSpec {
        self.reconstruct.bp.voxels.unwrap_or_else(|| self.array.profile.voxels())
    }

    pub fn bp_frequencies(&self) -> Result<NamedFrequencies> {
        named_frequencies(self.reconstruct.bp.frequencies.as_deref().unwrap_or("fscw-16"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
