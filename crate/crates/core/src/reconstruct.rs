//! Imaging methods: two- and three-frequency phase correction, and voxel
//! backprojection with maximum intensity projection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlate::{correlate_grid, correlate_points, CandidateGrid, CorrelationField, GridGeometry};
use crate::error::{Error, Result};
use crate::signal::{
    differential_phasor, phase_to_depth_correction, AntennaArray, BasebandTensor, FrequencySet, Phasor, Vec3,
};

/// Per-pixel depth estimate with magnitudes and a validity mask.
///
/// `magnitude` is the mean over frequencies of `|C_k|`; `joint_magnitude`
/// is `|mean_k C_k|`, the quantity the magnitude filter uses by default.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarImage {
    pub geometry: GridGeometry,
    pub depth: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub joint_magnitude: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RadarImage {
    pub fn new(
        geometry: GridGeometry,
        depth: Vec<f64>,
        magnitude: Vec<f64>,
        joint_magnitude: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = geometry.len();
        if [depth.len(), magnitude.len(), joint_magnitude.len(), valid.len()].iter().any(|&l| l != n) {
            return Err(Error::Dimension(format!("image planes do not match {}x{}", geometry.width, geometry.height)));
        }
        for i in 0..n {
            if valid[i] && !(depth[i].is_finite() && magnitude[i] >= 0.0 && joint_magnitude[i] >= 0.0) {
                return Err(Error::Validation(format!("pixel {i} is valid but has non-finite depth or magnitude")));
            }
        }
        Ok(RadarImage { geometry, depth, magnitude, joint_magnitude, valid })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid pixels as `(x, y, depth)` points with their magnitude.
    pub fn points(&self) -> Vec<(Vec3, f64)> {
        let g = &self.geometry;
        (0..g.len())
            .filter(|&i| self.valid[i])
            .map(|i| ([g.x(i % g.width), g.y(i / g.width), self.depth[i]], self.magnitude[i]))
            .collect()
    }

    fn from_field(field: &CorrelationField, depth: Vec<f64>) -> Self {
        let n = field.geometry.len();
        let mut magnitude = vec![0.0; n];
        let mut joint = vec![0.0; n];
        let mut depth = depth;
        for i in 0..n {
            if !field.valid[i] {
                depth[i] = f64::NAN;
                continue;
            }
            let c = field.pixel(i);
            let nf = c.len() as f64;
            magnitude[i] = c.iter().map(|v| v.norm()).sum::<f64>() / nf;
            joint[i] = (c.iter().sum::<Complex64>() / nf).norm();
        }
        RadarImage {
            geometry: field.geometry,
            depth,
            magnitude,
            joint_magnitude: joint,
            valid: field.valid.clone(),
        }
    }
}

fn require_freqs(freqs: &FrequencySet, n: usize, method: &str) -> Result<()> {
    if freqs.len() != n {
        return Err(Error::Config(format!("{method} needs exactly {n} frequencies, got {}", freqs.len())));
    }
    Ok(())
}

/// Depth correction from the differential phasor of `(c_lo, c_hi)` at `delta_f`.
fn pair_correction(c_lo: Complex64, c_hi: Complex64, delta_f: f64) -> Result<f64> {
    let d = differential_phasor(Phasor(c_lo), Phasor(c_hi));
    phase_to_depth_correction(d.residual_phase(), delta_f)
}

/// Two-frequency correction `d = d̃ + Δd` of every valid pixel.
///
/// A scalar prior (every pixel the same depth) gives plain 2FSK; a per-pixel
/// prior gives the multimodal variant.
pub fn fsk2_reconstruct(
    baseband: &BasebandTensor,
    grid: &CandidateGrid,
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<RadarImage> {
    require_freqs(freqs, 2, "2FSK")?;
    let field = correlate_grid(baseband, grid, array, freqs)?;
    let df = freqs.difference(0, 1);
    let mut depth = grid.prior_depth.clone();
    for (i, d) in depth.iter_mut().enumerate() {
        if field.valid[i] {
            *d += pair_correction(field.get(i, 0), field.get(i, 1), df)?;
        }
    }
    Ok(RadarImage::from_field(&field, depth))
}

/// Two-frequency correction with a per-pixel prior, typically from
/// [`crate::prior::build_prior`]. Same arithmetic as [`fsk2_reconstruct`].
pub fn mm2fsk_reconstruct(
    baseband: &BasebandTensor,
    prior_grid: &CandidateGrid,
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<RadarImage> {
    fsk2_reconstruct(baseband, prior_grid, array, freqs)
}

/// Frequency-index roles of a three-frequency set: the closest adjacent pair
/// `(lo_a, lo_b)` and the remaining index `other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThreeFskPairs {
    pub low: (usize, usize),
    pub other: usize,
}

impl ThreeFskPairs {
    pub fn of(freqs: &FrequencySet) -> Result<Self> {
        require_freqs(freqs, 3, "3FSK")?;
        let low = if freqs.difference(1, 2) <= freqs.difference(0, 1) { (1, 2) } else { (0, 1) };
        let other = 3 - low.0 - low.1;
        Ok(ThreeFskPairs { low, other })
    }

    /// The two high-difference pairs, each ordered by frequency.
    pub fn high(&self) -> [(usize, usize); 2] {
        let ord = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
        [ord(self.other, self.low.0), ord(self.other, self.low.1)]
    }
}

/// Merge two high-difference differential phasors into one phasor and the
/// effective frequency difference it is read at: coherent average of the
/// phasors, mean of the differences.
pub fn combine_high_pairs(d_a: Complex64, df_a: f64, d_b: Complex64, df_b: f64) -> (Complex64, f64) {
    ((d_a + d_b) / 2.0, (df_a + df_b) / 2.0)
}

/// Two-stage three-frequency correction.
///
/// Stage 1 corrects the grid prior with the closest frequency pair. Stage 2
/// re-correlates at the stage-1 depths and corrects again with the two
/// high-difference pairs merged by [`combine_high_pairs`].
pub fn fsk3_reconstruct(
    baseband: &BasebandTensor,
    grid: &CandidateGrid,
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<RadarImage> {
    let roles = ThreeFskPairs::of(freqs)?;
    let f1 = correlate_grid(baseband, grid, array, freqs)?;
    let (a, b) = roles.low;
    let df_low = freqs.difference(a, b);
    let mut stage1 = grid.prior_depth.clone();
    for (i, d) in stage1.iter_mut().enumerate() {
        if f1.valid[i] {
            *d += pair_correction(f1.get(i, a), f1.get(i, b), df_low)?;
        }
    }
    let refined = grid.with_depths(stage1.iter().map(|d| if d.is_finite() { *d } else { 0.0 }).collect())?;
    let f2 = correlate_grid(baseband, &refined, array, freqs)?;
    let [(p0, p1), (q0, q1)] = roles.high();
    let mut depth = stage1;
    for (i, d) in depth.iter_mut().enumerate() {
        if !f2.valid[i] {
            continue;
        }
        let da = differential_phasor(Phasor(f2.get(i, p0)), Phasor(f2.get(i, p1))).0;
        let db = differential_phasor(Phasor(f2.get(i, q0)), Phasor(f2.get(i, q1))).0;
        let (merged, df) = combine_high_pairs(da, freqs.difference(p0, p1), db, freqs.difference(q0, q1));
        *d += phase_to_depth_correction(Phasor(merged).residual_phase(), df)?;
    }
    Ok(RadarImage::from_field(&f2, depth))
}

/// Regular voxel lattice: `resolution` samples spanning `extent` around
/// `center` on each axis, pixel-center convention as [`GridGeometry`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub extent: [f64; 3],
    pub resolution: [usize; 3],
    pub center: Vec3,
}

impl VoxelGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution.contains(&0) || self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Validation(format!(
                "voxel grid needs counts >= 1 and extents > 0, got {:?} over {:?}",
                self.resolution, self.extent
            )));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("voxel grid center must be finite".into()));
        }
        Ok(())
    }

    pub fn lateral(&self) -> GridGeometry {
        GridGeometry {
            width: self.resolution[0],
            height: self.resolution[1],
            extent: [self.extent[0], self.extent[1]],
            center: [self.center[0], self.center[1]],
        }
    }

    pub fn z_samples(&self) -> Vec<f64> {
        let n = self.resolution[2];
        if n == 1 {
            return vec![self.center[2]];
        }
        let step = self.extent[2] / (n - 1) as f64;
        (0..n).map(|i| self.center[2] - self.extent[2] / 2.0 + i as f64 * step).collect()
    }
}

/// Voxel count handed to the correlator per batch of columns.
const BP_BATCH_VOXELS: usize = 1 << 16;

/// Coherent voxel backprojection followed by a maximum intensity projection
/// along z. Voxel intensity is `|mean over pairs and frequencies|`; each
/// column takes the strict maximum, ties going to the smallest z.
pub fn backproject(
    baseband: &BasebandTensor,
    spec: &VoxelGridSpec,
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<RadarImage> {
    spec.validate()?;
    baseband.check_dims(array, freqs)?;
    let geometry = spec.lateral();
    let zs = spec.z_samples();
    let nz = zs.len();
    let nf = freqs.len();
    let cols = geometry.len();
    let per_batch = (BP_BATCH_VOXELS / nz).max(1);
    let mut depth = vec![0.0; cols];
    let mut magnitude = vec![0.0; cols];
    let mut start = 0;
    let mut points = Vec::with_capacity(per_batch * nz);
    while start < cols {
        let end = (start + per_batch).min(cols);
        points.clear();
        for i in start..end {
            let (x, y) = (geometry.x(i % geometry.width), geometry.y(i / geometry.width));
            points.extend(zs.iter().map(|&z| [x, y, z]));
        }
        let c = correlate_points(baseband, &points, array, freqs)?;
        for (j, col) in (start..end).enumerate() {
            let mut best = (-1.0, 0);
            for iz in 0..nz {
                let base = (j * nz + iz) * nf;
                let m = (c[base..base + nf].iter().sum::<Complex64>() / nf as f64).norm();
                if m > best.0 {
                    best = (m, iz);
                }
            }
            depth[col] = zs[best.1];
            magnitude[col] = best.0;
        }
        start = end;
    }
    RadarImage::new(geometry, depth, magnitude.clone(), magnitude, vec![true; cols])
}

/// Which magnitude plane the filter thresholds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMagnitude {
    /// `|mean_k C_k|`.
    #[default]
    Joint,
    /// `mean_k |C_k|`.
    PerFrequency,
}

pub const DEFAULT_THRESHOLD_DB: f64 = -14.0;

/// Invalidate pixels more than `threshold_db` below the brightest valid pixel.
pub fn magnitude_filter(image: &RadarImage, threshold_db: f64) -> Result<RadarImage> {
    magnitude_filter_with(image, threshold_db, FilterMagnitude::Joint)
}

pub fn magnitude_filter_with(image: &RadarImage, threshold_db: f64, which: FilterMagnitude) -> Result<RadarImage> {
    let mags = match which {
        FilterMagnitude::Joint => &image.joint_magnitude,
        FilterMagnitude::PerFrequency => &image.magnitude,
    };
    let max = (0..mags.len()).filter(|&i| image.valid[i]).map(|i| mags[i]).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::EmptyImage("no valid pixel with positive magnitude".into()));
    }
    let mut out = image.clone();
    for (i, v) in out.valid.iter_mut().enumerate() {
        if *v && 20.0 * (mags[i] / max).log10() < threshold_db {
            *v = false;
        }
    }
    if out.valid_count() == 0 {
        return Err(Error::EmptyImage("magnitude filter removed every pixel".into()));
    }
    Ok(out)
}
