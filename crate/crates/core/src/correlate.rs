//! Correlation of baseband measurements against per-candidate hypotheses.
//!
//! For a candidate `p` and frequency `f`, the hypothesis phasor factors over
//! the array: `exp(+j·2π·f·(d_t + d_r)/c) = e_t · e_r`. The kernel caches the
//! one-way distances `d_t`, `d_r` for a block of candidates, turns them into
//! phasor tables, and contracts the receive side with a single real matrix
//! product. The transmit side is then summed per candidate in ascending `t`.
//! Blocks have a fixed size, so results are identical for any worker count.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{cis_cycles, distance, AntennaArray, BasebandTensor, FrequencySet, Vec3, SPEED_OF_LIGHT};

/// Candidates per kernel block. Fixed: part of the reduction-order contract.
pub const BLOCK: usize = 64;

/// Lateral sampling of a regular pixel grid. Pixel `(u, v)` sits at
/// `x = cx − ex/2 + u·ex/(W−1)`, `y = cy − ey/2 + v·ey/(H−1)` (the center
/// when a count is 1). Row `v = 0` is the smallest `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    /// Full lateral span `[x, y]` between the outermost pixel centers, meters.
    pub extent: [f64; 2],
    #[serde(default)]
    pub center: [f64; 2],
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, extent: [f64; 2], center: [f64; 2]) -> Result<Self> {
        let g = GridGeometry { width, height, extent, center };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!("grid must be at least 1x1, got {}x{}", self.width, self.height)));
        }
        if !self.extent.iter().chain(&self.center).all(|v| v.is_finite()) || self.extent.iter().any(|e| *e < 0.0) {
            return Err(Error::Validation(format!("grid extent/center invalid: {:?} {:?}", self.extent, self.center)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel pitch `[dx, dy]` (0 along an axis with a single pixel).
    pub fn pitch(&self) -> [f64; 2] {
        let p = |e: f64, n: usize| if n > 1 { e / (n - 1) as f64 } else { 0.0 };
        [p(self.extent[0], self.width), p(self.extent[1], self.height)]
    }

    pub fn x(&self, u: usize) -> f64 {
        self.center[0] - self.extent[0] / 2.0 + u as f64 * self.pitch()[0]
            + if self.width == 1 { self.extent[0] / 2.0 } else { 0.0 }
    }

    pub fn y(&self, v: usize) -> f64 {
        self.center[1] - self.extent[1] / 2.0 + v as f64 * self.pitch()[1]
            + if self.height == 1 { self.extent[1] / 2.0 } else { 0.0 }
    }

    /// Continuous pixel coordinates of a lateral position.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let [px, py] = self.pitch();
        let u = if px > 0.0 { (x - self.x(0)) / px } else { 0.0 };
        let v = if py > 0.0 { (y - self.y(0)) / py } else { 0.0 };
        (u, v)
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }
}

/// Candidate points: a lateral grid with a depth prior per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGrid {
    pub geometry: GridGeometry,
    pub prior_depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CandidateGrid {
    pub fn new(geometry: GridGeometry, prior_depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.len();
        if prior_depth.len() != n || valid.len() != n {
            return Err(Error::Dimension(format!(
                "grid is {}x{} but prior has {} depths and {} flags",
                geometry.width,
                geometry.height,
                prior_depth.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !prior_depth[i].is_finite()) {
            return Err(Error::Validation(format!("prior depth at pixel {i} is not finite")));
        }
        Ok(CandidateGrid { geometry, prior_depth, valid })
    }

    /// Every pixel valid with the same prior depth.
    pub fn scalar(geometry: GridGeometry, depth: f64) -> Result<Self> {
        let n = geometry.len();
        CandidateGrid::new(geometry, vec![depth; n], vec![true; n])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// 3D candidate position of pixel `i`.
    pub fn point(&self, i: usize) -> Vec3 {
        let g = &self.geometry;
        [g.x(i % g.width), g.y(i / g.width), self.prior_depth[i]]
    }

    /// Same grid with a different depth per pixel (validity unchanged).
    pub fn with_depths(&self, depths: Vec<f64>) -> Result<Self> {
        CandidateGrid::new(self.geometry, depths, self.valid.clone())
    }
}

/// Mean residual phasor per pixel and frequency, pixel-major.
/// Invalid pixels hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationField {
    pub geometry: GridGeometry,
    pub freq_count: usize,
    pub data: Vec<Complex64>,
    pub valid: Vec<bool>,
}

impl CorrelationField {
    #[inline]
    pub fn get(&self, pixel: usize, k: usize) -> Complex64 {
        self.data[pixel * self.freq_count + k]
    }

    pub fn pixel(&self, pixel: usize) -> &[Complex64] {
        &self.data[pixel * self.freq_count..(pixel + 1) * self.freq_count]
    }
}

/// One-way distances from `p` to every TX and RX element.
pub fn precompute_distance_tables(p: &Vec3, array: &AntennaArray) -> (Vec<f64>, Vec<f64>) {
    (
        array.tx().iter().map(|t| distance(t, p)).collect(),
        array.rx().iter().map(|r| distance(r, p)).collect(),
    )
}

/// Baseband repacked per frequency as the real block matrix
/// `[[Re S, −Im S], [Im S, Re S]]` (`2T × 2R`, row-major).
struct PackedBaseband {
    t: usize,
    r: usize,
    mats: Vec<Vec<f64>>,
}

impl PackedBaseband {
    fn new(bb: &BasebandTensor) -> Self {
        let (t, r, f) = bb.dims();
        let mats = (0..f)
            .map(|k| {
                let mut m = vec![0.0; 4 * t * r];
                let cols = 2 * r;
                for ti in 0..t {
                    for ri in 0..r {
                        let s = bb.get(ti, ri, k);
                        m[ti * cols + ri] = s.re;
                        m[ti * cols + r + ri] = -s.im;
                        m[(t + ti) * cols + ri] = s.im;
                        m[(t + ti) * cols + r + ri] = s.re;
                    }
                }
                m
            })
            .collect();
        PackedBaseband { t, r, mats }
    }
}

/// Per-thread scratch for one block.
struct Scratch {
    dt: Vec<f64>,
    dr: Vec<f64>,
    et: Vec<Complex64>,
    e: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    fn new(t: usize, r: usize) -> Self {
        Scratch {
            dt: vec![0.0; t * BLOCK],
            dr: vec![0.0; r * BLOCK],
            et: vec![Complex64::new(0.0, 0.0); t * BLOCK],
            e: vec![0.0; 2 * r * BLOCK],
            p: vec![0.0; 2 * t * BLOCK],
        }
    }
}

/// Correlate one block of at most [`BLOCK`] points; writes `points.len() × F`
/// phasors (point-major) into `out`.
fn correlate_block(
    packed: &PackedBaseband,
    array: &AntennaArray,
    cycles_per_m: &[f64],
    points: &[Vec3],
    scratch: &mut Scratch,
    out: &mut [Complex64],
) {
    let (nt, nr) = (packed.t, packed.r);
    let b = points.len();
    let nf = cycles_per_m.len();
    // Distance tables: d_t[t·b + j], d_r[r·b + j].
    for (ti, tx) in array.tx().iter().enumerate() {
        for (j, p) in points.iter().enumerate() {
            scratch.dt[ti * b + j] = distance(tx, p);
        }
    }
    for (ri, rx) in array.rx().iter().enumerate() {
        for (j, p) in points.iter().enumerate() {
            scratch.dr[ri * b + j] = distance(rx, p);
        }
    }
    let scale = 1.0 / (nt * nr) as f64;
    for (k, cpm) in cycles_per_m.iter().enumerate() {
        // E = [Re e_r; Im e_r] (2R × b).
        for ri in 0..nr {
            for j in 0..b {
                let e = cis_cycles(cpm * scratch.dr[ri * b + j]);
                scratch.e[ri * b + j] = e.re;
                scratch.e[(nr + ri) * b + j] = e.im;
            }
        }
        for i in 0..nt * b {
            scratch.et[i] = cis_cycles(cpm * scratch.dt[i]);
        }
        // P = M_k · E (2T × b).
        unsafe {
            matrixmultiply::dgemm(
                2 * nt,
                2 * nr,
                b,
                1.0,
                packed.mats[k].as_ptr(),
                (2 * nr) as isize,
                1,
                scratch.e.as_ptr(),
                b as isize,
                1,
                0.0,
                scratch.p.as_mut_ptr(),
                b as isize,
                1,
            );
        }
        for j in 0..b {
            let mut acc = Complex64::new(0.0, 0.0);
            for ti in 0..nt {
                let p = Complex64::new(scratch.p[ti * b + j], scratch.p[(nt + ti) * b + j]);
                acc += scratch.et[ti * b + j] * p;
            }
            out[j * nf + k] = acc * scale;
        }
    }
}

/// Mean residual phasor `(1/TR)·Σ s[t,r,k]·conj(w(ρ̃, f_k))` for every
/// point, point-major (`points.len() × F`).
pub fn correlate_points(
    baseband: &BasebandTensor,
    points: &[Vec3],
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<Vec<Complex64>> {
    baseband.check_dims(array, freqs)?;
    if let Some(p) = points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Validation(format!("candidate point not finite: {p:?}")));
    }
    let packed = PackedBaseband::new(baseband);
    let cycles_per_m: Vec<f64> = freqs.as_slice().iter().map(|f| f / SPEED_OF_LIGHT).collect();
    let nf = freqs.len();
    let mut out = vec![Complex64::new(0.0, 0.0); points.len() * nf];
    out.par_chunks_mut(BLOCK * nf)
        .zip(points.par_chunks(BLOCK))
        .for_each_init(
            || Scratch::new(packed.t, packed.r),
            |scratch, (dst, pts)| correlate_block(&packed, array, &cycles_per_m, pts, scratch, dst),
        );
    Ok(out)
}

/// Correlate every valid pixel of `grid`; invalid pixels are skipped and
/// marked with NaN.
pub fn correlate_grid(
    baseband: &BasebandTensor,
    grid: &CandidateGrid,
    array: &AntennaArray,
    freqs: &FrequencySet,
) -> Result<CorrelationField> {
    baseband.check_dims(array, freqs)?;
    let idx: Vec<usize> = (0..grid.geometry.len()).filter(|&i| grid.valid[i]).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData("candidate grid has no valid pixels".into()));
    }
    let points: Vec<Vec3> = idx.iter().map(|&i| grid.point(i)).collect();
    let vals = correlate_points(baseband, &points, array, freqs)?;
    let nf = freqs.len();
    let nan = Complex64::new(f64::NAN, f64::NAN);
    let mut data = vec![nan; grid.geometry.len() * nf];
    for (j, &i) in idx.iter().enumerate() {
        data[i * nf..(i + 1) * nf].copy_from_slice(&vals[j * nf..(j + 1) * nf]);
    }
    Ok(CorrelationField {
        geometry: grid.geometry,
        freq_count: nf,
        data,
        valid: grid.valid.clone(),
    })
}
