//! Evaluation metrics: one-way Chamfer distances and projective depth error.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlate::GridGeometry;
use crate::error::{Error, Result};
use crate::reconstruct::RadarImage;
use crate::scene::{make_scene, SceneSpec};
use crate::signal::{Scene, Vec3};

/// Below this many `src × dst` pairs the exhaustive scan is used directly.
const BRUTE_FORCE_PAIRS: usize = 1 << 14;

#[inline]
fn dist(a: &Vec3, b: &Vec3) -> f64 {
    crate::signal::distance(a, b)
}

fn brute_nn(p: &Vec3, dst: &[Vec3]) -> f64 {
    dst.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

/// k-d tree over a point cloud for nearest-neighbor queries.
pub struct NearestNeighbors<'a> {
    points: &'a [Vec3],
    tree: ImmutableKdTree<f64, 3>,
}

impl<'a> NearestNeighbors<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        NearestNeighbors { points, tree: ImmutableKdTree::new_from_slice(points) }
    }

    /// Distance from `p` to its nearest point.
    pub fn nearest_distance(&self, p: &Vec3) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let hit = self.tree.nearest_one::<SquaredEuclidean>(p);
        dist(p, &self.points[hit.item as usize])
    }
}

/// Mean over `src` of the distance to the nearest point of `dst`.
pub fn chamfer_one_way(src: &[Vec3], dst: &[Vec3]) -> Result<f64> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::InsufficientData("chamfer distance needs non-empty clouds".into()));
    }
    let d: Vec<f64> = if src.len() * dst.len() <= BRUTE_FORCE_PAIRS {
        src.iter().map(|p| brute_nn(p, dst)).collect()
    } else {
        let nn = NearestNeighbors::new(dst);
        src.par_iter().map(|p| nn.nearest_distance(p)).collect()
    };
    Ok(d.iter().sum::<f64>() / src.len() as f64)
}

/// Exhaustive reference for [`chamfer_one_way`].
pub fn chamfer_brute_force(src: &[Vec3], dst: &[Vec3]) -> Result<f64> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::InsufficientData("chamfer distance needs non-empty clouds".into()));
    }
    Ok(src.iter().map(|p| brute_nn(p, dst)).sum::<f64>() / src.len() as f64)
}

/// Shrink a mask by `iterations` steps of 4-neighborhood erosion; pixels
/// outside the frame count as unset.
pub fn erode_mask(mask: &[bool], width: usize, height: usize, iterations: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..iterations {
        let prev = cur.clone();
        for v in 0..height {
            for u in 0..width {
                let i = v * width + u;
                if !prev[i] {
                    continue;
                }
                let keep = u > 0 && prev[i - 1] && u + 1 < width && prev[i + 1] && v > 0 && prev[i - width]
                    && v + 1 < height && prev[i + width];
                cur[i] = keep;
            }
        }
    }
    cur
}

/// Mean absolute depth difference over a mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveError {
    pub value: f64,
    /// Pixels in the (possibly eroded) joint mask; the divisor.
    pub pixels: usize,
    /// Pixels in the full frame.
    pub frame_pixels: usize,
}

/// Projective error between two depth maps on the same grid, averaged over
/// the jointly valid pixels after `erode` erosion steps.
pub fn projective_error(
    d_r: &[f64],
    valid_r: &[bool],
    d_gt: &[f64],
    valid_gt: &[bool],
    width: usize,
    height: usize,
    erode: usize,
) -> Result<ProjectiveError> {
    let n = width * height;
    if [d_r.len(), valid_r.len(), d_gt.len(), valid_gt.len()].iter().any(|&l| l != n) {
        return Err(Error::Dimension(format!("depth maps do not match a {width}x{height} grid")));
    }
    let joint: Vec<bool> = (0..n).map(|i| valid_r[i] && valid_gt[i]).collect();
    let mask = erode_mask(&joint, width, height, erode);
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData(format!("joint mask is empty after {erode} erosion steps")));
    }
    let sum: f64 = idx.iter().map(|&i| (d_r[i] - d_gt[i]).abs()).sum();
    Ok(ProjectiveError { value: sum / idx.len() as f64, pixels: idx.len(), frame_pixels: n })
}

/// Ground-truth depth raster on the radar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMap {
    pub geometry: GridGeometry,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Rasterize the scene's ground truth on the radar grid: analytic surfaces
/// are sampled at pixel centers; point clouds keep the nearest-to-camera
/// point per pixel cell.
pub fn gt_depth_map(spec: &SceneSpec, scene: &Scene, geometry: &GridGeometry) -> GroundTruthMap {
    let n = geometry.len();
    let mut depth = vec![f64::NAN; n];
    match spec.surface() {
        Some(surf) => {
            for (i, d) in depth.iter_mut().enumerate() {
                if let Some(z) = surf.depth_at(geometry.x(i % geometry.width), geometry.y(i / geometry.width)) {
                    *d = z;
                }
            }
        }
        None => {
            for t in &scene.targets {
                let (u, v) = geometry.to_pixel(t.position[0], t.position[1]);
                let (u, v) = (u.round(), v.round());
                if u >= 0.0 && v >= 0.0 && (u as usize) < geometry.width && (v as usize) < geometry.height {
                    let cell = &mut depth[geometry.index(u as usize, v as usize)];
                    if cell.is_nan() || t.position[2] < *cell {
                        *cell = t.position[2];
                    }
                }
            }
        }
    }
    let valid = depth.iter().map(|d| d.is_finite()).collect();
    GroundTruthMap { geometry: *geometry, depth, valid }
}

/// Ground-truth point cloud resampled at the given lateral spacing.
pub fn resample_gt(spec: &SceneSpec, spacing: f64) -> Result<Vec<Vec3>> {
    let mut s = spec.clone();
    match &mut s {
        SceneSpec::Plane { spacing: sp, .. } | SceneSpec::Step { spacing: sp, .. } | SceneSpec::SphereCap { spacing: sp, .. } => {
            *sp = spacing
        }
        SceneSpec::RandomCloud { .. } => {}
    }
    Ok(make_scene(&s)?.positions())
}

/// Chamfer distances in both directions and projective errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub c_gt_to_r: f64,
    pub c_r_to_gt: f64,
    pub p_masked: f64,
    pub p_eroded: f64,
    pub gt_points: usize,
    pub radar_points: usize,
    pub masked_pixels: usize,
    pub eroded_pixels: usize,
    pub frame_pixels: usize,
}

/// Evaluate a radar image against ground truth. `gt_points` should have a
/// density similar to the radar grid.
pub fn evaluate(image: &RadarImage, gt: &GroundTruthMap, gt_points: &[Vec3], erode: usize) -> Result<EvalReport> {
    if image.geometry != gt.geometry {
        return Err(Error::Dimension("radar image and ground truth use different grids".into()));
    }
    let radar: Vec<Vec3> = image.points().into_iter().map(|(p, _)| p).collect();
    let (w, h) = (image.geometry.width, image.geometry.height);
    let p = projective_error(&image.depth, &image.valid, &gt.depth, &gt.valid, w, h, 0)?;
    let pe = projective_error(&image.depth, &image.valid, &gt.depth, &gt.valid, w, h, erode)?;
    Ok(EvalReport {
        c_gt_to_r: chamfer_one_way(gt_points, &radar)?,
        c_r_to_gt: chamfer_one_way(&radar, gt_points)?,
        p_masked: p.value,
        p_eroded: pe.value,
        gt_points: gt_points.len(),
        radar_points: radar.len(),
        masked_pixels: p.pixels,
        eroded_pixels: pe.pixels,
        frame_pixels: p.frame_pixels,
    })
}
