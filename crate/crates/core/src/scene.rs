//! Synthetic scenes: analytic surfaces sampled into point-target sets.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{PointTarget, Scene, Vec3};

fn default_spacing() -> f64 {
    0.001
}

fn default_extent() -> f64 {
    0.08
}

/// Parameters of a synthetic scene. Lateral extents are full side lengths
/// of a square footprint centered on `center_xy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneSpec {
    Plane {
        z: f64,
        #[serde(default = "default_extent")]
        extent: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
        /// Rotation about the y axis, degrees; z grows with x for positive tilt.
        #[serde(default)]
        tilt_deg: f64,
        #[serde(default)]
        center_xy: [f64; 2],
    },
    SphereCap {
        center: Vec3,
        radius: f64,
        /// Lateral radius of the sampled cap; defaults to the sphere radius.
        #[serde(default)]
        cap_radius: Option<f64>,
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    Step {
        levels: [f64; 2],
        /// Points with `x < edge_x` sit on `levels[0]`, the rest on `levels[1]`.
        #[serde(default)]
        edge_x: f64,
        #[serde(default = "default_extent")]
        extent: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default)]
        center_xy: [f64; 2],
    },
    RandomCloud {
        count: usize,
        min: Vec3,
        max: Vec3,
        #[serde(default)]
        seed: u64,
    },
}

impl SceneSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SceneSpec::Plane { .. } => "plane",
            SceneSpec::SphereCap { .. } => "sphere-cap",
            SceneSpec::Step { .. } => "step",
            SceneSpec::RandomCloud { .. } => "random-cloud",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let check_grid = |extent: f64, spacing: f64| -> Result<()> {
            if !(extent.is_finite() && extent >= 0.0) {
                return bad(format!("scene extent must be >= 0, got {extent}"));
            }
            if !(spacing.is_finite() && spacing > 0.0) {
                return bad(format!("scene spacing must be > 0, got {spacing}"));
            }
            if extent / spacing > 20_000.0 {
                return bad(format!("scene extent/spacing ratio too large ({extent}/{spacing})"));
            }
            Ok(())
        };
        match self {
            SceneSpec::Plane { z, extent, spacing, tilt_deg, .. } => {
                check_grid(*extent, *spacing)?;
                if !z.is_finite() || tilt_deg.abs() >= 80.0 {
                    return bad(format!("plane needs finite z and |tilt| < 80 deg (z={z}, tilt={tilt_deg})"));
                }
            }
            SceneSpec::SphereCap { center, radius, cap_radius, spacing } => {
                check_grid(2.0 * radius, *spacing)?;
                if !(radius.is_finite() && *radius > 0.0) || !center.iter().all(|v| v.is_finite()) {
                    return bad(format!("sphere-cap needs finite center and radius > 0 (radius={radius})"));
                }
                if let Some(c) = cap_radius {
                    if !(*c > 0.0 && *c <= *radius) {
                        return bad(format!("cap_radius must lie in (0, radius], got {c}"));
                    }
                }
            }
            SceneSpec::Step { levels, edge_x, extent, spacing, .. } => {
                check_grid(*extent, *spacing)?;
                if !(levels.iter().all(|v| v.is_finite()) && edge_x.is_finite()) || levels[0] == levels[1] {
                    return bad(format!("step needs two distinct finite levels, got {levels:?}"));
                }
            }
            SceneSpec::RandomCloud { count, min, max, .. } => {
                if *count == 0 || *count > 10_000_000 {
                    return bad(format!("random-cloud count must be in 1..=1e7, got {count}"));
                }
                if (0..3).any(|i| !(min[i].is_finite() && max[i].is_finite() && min[i] <= max[i])) {
                    return bad(format!("random-cloud bounds invalid: {min:?}..{max:?}"));
                }
            }
        }
        Ok(())
    }

    /// The analytic surface behind the scene, if it has one.
    pub fn surface(&self) -> Option<Surface> {
        match *self {
            SceneSpec::Plane { z, extent, tilt_deg, center_xy, .. } => Some(Surface::Plane {
                z,
                slope: tilt_deg.to_radians().tan(),
                center_xy,
                half: extent / 2.0,
            }),
            SceneSpec::SphereCap { center, radius, cap_radius, .. } => Some(Surface::SphereCap {
                center,
                radius,
                cap_radius: cap_radius.unwrap_or(radius),
            }),
            SceneSpec::Step { levels, edge_x, extent, center_xy, .. } => Some(Surface::Step {
                levels,
                edge_x,
                center_xy,
                half: extent / 2.0,
            }),
            SceneSpec::RandomCloud { .. } => None,
        }
    }
}

/// Closed-form surfaces facing the aperture (seen from `z → −∞`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Plane { z: f64, slope: f64, center_xy: [f64; 2], half: f64 },
    SphereCap { center: Vec3, radius: f64, cap_radius: f64 },
    Step { levels: [f64; 2], edge_x: f64, center_xy: [f64; 2], half: f64 },
}

impl Surface {
    /// Depth of the surface at lateral position `(x, y)`, if inside its footprint.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Surface::Plane { z, slope, center_xy, half } => {
                let (dx, dy) = (x - center_xy[0], y - center_xy[1]);
                (dx.abs() <= half && dy.abs() <= half).then(|| z + slope * dx)
            }
            Surface::SphereCap { center, radius, cap_radius } => {
                let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                (r2 <= cap_radius * cap_radius).then(|| center[2] - (radius * radius - r2).max(0.0).sqrt())
            }
            Surface::Step { levels, edge_x, center_xy, half } => {
                let (dx, dy) = (x - center_xy[0], y - center_xy[1]);
                (dx.abs() <= half && dy.abs() <= half).then(|| if x < edge_x { levels[0] } else { levels[1] })
            }
        }
    }

    /// Nearest positive ray parameter `s` with `origin + s·dir` on the surface.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let hit_at = |s: f64| -> Option<f64> {
            if !(s.is_finite() && s > 1e-12) {
                return None;
            }
            let p = [origin[0] + s * dir[0], origin[1] + s * dir[1], origin[2] + s * dir[2]];
            let d = self.depth_at(p[0], p[1])?;
            ((d - p[2]).abs() <= 1e-9 * (1.0 + d.abs())).then_some(s)
        };
        match *self {
            Surface::Plane { z, slope, center_xy, .. } => {
                // z − slope·(x − cx) = z0 along the ray.
                let denom = dir[2] - slope * dir[0];
                let num = z + slope * (origin[0] - center_xy[0]) - origin[2];
                hit_at(num / denom)
            }
            Surface::SphereCap { center, radius, .. } => {
                let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
                let a = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
                let b = oc[0] * dir[0] + oc[1] * dir[1] + oc[2] * dir[2];
                let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .filter(|&s| {
                        let pz = origin[2] + s * dir[2];
                        pz <= center[2]
                    })
                    .find_map(hit_at)
            }
            Surface::Step { levels, .. } => {
                let mut best: Option<f64> = None;
                for level in levels {
                    if let Some(s) = hit_at((level - origin[2]) / dir[2]) {
                        best = Some(best.map_or(s, |b: f64| b.min(s)));
                    }
                }
                best
            }
        }
    }
}

/// Regular lateral lattice covering `[c − half, c + half]` with the given
/// spacing, symmetric about the center.
fn lattice(center: f64, half: f64, spacing: f64) -> Vec<f64> {
    let n = (2.0 * half / spacing + 1e-9).floor() as usize + 1;
    let start = center - (n - 1) as f64 * spacing / 2.0;
    (0..n).map(|i| start + i as f64 * spacing).collect()
}

/// Sample a scene deterministically from its specification.
pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut targets = Vec::new();
    match *spec {
        SceneSpec::Plane { extent, spacing, center_xy, .. } | SceneSpec::Step { extent, spacing, center_xy, .. } => {
            let surf = spec.surface().expect("analytic");
            let half = extent / 2.0;
            let xs = lattice(center_xy[0], half, spacing);
            for y in lattice(center_xy[1], half, spacing) {
                for &x in &xs {
                    let z = surf.depth_at(x, y).unwrap_or_else(|| surf_edge_depth(&surf, x, y));
                    targets.push(PointTarget::unit([x, y, z]));
                }
            }
        }
        SceneSpec::SphereCap { center, radius, cap_radius, spacing } => {
            let cap = cap_radius.unwrap_or(radius);
            let xs = lattice(center[0], cap, spacing);
            for y in lattice(center[1], cap, spacing) {
                for &x in &xs {
                    let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                    if r2 <= cap * cap {
                        let z = center[2] - (radius * radius - r2).max(0.0).sqrt();
                        targets.push(PointTarget::unit([x, y, z]));
                    }
                }
            }
        }
        SceneSpec::RandomCloud { count, min, max, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..count {
                let p = [0, 1, 2].map(|i| if max[i] > min[i] { rng.random_range(min[i]..max[i]) } else { min[i] });
                targets.push(PointTarget {
                    position: p,
                    reflectivity: Complex64::new(1.0, 0.0),
                    phase_offset: 0.0,
                });
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Config(format!("{} scene produced no targets", spec.kind())));
    }
    Ok(Scene::new(targets))
}

// Lattice points can land a rounding error outside the footprint.
fn surf_edge_depth(surf: &Surface, x: f64, y: f64) -> f64 {
    match *surf {
        Surface::Plane { z, slope, center_xy, .. } => z + slope * (x - center_xy[0]),
        Surface::Step { levels, edge_x, .. } => {
            let _ = y;
            if x < edge_x {
                levels[0]
            } else {
                levels[1]
            }
        }
        Surface::SphereCap { .. } => unreachable!("sphere caps are filtered by radius"),
    }
}
