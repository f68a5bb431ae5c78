//! Per-pixel depth priors from an optical depth map: back-projection,
//! Delaunay triangulation in the camera pixel domain, rigid transform into
//! radar coordinates and orthographic barycentric rasterization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::correlate::{CandidateGrid, GridGeometry};
use crate::error::{Error, Result};
use crate::scene::Surface;
use crate::signal::{Scene, Vec3};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64) -> Result<Self> {
        let k = CameraIntrinsics { fu, fv, cu, cv };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0 && self.fu.is_finite() && self.fv.is_finite())
            || !(self.cu.is_finite() && self.cv.is_finite())
        {
            return Err(Error::Validation(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// `K⁻¹·(u·d, v·d, d)`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        [(u - self.cu) * d / self.fu, (v - self.cv) * d / self.fv, d]
    }

    /// Pixel coordinates and depth of a camera-frame point.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (self.fu * p[0] / p[2] + self.cu, self.fv * p[1] / p[2] + self.cv, p[2])
    }
}

/// Rigid transform from camera to radar coordinates: `v' = R·v + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: &Vec3) -> Result<Vec3> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if !(n > 1e-12 && n.is_finite()) {
        return Err(Error::DegenerateGeometry(format!("cannot normalize {a:?}")));
    }
    Ok([a[0] / n, a[1] / n, a[2] / n])
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let e = Extrinsics { rotation, translation };
        e.validate()?;
        Ok(e)
    }

    /// Camera at `eye` looking at `target`. Image `+v` follows `down_hint`
    /// as closely as possible; the frame is right-handed.
    pub fn look_at(eye: Vec3, target: Vec3, down_hint: Vec3) -> Result<Self> {
        let z = normalize(&sub(&target, &eye))?;
        let x = normalize(&cross(&down_hint, &z))?;
        let y = cross(&z, &x);
        let rotation = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
        Extrinsics::new(rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().flatten().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(Error::Validation("extrinsics must be finite".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::Validation(format!("rotation is not orthonormal (RᵀR[{i}][{j}] = {dot})")));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2] + t[0],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2] + t[1],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2] + t[2],
        ]
    }

    /// `Rᵀ·v`: a radar-frame direction expressed in the camera frame.
    pub fn rotate_inverse(&self, v: &Vec3) -> Vec3 {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2])
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }
}

/// Dense depth image in meters, row-major with `v` down the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl OpticalDepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if depth.len() != width * height || valid.len() != width * height {
            return Err(Error::Dimension(format!("depth map planes do not match {width}x{height}")));
        }
        if let Some(i) = (0..depth.len()).find(|&i| valid[i] && !(depth[i] > 0.0 && depth[i].is_finite())) {
            return Err(Error::Validation(format!("depth map pixel {i} is valid but has depth {}", depth[i])));
        }
        Ok(OpticalDepthMap { width, height, depth, valid })
    }

    /// Treat non-finite or non-positive depths as holes.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| *d > 0.0 && d.is_finite()).collect();
        OpticalDepthMap::new(width, height, depth, valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Triangle mesh carrying each vertex's source pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub source_pixels: Vec<[f64; 2]>,
}

/// One point per valid pixel, in camera coordinates.
pub fn backproject_depth(map: &OpticalDepthMap, intr: &CameraIntrinsics) -> Result<TriangleMesh> {
    intr.validate()?;
    let mut vertices = Vec::new();
    let mut source_pixels = Vec::new();
    for v in 0..map.height {
        for u in 0..map.width {
            let i = v * map.width + u;
            if map.valid[i] {
                vertices.push(intr.unproject(u as f64, v as f64, map.depth[i]));
                source_pixels.push([u as f64, v as f64]);
            }
        }
    }
    if vertices.len() < 3 {
        return Err(Error::InsufficientData(format!("{} valid depth pixels, need at least 3", vertices.len())));
    }
    Ok(TriangleMesh { vertices, triangles: Vec::new(), source_pixels })
}

struct PixelVertex {
    pos: Point2<f64>,
    index: usize,
}

impl HasPosition for PixelVertex {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// 2D Delaunay triangulation of the mesh's source pixels; the topology is
/// attached to the 3D vertices unchanged.
pub fn triangulate(points: &TriangleMesh) -> Result<TriangleMesh> {
    if points.source_pixels.len() < 3 {
        return Err(Error::InsufficientData("triangulation needs at least 3 points".into()));
    }
    let verts: Vec<PixelVertex> = points
        .source_pixels
        .iter()
        .enumerate()
        .map(|(index, p)| PixelVertex { pos: Point2::new(p[0], p[1]), index })
        .collect();
    let tri = DelaunayTriangulation::<PixelVertex>::bulk_load_stable(verts)
        .map_err(|e| Error::DegenerateGeometry(format!("triangulation failed: {e:?}")))?;
    let mut triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| f.vertices().map(|v| v.data().index))
        .filter(|t| signed_area2(&points.source_pixels, t) != 0.0)
        .collect();
    if triangles.is_empty() {
        return Err(Error::DegenerateGeometry("all input pixels are collinear".into()));
    }
    triangles.sort_unstable();
    Ok(TriangleMesh { triangles, ..points.clone() })
}

fn signed_area2(px: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (px[t[0]], px[t[1]], px[t[2]]);
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Apply `v' = R·v + t` to every vertex.
pub fn transform_mesh(mesh: &TriangleMesh, ext: &Extrinsics) -> Result<TriangleMesh> {
    ext.validate()?;
    Ok(TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| ext.apply(v)).collect(),
        ..mesh.clone()
    })
}

/// Rasterization options.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RasterOptions {
    /// Drop triangles with any 3D edge longer than this, meters.
    #[serde(default)]
    pub max_edge: Option<f64>,
}

const RASTER_BAND_ROWS: usize = 16;

/// Orthographic rasterization onto the radar grid: a pixel is covered when
/// its center lies inside a triangle's `(x, y)` projection (top-left rule
/// on shared edges); the front-most (smallest z) interpolated depth wins.
pub fn rasterize_prior(mesh: &TriangleMesh, geometry: &GridGeometry, opts: &RasterOptions) -> Result<CandidateGrid> {
    geometry.validate()?;
    if let Some(t) = mesh.triangles.iter().find(|t| t.iter().any(|&i| i >= mesh.vertices.len())) {
        return Err(Error::Validation(format!("triangle {t:?} indexes past {} vertices", mesh.vertices.len())));
    }
    let keep = |t: &[usize; 3]| match opts.max_edge {
        None => true,
        Some(m) => (0..3).all(|e| {
            let (a, b) = (&mesh.vertices[t[e]], &mesh.vertices[t[(e + 1) % 3]]);
            crate::signal::distance(a, b) <= m
        }),
    };
    // Triangles in continuous pixel coordinates, oriented counter-clockwise.
    let tris: Vec<[[f64; 3]; 3]> = mesh
        .triangles
        .iter()
        .filter(|t| keep(t))
        .filter_map(|t| {
            let mut p = t.map(|i| {
                let v = mesh.vertices[i];
                let (u, w) = geometry.to_pixel(v[0], v[1]);
                [u, w, v[2]]
            });
            let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
            if area == 0.0 || !area.is_finite() {
                return None;
            }
            if area < 0.0 {
                p.swap(1, 2);
            }
            Some(p)
        })
        .collect();

    let (w, h) = (geometry.width, geometry.height);
    let mut depth = vec![f64::INFINITY; w * h];
    depth.par_chunks_mut(RASTER_BAND_ROWS * w).enumerate().for_each(|(band, rows)| {
        let v0 = band * RASTER_BAND_ROWS;
        let v1 = v0 + rows.len() / w;
        for tri in &tris {
            let vmin = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).ceil().max(v0 as f64);
            let vmax = tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).floor().min((v1 - 1) as f64);
            let umin = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let umax = tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).floor().min((w - 1) as f64);
            if vmin > vmax || umin > umax {
                continue;
            }
            for v in vmin as usize..=vmax as usize {
                for u in umin as usize..=umax as usize {
                    if let Some(z) = cover(tri, u as f64, v as f64) {
                        let cell = &mut rows[(v - v0) * w + u];
                        if z < *cell {
                            *cell = z;
                        }
                    }
                }
            }
        }
    });
    let valid: Vec<bool> = depth.iter().map(|d| d.is_finite()).collect();
    let depth = depth.into_iter().map(|d| if d.is_finite() { d } else { f64::NAN }).collect();
    CandidateGrid::new(*geometry, depth, valid)
}

/// Barycentric depth at `(u, v)` if covered; `tri` is counter-clockwise.
fn cover(tri: &[[f64; 3]; 3], u: f64, v: f64) -> Option<f64> {
    let mut w = [0.0; 3];
    for e in 0..3 {
        let a = tri[(e + 1) % 3];
        let b = tri[(e + 2) % 3];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        // Evaluate each edge from a canonical endpoint so that neighbours
        // sharing it get exactly opposite values and no pixel falls through.
        let f = if (a[0], a[1]) <= (b[0], b[1]) {
            dx * (v - a[1]) - dy * (u - a[0])
        } else {
            -((-dx) * (v - b[1]) - (-dy) * (u - b[0]))
        };
        // Top-left rule for y-up, counter-clockwise triangles: an edge owns
        // its boundary when it runs leftward (top) or downward (left).
        let owns = dy < 0.0 || (dy == 0.0 && dx < 0.0);
        if f < 0.0 || (f == 0.0 && !owns) {
            return None;
        }
        w[e] = f;
    }
    let total = w[0] + w[1] + w[2];
    if total <= 0.0 {
        return None;
    }
    Some((w[0] * tri[0][2] + w[1] * tri[1][2] + w[2] * tri[2][2]) / total)
}

/// Full pipeline: back-project, triangulate, transform, rasterize.
pub fn build_prior(
    map: &OpticalDepthMap,
    intr: &CameraIntrinsics,
    ext: &Extrinsics,
    geometry: &GridGeometry,
    opts: &RasterOptions,
) -> Result<CandidateGrid> {
    let cloud = backproject_depth(map, intr)?;
    let mesh = triangulate(&cloud)?;
    let radar = transform_mesh(&mesh, ext)?;
    rasterize_prior(&radar, geometry, opts)
}

/// Ray-cast an analytic surface into a depth image seen by a pinhole camera
/// whose pose is `cam_to_radar`.
pub fn render_surface_depth(
    surface: &Surface,
    intr: &CameraIntrinsics,
    cam_to_radar: &Extrinsics,
    width: usize,
    height: usize,
) -> Result<OpticalDepthMap> {
    intr.validate()?;
    cam_to_radar.validate()?;
    let mut depth = vec![0.0; width * height];
    depth.par_chunks_mut(width.max(1)).enumerate().for_each(|(v, row)| {
        for (u, d) in row.iter_mut().enumerate() {
            let dir_c = [(u as f64 - intr.cu) / intr.fu, (v as f64 - intr.cv) / intr.fv, 1.0];
            let dir = cam_to_radar.rotate(&dir_c);
            // Ray parameter equals camera depth because dir_c.z = 1.
            *d = surface.intersect_ray(&cam_to_radar.translation, &dir).unwrap_or(0.0);
        }
    });
    OpticalDepthMap::from_depths(width, height, depth)
}

/// Z-buffer splat of scene points into a depth image (for scenes without an
/// analytic surface).
pub fn render_scene_depth(
    scene: &Scene,
    intr: &CameraIntrinsics,
    cam_to_radar: &Extrinsics,
    width: usize,
    height: usize,
) -> Result<OpticalDepthMap> {
    intr.validate()?;
    cam_to_radar.validate()?;
    let mut depth = vec![f64::INFINITY; width * height];
    for t in &scene.targets {
        let pc = cam_to_radar.rotate_inverse(&sub(&t.position, &cam_to_radar.translation));
        if pc[2] <= 0.0 {
            continue;
        }
        let (u, v, d) = intr.project(&pc);
        let (u, v) = (u.round(), v.round());
        if u >= 0.0 && v >= 0.0 && (u as usize) < width && (v as usize) < height {
            let cell = &mut depth[v as usize * width + u as usize];
            *cell = cell.min(d);
        }
    }
    let depth = depth.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect();
    OpticalDepthMap::from_depths(width, height, depth)
}
