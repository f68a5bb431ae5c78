//! Python bindings: the `mmfsk` extension module.

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mmfsk_core::config::ExperimentConfig;
use mmfsk_core::correlate::{CandidateGrid, GridGeometry};
use mmfsk_core::experiment::run_pipeline;
use mmfsk_core::metrics::chamfer_one_way;
use mmfsk_core::reconstruct::{self, VoxelGridSpec};
use mmfsk_core::scene::{make_scene, SceneSpec};
use mmfsk_core::signal::{self, FrequencySet, PointTarget, Vec3};
use mmfsk_core::sim::{simulate_baseband, NoiseSpec};
use mmfsk_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::EmptyImage(_) | Error::InsufficientData(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn freqs(f: Vec<f64>) -> PyResult<FrequencySet> {
    FrequencySet::new(f).map_err(to_py)
}

/// Frequencies of a named configuration (`d0.5` … `d10.0`, `3fsk-…`, `fscw-N`), Hz.
#[pyfunction]
fn named_frequencies(name: &str) -> PyResult<Vec<f64>> {
    Ok(signal::named_frequencies(name).map_err(to_py)?.set.as_slice().to_vec())
}

/// Largest depth offset a frequency difference can correct, meters.
#[pyfunction]
fn max_unambiguous_depth(delta_f: f64) -> PyResult<f64> {
    signal::max_unambiguous_depth(delta_f).map_err(to_py)
}

/// Mean nearest-neighbor distance from `src` into `dst`.
#[pyfunction]
fn chamfer(src: Vec<Vec3>, dst: Vec<Vec3>) -> PyResult<f64> {
    chamfer_one_way(&src, &dst).map_err(to_py)
}

#[pyclass(module = "mmfsk", frozen)]
#[derive(Clone)]
struct AntennaArray(signal::AntennaArray);

#[pymethods]
impl AntennaArray {
    #[new]
    fn new(tx: Vec<Vec3>, rx: Vec<Vec3>) -> PyResult<Self> {
        Ok(AntennaArray(signal::AntennaArray::new(tx, rx).map_err(to_py)?))
    }

    /// Square boundary layout: TX on the top and bottom edges, RX on the sides.
    #[staticmethod]
    fn boundary(tx: usize, rx: usize, side: f64) -> PyResult<Self> {
        Ok(AntennaArray(signal::AntennaArray::boundary(tx, rx, side).map_err(to_py)?))
    }

    #[getter]
    fn tx(&self) -> Vec<Vec3> {
        self.0.tx().to_vec()
    }

    #[getter]
    fn rx(&self) -> Vec<Vec3> {
        self.0.rx().to_vec()
    }

    #[getter]
    fn pair_count(&self) -> usize {
        self.0.pair_count()
    }
}

#[pyclass(module = "mmfsk", frozen)]
#[derive(Clone)]
struct Scene(signal::Scene);

#[pymethods]
impl Scene {
    /// Unit-reflectivity point targets.
    #[new]
    fn new(points: Vec<Vec3>) -> Self {
        Scene(signal::Scene::new(points.into_iter().map(PointTarget::unit).collect()))
    }

    /// Square lattice on a plane at depth `z`, optionally tilted about y.
    #[staticmethod]
    #[pyo3(signature = (z, extent=0.08, spacing=0.001, tilt_deg=0.0, center_xy=[0.0, 0.0]))]
    fn plane(z: f64, extent: f64, spacing: f64, tilt_deg: f64, center_xy: [f64; 2]) -> PyResult<Self> {
        let spec = SceneSpec::Plane { z, extent, spacing, tilt_deg, center_xy };
        Ok(Scene(make_scene(&spec).map_err(to_py)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn positions(&self) -> Vec<Vec3> {
        self.0.positions()
    }
}

#[pyclass(module = "mmfsk", frozen)]
struct Baseband(signal::BasebandTensor);

#[pymethods]
impl Baseband {
    /// `(T, R, F)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    /// Flat `(t, r, k)` row-major samples.
    fn samples(&self) -> Vec<Complex64> {
        self.0.data().to_vec()
    }

    fn get(&self, t: usize, r: usize, k: usize) -> PyResult<Complex64> {
        let (nt, nr, nf) = self.0.dims();
        if t >= nt || r >= nr || k >= nf {
            return Err(PyValueError::new_err(format!("index ({t}, {r}, {k}) outside {nt}x{nr}x{nf}")));
        }
        Ok(self.0.get(t, r, k))
    }
}

/// Simulate the baseband tensor of `scene` seen by `array` at `frequencies` (Hz).
#[pyfunction]
#[pyo3(signature = (scene, array, frequencies, snr_db=None, seed=0))]
fn simulate(scene: &Scene, array: &AntennaArray, frequencies: Vec<f64>, snr_db: Option<f64>, seed: u64) -> PyResult<Baseband> {
    let noise = match snr_db {
        Some(s) => NoiseSpec::with_snr(s, seed),
        None => NoiseSpec::none(),
    };
    Ok(Baseband(simulate_baseband(&scene.0, &array.0, &freqs(frequencies)?, &noise).map_err(to_py)?))
}

#[pyclass(module = "mmfsk", frozen)]
#[derive(Clone)]
struct Grid(GridGeometry);

#[pymethods]
impl Grid {
    /// `width × height` pixel centers spanning `extent` around `center`.
    #[new]
    #[pyo3(signature = (width, height, extent, center=[0.0, 0.0]))]
    fn new(width: usize, height: usize, extent: [f64; 2], center: [f64; 2]) -> PyResult<Self> {
        Ok(Grid(GridGeometry::new(width, height, extent, center).map_err(to_py)?))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn x(&self, u: usize) -> f64 {
        self.0.x(u)
    }

    fn y(&self, v: usize) -> f64 {
        self.0.y(v)
    }
}

#[pyclass(module = "mmfsk", frozen)]
struct RadarImage(reconstruct::RadarImage);

#[pymethods]
impl RadarImage {
    #[getter]
    fn width(&self) -> usize {
        self.0.geometry.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.geometry.height
    }

    /// Row-major depth, NaN where invalid.
    #[getter]
    fn depth(&self) -> Vec<f64> {
        self.0.depth.iter().zip(&self.0.valid).map(|(d, v)| if *v { *d } else { f64::NAN }).collect()
    }

    #[getter]
    fn magnitude(&self) -> Vec<f64> {
        self.0.magnitude.clone()
    }

    #[getter]
    fn joint_magnitude(&self) -> Vec<f64> {
        self.0.joint_magnitude.clone()
    }

    #[getter]
    fn valid(&self) -> Vec<bool> {
        self.0.valid.clone()
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    /// Drop pixels more than `threshold_db` below the brightest one.
    #[pyo3(signature = (threshold_db=reconstruct::DEFAULT_THRESHOLD_DB))]
    fn filter(&self, threshold_db: f64) -> PyResult<RadarImage> {
        Ok(RadarImage(reconstruct::magnitude_filter(&self.0, threshold_db).map_err(to_py)?))
    }

    /// `(x, y, depth)` of every valid pixel.
    fn points(&self) -> Vec<Vec3> {
        self.0.points().into_iter().map(|(p, _)| p).collect()
    }
}

/// A scalar prior depth or one depth per pixel (NaN marks holes).
fn prior_grid(grid: &Grid, prior: &Bound<'_, PyAny>) -> PyResult<CandidateGrid> {
    if let Ok(d) = prior.extract::<f64>() {
        return CandidateGrid::scalar(grid.0, d).map_err(to_py);
    }
    let depth: Vec<f64> = prior.extract()?;
    let valid = depth.iter().map(|d| d.is_finite()).collect();
    let depth = depth.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect();
    CandidateGrid::new(grid.0, depth, valid).map_err(to_py)
}

/// Two-frequency depth correction; a per-pixel prior gives MM-2FSK.
#[pyfunction]
fn reconstruct_2fsk(
    baseband: &Baseband,
    array: &AntennaArray,
    frequencies: Vec<f64>,
    grid: &Grid,
    prior: &Bound<'_, PyAny>,
) -> PyResult<RadarImage> {
    let g = prior_grid(grid, prior)?;
    Ok(RadarImage(reconstruct::fsk2_reconstruct(&baseband.0, &g, &array.0, &freqs(frequencies)?).map_err(to_py)?))
}

/// Two-stage three-frequency correction.
#[pyfunction]
fn reconstruct_3fsk(
    baseband: &Baseband,
    array: &AntennaArray,
    frequencies: Vec<f64>,
    grid: &Grid,
    prior: &Bound<'_, PyAny>,
) -> PyResult<RadarImage> {
    let g = prior_grid(grid, prior)?;
    Ok(RadarImage(reconstruct::fsk3_reconstruct(&baseband.0, &g, &array.0, &freqs(frequencies)?).map_err(to_py)?))
}

/// Voxel backprojection with a maximum intensity projection along z.
#[pyfunction]
fn backproject(
    baseband: &Baseband,
    array: &AntennaArray,
    frequencies: Vec<f64>,
    extent: [f64; 3],
    resolution: [usize; 3],
    center: [f64; 3],
) -> PyResult<RadarImage> {
    let spec = VoxelGridSpec { extent, resolution, center };
    Ok(RadarImage(reconstruct::backproject(&baseband.0, &spec, &array.0, &freqs(frequencies)?).map_err(to_py)?))
}

/// Run a full experiment from a TOML configuration; one dict per
/// (method, configuration) with its metrics in meters.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_toml_str(config_toml, &[]).map_err(to_py)?;
    let outcomes = py.allow_threads(|| run_pipeline(&cfg, None)).map_err(to_py)?;
    outcomes
        .into_iter()
        .map(|o| {
            let d = PyDict::new(py);
            let r = o.record;
            d.set_item("method", r.method)?;
            d.set_item("config", r.config)?;
            d.set_item("delta_f_hz", r.delta_f_hz)?;
            d.set_item("status", r.status)?;
            if let Some(m) = r.metrics {
                d.set_item("c_gt_to_r", m.c_gt_to_r)?;
                d.set_item("c_r_to_gt", m.c_r_to_gt)?;
                d.set_item("p_masked", m.p_masked)?;
                d.set_item("p_eroded", m.p_eroded)?;
            }
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn mmfsk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SPEED_OF_LIGHT", signal::SPEED_OF_LIGHT)?;
    m.add_class::<AntennaArray>()?;
    m.add_class::<Scene>()?;
    m.add_class::<Baseband>()?;
    m.add_class::<Grid>()?;
    m.add_class::<RadarImage>()?;
    m.add_function(wrap_pyfunction!(named_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(max_unambiguous_depth, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_2fsk, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_3fsk, m)?)?;
    m.add_function(wrap_pyfunction!(backproject, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
