//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ::monotone_eit::config::RunConfig;
use ::monotone_eit::forward::{add_noise, measure_full, ConductivityField, MeasurementFrame};
use ::monotone_eit::geometry::{build_mesh, build_pixel_grid, DiskMesh, MeshParams};
use ::monotone_eit::inversion::{linearize, reconstruct as run_reconstruction, Method};
use ::monotone_eit::io::{load_measurement, save_measurement};
use ::monotone_eit::monotonicity::compute_beta;
use ::monotone_eit::protocol::{calibrate_frames, calibration_residual};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(monotone_eit, EitError, PyException);
create_exception!(monotone_eit, ConfigError, EitError);
create_exception!(monotone_eit, NumericalError, EitError);

fn to_py(e: ::monotone_eit::Error) -> PyErr {
    let msg = e.to_string();
    if matches!(e.root(), ::monotone_eit::Error::Config(_)) {
        ConfigError::new_err(msg)
    } else if e.is_numerical() {
        NumericalError::new_err(msg)
    } else {
        EitError::new_err(msg)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(EitError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn parse_config(toml: Option<&str>) -> PyResult<RunConfig> {
    RunConfig::from_toml_str(toml.unwrap_or("")).map_err(to_py)
}

/// Disk mesh with equally spaced boundary electrodes.
#[pyclass(name = "Mesh", module = "monotone_eit", frozen)]
struct PyMesh {
    inner: DiskMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    #[pyo3(signature = (radius=0.1, n_electrodes=16, electrode_arc_fraction=0.0159, refinement_level=2))]
    fn new(radius: f64, n_electrodes: usize, electrode_arc_fraction: f64, refinement_level: usize) -> PyResult<Self> {
        let inner = build_mesh(&MeshParams {
            radius,
            n_electrodes,
            electrode_arc_fraction,
            refinement_level,
        })
        .map_err(to_py)?;
        Ok(PyMesh { inner })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.inner.n_triangles()
    }

    #[getter]
    fn n_electrodes(&self) -> usize {
        self.inner.n_electrodes()
    }

    fn nodes(&self) -> Vec<[f64; 2]> {
        self.inner.nodes().to_vec()
    }

    fn triangles(&self) -> Vec<[usize; 3]> {
        self.inner.triangles().to_vec()
    }

    /// Pixel centers of an `n_side` × `n_side` grid clipped to the disk.
    fn pixel_centers(&self, n_side: usize) -> PyResult<Vec<[f64; 2]>> {
        let grid = build_pixel_grid(&self.inner, n_side).map_err(to_py)?;
        Ok(grid.pixel_centers().to_vec())
    }

    /// Noise-free full frame for a uniform or per-triangle conductivity.
    #[pyo3(signature = (sigma, current=1e-3))]
    fn forward(&self, sigma: &Bound<'_, PyAny>, current: f64) -> PyResult<PyFrame> {
        let field = if let Ok(s) = sigma.extract::<f64>() {
            ConductivityField::uniform(self.inner.n_triangles(), s)
        } else {
            ConductivityField::new(sigma.extract::<Vec<f64>>()?)
        }
        .map_err(to_py)?;
        let inner = measure_full(&self.inner, &field, current).map_err(to_py)?;
        Ok(PyFrame { inner })
    }
}

/// Measurement frame `U(k, l)` with its validity mask and drive current.
#[pyclass(name = "Frame", module = "monotone_eit", frozen)]
struct PyFrame {
    inner: MeasurementFrame,
}

#[pymethods]
impl PyFrame {
    /// `mask` is a list of rows of booleans; omitted means every entry is valid.
    #[new]
    #[pyo3(signature = (values, current=1e-3, mask=None))]
    fn new(values: Vec<Vec<f64>>, current: f64, mask: Option<Vec<Vec<bool>>>) -> PyResult<Self> {
        let m = matrix(&values)?;
        let n = m.nrows();
        let flat = match mask {
            None => vec![true; n * n],
            Some(mask) => {
                if mask.len() != n || mask.iter().any(|r| r.len() != n) {
                    return Err(EitError::new_err("mask shape differs from the values"));
                }
                mask.into_iter().flatten().collect()
            }
        };
        let inner = MeasurementFrame::with_mask(m, flat, current).map_err(to_py)?;
        Ok(PyFrame { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, csv_current=1e-3))]
    fn load(path: PathBuf, csv_current: f64) -> PyResult<Self> {
        let inner = load_measurement(&path, csv_current).map_err(to_py)?;
        Ok(PyFrame { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_measurement(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn n_electrodes(&self) -> usize {
        self.inner.n_electrodes()
    }

    #[getter]
    fn current(&self) -> f64 {
        self.inner.current_amplitude()
    }

    fn values(&self) -> Vec<Vec<f64>> {
        rows(self.inner.values())
    }

    fn mask(&self) -> Vec<Vec<bool>> {
        let n = self.inner.n_electrodes();
        (0..n).map(|k| (0..n).map(|l| self.inner.is_valid(k, l)).collect()).collect()
    }

    fn masked_adjacent(&self) -> Self {
        PyFrame {
            inner: self.inner.masked_adjacent(),
        }
    }

    fn with_noise(&self, level: f64, seed: u64) -> PyResult<Self> {
        let inner = add_noise(&self.inner, level, seed).map_err(to_py)?;
        Ok(PyFrame { inner })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame(n_electrodes={}, current={:e}, complete={})",
            self.inner.n_electrodes(),
            self.inner.current_amplitude(),
            self.inner.is_complete()
        )
    }
}

/// Homogeneous and phantom frames for a TOML run configuration.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn simulate(config: Option<&str>) -> PyResult<(PyFrame, PyFrame)> {
    let (h, i) = parse_config(config)?.simulate().map_err(to_py)?;
    Ok((PyFrame { inner: h }, PyFrame { inner: i }))
}

/// Runs the reconstruction pipeline and returns a dict with `kappa`,
/// `pixel_centers`, the solver statistics and, for the monotonicity method,
/// `beta` and the upper bounds.
#[pyfunction]
#[pyo3(signature = (hom, inhom, config=None, method=None))]
fn reconstruct<'py>(
    py: Python<'py>,
    hom: &PyFrame,
    inhom: &PyFrame,
    config: Option<&str>,
    method: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = parse_config(config)?;
    if let Some(m) = method {
        cfg.inversion.method = m.parse::<Method>().map_err(to_py)?;
    }
    let setup = cfg.reconstruction_setup();
    let rec = py
        .detach(|| run_reconstruction(&hom.inner, &inhom.inner, &setup))
        .map_err(to_py)?;
    let r = &rec.result;
    let d = PyDict::new(py);
    d.set_item("kappa", r.kappa.clone())?;
    d.set_item("pixel_centers", rec.grid.pixel_centers().to_vec())?;
    d.set_item("objective", r.objective)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("projected_gradient_norm", r.projected_gradient_norm)?;
    d.set_item("delta", rec.difference.delta())?;
    d.set_item("scale", rec.scale)?;
    d.set_item("runtime_seconds", rec.runtime_seconds)?;
    if let Some(c) = &rec.constraints {
        d.set_item("beta", c.beta.clone())?;
        d.set_item("upper", c.upper.clone())?;
        d.set_item("a_plus", c.a_plus)?;
        d.set_item("a_minus", c.a_minus)?;
    }
    Ok(d)
}

/// Per-pixel `beta` and upper bounds without solving.
#[pyfunction]
#[pyo3(signature = (hom, inhom, config=None))]
fn constraints(
    py: Python<'_>,
    hom: &PyFrame,
    inhom: &PyFrame,
    config: Option<&str>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = parse_config(config)?;
    let setup = cfg.reconstruction_setup();
    let set = py
        .detach(|| linearize(&hom.inner, &inhom.inner, &setup)?.constraints(&setup.inversion))
        .map_err(to_py)?;
    Ok((set.beta, set.upper))
}

/// Scale `c` minimizing `‖c·measured − model‖`, with the residual before and after.
#[pyfunction]
fn calibrate(measured: &PyFrame, model: &PyFrame) -> PyResult<(f64, f64, f64)> {
    let c = calibrate_frames(&measured.inner, &model.inner).map_err(to_py)?;
    let before = calibration_residual(&measured.inner, &model.inner, 1.0).map_err(to_py)?;
    let after = calibration_residual(&measured.inner, &model.inner, c).map_err(to_py)?;
    Ok((c, before, after))
}

/// Largest `beta ≥ 0` with `a + beta·s` positive semi-definite for symmetric
/// `s ≤ 0` and positive definite `a`.
#[pyfunction]
fn beta(s: Vec<Vec<f64>>, a: Vec<Vec<f64>>) -> PyResult<f64> {
    compute_beta(&matrix(&s)?, &matrix(&a)?).map_err(to_py)
}

#[pymodule]
fn monotone_eit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyFrame>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(constraints, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    let py = m.py();
    m.add("EitError", py.get_type::<EitError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    Ok(())
}
