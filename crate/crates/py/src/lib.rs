//! Python bindings: `import pyimchaos`.

use std::sync::Arc;

use imchaos::bessel;
use imchaos::chaos::{self, MomentKernel, SobolevSpec};
use imchaos::grid::Grid;
use imchaos::mc::{self, EnsembleConfig, FieldKind};
use imchaos::phase::{self, PhaseOptions};
use imchaos::sampler::unit_interval;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rustfft::num_complex::Complex64;
use serde_json::Value;

pyo3::create_exception!(pyimchaos, ImchaosError, PyRuntimeError);

fn err(e: imchaos::Error) -> PyErr {
    match e {
        imchaos::Error::InvalidConfig(_) | imchaos::Error::AliasedGrid { .. } => PyValueError::new_err(e.to_string()),
        _ => ImchaosError::new_err(format!("{}: {}", e.kind(), e)),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn ser<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Ensemble configuration; mirrors the CLI flags.
#[pyclass(name = "EnsembleConfig", from_py_object)]
#[derive(Clone)]
pub struct PyEnsembleConfig {
    inner: EnsembleConfig,
}

#[pymethods]
impl PyEnsembleConfig {
    #[new]
    #[pyo3(signature = (field="circle", beta=0.5, modes=64, grid=None, samples=1000, seed=0, workers=1, f="one", t=4.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        field: &str,
        beta: f64,
        modes: usize,
        grid: Option<usize>,
        samples: usize,
        seed: u64,
        workers: usize,
        f: &str,
        t: f64,
    ) -> PyResult<Self> {
        let field: FieldKind = field.parse().map_err(err)?;
        let grid = grid.unwrap_or(if field == FieldKind::Circle { (4 * modes).max(256) } else { 256 });
        let inner = EnsembleConfig { field, beta, modes, grid, samples, seed, workers, f: f.into(), t, ..Default::default() };
        inner.validate().map_err(err)?;
        Ok(PyEnsembleConfig { inner })
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn modes(&self) -> usize {
        self.inner.modes
    }

    #[getter]
    fn grid(&self) -> usize {
        self.inner.grid
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("EnsembleConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Samples `μ_N(f)` with their metadata.
#[pyclass(name = "ChaosEnsemble")]
pub struct PyChaosEnsemble {
    inner: mc::ChaosEnsemble,
}

#[pymethods]
impl PyChaosEnsemble {
    #[getter]
    fn values(&self) -> Vec<Complex64> {
        self.inner.values.clone()
    }

    #[getter]
    fn integral(&self) -> Complex64 {
        self.inner.f_integral
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `{samples, mean, standard_error, expected, deviation_in_se}`.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &self.inner.summary().map_err(err)?)
    }

    #[pyo3(signature = (z0, radii=vec![0.4, 0.2, 0.1]))]
    fn small_ball<'py>(&self, py: Python<'py>, z0: Complex64, radii: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &mc::small_ball(&self.inner.values, z0, &radii).map_err(err)?)
    }

    #[pyo3(signature = (radius=4.0, bins=64))]
    fn density<'py>(&self, py: Python<'py>, radius: f64, bins: usize) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &mc::density_histogram(&self.inner.values, radius, bins).map_err(err)?)
    }

    #[pyo3(signature = (ps, prefixes=None))]
    fn moments<'py>(&self, py: Python<'py>, ps: Vec<f64>, prefixes: Option<Vec<usize>>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &mc::moment_estimate(&self.inner.values, &ps, prefixes.as_deref()).map_err(err)?)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyChaosEnsemble { inner: mc::ChaosEnsemble::load(std::path::Path::new(path)).map_err(err)? })
    }
}

/// Runs an ensemble; the GIL is released while sampling.
#[pyfunction]
fn run_ensemble(py: Python<'_>, config: PyEnsembleConfig) -> PyResult<PyChaosEnsemble> {
    let inner = py.detach(|| mc::run_chaos_ensemble(&config.inner)).map_err(err)?;
    Ok(PyChaosEnsemble { inner })
}

/// One field realisation as `(x, gamma)` lists.
#[pyfunction]
#[pyo3(signature = (config, stream=0))]
fn sample_field(config: PyEnsembleConfig, stream: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let prep = config.inner.prepare().map_err(err)?;
    let s = prep.sampler.sample(config.inner.seed, stream);
    Ok((s.grid.coords().to_vec(), s.values))
}

/// Sobolev-ball probability; `eta=None` uses half the median norm.
#[pyfunction]
#[pyo3(signature = (config, eta=None, s=1.0))]
fn sobolev_ball<'py>(py: Python<'py>, config: PyEnsembleConfig, eta: Option<f64>, s: f64) -> PyResult<Bound<'py, PyAny>> {
    let spec = SobolevSpec::new(s, 4, 1).map_err(err)?;
    let norms = py.detach(|| mc::sobolev_norms(&config.inner, &spec)).map_err(err)?;
    let eta = eta.unwrap_or_else(|| 0.5 * mc::median(&norms));
    ser(py, &mc::ball_fraction(&norms, eta, s).map_err(err)?)
}

fn circle_f(f: &str, grid: usize) -> PyResult<chaos::TestFunction> {
    let g = Arc::new(Grid::circle(grid).map_err(err)?);
    mc::load_test_function(f, g).map_err(err)
}

/// `E|μ(f)|²` on the circle; `modes=None` is the untruncated field.
#[pyfunction]
#[pyo3(signature = (beta, modes=None, f="one", grid=256))]
fn second_moment(beta: f64, modes: Option<usize>, f: &str, grid: usize) -> PyResult<f64> {
    chaos::second_moment_analytic(&circle_f(f, grid)?, MomentKernel::Circle { modes }, beta).map_err(err)
}

/// `E|μ_N(f) - μ_M(f)|²` on the circle.
#[pyfunction]
#[pyo3(signature = (n, m, beta, f="one", grid=256))]
fn truncation_gap(n: usize, m: usize, beta: f64, f: &str, grid: usize) -> PyResult<f64> {
    chaos::truncation_gap(n, m, &circle_f(f, grid)?, beta).map_err(err)
}

/// Phase `a` on `[0, 1]` with `∫ f e^{iβa} = z0`; returns `(x, a, diagnostics)`.
#[pyfunction]
#[pyo3(signature = (f, beta, z0, grid=1025))]
fn phase_solve<'py>(py: Python<'py>, f: &str, beta: f64, z0: Complex64, grid: usize) -> PyResult<(Vec<f64>, Vec<f64>, Bound<'py, PyAny>)> {
    let tf = mc::load_test_function(f, unit_interval(grid).map_err(err)?).map_err(err)?;
    let p = phase::phase_for_target(&tf, beta, z0, &PhaseOptions::default()).map_err(err)?;
    Ok((p.grid.coords().to_vec(), p.values.clone(), ser(py, &p.diagnostics())?))
}

#[pyfunction]
fn bessel_j(n: i64, x: f64) -> PyResult<f64> {
    bessel::bessel_j(n, x).map_err(err)
}

#[pyfunction]
fn bessel_check<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &bessel::bessel_check().map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (n0, beta=0.5, radius=3.0))]
fn phi0_compare<'py>(py: Python<'py>, n0: usize, beta: f64, radius: f64) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &bessel::phi0_compare(n0, beta, radius, 12, 24).map_err(err)?)
}

#[pymodule]
fn pyimchaos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ImchaosError", m.py().get_type::<ImchaosError>())?;
    m.add_class::<PyEnsembleConfig>()?;
    m.add_class::<PyChaosEnsemble>()?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(sample_field, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_ball, m)?)?;
    m.add_function(wrap_pyfunction!(second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_gap, m)?)?;
    m.add_function(wrap_pyfunction!(phase_solve, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_j, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_check, m)?)?;
    m.add_function(wrap_pyfunction!(phi0_compare, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
