//! Python module `wvlab`: grids, wavefunctions, operators, propagation,
//! trajectories, weak values, the weak-measurement estimator and the
//! scenario runner.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wvlab_core::bohm::{self, integrate_trajectories, sample_initial_positions, TrajectoryOptions};
use wvlab_core::harness::acceptance::run_criterion;
use wvlab_core::harness::config::parse_config;
use wvlab_core::harness::run::{run, RunError};
use wvlab_core::measure::{self, AncillaModel, EstimatorMode, ProtocolConfig, SecondMeasurement};
use wvlab_core::qgrid::{
    build_hamiltonian, expectation, propagate_frames, Grid1D, Method, PotentialModel, PropagatorConfig,
    SpectralOperator, Units, WaveFunction,
};
use wvlab_core::weakval::{quadrature_weak_average, WeakValueField};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Potential from its JSON form, e.g. `{"kind": "harmonic", "omega": 1}`;
/// `None` is the free particle.
fn potential(json: Option<&str>) -> PyResult<PotentialModel> {
    match json {
        None => Ok(PotentialModel::Free),
        Some(text) => serde_json::from_str(text).map_err(value_err),
    }
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "split_operator" | "split" => Ok(Method::SplitOperator),
        "crank_nicolson" | "cn" => Ok(Method::CrankNicolson),
        other => Err(PyValueError::new_err(format!("unknown method `{other}`; use split_operator or crank_nicolson"))),
    }
}

/// Uniform periodic grid of `n` points on `[x_min, x_max)`.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(Grid1D);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(x_min: f64, x_max: f64, n: usize) -> PyResult<Self> {
        Grid1D::new(x_min, x_max, n).map(Self).map_err(value_err)
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.len()
    }

    fn points(&self) -> Vec<f64> {
        self.0.points()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Grid({}, {}, {})", self.0.x_min(), self.0.x_max(), self.0.len())
    }
}

#[pyclass(name = "WaveFunction", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWave(WaveFunction);

#[pymethods]
impl PyWave {
    /// Wrap complex amplitudes; they are used as given, not normalized.
    #[new]
    #[pyo3(signature = (grid, amplitudes, time = 0.0))]
    fn new(grid: &PyGrid, amplitudes: Vec<C64>, time: f64) -> PyResult<Self> {
        WaveFunction::new(grid.0, amplitudes, time).map(Self).map_err(value_err)
    }

    /// Normalized Gaussian; `width` is the standard deviation of the density.
    #[staticmethod]
    #[pyo3(signature = (grid, center, width, momentum = 0.0))]
    fn gaussian(grid: &PyGrid, center: f64, width: f64, momentum: f64) -> PyResult<Self> {
        WaveFunction::gaussian(grid.0, center, width, momentum).map(Self).map_err(value_err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.0.grid())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.0.time()
    }

    fn amplitudes(&self) -> Vec<C64> {
        self.0.amplitudes().to_vec()
    }

    fn density(&self) -> Vec<f64> {
        self.0.density()
    }

    fn norm(&self) -> f64 {
        self.0.norm_sqr()
    }

    fn probability_in(&self, a: f64, b: f64) -> f64 {
        self.0.probability_in(a, b)
    }

    fn __repr__(&self) -> String {
        format!("WaveFunction(n={}, t={}, norm={:.12})", self.0.grid().len(), self.0.time(), self.0.norm_sqr())
    }
}

/// Hermitian operator on a grid: diagonal, Fourier or dense spectral.
#[pyclass(name = "Operator", frozen)]
struct PyOperator(SpectralOperator);

#[pymethods]
impl PyOperator {
    #[staticmethod]
    fn position(grid: &PyGrid) -> Self {
        Self(SpectralOperator::position(grid.0))
    }

    #[staticmethod]
    #[pyo3(signature = (grid, hbar = 1.0))]
    fn momentum(grid: &PyGrid, hbar: f64) -> Self {
        Self(SpectralOperator::momentum(grid.0, Units { hbar, ..Units::default() }))
    }

    /// Projector onto `[a, b]`.
    #[staticmethod]
    fn window(grid: &PyGrid, a: f64, b: f64) -> PyResult<Self> {
        if !(b > a) {
            return Err(PyValueError::new_err(format!("window needs a < b, got [{a}, {b}]")));
        }
        Ok(Self(SpectralOperator::window(grid.0, a, b)))
    }

    /// Hamiltonian with spectral kinetic energy, optionally truncated to
    /// its lowest `truncate` eigenstates.
    #[staticmethod]
    #[pyo3(signature = (grid, potential = None, mass = 1.0, truncate = None))]
    fn hamiltonian(grid: &PyGrid, potential: Option<&str>, mass: f64, truncate: Option<usize>) -> PyResult<Self> {
        let units = Units { mass, ..Units::default() };
        let h = build_hamiltonian(&grid.0, &self::potential(potential)?, 0.0, &units, Method::SplitOperator.kinetic())
            .map_err(value_err)?;
        Ok(Self(match truncate {
            Some(m) => h.truncated(m),
            None => h,
        }))
    }

    fn eigenvalues(&self) -> PyResult<Vec<f64>> {
        self.0.eigenvalues().map_err(runtime_err)
    }

    fn expectation(&self, psi: &PyWave) -> PyResult<f64> {
        expectation(&self.0, &psi.0).map_err(runtime_err)
    }

    /// Local weak value `(A psi)(x) / psi(x)` on every grid point; `None` at nodes.
    fn weak_values(&self, psi: &PyWave) -> PyResult<Vec<Option<C64>>> {
        Ok(WeakValueField::new(&self.0, &psi.0).map_err(value_err)?.values())
    }

    /// `sum_j |psi_j|^2 Re A_w(x_j) dx`.
    fn weak_average(&self, psi: &PyWave) -> PyResult<f64> {
        quadrature_weak_average(&self.0, &psi.0).map_err(runtime_err)
    }
}

/// Frames of the evolution at every `dt * steps_per_output`.
#[pyfunction]
#[pyo3(signature = (psi, duration, dt, potential = None, method = "split_operator", steps_per_output = 10, mass = 1.0))]
fn propagate(
    psi: &PyWave,
    duration: f64,
    dt: f64,
    potential: Option<&str>,
    method: &str,
    steps_per_output: usize,
    mass: f64,
) -> PyResult<Vec<PyWave>> {
    let cfg = PropagatorConfig::new(dt, self::method(method)?, steps_per_output);
    let units = Units { mass, ..Units::default() };
    let ev = propagate_frames(&psi.0, &self::potential(potential)?, &units, &cfg, duration).map_err(value_err)?;
    Ok(ev.frames().iter().cloned().map(PyWave).collect())
}

/// Guidance velocity on the grid; `None` at nodes.
#[pyfunction]
#[pyo3(signature = (psi, mass = 1.0))]
fn velocity(psi: &PyWave, mass: f64) -> Vec<Option<f64>> {
    let f = bohm::velocity_grid(&psi.0, &Units { mass, ..Units::default() });
    (0..f.values().len()).map(|j| (!f.is_node(j)).then(|| f.values()[j])).collect()
}

/// `n` starting positions drawn from `|psi|^2`, reproducible from `seed`.
#[pyfunction]
fn sample_positions(psi: &PyWave, n: usize, seed: u64) -> Vec<f64> {
    sample_initial_positions(&psi.0, n, seed)
}

/// Trajectories from `starts`; returns `(times, positions)` with one row
/// of positions per trajectory.
#[pyfunction]
#[pyo3(signature = (psi, starts, duration, dt, potential = None, steps_per_output = 10, mass = 1.0, substeps = 4))]
#[allow(clippy::too_many_arguments)]
fn trajectories(
    psi: &PyWave,
    starts: Vec<f64>,
    duration: f64,
    dt: f64,
    potential: Option<&str>,
    steps_per_output: usize,
    mass: f64,
    substeps: usize,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let cfg = PropagatorConfig::new(dt, Method::SplitOperator, steps_per_output);
    let units = Units { mass, ..Units::default() };
    let ev = propagate_frames(&psi.0, &self::potential(potential)?, &units, &cfg, duration).map_err(value_err)?;
    let ens = integrate_trajectories(&ev, &starts, TrajectoryOptions { substeps, seed: 0 }).map_err(value_err)?;
    let times = ens.times().to_vec();
    Ok((times, ens.trajectories.into_iter().map(|t| t.positions).collect()))
}

/// Operational weak value `(1/lambda) E[y_k | y_g = lambda g_a]` of `s`
/// measured weakly, then `g` measured projectively after `duration`.
/// Returns `(value, stderr, post-selection probability)`.
#[pyfunction]
#[pyo3(signature = (psi, s, g, sigma, lambda_, g_a, duration = 0.0, dt = 0.01, potential = None, mode = "exact", n = 10000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn weak_measurement(
    psi: &PyWave,
    s: &PyOperator,
    g: &PyOperator,
    sigma: f64,
    lambda_: f64,
    g_a: f64,
    duration: f64,
    dt: f64,
    potential: Option<&str>,
    mode: &str,
    n: usize,
    seed: u64,
) -> PyResult<(f64, f64, f64)> {
    let mode = match mode {
        "exact" => EstimatorMode::Exact,
        "monte_carlo" => EstimatorMode::MonteCarlo,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`; use exact or monte_carlo"))),
    };
    let cfg = ProtocolConfig {
        s: s.0.clone(),
        g: g.0.clone(),
        potential: self::potential(potential)?,
        units: Units::default(),
        propagator: PropagatorConfig::new(dt, Method::SplitOperator, 1),
        duration,
        ancilla: AncillaModel::new(sigma, lambda_).map_err(value_err)?,
        second: SecondMeasurement::Projective,
        n,
        seed,
    };
    let est = measure::operational_weak_value(&psi.0, &cfg, g_a, mode, false).map_err(runtime_err)?;
    Ok((est.value, est.stderr, est.probability))
}

/// Validate a scenario file's text; returns its normalized JSON.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    parse_config(text).map(|c| c.normalized()).map_err(value_err)
}

/// Run a scenario into `out_dir`; returns the manifest as JSON.
#[pyfunction]
fn run_scenario(text: &str, out_dir: &str) -> PyResult<String> {
    let cfg = parse_config(text).map_err(value_err)?;
    match run(&cfg, std::path::Path::new(out_dir)) {
        Ok(m) => serde_json::to_string(&m).map_err(runtime_err),
        Err(RunError::Config(e)) => Err(value_err(e)),
        Err(e) => Err(runtime_err(e)),
    }
}

/// Run one acceptance criterion; returns `(passed, measured, target, tolerance)`.
#[pyfunction]
#[pyo3(signature = (id, seed = wvlab_core::seed::DEFAULT_SEED, tolerance_scale = 1.0))]
fn validate_criterion(id: u32, seed: u64, tolerance_scale: f64) -> (bool, f64, f64, f64) {
    let r = run_criterion(id, seed, tolerance_scale);
    (r.passed, r.measured, r.target, r.tolerance)
}

#[pymodule]
fn wvlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyWave>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(velocity, m)?)?;
    m.add_function(wrap_pyfunction!(sample_positions, m)?)?;
    m.add_function(wrap_pyfunction!(trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(weak_measurement, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_criterion, m)?)?;
    Ok(())
}
