use std::path::PathBuf;

use fedcomp_core::config::ConfigFile;
use fedcomp_core::diagnostics::{
    assumption_audit, default_fd_step, finite_diff_grad, gradcheck, rate_fit as fit,
};
use fedcomp_core::fedsim::{self, Algo, RunConfig};
use fedcomp_core::numerics::{derive_stream, Purpose, Vector};
use fedcomp_core::precond::AdaptiveKind;
use fedcomp_core::problems::{
    make_maml, make_quadratic, make_robust_fl, AnyProblem, CompositionProblem,
    HeterogeneityProfile, SigmaMode,
};
use fedcomp_core::schedule::{self, ScheduleParams};
use fedcomp_core::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Numerical(msg) => PyArithmeticError::new_err(msg),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_value(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A federated composition instance.
#[pyclass(name = "Problem", module = "fedcomp")]
struct PyProblem {
    inner: AnyProblem,
}

impl PyProblem {
    fn point(&self, x: Vec<f64>) -> PyResult<Vector> {
        let d = self.inner.dims().d;
        if x.len() != d {
            return Err(PyValueError::new_err(format!("expected {d} coordinates, got {}", x.len())));
        }
        Ok(Vector::from_vec(x))
    }
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    #[pyo3(signature = (d, p, m_clients, spread=0.0, sigma=0.0, seed=0))]
    fn quadratic(d: usize, p: usize, m_clients: usize, spread: f64, sigma: f64, seed: u64) -> PyResult<Self> {
        let profile = HeterogeneityProfile::new(spread, seed + 1);
        let inner = make_quadratic(seed, d, p, m_clients, profile, sigma).map_err(to_py)?;
        Ok(Self { inner: AnyProblem::Quadratic(inner) })
    }

    #[staticmethod]
    #[pyo3(signature = (d, m_clients, n_per_client=50, spread=0.0, lam=0.5, sampled=true, box_radius=10.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn robust_fl(
        d: usize,
        m_clients: usize,
        n_per_client: usize,
        spread: f64,
        lam: f64,
        sampled: bool,
        box_radius: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = if sampled { SigmaMode::Sampled } else { SigmaMode::FullBatch };
        let profile = HeterogeneityProfile::new(spread, seed + 1);
        let inner = make_robust_fl(seed, d, m_clients, n_per_client, profile, lam, mode)
            .map_err(to_py)?
            .with_box_radius(box_radius);
        Ok(Self { inner: AnyProblem::RobustFl(inner) })
    }

    #[staticmethod]
    #[pyo3(signature = (d, m_clients, inner_lr=0.1, spread=0.0, sigma=0.0, box_radius=10.0, seed=0))]
    fn maml(
        d: usize,
        m_clients: usize,
        inner_lr: f64,
        spread: f64,
        sigma: f64,
        box_radius: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let profile = HeterogeneityProfile::new(spread, seed + 1);
        let inner = make_maml(seed, d, m_clients, inner_lr, profile, sigma)
            .map_err(to_py)?
            .with_box_radius(box_radius);
        Ok(Self { inner: AnyProblem::Maml(inner) })
    }

    /// Problem described by a TOML config file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let cfg = ConfigFile::load(&path).map_err(to_py)?;
        Ok(Self { inner: cfg.build_problem().map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    /// `(d, p, M)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let d = self.inner.dims();
        (d.d, d.p, d.m)
    }

    #[getter]
    fn box_radius(&self) -> f64 {
        self.inner.box_radius()
    }

    #[getter]
    fn constants(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_value(py, &self.inner.constants())
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.objective(&self.point(x)?))
    }

    fn exact_grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.exact_grad_F(&self.point(x)?).into_vec())
    }

    #[pyo3(signature = (x, h=None))]
    fn finite_diff_grad(&self, x: Vec<f64>, h: Option<f64>) -> PyResult<Vec<f64>> {
        let x = self.point(x)?;
        let h = h.unwrap_or_else(|| default_fd_step(&x));
        Ok(finite_diff_grad(&self.inner, &x, h).into_vec())
    }

    /// Largest relative gradient error over random box points.
    #[pyo3(signature = (points=20, seed=0))]
    fn gradcheck(&self, points: usize, seed: u64) -> f64 {
        let mut rng = derive_stream(seed, 0, 0, Purpose::Probe);
        gradcheck(&self.inner, points, &mut rng)
    }

    #[pyo3(signature = (probes=30, seed=0))]
    fn audit(&self, py: Python<'_>, probes: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let mut rng = derive_stream(seed, 0, 0, Purpose::Probe);
        let report = assumption_audit(&self.inner, probes, &mut rng).map_err(to_py)?;
        json_value(py, &report)
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!("Problem(kind={:?}, d={}, p={}, M={})", self.inner.kind(), d.d, d.p, d.m)
    }
}

/// Step-size and momentum schedule.
#[pyclass(name = "Schedule", module = "fedcomp")]
struct PySchedule {
    inner: ScheduleParams,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (k, n, c1, c2, c3, gamma, q, horizon, rho=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: f64,
        n: f64,
        c1: f64,
        c2: f64,
        c3: f64,
        gamma: f64,
        q: u64,
        horizon: u64,
        rho: f64,
    ) -> PyResult<Self> {
        let inner = ScheduleParams::new(k, n, c1, c2, c3, gamma, rho, q, horizon).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Smallest momentum constants and `n` admitted by the theory at `gamma`.
    #[staticmethod]
    #[pyo3(signature = (problem, k, gamma, q, horizon, rho=1.0))]
    fn theorem_tuned(problem: &PyProblem, k: f64, gamma: f64, q: u64, horizon: u64, rho: f64) -> PyResult<Self> {
        let pc = problem
            .inner
            .constants()
            .ok_or_else(|| PyValueError::new_err("constants unavailable"))?;
        let inner = ScheduleParams::theorem_tuned(pc, k, gamma, rho, q, horizon).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn eta(&self, t: u64) -> f64 {
        schedule::eta(&self.inner, t)
    }

    /// `(alpha, beta, varrho)` for the update after iteration `t`.
    fn momenta(&self, t: u64) -> (f64, f64, f64) {
        let m = schedule::momenta_quiet(&self.inner, t);
        (m.alpha, m.beta, m.varrho)
    }

    fn validate(&self, py: Python<'_>, problem: &PyProblem) -> PyResult<Py<PyAny>> {
        let report = schedule::validate(&self.inner, problem.inner.constants()).map_err(to_py)?;
        json_value(py, &report)
    }

    #[getter]
    fn params(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_value(py, &self.inner)
    }
}

fn record_dict(py: Python<'_>, record: &fedsim::RunRecord, hash: &str) -> PyResult<Py<PyAny>> {
    let mut summary = record.summary_json(hash);
    summary["rows"] = serde_json::to_value(&record.rows).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_value(py, &summary)
}

/// Simulate one run and return its summary with the logged rows.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (problem, schedule, algo="mfcgd", seed=0, adaptive="adam_diag", metrics_every=None, workers=None))]
fn run(
    py: Python<'_>,
    problem: &PyProblem,
    schedule: &PySchedule,
    algo: &str,
    seed: u64,
    adaptive: &str,
    metrics_every: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let algo = Algo::parse(algo).map_err(to_py)?;
    let mut config = RunConfig::new(algo, schedule.inner.clone(), seed);
    config.adaptive = AdaptiveKind::parse(adaptive).map_err(to_py)?;
    config.metrics_every = metrics_every;
    config.workers = workers;
    if algo == Algo::Baseline {
        config = fedsim::baseline_preset(&config);
    }
    let record = py.detach(|| fedsim::run(&problem.inner, &config)).map_err(to_py)?;
    record_dict(py, &record, "")
}

/// Run the experiment described by a TOML config file.
#[pyfunction]
#[pyo3(signature = (path, seed=None, algo=None))]
fn run_config(py: Python<'_>, path: PathBuf, seed: Option<u64>, algo: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = ConfigFile::load(&path).map_err(to_py)?;
    let algo = algo.map(Algo::parse).transpose().map_err(to_py)?;
    let problem = cfg.build_problem().map_err(to_py)?;
    let config = cfg.build_run(&problem, seed, algo).map_err(to_py)?;
    let hash = cfg.hash().map_err(to_py)?;
    let record = py.detach(|| fedsim::run(&problem, &config)).map_err(to_py)?;
    record_dict(py, &record, &hash)
}

/// Least-squares `(slope, intercept)` of `ln metric` against `ln T`.
#[pyfunction]
fn rate_fit(points: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let f = fit(&points).map_err(to_py)?;
    Ok((f.slope, f.intercept))
}

#[pymodule]
fn fedcomp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(rate_fit, m)?)?;
    Ok(())
}
