//! Python bindings: action sets, the barrier, the learner, single cells and
//! the verification suites.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use botw_core::environments::{instance_catalog, EnvironmentSpec};
use botw_core::geometry::{builtin_instance, PolytopeActionSet};
use botw_core::harness::{self, run_cell_with, VerifyOptions};
use botw_core::learner::{self as core_learner, Feedback, LearnerConfig, Mode, RoundContext, RoundRecord, RunRng};
use botw_core::LogBarrier;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vec(xs: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(xs)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(value_err)
}

#[pyclass(name = "ActionSet", module = "botw", from_py_object)]
#[derive(Clone)]
struct PyActionSet {
    inner: PolytopeActionSet,
}

#[pymethods]
impl PyActionSet {
    #[new]
    fn new(vertices: Vec<Vec<f64>>, halfspaces: Vec<(Vec<f64>, f64)>) -> PyResult<Self> {
        let inner = PolytopeActionSet::new(
            vertices.into_iter().map(vec).collect(),
            halfspaces.into_iter().map(|(a, b)| (vec(a), b)).collect(),
        )
        .map_err(value_err)?;
        Ok(PyActionSet { inner })
    }

    /// `hypercube`, `simplex` or `scaled-simplex` in dimension `d`.
    #[staticmethod]
    fn builtin(name: &str, d: usize) -> PyResult<Self> {
        Ok(PyActionSet { inner: builtin_instance(name, d).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyActionSet { inner: serde_json::from_str(text).map_err(value_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        self.inner.vertices().iter().map(|v| v.as_slice().to_vec()).collect()
    }

    #[pyo3(signature = (x, tol = botw_core::geometry::MEMBERSHIP_TOL))]
    fn contains(&self, x: Vec<f64>, tol: f64) -> bool {
        self.inner.membership(&vec(x), tol)
    }

    fn gauge(&self, pole: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.minkowski_gauge(&vec(pole), &vec(x)).map_err(value_err)
    }

    /// Convex weights `[(vertex_index, weight), ...]` reproducing `x`.
    fn decompose(&self, x: Vec<f64>) -> PyResult<Vec<(usize, f64)>> {
        Ok(self.inner.caratheodory_decompose(&vec(x)).map_err(value_err)?.support().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "ActionSet(dimension={}, vertices={}, halfspaces={})",
            self.inner.dimension(),
            self.inner.num_vertices(),
            self.inner.num_halfspaces()
        )
    }
}

#[pyclass(name = "Barrier", module = "botw")]
struct PyBarrier {
    inner: LogBarrier,
}

#[pymethods]
impl PyBarrier {
    #[new]
    fn new(set: &PyActionSet) -> Self {
        PyBarrier { inner: LogBarrier::new(&set.inner) }
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    /// Value, gradient, Hessian and eigenframe at an interior point.
    fn evaluate<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let f = self.inner.evaluate(&vec(x)).map_err(value_err)?;
        let d = f.dimension();
        let out = PyDict::new(py);
        out.set_item("value", f.value)?;
        out.set_item("gradient", f.gradient.as_slice().to_vec())?;
        let rows: Vec<Vec<f64>> = (0..d).map(|i| f.hessian.row(i).iter().copied().collect()).collect();
        out.set_item("hessian", rows)?;
        out.set_item("eigenvalues", f.eigenvalues.as_slice().to_vec())?;
        Ok(out)
    }

    /// Minimizer of `<c, x> + beta psi(x)`.
    #[pyo3(signature = (c, beta, start = None))]
    fn minimize(&self, c: Vec<f64>, beta: f64, start: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let start = match start {
            Some(s) => vec(s),
            None => self.inner.analytic_center(&DVector::zeros(self.inner.dimension())).map_err(value_err)?,
        };
        let sol = self.inner.minimize_linear_plus_barrier(&vec(c), beta, &start).map_err(value_err)?;
        Ok(sol.point.as_slice().to_vec())
    }
}

struct CallbackFeedback<'py> {
    callback: Bound<'py, PyAny>,
    error: Option<PyErr>,
}

impl Feedback for CallbackFeedback<'_> {
    fn observe(&mut self, ctx: &RoundContext<'_>, _rng: &mut RunRng) -> Result<f64, String> {
        let args = (ctx.round, ctx.action_index, ctx.action.as_slice().to_vec());
        match self.callback.call1(args).and_then(|v| v.extract::<f64>().map_err(PyErr::from)) {
            Ok(f) => Ok(f),
            Err(e) => {
                let msg = e.to_string();
                self.error = Some(e);
                Err(msg)
            }
        }
    }
}

fn record_dict<'py>(py: Python<'py>, r: &RoundRecord) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("round", r.round)?;
    out.set_item("beta", r.beta)?;
    out.set_item("point", r.point.as_slice().to_vec())?;
    out.set_item("reference", r.reference)?;
    out.set_item("ratio", r.ratio)?;
    out.set_item("explore", r.explore)?;
    out.set_item("action", r.action)?;
    out.set_item("action_vector", r.action_vector.as_slice().to_vec())?;
    out.set_item("observed", r.observed)?;
    out.set_item("estimate", r.estimate.as_slice().to_vec())?;
    out.set_item("stability", r.stability)?;
    Ok(out)
}

#[pyclass(name = "Learner", module = "botw")]
struct PyLearner {
    inner: core_learner::Learner,
}

#[pymethods]
impl PyLearner {
    #[new]
    #[pyo3(signature = (set, horizon, mode = "scaled-up", seed = 0, eta = None))]
    fn new(set: &PyActionSet, horizon: u64, mode: &str, seed: u64, eta: Option<f64>) -> PyResult<Self> {
        let mut cfg = LearnerConfig::new(horizon, parse_mode(mode)?, seed);
        if let Some(eta) = eta {
            cfg.eta = eta;
        }
        let inner = core_learner::Learner::new(set.inner.clone(), cfg).map_err(value_err)?;
        Ok(PyLearner { inner })
    }

    /// Plays one round. `feedback(round, action_index, action)` must return
    /// the observed loss in `[-1, 1]`.
    fn step<'py>(&mut self, py: Python<'py>, feedback: Bound<'py, PyAny>) -> PyResult<Bound<'py, PyDict>> {
        let mut fb = CallbackFeedback { callback: feedback, error: None };
        match self.inner.step(&mut fb) {
            Ok(record) => record_dict(py, &record),
            Err(e) => Err(fb.error.take().unwrap_or_else(|| PyRuntimeError::new_err(e.to_string()))),
        }
    }

    #[getter]
    fn round(&self) -> u64 {
        self.inner.state().round
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn predictor(&self) -> Vec<f64> {
        self.inner.state().predictor.as_slice().to_vec()
    }
}

/// Catalog instance as `(ActionSet, environment JSON)`.
#[pyfunction]
fn instance(name: &str) -> PyResult<(PyActionSet, String)> {
    let (set, spec) = instance_catalog(name).map_err(value_err)?;
    Ok((PyActionSet { inner: set }, serde_json::to_string(&spec).map_err(value_err)?))
}

/// Runs one cell and returns its summary numbers.
#[pyfunction]
#[pyo3(signature = (instance, horizon, mode = "scaled-up", seed = 0, environment = None, set = None))]
fn run_cell<'py>(
    py: Python<'py>,
    instance: &str,
    horizon: u64,
    mode: &str,
    seed: u64,
    environment: Option<&str>,
    set: Option<&PyActionSet>,
) -> PyResult<Bound<'py, PyDict>> {
    let (set, spec) = match (environment, set) {
        (Some(env), Some(set)) => {
            let spec: EnvironmentSpec = serde_json::from_str(env).map_err(value_err)?;
            (set.inner.clone(), spec)
        }
        (None, None) => instance_catalog(instance).map_err(value_err)?,
        _ => return Err(PyValueError::new_err("pass both `environment` and `set`, or neither")),
    };
    let cfg = LearnerConfig::new(horizon, parse_mode(mode)?, seed);
    let r = py.detach(|| run_cell_with(instance, &set, &spec, &cfg, true, None));
    let out = PyDict::new(py);
    out.set_item("rounds", r.rounds)?;
    out.set_item("final_regret", r.final_regret)?;
    out.set_item("final_expected_regret", r.final_expected_regret)?;
    out.set_item("checkpoints", r.checkpoints)?;
    out.set_item("sum_ratio", r.sum_ratio)?;
    out.set_item("violations", r.violations)?;
    out.set_item("failure", r.failure)?;
    Ok(out)
}

/// Runs verification suites; returns one dict per report.
#[pyfunction]
#[pyo3(signature = (suites = None, seed = 0, quick = true))]
fn verify<'py>(py: Python<'py>, suites: Option<Vec<String>>, seed: u64, quick: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut options = VerifyOptions { seed, ..Default::default() };
    if let Some(s) = suites {
        options.suites = harness::parse_suites(&s).map_err(value_err)?;
    }
    if quick {
        options.tracking_traces = 4;
        options.tracking_horizon = 300;
        options.unbiasedness_samples = 20_000;
        options.invariant_horizon = 300;
    }
    let outcome = py.detach(|| harness::verify(&options));
    outcome
        .reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("lemma", &r.lemma)?;
            d.set_item("trials", r.trials)?;
            d.set_item("max_violation", r.max_violation)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn botw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", botw_core::VERSION)?;
    m.add_class::<PyActionSet>()?;
    m.add_class::<PyBarrier>()?;
    m.add_class::<PyLearner>()?;
    m.add_function(wrap_pyfunction!(instance, m)?)?;
    m.add_function(wrap_pyfunction!(run_cell, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
