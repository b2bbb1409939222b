//! Python bindings for bdpp-core.

use bdpp_core::algorithm::{
    Bdpp, EngineOptions, InitialPoint, ParamSchedule, RecordStride, RunResult,
};
use bdpp_core::analysis::{compute_bounds, kkt_oracle, BoundsInput};
use bdpp_core::network::{make_complete_schedule, make_ring_partition_schedule, GraphSchedule};
use bdpp_core::problem::{CoupledProblem, ResourceAllocationSpec};
use bdpp_core::scenario::{self, Algorithm, Instance, RunSpec, DEFAULT_STEP_SCALE};
use bdpp_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_)
        | Error::Validation(_)
        | Error::UnsupportedKind(_)
        | Error::Infeasible(_)
        | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON so reports arrive as plain dicts.
fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A coupled problem `min Σ f_i(x_i)  s.t.  Σ g_i(x_i) ≤ 0, x_i ∈ X_i`.
#[pyclass(name = "Problem", module = "bdpp")]
struct PyProblem {
    inner: CoupledProblem,
}

#[pymethods]
impl PyProblem {
    /// Random resource-allocation instance.
    #[staticmethod]
    #[pyo3(signature = (n_agents = 10, seed = 1, capacity_range = None))]
    fn resource_allocation(
        n_agents: usize,
        seed: u64,
        capacity_range: Option<(f64, f64)>,
    ) -> PyResult<Self> {
        let mut spec = ResourceAllocationSpec {
            n_agents,
            seed,
            ..Default::default()
        };
        if let Some(r) = capacity_range {
            spec.capacity_range = r;
        }
        Ok(PyProblem {
            inner: spec.build().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyProblem {
            inner: CoupledProblem::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn constraint_dim(&self) -> usize {
        self.inner.constraint_dim()
    }

    /// Returns `(Σ f_i(x_i), Σ g_i(x_i))`.
    fn evaluate(&self, x: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
        self.inner.eval_global(&x).map_err(to_py)
    }

    fn slater_slack(&self) -> PyResult<f64> {
        self.inner.slater_slack().map_err(to_py)
    }

    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.inner.problem_constants().map_err(to_py)?)
    }

    /// Raises `ValueError` unless the Slater point is strictly feasible.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate_assumptions().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n_agents={}, constraint_dim={})",
            self.inner.n_agents(),
            self.inner.constraint_dim()
        )
    }
}

/// A periodic sequence of communication rounds with mixing weights.
#[pyclass(name = "Schedule", module = "bdpp")]
struct PySchedule {
    inner: GraphSchedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (n_agents, window, lazy_weight = 1.0))]
    fn ring_partition(n_agents: usize, window: usize, lazy_weight: f64) -> PyResult<Self> {
        Ok(PySchedule {
            inner: make_ring_partition_schedule(n_agents, window, lazy_weight).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_agents, lazy_weight = 1.0))]
    fn complete(n_agents: usize, lazy_weight: f64) -> PyResult<Self> {
        Ok(PySchedule {
            inner: make_complete_schedule(n_agents, lazy_weight).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySchedule {
            inner: GraphSchedule::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window()
    }

    #[getter]
    fn period(&self) -> usize {
        self.inner.period()
    }

    /// Connectivity and mixing report as a dict.
    fn check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &scenario::inspect_schedule(&self.inner))
    }

    /// Raises `ValueError` when the schedule is not usable.
    fn validate(&self) -> PyResult<()> {
        scenario::check_schedule(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Schedule(n_agents={}, window={}, period={})",
            self.inner.n_agents(),
            self.inner.window(),
            self.inner.period()
        )
    }
}

/// Recorded iterations of one run, stored column-wise.
#[pyclass(name = "RunResult", module = "bdpp", get_all)]
struct PyRunResult {
    t: Vec<usize>,
    objective_error: Vec<f64>,
    violation: Vec<Vec<f64>>,
    queue_sum_norm: Vec<f64>,
    drift: Vec<Option<f64>>,
    drift_bound: Vec<Option<f64>>,
    lemma1_slack_min: Vec<Option<f64>>,
    final_x: Vec<Vec<f64>>,
    final_avg: Vec<Vec<f64>>,
    summary_json: String,
}

impl From<RunResult> for PyRunResult {
    fn from(run: RunResult) -> Self {
        let r = &run.records;
        PyRunResult {
            t: r.iter().map(|x| x.t).collect(),
            objective_error: r.iter().map(|x| x.objective_error).collect(),
            violation: r.iter().map(|x| x.violation.clone()).collect(),
            queue_sum_norm: r.iter().map(|x| x.queue_sum_norm).collect(),
            drift: r.iter().map(|x| x.drift).collect(),
            drift_bound: r.iter().map(|x| x.drift_bound).collect(),
            lemma1_slack_min: r.iter().map(|x| x.lemma1_slack_min()).collect(),
            final_x: run.final_x,
            final_avg: run.final_avg,
            summary_json: serde_json::to_string(&run.summary).unwrap_or_default(),
        }
    }
}

#[pymethods]
impl PyRunResult {
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?
            .call_method1("loads", (&self.summary_json,))
    }

    fn __len__(&self) -> usize {
        self.t.len()
    }
}

/// Step-wise B-DPP engine.
#[pyclass(name = "Engine", module = "bdpp")]
struct PyEngine {
    inner: Bdpp,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (problem, schedule, c, seed = 1, f_star = 0.0))]
    fn new(
        problem: &PyProblem,
        schedule: &PySchedule,
        c: f64,
        seed: u64,
        f_star: f64,
    ) -> PyResult<Self> {
        let options = EngineOptions {
            init: InitialPoint::Random(seed),
            f_star,
            ..Default::default()
        };
        let params = ParamSchedule::standard(c).map_err(to_py)?;
        let inner = Bdpp::new(
            problem.inner.clone(),
            schedule.inner.clone(),
            params,
            options,
        )
        .map_err(to_py)?;
        Ok(PyEngine { inner })
    }

    /// Runs one iteration and returns its diagnostics as a dict.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rec = self.inner.step().map_err(to_py)?;
        to_dict(py, &rec)
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.states().iter().map(|s| s.x.clone()).collect()
    }

    #[getter]
    fn queues(&self) -> Vec<Vec<f64>> {
        self.inner
            .states()
            .iter()
            .map(|s| s.queue.clone())
            .collect()
    }

    #[getter]
    fn averages(&self) -> Vec<Vec<f64>> {
        self.inner
            .states()
            .iter()
            .map(|s| s.avg_x.clone())
            .collect()
    }
}

/// Centralized reference solution as a dict with `x_star`, `f_star`, `lambda_star`.
#[pyfunction]
#[pyo3(signature = (problem, tol = 1e-10))]
fn solve_reference<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &kkt_oracle(&problem.inner, tol).map_err(to_py)?)
}

/// Theoretical constants for buffer constant `c`.
#[pyfunction]
#[pyo3(signature = (problem, schedule, c, sigma = None))]
fn bounds<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    schedule: &PySchedule,
    c: f64,
    sigma: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut input =
        BoundsInput::from_instance(&problem.inner, &schedule.inner, c).map_err(to_py)?;
    input.sigma = sigma;
    to_dict(py, &compute_bounds(&input).map_err(to_py)?)
}

/// Runs `algorithm` (`bdpp`, `dpp` or `dual_subgrad`) for `horizon` steps.
/// Errors are measured against `f_star`, computed by the reference solver when omitted.
#[pyfunction]
#[pyo3(signature = (
    problem, schedule, horizon, algorithm = "bdpp", c = 0.27, seed = 1,
    stride = None, v = None, step_scale = DEFAULT_STEP_SCALE, f_star = None
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    problem: &PyProblem,
    schedule: &PySchedule,
    horizon: usize,
    algorithm: &str,
    c: f64,
    seed: u64,
    stride: Option<usize>,
    v: Option<f64>,
    step_scale: f64,
    f_star: Option<f64>,
) -> PyResult<PyRunResult> {
    let algorithm: Algorithm = algorithm.parse().map_err(to_py)?;
    if schedule.inner.n_agents() != problem.inner.n_agents() {
        return Err(PyValueError::new_err(
            "schedule and problem disagree on the agent count",
        ));
    }
    let f_star = match f_star {
        Some(f) => f,
        None => kkt_oracle(&problem.inner, 1e-10).map_err(to_py)?.f_star,
    };
    let instance = Instance {
        problem: problem.inner.clone(),
        schedule: schedule.inner.clone(),
        f_star,
    };
    let spec = RunSpec {
        algorithm,
        c,
        v,
        step_scale,
        horizon,
        seed,
        stride: match stride {
            Some(0) => return Err(PyValueError::new_err("stride must be positive")),
            Some(k) => RecordStride::Every(k),
            None => RecordStride::Default,
        },
    };
    let result = py
        .detach(|| scenario::run_method(&instance, &spec))
        .map_err(to_py)?;
    Ok(result.into())
}

#[pymodule]
fn bdpp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(solve_reference, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
