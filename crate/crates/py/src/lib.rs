//! Python bindings for `aimd-core`.

use std::path::PathBuf;

use aimd_core::aimd::{self, ResourceParams};
use aimd_core::compare::{compare_modes, export_comparison, ComparisonReport};
use aimd_core::config::{self, Config};
use aimd_core::cost::{self, CostCase};
use aimd_core::error::ErrorCategory;
use aimd_core::metrics::{collect_metrics, MetricsReport};
use aimd_core::oracle::{self, OptimalAllocation};
use aimd_core::{control, export_trace, seeds, Error, Mode, Trace};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Validation => PyValueError::new_err(msg),
        ErrorCategory::Io => PyOSError::new_err(msg),
        // Bad arguments to pure functions surface as run errors in the core.
        ErrorCategory::Run => match e {
            Error::IndexOutOfRange { .. } | Error::LengthMismatch { .. } | Error::Domain(_) => {
                PyValueError::new_err(msg)
            }
            _ => PyRuntimeError::new_err(msg),
        },
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "deterministic" | "d" => Ok(Mode::Deterministic),
        "stochastic" | "s" => Ok(Mode::Stochastic),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'deterministic' or 'stochastic', got {other:?}"
        ))),
    }
}

/// One device's cost from the three-branch polynomial family.
#[pyclass(name = "CostFunction", module = "aimd_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCostFunction {
    inner: cost::CostFunction,
}

#[pymethods]
impl PyCostFunction {
    #[new]
    fn new(case: u8, a: u32, b: u32, c: u32, d: u32) -> PyResult<Self> {
        let case_id = match case {
            1 => CostCase::Case1,
            2 => CostCase::Case2,
            3 => CostCase::Case3,
            _ => return Err(PyValueError::new_err(format!("case must be 1, 2 or 3, got {case}"))),
        };
        let inner = cost::CostFunction::new(case_id, a, b, c, d).map_err(to_py)?;
        Ok(PyCostFunction { inner })
    }

    /// Draws a function from the family with the given seed.
    #[staticmethod]
    fn sample(seed: u64) -> PyResult<Self> {
        let inner = cost::sample_cost_function(seed, cost::FAMILY_DIM).map_err(to_py)?;
        Ok(PyCostFunction { inner })
    }

    #[getter]
    fn case(&self) -> u8 {
        self.inner.case_id.index()
    }

    #[getter]
    fn coefficients(&self) -> (u32, u32, u32, u32) {
        let [a, b, c, d] = self.inner.coeffs.as_array();
        (a, b, c, d)
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&x).map_err(to_py)
    }

    fn partial_derivative(&self, x: Vec<f64>, j: usize) -> PyResult<f64> {
        self.inner.partial_derivative(&x, j).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.inner.coeffs.as_array();
        format!("CostFunction(case={}, a={a}, b={b}, c={c}, d={d})", self.inner.case_id.index())
    }
}

/// `n` functions drawn with the per-device streams used by the simulator.
#[pyfunction]
fn sample_population(seed: u64, n: usize) -> PyResult<Vec<PyCostFunction>> {
    let fs = cost::sample_population(seed, n, cost::FAMILY_DIM).map_err(to_py)?;
    Ok(fs.into_iter().map(|inner| PyCostFunction { inner }).collect())
}

fn unwrap_functions(functions: &[PyRef<'_, PyCostFunction>]) -> Vec<cost::CostFunction> {
    functions.iter().map(|f| f.inner).collect()
}

#[pyfunction]
fn additive_increase(x: f64, alpha: f64) -> f64 {
    aimd::additive_increase(x, alpha)
}

#[pyfunction]
fn md_deterministic(x: f64, lam: f64, beta: f64) -> f64 {
    aimd::md_deterministic(x, lam, beta)
}

/// `draws` independent stochastic back-offs of `x` from one seeded stream.
#[pyfunction]
#[pyo3(signature = (x, lam, beta, seed, draws = 1))]
fn md_stochastic(x: f64, lam: f64, beta: f64, seed: u64, draws: usize) -> Vec<f64> {
    let mut rng = seeds::backoff_stream(seed, 0, 0, 1);
    (0..draws).map(|_| aimd::md_stochastic(x, lam, beta, &mut rng)).collect()
}

/// Clamped scaling factor `Γ·grad/x_bar`.
#[pyfunction]
fn scaling_factor(normalization: f64, grad: f64, x_bar: f64) -> PyResult<f64> {
    aimd::scaling_factor(normalization, grad, x_bar)
        .map(|s| s.lambda)
        .map_err(|v| PyValueError::new_err(format!("average {v:e} is too small for a scaling factor")))
}

#[pyfunction]
fn update_average(x_bar: f64, x_next: f64, k: u64) -> f64 {
    aimd::update_average(x_bar, x_next, k)
}

/// One bit per resource: total above `gamma_cap · capacity`.
#[pyfunction]
#[pyo3(signature = (totals, capacities, gamma_caps = None))]
fn capacity_events(totals: Vec<f64>, capacities: Vec<f64>, gamma_caps: Option<Vec<f64>>) -> PyResult<Vec<bool>> {
    let gammas = gamma_caps.unwrap_or_else(|| vec![1.0; capacities.len()]);
    if gammas.len() != capacities.len() {
        return Err(PyValueError::new_err("gamma_caps and capacities differ in length"));
    }
    let params: Vec<ResourceParams> = capacities
        .iter()
        .zip(&gammas)
        .map(|(&capacity, &gamma_cap)| ResourceParams {
            capacity,
            alpha: 0.0,
            beta: 0.5,
            gamma_cap,
            normalization: config::DEFAULT_NORMALIZATION,
        })
        .collect();
    control::evaluate_capacity_events(&totals, &params).map_err(to_py)
}

fn optimum_dict<'py>(py: Python<'py>, sol: &OptimalAllocation, functions: &[cost::CostFunction]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("x_star", sol.x_star.clone())?;
    d.set_item("mu", sol.mu.clone())?;
    d.set_item("kkt_residual", sol.kkt_residual)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("certified", sol.certified)?;
    d.set_item("total_cost", sol.total_cost(functions))?;
    Ok(d)
}

/// Optimal allocation by nested bisection on the per-resource multipliers.
#[pyfunction]
#[pyo3(signature = (functions, capacities, tol = 1e-10))]
fn solve_separable<'py>(
    py: Python<'py>,
    functions: Vec<PyRef<'py, PyCostFunction>>,
    capacities: Vec<f64>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let fs = unwrap_functions(&functions);
    let sol = oracle::solve_separable(&fs, &capacities, tol).map_err(to_py)?;
    optimum_dict(py, &sol, &fs)
}

/// Optimal allocation by spectral projected gradient.
#[pyfunction]
#[pyo3(signature = (functions, capacities, tol = 1e-8, max_iters = 200_000))]
fn solve_projected_gradient<'py>(
    py: Python<'py>,
    functions: Vec<PyRef<'py, PyCostFunction>>,
    capacities: Vec<f64>,
    tol: f64,
    max_iters: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let fs = unwrap_functions(&functions);
    let sol = oracle::solve_projected_gradient(&fs, &capacities, tol, max_iters).map_err(to_py)?;
    optimum_dict(py, &sol, &fs)
}

#[pyfunction]
fn kkt_residual(functions: Vec<PyRef<'_, PyCostFunction>>, x: Vec<Vec<f64>>, capacities: Vec<f64>) -> PyResult<f64> {
    let fs = unwrap_functions(&functions);
    if x.len() != fs.len() || x.iter().any(|r| r.len() != capacities.len()) {
        return Err(PyValueError::new_err("x must be n rows of one value per resource"));
    }
    Ok(oracle::kkt_residual(&fs, &x, &capacities))
}

/// A validated run configuration.
#[pyclass(name = "Config", module = "aimd_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Reads and validates a TOML file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: config::parse_config(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: config::parse_config_str(text).map_err(to_py)?,
        })
    }

    /// Sixty-device style cloudlet setup with three resources.
    #[staticmethod]
    #[pyo3(signature = (n = 60, steps = 30000, seed = 1))]
    fn cloudlet(n: usize, steps: u64, seed: u64) -> Self {
        PyConfig {
            inner: config::cloudlet_config(n, steps, seed),
        }
    }

    fn to_toml(&self) -> PyResult<String> {
        config::serialize_config(&self.inner).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps
    }

    #[setter]
    fn set_steps(&mut self, steps: u64) {
        self.inner.steps = steps;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn trace_stride(&self) -> Option<u64> {
        self.inner.trace_stride
    }

    #[setter]
    fn set_trace_stride(&mut self, stride: Option<u64>) {
        self.inner.trace_stride = stride;
    }

    #[getter]
    fn capacities(&self) -> Vec<f64> {
        self.inner.capacities()
    }

    fn cost_functions(&self) -> PyResult<Vec<PyCostFunction>> {
        let fs = self.inner.cost_functions().map_err(to_py)?;
        Ok(fs.into_iter().map(|inner| PyCostFunction { inner }).collect())
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

/// A finished run with its metrics against the central optimum.
#[pyclass(name = "RunResult", module = "aimd_py", frozen)]
struct PyRunResult {
    trace: Trace,
    metrics: MetricsReport,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn mode(&self) -> &'static str {
        self.trace.meta.mode.label()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.trace.meta.steps
    }

    /// Summary block as written to `summary.json`.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.metrics.summary;
        let d = PyDict::new(py);
        d.set_item("steps", s.steps)?;
        d.set_item("final_cost_ratio", s.final_cost_ratio)?;
        d.set_item("final_spread", s.final_spread.clone())?;
        d.set_item("final_average_totals", s.final_average_totals.clone())?;
        d.set_item("distance_median", s.distance_median)?;
        d.set_item("distance_max", s.distance_max)?;
        d.set_item("event_bits", s.event_bits.clone())?;
        d.set_item("communication_overhead", s.communication_overhead)?;
        d.set_item("max_total", s.max_total.clone())?;
        d.set_item("clamped_low", s.clamped_low)?;
        d.set_item("clamped_high", s.clamped_high)?;
        d.set_item("optimal_cost", s.optimal_cost)?;
        d.set_item("wall_time_secs", s.wall_time_secs)?;
        d.set_item("config_hash", self.trace.meta.config_hash.clone())?;
        Ok(d)
    }

    /// Final average allocations, one row per device.
    fn final_averages(&self) -> Vec<Vec<f64>> {
        self.trace.final_averages()
    }

    /// Per-resource event counts over steps `0..=k`.
    fn event_bits(&self, k: u64) -> PyResult<Vec<u64>> {
        self.trace.event_bits(k).map_err(to_py)
    }

    /// `Σ_i x_i^j` at every step.
    fn totals(&self) -> Vec<Vec<f64>> {
        self.trace.series.totals.clone()
    }

    /// Derivative spread per resource at every step.
    fn spread(&self) -> Vec<Vec<f64>> {
        self.trace.series.spread.clone()
    }

    /// Writes the CSV/JSON bundle; returns `{file name: data rows}`.
    fn export(&self, dir: PathBuf) -> PyResult<Vec<(String, usize)>> {
        let manifest = export_trace(&self.trace, &self.metrics, dir).map_err(to_py)?;
        Ok(manifest
            .files
            .iter()
            .map(|f| {
                let name = f.path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (name, f.rows)
            })
            .collect())
    }
}

fn optimum_for(config: &Config) -> Result<OptimalAllocation, Error> {
    oracle::solve_separable(&config.cost_functions()?, &config.capacities(), config.oracle.tol)
}

/// Runs one mode; the GIL is released while the simulation runs.
#[pyfunction]
#[pyo3(signature = (config, mode = "deterministic"))]
fn run(py: Python<'_>, config: PyRef<'_, PyConfig>, mode: &str) -> PyResult<PyRunResult> {
    let mode = parse_mode(mode)?;
    let cfg = config.inner.clone();
    let (trace, metrics) = py
        .detach(move || -> Result<_, Error> {
            let opt = optimum_for(&cfg)?;
            let trace = aimd_core::run(&cfg, mode)?;
            let metrics = collect_metrics(&trace, &opt)?;
            Ok((trace, metrics))
        })
        .map_err(to_py)?;
    Ok(PyRunResult { trace, metrics })
}

fn comparison_dict<'py>(py: Python<'py>, report: &ComparisonReport) -> PyResult<Bound<'py, PyDict>> {
    let s = &report.summary;
    let d = PyDict::new(py);
    d.set_item("spread_threshold", s.spread_threshold)?;
    d.set_item("final_median_difference", s.final_median_difference)?;
    d.set_item("final_max_difference", s.final_max_difference)?;
    for m in [&s.first, &s.second] {
        let md = PyDict::new(py);
        md.set_item("convergence_step", m.convergence_step)?;
        md.set_item("event_bits", m.event_bits.clone())?;
        md.set_item("event_bits_to_convergence", m.event_bits_to_convergence.clone())?;
        md.set_item("final_spread", m.final_spread.clone())?;
        d.set_item(m.mode.label(), md)?;
    }
    Ok(d)
}

/// Runs both modes on the same population; optionally exports the
/// comparison files to `out`.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn compare<'py>(py: Python<'py>, config: PyRef<'py, PyConfig>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let report = py
        .detach(move || -> Result<_, Error> {
            let report = compare_modes(&cfg)?;
            if let Some(dir) = out {
                export_comparison(&report, dir)?;
            }
            Ok(report)
        })
        .map_err(to_py)?;
    comparison_dict(py, &report)
}

#[pymodule]
fn aimd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCostFunction>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(sample_population, m)?)?;
    m.add_function(wrap_pyfunction!(additive_increase, m)?)?;
    m.add_function(wrap_pyfunction!(md_deterministic, m)?)?;
    m.add_function(wrap_pyfunction!(md_stochastic, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_factor, m)?)?;
    m.add_function(wrap_pyfunction!(update_average, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_events, m)?)?;
    m.add_function(wrap_pyfunction!(solve_separable, m)?)?;
    m.add_function(wrap_pyfunction!(solve_projected_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_residual, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
