//! Python bindings: `import triad_reduce`.
//!
//! Structured results (validation reports, bath statistics, ensemble
//! statistics) come back as plain dicts and lists; trajectories come back as
//! dicts of column lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use triad_core::bath::{check_compatibility, check_rescaling, BathOptions, FastRunOptions};
use triad_core::experiment::{compute_stats, run_ensemble, simulate_to_dir, StatsRequest};
use triad_core::reduced::{reduced_diffusion, reduced_drift};
use triad_core::stats::{self, CtConvention};
use triad_core::{
    builtin_paper_model, estimate_m as core_estimate_m, run_fast_subsystem, Error, ExperimentConfig, MProvenance,
    ModelKind, ReducedParams, ReducedState, Scale, TimeSeries, TriadCoefficients,
};

create_exception!(triad_reduce, NumericalError, PyException, "A simulation diverged or lost accuracy.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_numerical() => NumericalError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Serializable value to the equivalent Python object (via JSON).
fn to_object<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_object<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn series_to_dict<'py>(py: Python<'py>, s: &TimeSeries) -> PyResult<Bound<'py, PyAny>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("t", (0..s.len()).map(|i| s.time(i)).collect::<Vec<_>>())?;
    for (i, name) in s.names.iter().enumerate() {
        d.set_item(name, s.column(i))?;
    }
    Ok(d.into_any())
}

/// Interaction coefficients of a triad model.
#[pyclass(name = "Coefficients", module = "triad_reduce", from_py_object)]
#[derive(Clone)]
struct PyCoefficients {
    inner: TriadCoefficients,
}

#[pymethods]
impl PyCoefficients {
    /// The built-in ten-mode table.
    #[staticmethod]
    fn builtin() -> Self {
        Self {
            inner: builtin_paper_model(),
        }
    }

    #[staticmethod]
    fn from_json(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TriadCoefficients::from_json_file(path).map_err(to_py)?,
        })
    }

    fn to_json(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_json_file(path).map_err(to_py)
    }

    /// Nearest exactly conservative coefficient set.
    fn projected(&self) -> Self {
        Self {
            inner: self.inner.projected(),
        }
    }

    /// Residuals of the conservation constraints as a dict with `pass`.
    #[pyo3(signature = (tol = 5e-4))]
    fn validate<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner.validate(tol).map_err(to_py)?)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    fn __repr__(&self) -> String {
        format!(
            "Coefficients(n={}, xyy={}, yyy={})",
            self.inner.n,
            self.inner.xyy.len(),
            self.inner.yyy.len()
        )
    }
}

/// Experiment configuration; mirrors the JSON accepted by `triad simulate`.
#[pyclass(name = "ExperimentConfig", module = "triad_reduce", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

fn scale(paper_scale: bool) -> Scale {
    if paper_scale {
        Scale::Paper
    } else {
        Scale::Desk
    }
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (epsilon, paper_scale = false))]
    fn full(epsilon: f64, paper_scale: bool) -> Self {
        Self {
            inner: ExperimentConfig::full_preset(epsilon, scale(paper_scale)),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (paper_scale = false))]
    fn reduced(paper_scale: bool) -> Self {
        Self {
            inner: ExperimentConfig::reduced_preset(scale(paper_scale)),
        }
    }

    #[staticmethod]
    fn fast() -> Self {
        Self {
            inner: ExperimentConfig::fast_preset(),
        }
    }

    #[staticmethod]
    fn from_json(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_json_file(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_dict(py: Python<'_>, d: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self {
            inner: from_object(py, d)?,
        })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner)
    }

    #[getter]
    fn model(&self) -> &'static str {
        match self.inner.model {
            ModelKind::Full => "full",
            ModelKind::Fast => "fast",
            ModelKind::Reduced => "reduced",
        }
    }

    #[getter]
    fn get_t_final(&self) -> f64 {
        self.inner.t_final
    }

    #[setter]
    fn set_t_final(&mut self, v: f64) {
        self.inner.t_final = v;
    }

    #[getter]
    fn get_ensemble(&self) -> usize {
        self.inner.ensemble
    }

    #[setter]
    fn set_ensemble(&mut self, v: usize) {
        self.inner.ensemble = v;
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn get_dt(&self) -> f64 {
        self.inner.stepper.dt
    }

    #[setter]
    fn set_dt(&mut self, v: f64) {
        self.inner.stepper.dt = v;
    }

    #[getter]
    fn get_record_stride(&self) -> usize {
        self.inner.stepper.record_stride
    }

    #[setter]
    fn set_record_stride(&mut self, v: usize) {
        self.inner.stepper.record_stride = v;
    }

    #[getter]
    fn get_m(&self) -> Option<f64> {
        self.inner.m
    }

    #[setter]
    fn set_m(&mut self, v: Option<f64>) {
        self.inner.m = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(model={}, epsilon={}, dt={}, t_final={}, ensemble={}, seed={})",
            self.model(),
            self.inner.epsilon,
            self.inner.stepper.dt,
            self.inner.t_final,
            self.inner.ensemble,
            self.inner.seed
        )
    }
}

/// Runs the ensemble and returns one `{"t": [...], <column>: [...]}` dict
/// per surviving trajectory.
#[pyfunction]
#[pyo3(signature = (config, jobs = 1))]
fn simulate<'py>(py: Python<'py>, config: &PyConfig, jobs: usize) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let cfg = config.inner.clone();
    let run = py.detach(|| run_ensemble(&cfg, jobs)).map_err(to_py)?;
    run.series.iter().map(|s| series_to_dict(py, s)).collect()
}

/// Runs the ensemble, writes the CSV layout of `triad simulate` to `out_dir`
/// and returns the statistics bundle.
#[pyfunction]
#[pyo3(signature = (config, out_dir, jobs = 1))]
fn simulate_to<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let (_, bundle) = py.detach(|| simulate_to_dir(&cfg, jobs, &out_dir)).map_err(to_py)?;
    to_object(py, &bundle)
}

/// Correlation functions, correlation times, kurtosis and densities of an
/// ensemble run with the config's statistics request.
#[pyfunction]
#[pyo3(signature = (config, jobs = 1))]
fn ensemble_stats<'py>(py: Python<'py>, config: &PyConfig, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let bundle = py
        .detach(|| -> triad_core::Result<_> {
            let run = run_ensemble(&cfg, jobs)?;
            let gamma = cfg.load_coefficients()?.gamma;
            compute_stats(&run.series, &cfg.stats, gamma)
        })
        .map_err(to_py)?;
    to_object(py, &bundle)
}

/// Bath constant from microcanonical runs of the fast sub-system (projected
/// coefficients). Keyword arguments override the default options.
#[pyfunction]
#[pyo3(signature = (coefficients = None, e_level = None, t_final = None, dt = None, n_runs = None, seed = 0))]
fn estimate_m<'py>(
    py: Python<'py>,
    coefficients: Option<&PyCoefficients>,
    e_level: Option<f64>,
    t_final: Option<f64>,
    dt: Option<f64>,
    n_runs: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = coefficients.map_or_else(builtin_paper_model, |c| c.inner.clone()).projected();
    let opts = bath_options(e_level, t_final, dt, n_runs, seed);
    let s = py.detach(|| core_estimate_m(&c.xyy, &c.yyy, c.n, &opts)).map_err(to_py)?;
    let summary = to_object(py, &s.summary_json())?;
    summary.set_item("C_tau", s.c_curve.clone())?;
    summary.set_item("dtau", s.dtau)?;
    Ok(summary)
}

fn bath_options(e_level: Option<f64>, t_final: Option<f64>, dt: Option<f64>, n_runs: Option<usize>, seed: u64) -> BathOptions {
    let d = BathOptions::default();
    BathOptions {
        e_level: e_level.or(d.e_level),
        t_final: t_final.unwrap_or(d.t_final),
        dt: dt.unwrap_or(d.dt),
        n_runs: n_runs.unwrap_or(d.n_runs),
        seed,
        ..d
    }
}

/// Compensated bath constants on several energy shells and their pairwise
/// agreement.
#[pyfunction]
#[pyo3(signature = (levels, t_final = None, dt = None, n_runs = None, seed = 0))]
fn rescaling_check<'py>(
    py: Python<'py>,
    levels: Vec<f64>,
    t_final: Option<f64>,
    dt: Option<f64>,
    n_runs: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = builtin_paper_model().projected();
    let opts = bath_options(None, t_final, dt, n_runs, seed);
    let r = py
        .detach(|| check_rescaling(&c.xyy, &c.yyy, c.n, &levels, &opts))
        .map_err(to_py)?;
    to_object(py, &r)
}

/// Deterministic fast-bath trajectory from `init` (no renormalization).
#[pyfunction]
#[pyo3(signature = (init, t_final, dt = 1e-3, record_stride = 1, coefficients = None))]
fn fast_run<'py>(
    py: Python<'py>,
    init: Vec<f64>,
    t_final: f64,
    dt: f64,
    record_stride: usize,
    coefficients: Option<&PyCoefficients>,
) -> PyResult<Bound<'py, PyAny>> {
    let c = coefficients.map_or_else(builtin_paper_model, |c| c.inner.clone()).projected();
    let opts = FastRunOptions {
        dt,
        t_final,
        record_stride,
        renormalize: false,
        ..Default::default()
    };
    let run = py.detach(|| run_fast_subsystem(&c.yyy, c.n, &init, &opts)).map_err(to_py)?;
    let d = series_to_dict(py, &run.series)?;
    d.set_item("max_rel_drift", run.max_rel_drift)?;
    let compat = check_compatibility(&run.series, 0.02).ok();
    d.set_item("compatibility", to_object(py, &compat)?)?;
    Ok(d)
}

fn reduced_params(m: f64, gamma: f64, sigma: f64, n: usize) -> PyResult<ReducedParams> {
    ReducedParams::new(gamma, sigma, n, m, MProvenance::UserSupplied).map_err(to_py)
}

/// Drift `(dx, dE)` of the reduced SDE at `(x, E)`.
#[pyfunction]
#[pyo3(signature = (x, e, m = 1.2759, gamma = 1.0, sigma = 2.236, n = 10))]
fn reduced_drift_at(x: f64, e: f64, m: f64, gamma: f64, sigma: f64, n: usize) -> PyResult<(f64, f64)> {
    reduced_drift(&ReducedState::new(x, e, 0.0), &reduced_params(m, gamma, sigma, n)?).map_err(to_py)
}

/// Noise matrix `G` of the reduced SDE at `(x, E)`: rows (x, E), columns
/// (W₁, W₂). The diffusion matrix is `½ G Gᵀ`.
#[pyfunction]
#[pyo3(signature = (x, e, m = 1.2759, gamma = 1.0, sigma = 2.236, n = 10))]
fn reduced_noise_at(x: f64, e: f64, m: f64, gamma: f64, sigma: f64, n: usize) -> PyResult<[[f64; 2]; 2]> {
    reduced_diffusion(&ReducedState::new(x, e, 0.0), &reduced_params(m, gamma, sigma, n)?).map_err(to_py)
}

/// Normalized correlation function with block standard errors.
#[pyfunction]
fn correlation_function<'py>(py: Python<'py>, series: Vec<f64>, dt_sample: f64, max_lag: f64) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &stats::correlation_function(&series, dt_sample, max_lag).map_err(to_py)?)
}

/// Area under the normalized correlation function up to its first drop
/// below 0.01.
#[pyfunction]
fn correlation_time(series: Vec<f64>, dt_sample: f64, max_lag: f64) -> PyResult<f64> {
    let cf = stats::correlation_function(&series, dt_sample, max_lag).map_err(to_py)?;
    Ok(stats::correlation_time(&cf, CtConvention::Area).value)
}

#[pyfunction]
fn lagged_kurtosis<'py>(py: Python<'py>, series: Vec<f64>, dt_sample: f64, max_lag: f64) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &stats::lagged_kurtosis(&series, dt_sample, max_lag).map_err(to_py)?)
}

/// Histogram density; `range` defaults to the data range.
#[pyfunction]
#[pyo3(signature = (series, bins, range = None))]
fn empirical_density<'py>(
    py: Python<'py>,
    series: Vec<f64>,
    bins: usize,
    range: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyAny>> {
    let d = stats::empirical_density(&series, bins, range).map_err(to_py)?;
    let out = to_object(py, &d)?;
    out.set_item("bin_centers", d.centers())?;
    Ok(out)
}

/// Stationary density of the bath energy evaluated at `points`.
#[pyfunction]
#[pyo3(signature = (points, gamma = 1.0, sigma = 2.236, n = 10))]
fn energy_density(points: Vec<f64>, gamma: f64, sigma: f64, n: usize) -> PyResult<Vec<f64>> {
    let rho = stats::analytic_density_e(gamma, sigma, n).map_err(to_py)?;
    Ok(points.into_iter().map(|s| rho.pdf(s)).collect())
}

/// Default statistics request as a dict (for `ExperimentConfig.from_dict`).
#[pyfunction]
fn default_stats_request<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &StatsRequest::default())
}

/// Slow-fast triad model, microcanonical bath statistics and the reduced
/// (x, E) SDE.
#[pymodule]
fn triad_reduce(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PUBLISHED_M", triad_core::PUBLISHED_M)?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyCoefficients>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_to, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_stats, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_m, m)?)?;
    m.add_function(wrap_pyfunction!(rescaling_check, m)?)?;
    m.add_function(wrap_pyfunction!(fast_run, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_drift_at, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_noise_at, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_function, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_time, m)?)?;
    m.add_function(wrap_pyfunction!(lagged_kurtosis, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_density, m)?)?;
    m.add_function(wrap_pyfunction!(energy_density, m)?)?;
    m.add_function(wrap_pyfunction!(default_stats_request, m)?)?;
    Ok(())
}
