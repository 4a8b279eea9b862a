//! Python bindings: configuration, the pipeline, lagged correlation and the
//! read-only API.

use std::collections::BTreeMap;
use std::path::PathBuf;

use influence_core::api::Api as CoreApi;
use influence_core::config::{Overrides, PipelineConfig, PRESETS};
use influence_core::discovery::{self, DiscoveryConfig};
use influence_core::entities::{default_event_types, EntityKind, EntityTimeSeries, SeriesValue};
use influence_core::pipeline::{self, Target};
use influence_core::store::RunStore;
use influence_core::synth::{corpus, daily_events, events_to_csv, posts_to_jsonl, CorpusSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Resolved pipeline configuration.
#[pyclass(name = "Config", module = "influence_tomograph", frozen)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, then the file, then preset, `set` overrides and seed.
    #[staticmethod]
    #[pyo3(signature = (path=None, preset=None, set=None, seed=None))]
    fn load(path: Option<PathBuf>, preset: Option<String>, set: Option<Vec<String>>, seed: Option<u64>) -> PyResult<Self> {
        let overrides = Overrides { preset, set: set.unwrap_or_default(), seed };
        let inner = match path {
            Some(p) => PipelineConfig::load(&p, &overrides),
            None => PipelineConfig::resolve(None, &overrides),
        }
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn window_length_days(&self) -> u32 {
        self.inner.windows.length_days
    }
    #[getter]
    fn shift_days(&self) -> u32 {
        self.inner.windows.shift_days
    }
    #[getter]
    fn lag_days(&self) -> u32 {
        self.inner.windows.lag_days
    }
    #[getter]
    fn max_lag_windows(&self) -> usize {
        self.inner.max_lag_windows()
    }
    #[getter]
    fn min_correlation(&self) -> f64 {
        self.inner.discovery.min_correlation
    }
    #[getter]
    fn store(&self) -> PathBuf {
        self.inner.store.clone()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(window={}d, shift={}d, lag={}d, min_correlation={})",
            self.inner.windows.length_days, self.inner.windows.shift_days, self.inner.windows.lag_days, self.inner.discovery.min_correlation
        )
    }
}

#[pyclass(module = "influence_tomograph", get_all, frozen)]
struct StageReport {
    stage: String,
    cached: bool,
    summary: String,
}

#[pyclass(module = "influence_tomograph", get_all, frozen)]
struct RunReport {
    run_id: String,
    stages: Vec<Py<StageReport>>,
    checksums: BTreeMap<String, String>,
}

#[pymethods]
impl RunReport {
    fn recomputed(&self, py: Python<'_>) -> usize {
        self.stages.iter().filter(|s| !s.borrow(py).cached).count()
    }
}

#[pyclass(module = "influence_tomograph", get_all, frozen)]
struct LagCorr {
    lag: usize,
    r: Option<f64>,
    n: usize,
}

#[pyclass(module = "influence_tomograph", get_all, frozen)]
struct Edge {
    source: String,
    target: String,
    lag: usize,
    r: f64,
}

#[pymethods]
impl Edge {
    fn __repr__(&self) -> String {
        format!("Edge({} -> {}, lag={}, r={:.4})", self.source, self.target, self.lag, self.r)
    }
}

/// Read-only access to a run store through the `/api/v1` routes.
#[pyclass(name = "Api", module = "influence_tomograph", frozen)]
struct PyApi {
    inner: CoreApi,
}

#[pymethods]
impl PyApi {
    #[new]
    fn new(store: PathBuf) -> Self {
        Self { inner: CoreApi::new(RunStore::new(store)) }
    }

    /// GET `path_and_query`; returns `(status, json_text)`.
    fn get(&self, py: Python<'_>, path_and_query: &str) -> (u16, String) {
        let r = py.detach(|| self.inner.get(path_and_query));
        (r.status, r.text().to_string())
    }

    fn run_ids(&self) -> PyResult<Vec<String>> {
        let runs = self.inner.store().list_runs().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(runs.into_iter().map(|m| m.run_id).collect())
    }
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// Runs `target` ("all" or a stage name) and saves a run snapshot.
#[pyfunction]
#[pyo3(signature = (config, target="all"))]
fn run_pipeline(py: Python<'_>, config: &PyConfig, target: &str) -> PyResult<RunReport> {
    let target: Target = target.parse().map_err(PyValueError::new_err)?;
    let report = py.detach(|| pipeline::run(&config.inner, target)).map_err(|e| match e.exit_code() {
        1 => value_err(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    })?;
    let stages = report
        .stages
        .iter()
        .map(|s| Py::new(py, StageReport { stage: s.stage.name().to_string(), cached: s.cached, summary: s.summary.clone() }))
        .collect::<PyResult<_>>()?;
    Ok(RunReport { run_id: report.manifest.run_id.clone(), checksums: report.checksums(), stages })
}

#[pyfunction]
fn pearson(x: Vec<Option<f64>>, y: Vec<Option<f64>>) -> PyResult<Option<f64>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y must have the same length"));
    }
    Ok(discovery::pearson(&x, &y))
}

#[pyfunction]
#[pyo3(signature = (lead, lagging, max_lag, min_overlap=2))]
fn lagged_correlation(lead: Vec<Option<f64>>, lagging: Vec<Option<f64>>, max_lag: usize, min_overlap: usize) -> PyResult<Vec<LagCorr>> {
    if lead.len() != lagging.len() {
        return Err(PyValueError::new_err("series must have the same length"));
    }
    Ok(discovery::lagged_correlation(&lead, &lagging, max_lag, min_overlap)
        .into_iter()
        .map(|c| LagCorr { lag: c.lag, r: c.r, n: c.n })
        .collect())
}

/// Influence edges among scalar series given as `{entity_id: values}`.
#[pyfunction]
#[pyo3(signature = (series, max_lag_windows, min_correlation=0.7, min_overlap=8, use_absolute=false))]
fn discover(
    series: Vec<(String, Vec<Option<f64>>)>,
    max_lag_windows: usize,
    min_correlation: f64,
    min_overlap: usize,
    use_absolute: bool,
) -> PyResult<Vec<Edge>> {
    let cfg = DiscoveryConfig { max_lag_windows, min_correlation, min_overlap, use_absolute };
    cfg.validate().map_err(|(field, msg)| PyValueError::new_err(format!("{field}: {msg}")))?;
    if let Some(len) = series.first().map(|s| s.1.len()) {
        if series.iter().any(|s| s.1.len() != len) {
            return Err(PyValueError::new_err("all series must have the same length"));
        }
    }
    let series: Vec<EntityTimeSeries> = series
        .into_iter()
        .map(|(id, values)| EntityTimeSeries {
            entity_id: id,
            kind: EntityKind::Physical,
            values: values.into_iter().map(|v| v.map_or(SeriesValue::Missing, SeriesValue::Scalar)).collect(),
        })
        .collect();
    Ok(discovery::discover(&series, &cfg)
        .edges
        .into_iter()
        .map(|e| Edge { source: e.source, target: e.target, lag: e.lag, r: e.r })
        .collect())
}

/// Writes a synthetic `posts.jsonl` and `events.csv` into `directory`.
#[pyfunction]
#[pyo3(signature = (directory, users=200, posts=1500, days=30, seed=7))]
fn write_synthetic_corpus(directory: PathBuf, users: usize, posts: usize, days: u32, seed: u64) -> PyResult<(PathBuf, PathBuf)> {
    if users == 0 || days == 0 {
        return Err(PyValueError::new_err("users and days must be positive"));
    }
    let spec = CorpusSpec { users, posts, days, seed, ..Default::default() };
    let posts_path = directory.join("posts.jsonl");
    let events_path = directory.join("events.csv");
    let io = |e: std::io::Error| PyRuntimeError::new_err(e.to_string());
    std::fs::write(&posts_path, posts_to_jsonl(&corpus(&spec))).map_err(io)?;
    let events = daily_events(&default_event_types(), spec.start, days, 3, seed);
    std::fs::write(&events_path, events_to_csv(&events)).map_err(io)?;
    Ok((posts_path, events_path))
}

#[pymodule]
fn influence_tomograph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyApi>()?;
    m.add_class::<RunReport>()?;
    m.add_class::<StageReport>()?;
    m.add_class::<LagCorr>()?;
    m.add_class::<Edge>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(lagged_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(discover, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_corpus, m)?)?;
    Ok(())
}
