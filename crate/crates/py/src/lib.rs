//! Python bindings. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use chrono::NaiveDate;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use trisent::config::PipelineConfig;
use trisent::forecast::fit_var as core_fit_var;
use trisent::market::{OptionChainSnapshot, OptionQuote, OptionType, Polarity};
use trisent::options::{implied_skewness as core_skewness, OsiConfig};
use trisent::panel::LaggedRow;
use trisent::pca::{fit_pca, Anchor};
use trisent::pipeline;
use trisent::synth::SynthSpec;
use trisent::textual::{micro_metrics as core_micro_metrics, PolarityCounts};

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn polarity(s: &str) -> PyResult<Polarity> {
    s.parse()
        .map_err(|e: trisent::market::DataError| PyValueError::new_err(e.to_string()))
}

fn date(s: &str) -> PyResult<NaiveDate> {
    s.parse()
        .map_err(|e: chrono::ParseError| PyValueError::new_err(format!("{s}: {e}")))
}

/// Experiment configuration. Construct from JSON text or a file path.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = "{}"))]
    fn new(json: &str) -> PyResult<Self> {
        let inner = PipelineConfig::from_json_str(json, std::path::Path::new("<python>")).map_err(err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: PipelineConfig::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: Option<u64>) {
        self.inner.seed = seed;
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.out.clone()
    }

    #[setter]
    fn set_out(&mut self, out: PathBuf) {
        self.inner.out = out;
    }

    /// Digest used in output headers.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn __repr__(&self) -> String {
        let seed = self.inner.seed.map_or("None".to_string(), |s| s.to_string());
        format!("Config(seed={seed}, hash={})", &self.inner.hash()[..12])
    }
}

/// (Pos - Neg) / (Pos + Neu + Neg); None when there are no posts.
#[pyfunction]
fn bsi(pos: u32, neu: u32, neg: u32) -> Option<f64> {
    PolarityCounts {
        date: NaiveDate::MIN,
        pos,
        neu,
        neg,
    }
    .bsi()
}

/// Micro-averaged precision/recall/F1. `predicted` holds (post_id, label or
/// None for abstain); `gold` holds (post_id, label).
#[pyfunction]
fn micro_metrics<'py>(
    py: Python<'py>,
    predicted: Vec<(String, Option<String>)>,
    gold: Vec<(String, String)>,
) -> PyResult<Bound<'py, PyAny>> {
    let predicted = predicted
        .into_iter()
        .map(|(id, l)| Ok((id, l.as_deref().map(polarity).transpose()?)))
        .collect::<PyResult<Vec<_>>>()?;
    let gold = gold
        .into_iter()
        .map(|(id, l)| Ok((id, polarity(&l)?)))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &core_micro_metrics(&predicted, &gold).map_err(err)?)
}

/// Model-free risk-neutral moments of one chain. Quotes are
/// (strike, expiry "YYYY-MM-DD", "C" or "P", mid price).
#[pyfunction]
#[pyo3(signature = (date_, underlying, rate, quotes, target_horizon_days = 30))]
fn implied_skewness<'py>(
    py: Python<'py>,
    date_: &str,
    underlying: f64,
    rate: f64,
    quotes: Vec<(f64, String, String, f64)>,
    target_horizon_days: i64,
) -> PyResult<Bound<'py, PyAny>> {
    let quotes = quotes
        .into_iter()
        .map(|(strike, expiry, kind, mid)| {
            let kind = match kind.as_str() {
                "C" | "c" | "call" => OptionType::Call,
                "P" | "p" | "put" => OptionType::Put,
                other => return Err(PyValueError::new_err(format!("option type `{other}`"))),
            };
            Ok(OptionQuote {
                strike,
                expiry: date(&expiry)?,
                kind,
                mid,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let chain = OptionChainSnapshot {
        stock_id: String::new(),
        date: date(date_)?,
        underlying,
        rate,
        quotes,
    };
    let cfg = OsiConfig {
        target_horizon_days,
        ..Default::default()
    };
    to_py(py, &core_skewness(&chain, &cfg).map_err(err)?)
}

/// First principal component of standardized factors (rows x factors).
#[pyfunction]
fn pca<'py>(py: Python<'py>, names: Vec<String>, rows: Vec<Vec<f64>>, anchor: &str) -> PyResult<Bound<'py, PyAny>> {
    let anchor: Anchor = anchor.parse().expect("anchor parsing is infallible");
    to_py(py, &fit_pca(&names, &rows, &anchor).map_err(err)?)
}

/// Least-squares VAR(lag) on a (T x N) series given as rows.
#[pyfunction]
fn fit_var<'py>(py: Python<'py>, series: Vec<Vec<f64>>, lag: usize) -> PyResult<Bound<'py, PyAny>> {
    let n = series.first().map_or(0, Vec::len);
    if series.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let rows: Vec<LaggedRow> = (lag..series.len())
        .map(|t| LaggedRow {
            date: NaiveDate::MIN,
            inputs: (1..=lag).flat_map(|s| series[t - s].iter().copied()).collect(),
            current: series[t].clone(),
            target: series[t][0],
            target_raw: series[t][0],
        })
        .collect();
    let cols: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
    to_py(py, &core_fit_var(&rows, &cols, lag, 0).map_err(err)?)
}

fn paths(files: Vec<PathBuf>) -> Vec<String> {
    files.into_iter().map(|p| p.display().to_string()).collect()
}

/// Writes a synthetic dataset; `spec` is JSON text with synth keys.
#[pyfunction]
#[pyo3(signature = (out, spec = "{}"))]
fn synth(out: PathBuf, spec: &str) -> PyResult<Vec<String>> {
    let spec: SynthSpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(paths(pipeline::synth(&spec, &out).map_err(err)?.files))
}

#[pyfunction]
fn build_indices(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    let s = py.detach(|| pipeline::build_indices(&cfg, &cfg.out)).map_err(err)?;
    Ok(paths(s.files))
}

#[pyfunction]
fn dump_panel(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    let s = py.detach(|| pipeline::dump_panel(&cfg, &cfg.out)).map_err(err)?;
    Ok(paths(s.files))
}

/// Runs the grid, writes its outputs and returns one dict per cell.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let run = py.detach(|| pipeline::run_experiment(&cfg, &cfg.out)).map_err(err)?;
    to_py(py, &run.grid.reports)
}

#[pyfunction]
fn eval_classifier(config: &PyConfig, predictions: PathBuf, gold: PathBuf) -> PyResult<Vec<String>> {
    let cfg = &config.inner;
    Ok(paths(
        pipeline::eval_classifier(&predictions, &gold, &cfg.header(), &cfg.out)
            .map_err(err)?
            .files,
    ))
}

#[pymodule]
fn trisent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(bsi, m)?)?;
    m.add_function(wrap_pyfunction!(micro_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(implied_skewness, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(fit_var, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(build_indices, m)?)?;
    m.add_function(wrap_pyfunction!(dump_panel, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(eval_classifier, m)?)?;
    Ok(())
}
