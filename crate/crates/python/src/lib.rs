//! Python bindings for histda.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use histda::adaptation::{self, AlphaSchedule, SampleWeights, WeightingConfig};
use histda::cli::{self, Overrides, RunConfig};
use histda::histogram::{self, HistogramSpec, TargetMode};
use histda::{Error, Matrix};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Divergence(_) | Error::State(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Serialises through JSON so Python receives plain dicts and lists.
fn json_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn target_mode(spec: &HistogramSpec, target: &str, sigma: Option<f64>) -> PyResult<TargetMode> {
    match target {
        "gaussian" => Ok(sigma.map_or_else(|| TargetMode::sqrt_width_gaussian(spec), |sigma| {
            TargetMode::TruncatedGaussian { sigma }
        })),
        "dirac" => Ok(TargetMode::DiracDelta),
        other => Err(PyValueError::new_err(format!("unknown target {other:?}, expected gaussian or dirac"))),
    }
}

/// Histogram target for each label over `bins` equal bins on `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (ys, lo, hi, bins, target = "gaussian", sigma = None))]
fn make_targets(ys: Vec<f64>, lo: f64, hi: f64, bins: usize, target: &str, sigma: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let spec = HistogramSpec::new(lo, hi, bins).map_err(to_py)?;
    let mode = target_mode(&spec, target, sigma)?;
    histogram::make_targets(&ys, &spec, mode).map(|m| rows(&m)).map_err(to_py)
}

/// Mean cross-entropy between target and predicted histograms.
#[pyfunction]
fn histogram_loss(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>) -> PyResult<f64> {
    histogram::histogram_loss(&matrix(p)?, &matrix(q)?).map_err(to_py)
}

#[pyfunction]
fn entropy_rows(q: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(histogram::entropy_rows(&matrix(q)?))
}

/// Point estimates from histogram rows.
#[pyfunction]
fn expectation(q: Vec<Vec<f64>>, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    let q = matrix(q)?;
    let spec = HistogramSpec::new(lo, hi, q.cols()).map_err(to_py)?;
    histogram::expectation_rows(&q, &spec).map_err(to_py)
}

#[pyfunction]
fn alpha_at(t: usize, t1: usize, t2: usize, alpha_inf: f64) -> PyResult<f64> {
    let sched = AlphaSchedule::new(t1, t2, alpha_inf).map_err(to_py)?;
    Ok(adaptation::alpha_at(t, &sched))
}

#[pyfunction]
fn nearest_labeled_distances(unlabeled: Vec<Vec<f64>>, labeled: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    adaptation::nearest_labeled_distances(&matrix(unlabeled)?, &matrix(labeled)?).map_err(to_py)
}

#[pyfunction]
fn sample_scores(distances: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    let cfg = WeightingConfig::new(beta).map_err(to_py)?;
    adaptation::sample_scores(&distances, &cfg).map(|s| s.as_slice().to_vec()).map_err(to_py)
}

/// Score-weighted mean entropy; unit scores when `scores` is omitted.
#[pyfunction]
#[pyo3(signature = (q, scores = None))]
fn weighted_entropy(q: Vec<Vec<f64>>, scores: Option<Vec<f64>>) -> PyResult<f64> {
    let q = matrix(q)?;
    let s = match scores {
        Some(s) => SampleWeights::new(s).map_err(to_py)?,
        None => SampleWeights::ones(q.rows()),
    };
    adaptation::weighted_entropy_loss(&q, &s).map_err(to_py)
}

/// R², R²×100, MAE, MAE standard deviation and n as a dict.
#[pyfunction]
fn metrics(py: Python<'_>, y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<Py<PyAny>> {
    json_to_py(py, &histda::eval::metrics(&y_true, &y_pred).map_err(to_py)?)
}

fn load_config(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<RunConfig> {
    RunConfig::load(&path, &Overrides { out, seed }).map_err(to_py)
}

/// Runs the `train` command for a config file and returns the report.
#[pyfunction]
#[pyo3(signature = (config, out = None, seed = None))]
fn train(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, out, seed)?;
    let report = py.detach(|| cli::cmd_train(&cfg)).map_err(to_py)?;
    json_to_py(py, &report)
}

/// Runs the `ablate` command for a config file and returns the report.
#[pyfunction]
#[pyo3(signature = (config, out = None, seed = None))]
fn ablate(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, out, seed)?;
    let report = py.detach(|| cli::cmd_ablate(&cfg)).map_err(to_py)?;
    json_to_py(py, &report)
}

/// Writes the synthetic splits for a config file and returns their paths.
#[pyfunction]
#[pyo3(signature = (config, out = None, seed = None))]
fn synth(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Vec<PathBuf>> {
    let cfg = load_config(config, out, seed)?;
    py.detach(|| cli::cmd_synth(&cfg)).map_err(to_py)
}

/// Trained calibration model read from a checkpoint file.
#[pyclass(name = "Checkpoint", frozen)]
struct PyCheckpoint {
    inner: histda::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        histda::Checkpoint::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Calibrated values for raw feature rows.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict(&matrix(x)?).map_err(to_py)
    }

    /// Histogram rows for raw feature rows.
    fn predict_histogram(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = self.inner.scaler.apply(&matrix(x)?).map_err(to_py)?;
        self.inner.model.predict(&x).map(|q| rows(&q)).map_err(to_py)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// Mode name as written in configs, e.g. `HL_WMME`.
    #[getter]
    fn mode(&self) -> String {
        serde_json::to_value(self.inner.config.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.histogram.bins()
    }

    #[getter]
    fn support(&self) -> (f64, f64) {
        (self.inner.histogram.lo(), self.inner.histogram.hi())
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.scaler.dim()
    }

    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.inner.config)
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint(mode={}, bins={}, epoch={})", self.mode(), self.bins(), self.inner.epoch)
    }
}

#[pymodule(name = "histda")]
fn histda_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(make_targets, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_loss, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_rows, m)?)?;
    m.add_function(wrap_pyfunction!(expectation, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_at, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_labeled_distances, m)?)?;
    m.add_function(wrap_pyfunction!(sample_scores, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
