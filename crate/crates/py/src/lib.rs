//! Python bindings: configuration, distance maps, metrics, tempered softmax,
//! model construction, checkpoints, prediction and training.
//!
//! Masks and images cross the boundary as nested lists of rows.

use std::collections::HashMap;
use std::path::PathBuf;

use busseg::distance::{self, DistanceMapConfig};
use busseg::metrics::{self, ConfusionCounts, MetricsReport, METRIC_NAMES};
use busseg::nn::ParamStore;
use busseg::train::{self, Checkpoint};
use busseg::{Mask, Network, Tensor};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: busseg::Error) -> PyErr {
    match e {
        busseg::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        busseg::Error::Numerical { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_shape<T>(rows: &[Vec<T>]) -> busseg::Result<(usize, usize)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if let Some((y, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != w) {
        return Err(busseg::Error::Dimension(format!("row {y} has {} values, row 0 has {w}", r.len())));
    }
    Ok((h, w))
}

/// Binary mask from rows of 0/1 values.
pub fn mask_from_rows(rows: &[Vec<u8>]) -> busseg::Result<Mask> {
    let (h, w) = rows_shape(rows)?;
    Mask::new(h, w, rows.concat())
}

fn to_rows<T: Copy>(data: &[T], width: usize) -> Vec<Vec<T>> {
    data.chunks(width).map(<[T]>::to_vec).collect()
}

/// Metric name to value, `None` where undefined.
pub fn report_map(r: &MetricsReport) -> HashMap<&'static str, Option<f64>> {
    METRIC_NAMES.iter().copied().zip(r.as_array()).collect()
}

fn counts(c: (u64, u64, u64, u64)) -> ConfusionCounts {
    ConfusionCounts {
        tp: c.0,
        fp: c.1,
        fn_: c.2,
        tn: c.3,
    }
}

#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: busseg::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (
        depth = 5,
        base_channels = 16,
        image_size = 128,
        lstm_hidden = 16,
        lstm_layers = 2,
        spatial_kernel = 7,
        distance_threshold = 5,
        dropout = 0.5,
        input_channels = 1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        depth: usize,
        base_channels: usize,
        image_size: usize,
        lstm_hidden: usize,
        lstm_layers: usize,
        spatial_kernel: usize,
        distance_threshold: usize,
        dropout: f64,
        input_channels: usize,
    ) -> PyResult<Self> {
        let inner = busseg::ModelConfig {
            depth,
            base_channels,
            input_channels,
            image_size,
            lstm_hidden,
            lstm_layers,
            spatial_kernel,
            distance_threshold,
            dropout,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }

    #[getter]
    fn base_channels(&self) -> usize {
        self.inner.base_channels
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size
    }

    #[getter]
    fn lstm_hidden(&self) -> usize {
        self.inner.lstm_hidden
    }

    #[getter]
    fn distance_threshold(&self) -> usize {
        self.inner.distance_threshold
    }

    #[getter]
    fn dropout(&self) -> f64 {
        self.inner.dropout
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn fused_channels(&self) -> usize {
        self.inner.fused_channels()
    }

    /// Hash of the graph-defining fields, as stored in checkpoints.
    fn hash(&self) -> u64 {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", self.inner.canonical().trim_end().replace('\n', ", "))
    }
}

#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: train::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: train::RunConfig::default(),
        }
    }

    /// Parses `key = value` lines over the defaults.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: train::RunConfig::from_text(text).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn model(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.model.clone(),
        }
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn lr(&self) -> f64 {
        self.inner.lr
    }
}

/// Network with its parameters.
#[pyclass(name = "Model")]
struct PyModel {
    network: Network,
    store: ParamStore<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        let (network, store) = Network::build::<f32>(&config.inner, seed).map_err(py_err)?;
        Ok(Self { network, store })
    }

    /// Restores a checkpoint; refuses a config-hash mismatch unless `force`.
    #[staticmethod]
    #[pyo3(signature = (path, config, force = false))]
    fn load(path: PathBuf, config: &PyModelConfig, force: bool) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        let (network, mut store) = Network::build::<f32>(&config.inner, 0).map_err(py_err)?;
        ckpt.restore(&mut store, config.inner.hash(), force).map_err(py_err)?;
        Ok(Self { network, store })
    }

    #[pyo3(signature = (path, step = 0))]
    fn save(&self, path: PathBuf, step: u64) -> PyResult<()> {
        Checkpoint::from_store(&self.store, self.network.config.hash(), step)
            .save(&path)
            .map_err(py_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.network.config.clone(),
        }
    }

    /// Foreground probabilities for one `S×S` image with values in [0, 1].
    fn predict_proba(&self, image: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let (h, w) = rows_shape(&image).map_err(py_err)?;
        let input = Tensor::new(&[1, 1, h, w], image.concat()).map_err(py_err)?;
        let p = self.network.predict_proba(&self.store, &input).map_err(py_err)?;
        Ok(to_rows(p.data(), w))
    }

    /// Binary 0/1 mask for an image file at its own resolution.
    #[pyo3(signature = (path, threshold = 0.5))]
    fn predict_file(&self, path: PathBuf, threshold: f64) -> PyResult<Vec<Vec<u8>>> {
        let pred = train::predict(&self.network, &self.store, &path, threshold).map_err(py_err)?;
        let w = pred.mask.width() as usize;
        let bits: Vec<u8> = pred.mask.as_raw().iter().map(|&v| u8::from(v > 0)).collect();
        Ok(to_rows(&bits, w))
    }
}

type Rows<T> = Vec<Vec<T>>;

/// Signed truncated distances and their classes, both as rows.
#[pyfunction]
#[pyo3(signature = (mask, threshold = 5))]
fn distance_map(mask: Vec<Vec<u8>>, threshold: usize) -> PyResult<(Rows<f64>, Rows<u16>)> {
    let m = mask_from_rows(&mask).map_err(py_err)?;
    let cfg = DistanceMapConfig::new(threshold).map_err(py_err)?;
    let d = distance::distance_map(&m, cfg);
    Ok((to_rows(&d.real, d.width), to_rows(&d.classes, d.width)))
}

/// `(tp, fp, fn, tn)` of a prediction against ground truth.
#[pyfunction]
fn confusion(pred: Vec<Vec<u8>>, gt: Vec<Vec<u8>>) -> PyResult<(u64, u64, u64, u64)> {
    let p = mask_from_rows(&pred).map_err(py_err)?;
    let g = mask_from_rows(&gt).map_err(py_err)?;
    let c = metrics::confusion(&p, &g).map_err(py_err)?;
    Ok((c.tp, c.fp, c.fn_, c.tn))
}

/// The seven metrics for one set of counts.
#[pyfunction]
fn metrics_report(tp: u64, fp: u64, fn_: u64, tn: u64) -> HashMap<&'static str, Option<f64>> {
    report_map(&metrics::report(&counts((tp, fp, fn_, tn))))
}

/// Micro (pooled) or macro (per-sample mean) aggregate over count tuples.
#[pyfunction]
#[pyo3(signature = (counts_list, mode = "micro"))]
fn aggregate(counts_list: Vec<(u64, u64, u64, u64)>, mode: &str) -> PyResult<HashMap<&'static str, Option<f64>>> {
    let cs: Vec<ConfusionCounts> = counts_list.into_iter().map(counts).collect();
    let r = match mode {
        "micro" => metrics::aggregate_micro(&cs),
        "macro" => metrics::aggregate_macro(&cs),
        other => return Err(PyValueError::new_err(format!("mode must be micro or macro, got {other}"))),
    }
    .map_err(py_err)?;
    Ok(report_map(&r))
}

/// `p_c ∝ exp(f_c / σ²)`.
#[pyfunction]
fn tempered_softmax(logits: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    busseg::loss::tempered_softmax(&logits, sigma).map_err(py_err)
}

/// Tensor names with their shapes.
type TensorShapes = Vec<(String, Vec<usize>)>;

/// Header fields and tensor shapes of a checkpoint file.
#[pyfunction]
fn checkpoint_info(path: PathBuf) -> PyResult<(u64, u64, TensorShapes)> {
    let c = Checkpoint::load(&path).map_err(py_err)?;
    let tensors = c.tensors.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    Ok((c.config_hash, c.step, tensors))
}

/// Loads the configured dataset, splits it and trains. Returns the step
/// count and the curve rows `(epoch, split, loss, accuracy, recall, precision)`.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
#[allow(clippy::type_complexity)]
fn train_run(
    py: Python<'_>,
    config: &PyRunConfig,
    out_dir: Option<PathBuf>,
) -> PyResult<(u64, Vec<(usize, String, f64, Option<f64>, Option<f64>, Option<f64>)>)> {
    let cfg = config.inner.clone();
    let summary = py
        .detach(|| {
            let (samples, _) = train::load_dataset(&cfg)?;
            let (train_set, test_set) = train::split_samples(&samples, &cfg);
            train::train(&cfg, &train_set, &test_set, out_dir.as_deref(), |_| {})
        })
        .map_err(py_err)?;
    let rows = summary
        .curves
        .iter()
        .map(|r| (r.epoch, r.split.to_string(), r.loss, r.accuracy, r.recall, r.precision))
        .collect();
    Ok((summary.steps, rows))
}

#[pymodule]
fn busseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(distance_map, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(tempered_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_info, m)?)?;
    m.add_function(wrap_pyfunction!(train_run, m)?)?;
    m.add("METRIC_NAMES", METRIC_NAMES.to_vec())?;
    Ok(())
}
