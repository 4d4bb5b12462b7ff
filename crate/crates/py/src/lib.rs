//! Python bindings: model construction and inference, checkpoints, metrics,
//! image loading and the train / eval / predict commands.
//!
//! Tensors cross the boundary as a flat `list[float]` plus a shape list so
//! the module has no numpy dependency.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use leafnet::app::{self, EvalOptions, TrainConfig};
use leafnet::data::{self, DatasetManifest};
use leafnet::metrics::{self, Aggregation};
use leafnet::optim::CosineSchedule;
use leafnet::{checkpoint, Error, ModelSpec, ResNet9, Rng, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any().unbind(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any().unbind(),
            (None, None) => py.None(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn json_to_py<S: serde::Serialize>(py: Python<'_>, value: &S) -> PyResult<Py<PyAny>> {
    let value = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &value)
}

/// A ResNet9 classifier. Optionally carries the class names it was
/// trained with.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ResNet9<f32>,
    class_names: Option<Vec<String>>,
}

#[pymethods]
impl PyModel {
    /// Builds a freshly initialized network. With `seed=None` all weights
    /// are zero.
    #[new]
    #[pyo3(signature = (num_classes, input_size=256, seed=None))]
    fn new(num_classes: usize, input_size: usize, seed: Option<u64>) -> PyResult<Self> {
        let spec = ModelSpec::resnet9(num_classes, input_size);
        let inner = match seed {
            Some(s) => ResNet9::init(spec, &mut Rng::new(s)),
            None => ResNet9::new(spec),
        }
        .map_err(py_err)?;
        Ok(PyModel { inner, class_names: None })
    }

    /// Loads a checkpoint written by `save` or by a training run.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = checkpoint::load(&path).map_err(py_err)?;
        Ok(PyModel {
            inner: ck.model,
            class_names: Some(ck.class_names),
        })
    }

    fn save(&self, path: PathBuf, class_names: Vec<String>) -> PyResult<()> {
        checkpoint::save(&path, &self.inner, &class_names, &Value::Null).map_err(py_err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.spec().input_size
    }

    #[getter]
    fn class_names(&self) -> Option<Vec<String>> {
        self.class_names.clone()
    }

    fn count_parameters(&self) -> usize {
        self.inner.count_parameters()
    }

    /// Activation shapes from the input through the logits for batch size `n`.
    fn shape_chain(&self, n: usize) -> PyResult<Vec<Vec<usize>>> {
        self.inner.spec().shape_chain(n).map_err(py_err)
    }

    /// Eval-mode logits for an `[N, 3, S, S]` batch given as flat data.
    fn infer(&self, py: Python<'_>, data: Vec<f32>, shape: Vec<usize>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let x = Tensor::from_vec(&shape, data).map_err(py_err)?;
        let y = py.detach(|| self.inner.infer(&x)).map_err(py_err)?;
        let shape = y.shape().to_vec();
        Ok((y.into_data(), shape))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(num_classes={}, input_size={}, parameters={})",
            self.inner.num_classes(),
            self.inner.spec().input_size,
            self.inner.count_parameters()
        )
    }
}

#[pyclass(name = "ConfusionMatrix")]
struct PyConfusionMatrix {
    inner: metrics::ConfusionMatrix,
}

#[pymethods]
impl PyConfusionMatrix {
    #[new]
    fn new(num_classes: usize) -> Self {
        PyConfusionMatrix {
            inner: metrics::ConfusionMatrix::new(num_classes),
        }
    }

    fn update(&mut self, truth: usize, pred: usize) -> PyResult<()> {
        self.inner.update(truth, pred).map_err(py_err)
    }

    fn get(&self, truth: usize, pred: usize) -> u64 {
        self.inner.get(truth, pred)
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }

    fn accuracy(&self) -> PyResult<f64> {
        self.inner.accuracy().map_err(py_err)
    }

    /// Overall precision, recall and F1 under `mode` (micro, macro or weighted).
    #[pyo3(signature = (mode="weighted"))]
    fn overall(&self, py: Python<'_>, mode: &str) -> PyResult<Py<PyAny>> {
        let mode: Aggregation = mode.parse().map_err(py_err)?;
        let m = self.inner.overall(mode).map_err(py_err)?;
        json_to_py(py, &m)
    }
}

/// Cosine-annealed learning rate at `step` of `total_steps`.
#[pyfunction]
fn cosine_lr(base_lr: f64, total_steps: u64, step: u64) -> f64 {
    CosineSchedule::new(base_lr, total_steps).lr(step)
}

#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> f64 {
    metrics::f1_score(precision, recall)
}

#[pyfunction]
fn format_fixed4(x: f64) -> String {
    metrics::format_fixed4(x)
}

/// Decodes and resizes an image to `[3, size, size]` floats in [0, 1].
#[pyfunction]
fn load_image(path: PathBuf, size: usize) -> PyResult<(Vec<f32>, Vec<usize>)> {
    let t = data::load_image(&path, size).map_err(py_err)?;
    let shape = t.shape().to_vec();
    Ok((t.into_data(), shape))
}

/// Lists a directory-per-class tree: `(class_names, [(path, class_index)])`.
#[pyfunction]
fn scan_dataset(root: PathBuf) -> PyResult<(Vec<String>, Vec<(PathBuf, usize)>)> {
    let (m, _) = DatasetManifest::scan(&root, None).map_err(py_err)?;
    let samples = m.samples.into_iter().map(|s| (s.path, s.class_index)).collect();
    Ok((m.class_names, samples))
}

/// Writes the synthetic three-class dataset and returns the image count.
#[pyfunction]
#[pyo3(signature = (root, per_class=100, size=32, seed=42))]
fn write_fixture(root: PathBuf, per_class: usize, size: usize, seed: u64) -> PyResult<usize> {
    data::write_fixture(&root, per_class, size, seed).map(|m| m.len()).map_err(py_err)
}

/// Runs a training job. `config` is a JSON object with the same fields as
/// the CLI flags (snake_case); omitted fields take their defaults.
#[pyfunction]
fn train(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let config: TrainConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py.detach(|| app::cmd_train(&config)).map_err(py_err)?;
    let summary = serde_json::json!({
        "run_dir": out.run_dir,
        "class_names": out.class_names,
        "epochs": out.epochs,
        "best_epoch": out.best_epoch,
        "best_accuracy": out.best_accuracy,
        "final_accuracy": out.final_accuracy,
        "final_checkpoint": out.final_checkpoint,
        "best_checkpoint": out.best_checkpoint,
        "steps": out.steps,
        "report": out.report,
    });
    to_py(py, &summary)
}

/// Scores a checkpoint on a directory tree and returns the metrics report.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, aggregation="weighted", batch_size=32))]
fn evaluate(
    py: Python<'_>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    aggregation: &str,
    batch_size: usize,
) -> PyResult<Py<PyAny>> {
    let opts = EvalOptions {
        batch_size,
        aggregation: aggregation.parse().map_err(py_err)?,
        ..EvalOptions::default()
    };
    let out = py
        .detach(|| app::cmd_eval(&checkpoint, &data_dir, &opts))
        .map_err(py_err)?;
    json_to_py(py, &out.report)
}

/// Top-k class probabilities for one image.
#[pyfunction]
#[pyo3(signature = (checkpoint, image, top_k=5))]
fn predict(py: Python<'_>, checkpoint: PathBuf, image: PathBuf, top_k: usize) -> PyResult<Py<PyAny>> {
    let ranked = py
        .detach(|| app::cmd_predict(&checkpoint, &image, top_k))
        .map_err(py_err)?;
    json_to_py(py, &ranked)
}

#[pymodule]
fn leafnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfusionMatrix>()?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(format_fixed4, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(scan_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    Ok(())
}
