//! Python bindings: tensors and ops, metrics and votes, synthetic data and
//! splits, model configs, training runs, checkpoints and the gradient check.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use tmpt::config::RunConfig;
use tmpt::data::{
    generate_synthetic, load_manifest, split_in_target, split_zero_shot, Split, SyntheticConfig,
};
use tmpt::eval::{self, Vote};
use tmpt::model::{Model, ModelConfig, TrainConfig};
use tmpt::tensor;
use tmpt::text::TargetRegistry;
use tmpt::train::{self, Ablation, Dataset, GradCheckSettings};

fn err(e: tmpt::Error) -> PyErr {
    match e {
        tmpt::Error::UnknownTarget { .. } | tmpt::Error::UnknownLabel { .. } => {
            PyKeyError::new_err(e.to_string())
        }
        tmpt::Error::Io(_) | tmpt::Error::NonFinite { .. } | tmpt::Error::GradCheck { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, S: Serialize>(py: Python<'py>, value: &S) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Dense row-major f64 tensor.
#[pyclass(name = "Tensor", module = "tmpt_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor(tensor::Tensor<f64>);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        tensor::Tensor::new(shape, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self(tensor::Tensor::zeros(&shape))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn numel(&self) -> usize {
        self.0.numel()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        self.0.clone().reshape(shape).map(Self).map_err(err)
    }

    fn __matmul__(&self, other: &Self) -> PyResult<Self> {
        tensor::matmul(&self.0, &other.0).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

#[pyfunction]
fn matmul(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    tensor::matmul(&a.0, &b.0).map(PyTensor).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, axis = 1))]
fn softmax(x: &PyTensor, axis: usize) -> PyResult<PyTensor> {
    tensor::softmax(&x.0, axis).map(PyTensor).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, alpha = 0.01))]
fn leaky_relu(x: &PyTensor, alpha: f64) -> PyTensor {
    PyTensor(tensor::leaky_relu(&x.0, alpha))
}

#[pyfunction]
fn macro_f1(preds: Vec<String>, golds: Vec<String>, labels: Vec<String>) -> PyResult<f64> {
    eval::macro_f1(&preds, &golds, &labels).map_err(err)
}

#[pyfunction]
fn cohen_kappa(a: Vec<String>, b: Vec<String>, labels: Vec<String>) -> PyResult<f64> {
    eval::cohen_kappa(&a, &b, &labels).map_err(err)
}

/// Returns the winning label, `"escalate"` when three more votes are needed,
/// or `None` when the pooled votes tie.
#[pyfunction]
#[pyo3(signature = (votes, extra = None))]
fn majority_vote(votes: [String; 3], extra: Option<[String; 3]>) -> (String, Option<String>) {
    match eval::majority_vote(&votes, extra.as_ref()) {
        Vote::Label(l) => ("label".into(), Some(l)),
        Vote::NeedsEscalation => ("escalate".into(), None),
        Vote::Discard => ("discard".into(), None),
    }
}

/// Writes images and `manifest.jsonl` under `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, samples_per_target = 900, seed = 0, visual_cue_fraction = 0.5))]
fn generate_data(
    out_dir: PathBuf,
    samples_per_target: usize,
    seed: u64,
    visual_cue_fraction: f64,
) -> PyResult<String> {
    let cfg = SyntheticConfig {
        samples_per_target,
        seed,
        visual_cue_fraction,
        ..Default::default()
    };
    generate_synthetic(&cfg, &out_dir).map_err(err)?;
    Ok(out_dir.join("manifest.jsonl").display().to_string())
}

/// Splits a manifest in-target by `ratios`, or zero-shot when `held_out` is
/// given, writing the result to `output`. Returns the per-split counts.
#[pyfunction]
#[pyo3(signature = (manifest, output, ratios = (0.7, 0.1, 0.2), seed = 0, held_out = None))]
fn split<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    output: PathBuf,
    ratios: (f64, f64, f64),
    seed: u64,
    held_out: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = load_manifest(&manifest).map_err(err)?;
    let s = match held_out {
        Some(h) => split_zero_shot(&m, &h, seed),
        None => split_in_target(&m, [ratios.0, ratios.1, ratios.2], seed),
    }
    .map_err(err)?;
    let dir = output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(std::path::Path::new("."));
    let s = s.rebase(dir).map_err(err)?;
    s.write(&output).map_err(err)?;
    let counts = PyDict::new(py);
    for sp in Split::ALL {
        counts.set_item(sp.to_string(), s.split_len(sp))?;
    }
    Ok(counts)
}

/// Model hyperparameters. `ModelConfig()` is the full-size default;
/// `ModelConfig.tiny()` the desk-scale preset.
#[pyclass(name = "ModelConfig", module = "tmpt_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig(ModelConfig);

#[pymethods]
impl PyModelConfig {
    #[new]
    fn new() -> Self {
        Self(ModelConfig::default())
    }

    #[staticmethod]
    fn tiny() -> Self {
        Self(ModelConfig::tiny())
    }

    /// Parses a `[model]` table body.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    /// The `[model]` section of a run config file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|c| Self(c.model)).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    /// Copy with `name` switched off: `no-textual-prompt`, `no-visual-prompt` or `baseline`.
    fn ablated(&self, name: &str) -> PyResult<Self> {
        let a = Ablation::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown ablation `{name}`")))?;
        Ok(Self(a.apply(&self.0)))
    }

    #[getter]
    fn prompt_tokens(&self) -> usize {
        self.0.prompt_tokens
    }

    #[setter]
    fn set_prompt_tokens(&mut self, v: usize) {
        self.0.prompt_tokens = v;
    }

    #[getter]
    fn textual_prompt(&self) -> bool {
        self.0.textual_prompt
    }

    #[setter]
    fn set_textual_prompt(&mut self, v: bool) {
        self.0.textual_prompt = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(text_width={}, vision_width={}, prompt_tokens={}, textual_prompt={})",
            self.0.text_width, self.0.vision_width, self.0.prompt_tokens, self.0.textual_prompt
        )
    }
}

fn train_config(lr: Option<f64>, epochs: Option<usize>, batch_size: Option<usize>) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr: lr.unwrap_or(d.lr),
        epochs: epochs.unwrap_or(d.epochs),
        batch_size: batch_size.unwrap_or(d.batch_size),
        ..d
    }
}

fn dataset(manifest: &std::path::Path) -> PyResult<Dataset> {
    Dataset::new(
        load_manifest(manifest).map_err(err)?,
        TargetRegistry::builtin(),
    )
    .map_err(err)
}

/// Trains on a split manifest for each of `seeds` derived seeds and returns
/// the run report (test macro-F1 mean and std, per-seed logs).
#[pyfunction]
#[pyo3(signature = (manifest, config, seeds = 1, master_seed = 0, lr = None, epochs = None, batch_size = None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    config: &PyModelConfig,
    seeds: usize,
    master_seed: u64,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let data = dataset(&manifest)?;
    let tc = train_config(lr, epochs, batch_size);
    let report = py
        .detach(|| train::run_averaged("run", &data, &config.0, &tc, seeds, master_seed))
        .map_err(err)?;
    to_py(py, &report)
}

/// A trained model; create one with `Model.train` or `Model.load`.
#[pyclass(name = "Model", module = "tmpt_py")]
struct PyModel(Model<f32>);

#[pymethods]
impl PyModel {
    /// One training run on the manifest's train split, early-stopped on dev.
    #[staticmethod]
    #[pyo3(signature = (manifest, config, seed = 0, lr = None, epochs = None, batch_size = None))]
    fn train(
        py: Python<'_>,
        manifest: PathBuf,
        config: &PyModelConfig,
        seed: u64,
        lr: Option<f64>,
        epochs: Option<usize>,
        batch_size: Option<usize>,
    ) -> PyResult<Self> {
        let data = dataset(&manifest)?;
        let tc = train_config(lr, epochs, batch_size);
        let (model, _) = py
            .detach(|| {
                let prep = train::prepare_all(&data, &config.0)?;
                train::run_seed(&prep, &tc, seed)
            })
            .map_err(err)?;
        Ok(Self(model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Model::load(&path).map(|(m, _)| Self(m)).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path, serde_json::Value::Null).map_err(err)
    }

    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    fn prompt_param_count(&self) -> usize {
        self.0.prompt_param_count()
    }

    #[getter]
    fn targets(&self) -> Vec<String> {
        self.0.spec.targets.clone()
    }

    /// Predicted label names for one split of a manifest.
    #[pyo3(signature = (manifest, split = "test"))]
    fn predict(&self, manifest: PathBuf, split: &str) -> PyResult<Vec<String>> {
        let which: Split = split.parse().map_err(err)?;
        let m = load_manifest(&manifest).map_err(err)?;
        let items = m
            .split(which)
            .map(|s| self.0.spec.prepare_sample(&m, s))
            .collect::<tmpt::Result<Vec<_>>>()
            .map_err(err)?;
        let preds = self.0.predict(&items).map_err(err)?;
        Ok(preds
            .into_iter()
            .map(|i| self.0.spec.labels.name(i).to_string())
            .collect())
    }

    /// Per-target and aggregate macro-F1 on one split.
    #[pyo3(signature = (manifest, split = "test"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        manifest: PathBuf,
        split: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let which: Split = split.parse().map_err(err)?;
        let m = load_manifest(&manifest).map_err(err)?;
        let items = m
            .split(which)
            .map(|s| self.0.spec.prepare_sample(&m, s))
            .collect::<tmpt::Result<Vec<_>>>()
            .map_err(err)?;
        let r = train::evaluate(&self.0, &items).map_err(err)?;
        to_py(py, &r)
    }
}

/// Finite-difference check of every trainable group of a model built from
/// `config`; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config = None, seed = 0, threshold = 1e-5))]
fn gradcheck<'py>(
    py: Python<'py>,
    config: Option<&PyModelConfig>,
    seed: u64,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config
        .map(|c| c.0.clone())
        .unwrap_or_else(ModelConfig::tiny);
    let mut settings = GradCheckSettings {
        seed,
        threshold,
        ..Default::default()
    };
    settings.options.seed = seed;
    let run = py
        .detach(|| train::gradcheck_model(&cfg, &settings))
        .map_err(err)?;
    let out = to_py(py, &run)?;
    out.set_item("passed", run.passed())?;
    Ok(out)
}

#[pymodule]
fn tmpt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(matmul, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(leaky_relu, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(generate_data, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
