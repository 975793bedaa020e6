//! Python bindings. Structured results cross the boundary as JSON-decoded
//! dicts and lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use mad_core::primitives::presets::{preset, ROSTER};
use mad_core::primitives::{ArchitectureSpec, Batch};
use mad_core::tasks::{desk_config, difficulty_grid, generate_pair, Dataset, TaskConfig, TaskKind};
use mad_core::{checkpoint, flops, pipeline, scaling, state, trainer, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Undefined(_) | Error::Fit(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Missing(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn kind(name: &str) -> PyResult<TaskKind> {
    name.parse().map_err(err)
}

/// One task setting.
#[pyclass(name = "TaskConfig", module = "mad_py", from_py_object)]
#[derive(Clone)]
struct PyTaskConfig(TaskConfig);

#[pymethods]
impl PyTaskConfig {
    #[staticmethod]
    fn baseline(task: &str) -> PyResult<Self> {
        Ok(Self(TaskConfig::baseline(kind(task)?)))
    }

    #[staticmethod]
    fn desk(task: &str) -> PyResult<Self> {
        Ok(Self(desk_config(kind(task)?)))
    }

    #[staticmethod]
    fn grid(task: &str) -> PyResult<Vec<Self>> {
        Ok(difficulty_grid(kind(task)?).into_iter().map(Self).collect())
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    #[getter]
    fn vocab_size(&self) -> u32 {
        self.0.vocab.model_vocab_size()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!("TaskConfig({})", self.0.label())
    }
}

/// A generated split: `(inputs, targets, mask)` per sample.
#[pyclass(name = "Dataset", module = "mad_py")]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, i: usize) -> PyResult<(Vec<u32>, Vec<u32>, Vec<bool>)> {
        let s = self.0.samples.get(i).ok_or_else(|| PyValueError::new_err("sample index out of range"))?;
        Ok((s.input.clone(), s.target.clone(), s.mask.clone()))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        mad_core::tasks::format::serialize_dataset(&self.0, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        mad_core::tasks::format::load_dataset(path).map(Self).map_err(err)
    }

    #[getter]
    fn config(&self) -> PyTaskConfig {
        PyTaskConfig(self.0.config.clone())
    }
}

/// Train and eval splits of `config`.
#[pyfunction]
fn generate(config: &PyTaskConfig, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
    let (a, b) = generate_pair(&config.0, seed).map_err(err)?;
    Ok((PyDataset(a), PyDataset(b)))
}

/// A named architecture.
#[pyclass(name = "Architecture", module = "mad_py", from_py_object)]
#[derive(Clone)]
struct PyArchitecture(ArchitectureSpec);

#[pymethods]
impl PyArchitecture {
    #[new]
    #[pyo3(signature = (name, width = 128, vocab = 16))]
    fn new(name: &str, width: usize, vocab: usize) -> PyResult<Self> {
        preset(name, width, vocab).map(Self).map_err(err)
    }

    #[staticmethod]
    fn roster() -> Vec<&'static str> {
        ROSTER.to_vec()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    fn fixed_state(&self) -> u64 {
        state::fixed_state_profile(&self.0).total_fixed
    }

    fn state_profile<'py>(&self, py: Python<'py>, seq_len: u64) -> PyResult<Bound<'py, PyAny>> {
        let (p, total) = state::dynamic_state_profile(&self.0, seq_len).map_err(err)?;
        to_py(py, &(p, total))
    }

    fn normalize_state(&self, target: u64) -> PyResult<Self> {
        state::normalize_iso_state(&self.0, target).map(Self).map_err(err)
    }

    #[pyo3(signature = (seq_len, scan_constant = 2))]
    fn flops<'py>(&self, py: Python<'py>, seq_len: u64, scan_constant: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &flops::flops_model(&self.0, seq_len, scan_constant).map_err(err)?)
    }

    fn param_count(&self) -> PyResult<u64> {
        flops::param_count(&self.0).map_err(err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }
}

/// A model with its flat parameter vector.
#[pyclass(name = "Model", module = "mad_py")]
struct PyModel {
    model: mad_core::primitives::Model,
    params: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (arch, seed = 0, head = false))]
    fn new(arch: &PyArchitecture, seed: u64, head: bool) -> PyResult<Self> {
        let model = mad_core::primitives::Model::new(&arch.0, head).map_err(err)?;
        let params = model.init(seed);
        Ok(Self { model, params })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    #[setter]
    fn set_params(&mut self, p: Vec<f64>) -> PyResult<()> {
        if p.len() != self.params.len() {
            return Err(PyValueError::new_err(format!("expected {} parameters", self.params.len())));
        }
        self.params = p;
        Ok(())
    }

    /// Logits, one row of vocabulary scores per position.
    fn forward(&self, tokens: Vec<u32>) -> PyResult<Vec<Vec<f64>>> {
        let t = tokens.len();
        if t == 0 {
            return Err(PyValueError::new_err("empty token sequence"));
        }
        let logits = self.model.logits(&self.params, &tokens, 1, t).map_err(err)?;
        Ok(logits.chunks(logits.len() / t).map(|r| r.to_vec()).collect())
    }

    /// Mean masked cross-entropy and its gradient.
    fn loss_and_grad(&self, tokens: Vec<u32>, targets: Vec<u32>, mask: Vec<bool>) -> PyResult<(f64, Vec<f64>)> {
        let t = tokens.len();
        if targets.len() != t || mask.len() != t {
            return Err(PyValueError::new_err("tokens, targets and mask must have equal length"));
        }
        let batch = Batch { b: 1, t, tokens, targets, mask };
        self.model.loss_and_grad(&self.params, &batch).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.model, &self.params, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (model, params) = checkpoint::load(path).map_err(err)?;
        Ok(Self { model, params })
    }
}

/// Trains a fresh model on one task setting and returns the run record.
#[pyfunction]
#[pyo3(signature = (arch, config, seed = 0, lr = 5e-4, weight_decay = 0.0, epochs = 50, batch_size = 128))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    arch: &PyArchitecture,
    config: &PyTaskConfig,
    seed: u64,
    lr: f64,
    weight_decay: f64,
    epochs: usize,
    batch_size: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.0;
    let spec = arch.0.clone().with_vocab(cfg.vocab.model_vocab_size() as usize);
    let tc = trainer::TrainConfig { lr, weight_decay, epochs, batch_size, seed, ..Default::default() };
    let rec = py
        .detach(|| {
            let (tr, ev) = generate_pair(cfg, seed)?;
            let (model, mut p) = trainer::init_model(&spec, cfg.kind, seed)?;
            trainer::train_run(&model, &mut p, &tr, &ev, &tc)
        })
        .map_err(err)?;
    to_py(py, &rec)
}

/// Pearson and Spearman correlation.
#[pyfunction]
fn correlate<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &scaling::correlate(&x, &y).map_err(err)?)
}

/// Quadratic fit of `(N, value)` points sharing one compute budget.
#[pyfunction]
#[pyo3(signature = (n, tokens, flops, values, perplexity = false))]
fn fit_isoflop<'py>(
    py: Python<'py>,
    n: Vec<f64>,
    tokens: Vec<f64>,
    flops: Vec<f64>,
    values: Vec<f64>,
    perplexity: bool,
) -> PyResult<Bound<'py, PyAny>> {
    if [tokens.len(), flops.len(), values.len()].iter().any(|&l| l != n.len()) {
        return Err(PyValueError::new_err("columns must have equal length"));
    }
    let metric = if perplexity { scaling::Metric::Perplexity } else { scaling::Metric::Loss };
    let pts: Vec<_> = (0..n.len())
        .map(|i| scaling::TrainPoint { arch: String::new(), n: n[i], tokens: tokens[i], c: flops[i], value: values[i], metric })
        .collect();
    to_py(py, &scaling::fit_isoflop_group(&pts).map_err(err)?)
}

/// Runs a pipeline described by a TOML string; returns the exit code.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config_toml: &str) -> PyResult<i32> {
    let cfg = pipeline::PipelineConfig::from_toml(config_toml).map_err(err)?;
    let out = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    Ok(out.exit_code())
}

#[pymodule]
pub fn mad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_isoflop, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
