//! Python bindings: embedding sets, I/O, class geometry, augmenters, the MLP
//! classifier, synthetic data and the benchmark harness.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use reprint_core::embedding::read_any_binary;
use reprint_core::harness::{
    run_benchmark, synth_dataset, BenchOptions, MethodSpec, SynthSpec,
};
use reprint_core::{
    augment_dataset, evaluate, fit_class_geometry, read_embeddings, run_baseline, train,
    write_embeddings, write_soft, BaselineConfig, BaselineMethod, ClassGeometry, ClassVocabulary,
    Error, Format, LabelStrategy, LabeledEmbeddingSet, MlpConfig, Optimizer, RankPolicy,
    ReprintConfig, SoftLabeledSet, TrainedModel,
};

create_exception!(reprint, ReprintError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Config(m) => PyValueError::new_err(m),
        other => ReprintError::new_err(format!("{}: {other}", other.kind())),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for reprint_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn policy(pcs: Option<usize>, evr: Option<f64>, default: usize) -> RankPolicy {
    match (pcs, evr) {
        (Some(h), _) => RankPolicy::Fixed(h),
        (None, Some(t)) => RankPolicy::ExplainedVariance(t),
        (None, None) => RankPolicy::Fixed(default),
    }
}

fn rows_of(data: &[f32], dim: usize) -> Vec<Vec<f32>> {
    if dim == 0 {
        return Vec::new();
    }
    data.chunks(dim).map(<[f32]>::to_vec).collect()
}

/// Hard-labeled embedding vectors over a named class vocabulary.
#[pyclass(name = "LabeledSet", module = "reprint", frozen)]
struct PyLabeledSet {
    inner: LabeledEmbeddingSet,
}

#[pymethods]
impl PyLabeledSet {
    #[new]
    #[pyo3(signature = (classes, labels, vectors, dim = None))]
    fn new(classes: Vec<String>, labels: Vec<usize>, vectors: Vec<Vec<f32>>, dim: Option<usize>) -> PyResult<Self> {
        let dim = dim
            .or_else(|| vectors.first().map(Vec::len))
            .ok_or_else(|| PyValueError::new_err("dim is required for an empty set"))?;
        let vocab = ClassVocabulary::new(classes).py()?;
        let mut inner = LabeledEmbeddingSet::empty(dim, vocab);
        if labels.len() != vectors.len() {
            return Err(PyValueError::new_err("labels and vectors differ in length"));
        }
        for (l, v) in labels.iter().zip(&vectors) {
            inner.push(*l, v).py()?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.vocab().names().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f32>> {
        rows_of(self.inner.data(), self.inner.dim())
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn to_soft(&self) -> PySoftSet {
        PySoftSet {
            inner: self.inner.to_soft(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "LabeledSet(n={}, dim={}, classes={:?})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.vocab().names()
        )
    }
}

/// Embedding vectors with a probability vector over classes per record.
#[pyclass(name = "SoftSet", module = "reprint", frozen)]
struct PySoftSet {
    inner: SoftLabeledSet,
}

#[pymethods]
impl PySoftSet {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.vocab().names().to_vec()
    }

    #[getter]
    fn soft_labels(&self) -> Vec<Vec<f32>> {
        (0..self.inner.len())
            .map(|i| self.inner.soft_label(i).to_vec())
            .collect()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f32>> {
        rows_of(self.inner.data(), self.inner.dim())
    }

    fn argmax_labels(&self) -> Vec<usize> {
        self.inner.argmax_labels()
    }

    fn to_hard(&self) -> PyLabeledSet {
        PyLabeledSet {
            inner: self.inner.to_hard(),
        }
    }

    /// A new set holding this set's records followed by `other`'s.
    fn concat(&self, other: &PySoftSet) -> PyResult<PySoftSet> {
        let mut inner = self.inner.clone();
        inner.extend(&other.inner).py()?;
        Ok(PySoftSet { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SoftSet(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

#[pyfunction]
#[pyo3(signature = (path, format = "binary"))]
fn read_set(path: &str, format: &str) -> PyResult<PyLabeledSet> {
    let format: Format = format.parse().py()?;
    Ok(PyLabeledSet {
        inner: read_embeddings(path, format).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (set, path, format = "binary"))]
fn write_set(set: &PyLabeledSet, path: &str, format: &str) -> PyResult<()> {
    write_embeddings(&set.inner, path, format.parse().py()?).py()
}

/// Reads either binary flavor; hard labels come back one-hot.
#[pyfunction]
fn read_soft_set(path: &str) -> PyResult<PySoftSet> {
    Ok(PySoftSet {
        inner: read_any_binary(path).py()?,
    })
}

#[pyfunction]
fn write_soft_set(set: &PySoftSet, path: &str) -> PyResult<()> {
    write_soft(&set.inner, path).py()
}

/// Mean and leading principal subspace of one class.
#[pyclass(name = "Geometry", module = "reprint", frozen)]
struct PyGeometry {
    inner: ClassGeometry,
}

#[pymethods]
impl PyGeometry {
    #[getter]
    fn class_id(&self) -> usize {
        self.inner.class_id()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.inner.components().to_vec()
    }

    #[getter]
    fn singular_values(&self) -> Vec<f64> {
        self.inner.singular_values().to_vec()
    }

    fn explained_variance_ratios(&self) -> PyResult<Vec<f64>> {
        self.inner.explained_variance_ratios().py()
    }

    /// Projection of `x - mean` onto the subspace.
    fn project(&self, x: Vec<f32>) -> PyResult<Vec<f64>> {
        let c = self.inner.center(&x).py()?;
        self.inner.project(&c).py()
    }

    /// Component of `x - mean` orthogonal to the subspace.
    fn residual(&self, x: Vec<f32>) -> PyResult<Vec<f64>> {
        let c = self.inner.center(&x).py()?;
        self.inner.residual(&c).py()
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(class_id={}, rank={}, dim={})",
            self.inner.class_id(),
            self.inner.rank(),
            self.inner.dim()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (set, class_id, pcs = None, evr = None))]
fn fit_geometry(set: &PyLabeledSet, class_id: usize, pcs: Option<usize>, evr: Option<f64>) -> PyResult<PyGeometry> {
    let policy = policy(pcs, evr, set.inner.dim());
    policy.validate().py()?;
    Ok(PyGeometry {
        inner: fit_class_geometry(&set.inner, class_id, policy).py()?,
    })
}

fn reprint_config(
    pcs_source: Option<usize>,
    pcs_target: Option<usize>,
    evr: Option<f64>,
    label_strategy: &str,
    epsilon: f64,
    seed: u64,
) -> PyResult<ReprintConfig> {
    let cfg = ReprintConfig {
        source_policy: policy(pcs_source, evr, 5),
        target_policy: policy(pcs_target, evr, 5),
        label_strategy: label_strategy.parse::<LabelStrategy>().py()?,
        positivity_epsilon: epsilon,
        seed,
    };
    cfg.validate().py()?;
    Ok(cfg)
}

/// Subspace-replacement augmentation; returns only the synthesized examples.
#[pyfunction]
#[pyo3(signature = (set, pcs_source = None, pcs_target = None, evr = None, label_strategy = "residual_energy", epsilon = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn augment_reprint(
    py: Python<'_>,
    set: &PyLabeledSet,
    pcs_source: Option<usize>,
    pcs_target: Option<usize>,
    evr: Option<f64>,
    label_strategy: &str,
    epsilon: f64,
    seed: u64,
) -> PyResult<PySoftSet> {
    let cfg = reprint_config(pcs_source, pcs_target, evr, label_strategy, epsilon, seed)?;
    let inner = py.detach(|| augment_dataset(&set.inner, &cfg)).py()?;
    Ok(PySoftSet { inner })
}

fn baseline_config(
    method: &str,
    seed: u64,
    noise_sigma: Option<f64>,
    smote_k: Option<usize>,
    mixup_alpha: Option<f64>,
    we_lambda: Option<f64>,
) -> PyResult<BaselineConfig> {
    let mut cfg = BaselineConfig::new(method.parse::<BaselineMethod>().py()?);
    cfg.seed = seed;
    cfg.noise_sigma = noise_sigma.unwrap_or(cfg.noise_sigma);
    cfg.smote_k = smote_k.unwrap_or(cfg.smote_k);
    cfg.mixup_alpha = mixup_alpha.unwrap_or(cfg.mixup_alpha);
    cfg.we_lambda = we_lambda.unwrap_or(cfg.we_lambda);
    cfg.validate().py()?;
    Ok(cfg)
}

/// Runs a comparison augmenter; returns only the synthesized examples.
#[pyfunction]
#[pyo3(signature = (set, method, seed = 0, noise_sigma = None, smote_k = None, mixup_alpha = None, we_lambda = None))]
#[allow(clippy::too_many_arguments)]
fn augment_baseline(
    py: Python<'_>,
    set: &PyLabeledSet,
    method: &str,
    seed: u64,
    noise_sigma: Option<f64>,
    smote_k: Option<usize>,
    mixup_alpha: Option<f64>,
    we_lambda: Option<f64>,
) -> PyResult<PySoftSet> {
    let cfg = baseline_config(method, seed, noise_sigma, smote_k, mixup_alpha, we_lambda)?;
    let inner = py.detach(|| run_baseline(&set.inner, &cfg)).py()?.set;
    Ok(PySoftSet { inner })
}

fn mlp_config(
    hidden: Option<Vec<usize>>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    optimizer: &str,
    weight_decay: f64,
    seed: u64,
) -> PyResult<MlpConfig> {
    let cfg = MlpConfig {
        hidden_sizes: hidden.unwrap_or_else(|| vec![128]),
        epochs,
        batch_size,
        learning_rate: lr,
        optimizer: optimizer.parse::<Optimizer>().py()?,
        weight_decay,
        seed,
        ..Default::default()
    };
    cfg.validate().py()?;
    Ok(cfg)
}

/// Trained feed-forward classifier.
#[pyclass(name = "Model", module = "reprint", frozen)]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn predict(&self, x: Vec<f32>) -> PyResult<usize> {
        self.inner.predict(&x).py()
    }

    fn predict_proba(&self, x: Vec<f32>) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&x).py()
    }

    fn evaluate(&self, py: Python<'_>, test: &PyLabeledSet) -> PyResult<f64> {
        py.detach(|| evaluate(&self.inner, &test.inner)).py()
    }
}

#[pyfunction(name = "train")]
#[pyo3(signature = (set, hidden = None, epochs = 30, batch_size = 64, lr = 1e-3, optimizer = "adam", weight_decay = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    set: &PySoftSet,
    hidden: Option<Vec<usize>>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    optimizer: &str,
    weight_decay: f64,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = mlp_config(hidden, epochs, batch_size, lr, optimizer, weight_decay, seed)?;
    let inner = py.detach(|| train(&set.inner, &cfg)).py()?;
    Ok(PyModel { inner })
}

/// Samples `(pool, test)` from a rotated anisotropic Gaussian mixture.
#[pyfunction]
#[pyo3(signature = (classes = 4, dim = 32, spectrum = None, tail = 0.5, mean_scale = 3.0, train_per_class = 500, test_per_class = 200, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    classes: usize,
    dim: usize,
    spectrum: Option<Vec<f64>>,
    tail: f64,
    mean_scale: f64,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> PyResult<(PyLabeledSet, PyLabeledSet)> {
    let top = spectrum.unwrap_or_else(|| vec![16.0, 12.0, 9.0, 6.0, 4.0]);
    let spec = SynthSpec {
        mean_scale,
        train_per_class,
        test_per_class,
        seed,
        ..SynthSpec::planted(classes, dim, &top, tail)
    };
    let (pool, test) = synth_dataset(&spec).py()?;
    Ok((PyLabeledSet { inner: pool }, PyLabeledSet { inner: test }))
}

/// Runs the imbalance benchmark with default method settings.
///
/// Returns `(rows, summary)`: rows are `(dataset, method, n_small, seed,
/// accuracy)` and summary entries `(dataset, method, n_small, mean, std)`.
#[pyfunction(name = "bench")]
#[pyo3(signature = (pool, test, methods, n_small, seeds, n_large, dataset = "dataset", minority = None, workers = None, hidden = None, epochs = 30, seed = 0))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn run_bench(
    py: Python<'_>,
    pool: &PyLabeledSet,
    test: &PyLabeledSet,
    methods: Vec<String>,
    n_small: Vec<usize>,
    seeds: Vec<u64>,
    n_large: usize,
    dataset: &str,
    minority: Option<Vec<usize>>,
    workers: Option<usize>,
    hidden: Option<Vec<usize>>,
    epochs: usize,
    seed: u64,
) -> PyResult<(
    Vec<(String, String, usize, u64, f64)>,
    Vec<(String, String, usize, f64, Option<f64>)>,
)> {
    let specs = methods
        .iter()
        .map(|m| MethodSpec::by_name(m))
        .collect::<reprint_core::Result<Vec<_>>>()
        .py()?;
    let mlp = mlp_config(hidden, epochs, 64, 1e-3, "adam", 0.0, seed)?;
    let mut options = BenchOptions::new(dataset, n_large);
    options.minority = minority;
    options.workers = workers;
    let report = py
        .detach(|| run_benchmark(&pool.inner, &test.inner, &specs, &n_small, &seeds, &mlp, &options))
        .py()?;
    let rows = report
        .rows
        .into_iter()
        .map(|r| (r.dataset, r.method, r.n_small, r.seed, r.accuracy))
        .collect();
    let summary = report
        .aggregates
        .into_iter()
        .map(|a| (a.dataset, a.method, a.n_small, a.mean, a.std))
        .collect();
    Ok((rows, summary))
}

/// Names of every augmentation method accepted by `bench`.
#[pyfunction]
fn methods() -> Vec<String> {
    let mut names = vec!["none".to_owned(), "reprint".to_owned()];
    names.extend(BaselineMethod::ALL.iter().map(|m| m.name().to_owned()));
    names
}

#[pymodule]
fn reprint(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ReprintError", m.py().get_type::<ReprintError>())?;
    m.add_class::<PyLabeledSet>()?;
    m.add_class::<PySoftSet>()?;
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_set, m)?)?;
    m.add_function(wrap_pyfunction!(write_set, m)?)?;
    m.add_function(wrap_pyfunction!(read_soft_set, m)?)?;
    m.add_function(wrap_pyfunction!(write_soft_set, m)?)?;
    m.add_function(wrap_pyfunction!(fit_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(augment_reprint, m)?)?;
    m.add_function(wrap_pyfunction!(augment_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    Ok(())
}
