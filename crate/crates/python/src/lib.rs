//! Python bindings: datasets, the trained pipeline, baselines, metrics and
//! the 2-D projection.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use mvlatent::baselines::{self, BaselineKind, BaselineModel, BaselineParams};
use mvlatent::data::{
    self, load_dataset, table2_schema, write_dataset, MultiViewDataset, PreprocessMode, View,
    ViewSchema,
};
use mvlatent::eval::{self, ConfusionCounts, EvalReport, FeatureScaling, Method};
use mvlatent::persist;
use mvlatent::pipeline::{
    train_pipeline_with_traces, ClassifierInput, PipelineConfig, TrainedPipeline,
};
use mvlatent::synth::{synth_generate, SynthSpec};
use mvlatent::{Error, Matrix};

create_exception!(mvlatent, MvlatentError, PyException);
create_exception!(mvlatent, DataError, MvlatentError);
create_exception!(mvlatent, TrainingError, MvlatentError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_training_failure() {
        TrainingError::new_err(msg)
    } else {
        DataError::new_err(msg)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Subjects with aligned per-view feature tables and binary labels.
#[pyclass(name = "Dataset", module = "mvlatent", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: MultiViewDataset,
}

#[pymethods]
impl PyDataset {
    /// `views` is a list of `(name, rows)` pairs, one row per subject.
    #[new]
    fn new(
        subject_ids: Vec<String>,
        views: Vec<(String, Vec<Vec<f64>>)>,
        labels: Vec<u8>,
    ) -> PyResult<Self> {
        let views = views
            .into_iter()
            .map(|(name, r)| {
                let features = matrix(&r)?;
                Ok(View {
                    schema: ViewSchema::new(name, features.cols()),
                    features,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = MultiViewDataset::new(subject_ids, views, labels).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_dataset(&manifest).map_err(to_py)?,
        })
    }

    /// Seeded synthetic data; `views` is a list of `(name, dim)` pairs or
    /// the string `"tableII"`.
    #[staticmethod]
    #[pyo3(signature = (n_per_class, views, separation=6.0, noise=3.0, seed=0, shared_factors=0, shared_scale=0.0, scale_decades=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        n_per_class: usize,
        views: &Bound<'_, PyAny>,
        separation: f64,
        noise: f64,
        seed: u64,
        shared_factors: usize,
        shared_scale: f64,
        scale_decades: f64,
    ) -> PyResult<Self> {
        let schema = match views.extract::<String>() {
            Ok(p) if p == "tableII" => table2_schema(),
            Ok(p) => return Err(DataError::new_err(format!("unknown preset '{p}'"))),
            Err(_) => views
                .extract::<Vec<(String, usize)>>()?
                .into_iter()
                .map(|(n, d)| ViewSchema::new(n, d))
                .collect(),
        };
        let mut spec = SynthSpec::new(n_per_class, schema, separation, noise, seed);
        spec.shared_factors = shared_factors;
        spec.shared_scale = shared_scale;
        spec.scale_decades = scale_decades;
        Ok(Self {
            inner: synth_generate(&spec).map_err(to_py)?,
        })
    }

    /// Writes view CSVs, labels and a manifest; returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        write_dataset(&self.inner, &dir).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.inner.subject_ids().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    /// `(name, dim)` per view.
    #[getter]
    fn schema(&self) -> Vec<(String, usize)> {
        self.inner
            .schema()
            .into_iter()
            .map(|s| (s.name, s.dim))
            .collect()
    }

    fn view(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .views()
            .iter()
            .find(|v| v.schema.name == name)
            .map(|v| rows(&v.features))
            .ok_or_else(|| DataError::new_err(format!("no view named '{name}'")))
    }

    /// All views side by side.
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.concatenated_features())
    }

    fn select_views(&self, names: Vec<String>) -> PyResult<Self> {
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(Self {
            inner: self.inner.select_views(&names).map_err(to_py)?,
        })
    }

    /// Stratified seeded split into `(train, test)`.
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::split(&self.inner, train_fraction, seed).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __repr__(&self) -> String {
        let views: Vec<String> = self
            .inner
            .schema()
            .iter()
            .map(|s| format!("{}:{}", s.name, s.dim))
            .collect();
        format!(
            "Dataset(n={}, views=[{}])",
            self.inner.len(),
            views.join(", ")
        )
    }
}

/// Pipeline hyperparameters. Unset arguments keep the defaults.
#[pyclass(name = "PipelineConfig", module = "mvlatent", skip_from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (*, latent_dim=None, lam=None, margin=None, epochs=None, regressor_epochs=None, classifier_epochs=None, preprocess=None, classifier_input=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        latent_dim: Option<usize>,
        lam: Option<f64>,
        margin: Option<f64>,
        epochs: Option<usize>,
        regressor_epochs: Option<usize>,
        classifier_epochs: Option<usize>,
        preprocess: Option<&str>,
        classifier_input: Option<&str>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut c = PipelineConfig::default();
        let r = &mut c.representation;
        r.latent_dim = latent_dim.unwrap_or(r.latent_dim);
        r.lambda = lam.unwrap_or(r.lambda);
        r.structured.margin = margin.unwrap_or(r.structured.margin);
        r.epochs = epochs.unwrap_or(r.epochs);
        c.regressor.epochs = regressor_epochs.unwrap_or(c.regressor.epochs);
        c.classifier.epochs = classifier_epochs.unwrap_or(c.classifier.epochs);
        match preprocess {
            None => {}
            Some("standardize") => c.preprocess = PreprocessMode::Standardize,
            Some("normalize") => c.preprocess = PreprocessMode::Normalize,
            Some(other) => {
                return Err(DataError::new_err(format!(
                    "unknown preprocess mode '{other}'"
                )))
            }
        }
        match classifier_input {
            None => {}
            Some("regressed") => c.classifier.input = ClassifierInput::Regressed,
            Some("codes") => c.classifier.input = ClassifierInput::Codes,
            Some(other) => {
                return Err(DataError::new_err(format!(
                    "unknown classifier input '{other}'"
                )))
            }
        }
        c.seed = seed.unwrap_or(c.seed);
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: PipelineConfig =
            toml::from_str(text).map_err(|e| DataError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| MvlatentError::new_err(e.to_string()))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.representation.latent_dim
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.representation.lambda
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        let r = &self.inner.representation;
        format!(
            "PipelineConfig(latent_dim={}, lam={}, epochs={}, seed={})",
            r.latent_dim, r.lambda, r.epochs, self.inner.seed
        )
    }
}

fn config_or_default(config: Option<PyRef<'_, PyPipelineConfig>>) -> PipelineConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// A trained three-stage pipeline.
#[pyclass(name = "Pipeline", module = "mvlatent", frozen)]
struct PyPipeline {
    inner: TrainedPipeline,
}

#[pymethods]
impl PyPipeline {
    /// Trains on `dataset`; returns the pipeline and a dict of loss traces.
    #[staticmethod]
    #[pyo3(signature = (dataset, config=None))]
    fn train<'py>(
        py: Python<'py>,
        dataset: &PyDataset,
        config: Option<PyRef<'_, PyPipelineConfig>>,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let cfg = config_or_default(config);
        let data = dataset.inner.clone();
        let (inner, traces) = py
            .detach(|| train_pipeline_with_traces(&data, &cfg))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        let rep: Vec<(f64, f64, f64, f64)> = traces
            .representation
            .iter()
            .map(|e| {
                (
                    e.total,
                    e.reconstruction,
                    e.structured,
                    e.satisfied_fraction,
                )
            })
            .collect();
        d.set_item("representation", rep)?;
        d.set_item("regressor", traces.regressor)?;
        d.set_item("classifier", traces.classifier)?;
        Ok((Self { inner }, d))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: persist::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save(&self.inner, &path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: persist::from_bytes(bytes).map_err(to_py)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &persist::to_bytes(&self.inner))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    /// `(name, dim)` per view expected at prediction time.
    #[getter]
    fn schema(&self) -> Vec<(String, usize)> {
        self.inner
            .schema
            .iter()
            .map(|s| (s.name.clone(), s.dim))
            .collect()
    }

    /// Learned codes of the training subjects.
    fn codes(&self) -> Vec<Vec<f64>> {
        rows(self.inner.codes.matrix())
    }

    /// `(label, probability)` for one subject given one raw row per view.
    fn predict(&self, views: Vec<Vec<f64>>) -> PyResult<(u8, f64)> {
        let refs: Vec<&[f64]> = views.iter().map(Vec::as_slice).collect();
        let (p, _) = self.inner.predict(&refs).map_err(to_py)?;
        Ok((p.label, p.probability))
    }

    fn predict_dataset(&self, dataset: &PyDataset) -> PyResult<Vec<(u8, f64)>> {
        let preds = self.inner.predict_dataset(&dataset.inner).map_err(to_py)?;
        Ok(preds.iter().map(|p| (p.label, p.probability)).collect())
    }

    /// Regressed latent codes, one row per subject.
    fn embed_dataset(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            &self.inner.embed_dataset(&dataset.inner).map_err(to_py)?,
        ))
    }
}

/// A fitted comparison classifier.
#[pyclass(name = "Baseline", module = "mvlatent", frozen)]
struct PyBaseline {
    inner: BaselineModel,
}

#[pymethods]
impl PyBaseline {
    /// `kind` is one of svm, lr, gnb, knn, nn.
    #[staticmethod]
    #[pyo3(signature = (kind, x, y, seed=0))]
    fn fit(kind: &str, x: Vec<Vec<f64>>, y: Vec<u8>, seed: u64) -> PyResult<Self> {
        let kind: BaselineKind = kind.parse().map_err(to_py)?;
        let x = matrix(&x)?;
        let inner =
            baselines::fit(kind, &x, &y, &BaselineParams::default(), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<u8>> {
        self.inner.predict_all(&matrix(&x)?).map_err(to_py)
    }
}

/// Confusion counts and ACC/SEN/SPC (`None` when undefined); class 1 is
/// the positive class.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    predicted: Vec<u8>,
    truth: Vec<u8>,
) -> PyResult<Bound<'py, PyDict>> {
    let c = ConfusionCounts::from_predictions(&predicted, &truth).map_err(to_py)?;
    let m = eval::metrics(&c).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("tp", c.tp)?;
    d.set_item("tn", c.tn)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    d.set_item("acc", m.acc)?;
    d.set_item("sen", m.sen)?;
    d.set_item("spc", m.spc)?;
    Ok(d)
}

/// First two principal-component coordinates of `points`.
#[pyfunction]
fn projection_2d(points: Vec<Vec<f64>>) -> PyResult<Vec<(f64, f64)>> {
    let coords = eval::projection_2d(&matrix(&points)?).map_err(to_py)?;
    Ok(coords.row_iter().map(|r| (r[0], r[1])).collect())
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.descriptor.method)?;
    d.set_item("feature_set", &r.descriptor.feature_set)?;
    d.set_item("acc", (r.acc.mean, r.acc.std))?;
    d.set_item("sen", r.sen.map(|s| (s.mean, s.std)))?;
    d.set_item("spc", r.spc.map(|s| (s.mean, s.std)))?;
    d.set_item(
        "trial_acc",
        r.trials.iter().map(|t| t.metrics.acc).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Repeated 70/30 trials of `method` ("pipeline" or a baseline name, which
/// runs on standardized concatenated views).
#[pyfunction]
#[pyo3(signature = (dataset, method, config=None, trials=10, seed=0))]
fn run_experiment<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    method: &str,
    config: Option<PyRef<'_, PyPipelineConfig>>,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let method = if method == "pipeline" {
        Method::Pipeline(config_or_default(config))
    } else {
        Method::Baseline {
            kind: method.parse().map_err(to_py)?,
            params: BaselineParams::default(),
            scaling: FeatureScaling::Standardized,
        }
    };
    let data = dataset.inner.clone();
    let report = py
        .detach(|| eval::run_experiment(&data, &method, trials, seed))
        .map_err(to_py)?;
    report_dict(py, &report)
}

#[pymodule]
#[pyo3(name = "mvlatent")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyBaseline>()?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(projection_2d, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("MvlatentError", m.py().get_type::<MvlatentError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("TrainingError", m.py().get_type::<TrainingError>())?;
    Ok(())
}
