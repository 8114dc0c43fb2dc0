//! Python bindings for the detector: spline grids, datasets, cleaning,
//! model construction, training, scoring and metrics.

use std::path::PathBuf;

use kandos_core::data;
use kandos_core::eval::{self, EvalReport};
use kandos_core::training;
use kandos_core::{KanConfig, KanError, SynthConfig, TrainConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(kandos, KandosError, PyException, "Raised for any detector error; the message starts with its code.");

fn to_py(e: KanError) -> PyErr {
    KandosError::new_err(format!("{}: {e}", e.code()))
}

/// Flattens rows into a row-major buffer, checking they all have `width` values.
fn flatten(rows: &[Vec<f64>], width: usize) -> PyResult<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(to_py(KanError::ShapeMismatch(format!("row {i} has {} values, expected {width}", r.len()))));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

#[pyclass(name = "SplineGrid", module = "kandos", frozen)]
struct PySplineGrid(kandos_core::SplineGrid);

#[pymethods]
impl PySplineGrid {
    #[new]
    #[pyo3(signature = (range_min=-3.0, range_max=3.0, intervals=5, degree=3))]
    fn new(range_min: f64, range_max: f64, intervals: usize, degree: usize) -> PyResult<Self> {
        kandos_core::SplineGrid::new(range_min, range_max, intervals, degree).map(Self).map_err(to_py)
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.0.knots().to_vec()
    }

    #[getter]
    fn basis_count(&self) -> usize {
        self.0.basis_count()
    }

    /// All basis values at `x`.
    fn basis(&self, x: f64) -> Vec<f64> {
        self.0.basis_eval(x)
    }

    /// All basis derivatives at `x`.
    fn basis_deriv(&self, x: f64) -> Vec<f64> {
        self.0.basis_eval_deriv(x)
    }

    fn __repr__(&self) -> String {
        format!(
            "SplineGrid(range=({}, {}), intervals={}, degree={})",
            self.0.range_min(),
            self.0.range_max(),
            self.0.intervals(),
            self.0.degree()
        )
    }
}

#[pyclass(name = "FlowDataset", module = "kandos", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFlowDataset(kandos_core::FlowDataset);

#[pymethods]
impl PyFlowDataset {
    #[new]
    fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<Self> {
        let features = flatten(&rows, feature_names.len())?;
        kandos_core::FlowDataset::new(feature_names, features, labels, data::Provenance::Csv)
            .map(Self)
            .map_err(to_py)
    }

    /// Reads a labelled CSV and maps its labels to benign (0) / attack (1).
    #[staticmethod]
    #[pyo3(signature = (path, label_column=data::DEFAULT_LABEL_COLUMN))]
    fn load_csv(path: PathBuf, label_column: &str) -> PyResult<Self> {
        let raw = data::load_csv(path, label_column).map_err(to_py)?;
        data::map_labels(&raw, &data::LabelMapping::default()).map(Self).map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        data::write_csv_file(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.0.feature_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.0.labels.clone()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.0.n_rows()).map(|i| self.0.row(i).to_vec()).collect()
    }

    /// `(negatives, positives)`.
    fn class_counts(&self) -> (usize, usize) {
        self.0.class_counts()
    }

    #[pyo3(signature = (per_class_cap=None, seed=0))]
    fn balance(&self, per_class_cap: Option<usize>, seed: u64) -> PyResult<Self> {
        data::balance(&self.0, per_class_cap, seed).map(Self).map_err(to_py)
    }

    /// Stratified `(train, test)` split.
    #[pyo3(signature = (test_fraction=data::DEFAULT_TEST_FRACTION, seed=0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::split(&self.0, test_fraction, seed).map_err(to_py)?;
        Ok((Self(a), Self(b)))
    }

    fn __len__(&self) -> usize {
        self.0.n_rows()
    }
}

#[pyclass(name = "CleanStats", module = "kandos", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCleanStats(kandos_core::CleanStats);

#[pymethods]
impl PyCleanStats {
    /// Fits imputation, clipping and scaling statistics on training data.
    #[staticmethod]
    fn fit(train: &PyFlowDataset) -> PyResult<Self> {
        kandos_core::CleanStats::fit(&train.0).map(Self).map_err(to_py)
    }

    fn apply(&self, ds: &PyFlowDataset) -> PyResult<PyFlowDataset> {
        self.0.apply(&ds.0).map(PyFlowDataset).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }
}

#[pyclass(name = "KanModel", module = "kandos", skip_from_py_object)]
#[derive(Clone)]
struct PyKanModel(kandos_core::KanModel);

#[pymethods]
impl PyKanModel {
    #[new]
    #[pyo3(signature = (layer_dims, grid_intervals=5, degree=3, grid_range=(-3.0, 3.0), seed=0))]
    fn new(layer_dims: Vec<usize>, grid_intervals: usize, degree: usize, grid_range: (f64, f64), seed: u64) -> PyResult<Self> {
        let config = KanConfig { layer_dims, grid_intervals, degree, grid_range, seed };
        kandos_core::KanModel::new(config).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        kandos_core::KanModel::load(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.0.config.layer_dims.clone()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn decision_threshold(&self) -> f64 {
        self.0.decision_threshold
    }

    #[setter]
    fn set_decision_threshold(&mut self, value: f64) -> PyResult<()> {
        if !(value > 0.0 && value < 1.0) {
            return Err(to_py(KanError::InvalidConfig(format!("threshold {value} is outside (0, 1)"))));
        }
        self.0.decision_threshold = value;
        Ok(())
    }

    #[getter]
    fn clean_stats(&self) -> Option<PyCleanStats> {
        self.0.clean_stats.clone().map(PyCleanStats)
    }

    /// Copy of the model that cleans raw inputs with `stats` before scoring.
    fn with_clean_stats(&self, stats: &PyCleanStats) -> PyResult<Self> {
        self.0.clone().with_clean_stats(stats.0.clone()).map(Self).map_err(to_py)
    }

    fn count_params(&self) -> usize {
        self.0.count_params().trainable
    }

    /// Raw logits for already-cleaned rows.
    fn logits(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let batch = flatten(&rows, self.0.input_dim())?;
        self.0.logits(&batch).map_err(to_py)
    }

    /// Attack probabilities for already-cleaned rows.
    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let batch = flatten(&rows, self.0.input_dim())?;
        self.0.predict_proba(&batch).map_err(to_py)
    }

    /// Attack probabilities for a dataset, cleaned with the embedded statistics if present.
    fn score(&self, ds: &PyFlowDataset) -> PyResult<Vec<f64>> {
        let cleaned = match &self.0.clean_stats {
            Some(stats) => stats.apply(&ds.0).map_err(to_py)?,
            None => ds.0.clone(),
        };
        self.0.predict_proba(&cleaned.features).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("KanModel(layer_dims={:?}, params={})", self.0.config.layer_dims, self.0.count_params().trainable)
    }
}

/// Gaussian two-class data with a known Bayes error.
#[pyfunction]
#[pyo3(signature = (samples_per_class=1000, feature_count=78, class_separation=6.0, noise_feature_fraction=0.2, seed=0))]
fn synth_generate(
    samples_per_class: usize,
    feature_count: usize,
    class_separation: f64,
    noise_feature_fraction: f64,
    seed: u64,
) -> PyResult<PyFlowDataset> {
    let config = SynthConfig { samples_per_class, feature_count, class_separation, noise_feature_fraction, seed };
    data::synth_generate(&config).map(PyFlowDataset).map_err(to_py)
}

/// Trains a copy of `model` with Adam on BCE. Returns the trained model and the
/// history as `(epoch, train_loss, test_loss, train_acc, test_acc)` tuples.
#[pyfunction]
#[pyo3(signature = (model, train, test, learning_rate=1e-3, batch_size=100, epochs=200, seed=0, patience=None))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn fit(
    py: Python<'_>,
    model: &PyKanModel,
    train: &PyFlowDataset,
    test: &PyFlowDataset,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    patience: Option<usize>,
) -> PyResult<(PyKanModel, Vec<(usize, f64, f64, f64, f64)>)> {
    let config = TrainConfig {
        learning_rate,
        batch_size,
        max_epochs: epochs,
        shuffle_seed: seed,
        patience,
        ..TrainConfig::default()
    };
    let (m, tr, te) = (model.0.clone(), train.0.clone(), test.0.clone());
    let (trained, history) = py.detach(move || training::fit(m, &tr, &te, &config)).map_err(to_py)?;
    let rows = history
        .records
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.test_loss, r.train_acc, r.test_acc))
        .collect();
    Ok((PyKanModel(trained), rows))
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let c = &report.confusion;
    let m = &report.metrics;
    d.set_item("threshold", report.threshold)?;
    d.set_item("tn", c.tn)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    d.set_item("tp", c.tp)?;
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("fpr", m.fpr)?;
    d.set_item("fnr", m.fnr)?;
    d.set_item("auc", report.auc)?;
    d.set_item("ap", report.ap)?;
    d.set_item("best_threshold", report.sweep.best_threshold)?;
    d.set_item("best_f1", report.sweep.best_f1)?;
    Ok(d)
}

/// Confusion counts, scalar metrics, AUC, AP and the F1-optimal threshold.
#[pyfunction]
#[pyo3(signature = (labels, scores, threshold=0.5, sweep_step=0.001))]
fn evaluate<'py>(
    py: Python<'py>,
    labels: Vec<u8>,
    scores: Vec<f64>,
    threshold: f64,
    sweep_step: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = EvalReport::compute(&labels, &scores, threshold, sweep_step).map_err(to_py)?;
    report_dict(py, &report)
}

/// Accuracy, precision, recall, F1, FPR and FNR from confusion counts.
#[pyfunction]
fn scalar_metrics(py: Python<'_>, tn: u64, fp: u64, fn_count: u64, tp: u64) -> PyResult<Bound<'_, PyDict>> {
    let m = eval::scalar_metrics(&eval::ConfusionMatrix { tn, fp, fn_: fn_count, tp }).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("fpr", m.fpr)?;
    d.set_item("fnr", m.fnr)?;
    Ok(d)
}

/// `(feature, r, band)` sorted by |r| descending.
#[pyfunction]
fn feature_correlation(ds: &PyFlowDataset) -> PyResult<Vec<(String, f64, String)>> {
    let table = eval::feature_correlation(&ds.0).map_err(to_py)?;
    Ok(table.ranked.into_iter().map(|c| (c.feature, c.r, c.band.name().to_string())).collect())
}

#[pymodule]
fn kandos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KandosError", m.py().get_type::<KandosError>())?;
    m.add_class::<PySplineGrid>()?;
    m.add_class::<PyFlowDataset>()?;
    m.add_class::<PyCleanStats>()?;
    m.add_class::<PyKanModel>()?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(feature_correlation, m)?)?;
    Ok(())
}
