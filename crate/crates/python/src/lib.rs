//! Python bindings. Datasets are exchanged as COCO file paths and results come
//! back as plain dicts and lists, mirroring the `phenokey` CLI.

use phenokey::anatomy::{acr_loss, box_from_predictions, fit_prior as fit, AnatomicalPrior};
use phenokey::dataset::{lint_coco, parse_coco, serialize_coco};
use phenokey::metrics::{self, EvalConfig, MetricSelection};
use phenokey::morphometry::{measure_all, PhenotypeTable};
use phenokey::optim::{batch_pmp, toy_scenario, train, ToyPredictor, TrainConfig};
use phenokey::synth::{
    generate_population, perturb, PerturbationMode, PerturbationModel, SpeciesTemplate,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Violations of a COCO keypoint file, one string each; empty when valid.
#[pyfunction]
fn validate(path: &str) -> PyResult<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    Ok(lint_coco(&text)
        .map_err(value_err)?
        .iter()
        .map(|v| v.to_string())
        .collect())
}

/// Phenotype measurements per image, with skipped phenotypes listed.
#[pyfunction]
fn measure<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let data = parse_coco(path).map_err(value_err)?;
    let table = PhenotypeTable::standard();
    let sets: Vec<_> = data
        .keypoint_sets()
        .map(|k| measure_all(k, &table))
        .collect();
    to_py(py, &sets)
}

#[pyfunction]
#[pyo3(signature = (gt, pred, metric = "all", pmp_threshold = None, pck_threshold = None, oks_scale = None))]
fn evaluate<'py>(
    py: Python<'py>,
    gt: &str,
    pred: &str,
    metric: &str,
    pmp_threshold: Option<f64>,
    pck_threshold: Option<f64>,
    oks_scale: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let selection: MetricSelection =
        serde_json::from_value(serde_json::Value::String(metric.into())).map_err(value_err)?;
    let mut cfg = EvalConfig::default();
    if let Some(r) = pmp_threshold {
        cfg.pmp_threshold = r;
    }
    if let Some(t) = pck_threshold {
        cfg.pck_threshold = t;
    }
    if let Some(s) = oks_scale {
        cfg.oks_scale = Some(s);
    }
    let gt = parse_coco(gt).map_err(value_err)?;
    let pred = parse_coco(pred).map_err(value_err)?;
    let report = py
        .detach(|| metrics::evaluate(&gt, &pred, &PhenotypeTable::standard(), &cfg, selection))
        .map_err(value_err)?;
    to_py(py, &report)
}

/// Anatomical prior fitted on a training COCO file.
#[pyfunction]
fn fit_prior<'py>(py: Python<'py>, train_path: &str) -> PyResult<Bound<'py, PyAny>> {
    let data = parse_coco(train_path).map_err(value_err)?;
    to_py(py, &fit(&data).map_err(value_err)?)
}

/// ACR loss per image in pixels, with the box placed over each prediction's
/// own bounding rectangle. `prior` is a dict as returned by `fit_prior`.
#[pyfunction]
fn acr<'py>(py: Python<'py>, prior: Bound<'py, PyAny>, pred: &str) -> PyResult<Vec<(u64, f64)>> {
    let text: String = py
        .import("json")?
        .call_method1("dumps", (prior,))?
        .extract()?;
    let prior: AnatomicalPrior = serde_json::from_str(&text).map_err(value_err)?;
    prior.check().map_err(value_err)?;
    let pred = parse_coco(pred).map_err(value_err)?;
    pred.keypoint_sets()
        .map(|k| {
            let bx = box_from_predictions(&prior, k).map_err(value_err)?;
            Ok((k.image_id, acr_loss(k, &bx)))
        })
        .collect()
}

/// Writes a synthetic ground-truth population, and optionally perturbed
/// predictions. `perturb` is "uniform_px" or "proportional".
#[pyfunction]
#[pyo3(signature = (out, n, seed = 0, template = "deep_bodied", perturb = None, magnitude = None, pred_out = None, noise_seed = None))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    out: &str,
    n: usize,
    seed: u64,
    template: &str,
    perturb: Option<&str>,
    magnitude: Option<f64>,
    pred_out: Option<&str>,
    noise_seed: Option<u64>,
) -> PyResult<()> {
    let template = SpeciesTemplate::resolve(template).map_err(value_err)?;
    let mode = match perturb {
        None => None,
        Some("uniform_px") => Some(PerturbationMode::UniformPx),
        Some("proportional") => Some(PerturbationMode::ProportionalToShortestPhenotype),
        Some(other) => return Err(value_err(format!("unknown perturbation {other:?}"))),
    };
    let gt = py
        .detach(|| generate_population(&template, n, seed))
        .map_err(value_err)?;
    serialize_coco(&gt, out).map_err(value_err)?;
    if let Some(mode) = mode {
        let (Some(m), Some(path)) = (magnitude, pred_out) else {
            return Err(value_err("perturb needs magnitude and pred_out"));
        };
        let model = PerturbationModel::new(mode, m, noise_seed.unwrap_or(seed.wrapping_add(1)));
        let pred = py
            .detach(|| self::perturb(&gt, &model))
            .map_err(value_err)?;
        serialize_coco(&pred, path).map_err(value_err)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ToySummary {
    records: Vec<phenokey::optim::TraceRecord>,
    pmp: Option<f64>,
}

/// Trains the toy regressor; returns the per-step trace and the final batch PMP.
#[pyfunction]
#[pyo3(signature = (seed = 0, batch_size = 64, steps = 2000, lr = 10.0, acr = true))]
fn train_toy<'py>(
    py: Python<'py>,
    seed: u64,
    batch_size: usize,
    steps: usize,
    lr: f64,
    acr: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = TrainConfig {
        steps,
        lr,
        acr,
        ..TrainConfig::default()
    };
    let summary = py
        .detach(|| -> Result<ToySummary, phenokey::optim::OptimError> {
            let scenario = toy_scenario(seed, batch_size)?;
            let (model, trace) = train(
                &ToyPredictor::zeros(4),
                &scenario.batch,
                &scenario.prior,
                &cfg,
            )?;
            let pmp = batch_pmp(&model, &scenario.batch, EvalConfig::default().pmp_threshold)?;
            Ok(ToySummary {
                records: trace.records,
                pmp,
            })
        })
        .map_err(value_err)?;
    to_py(py, &summary)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&x, &y).map_err(value_err)
}

/// `(slope, intercept, r2)` of the least-squares line `y ≈ slope·x + intercept`.
#[pyfunction]
fn ols_fit(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let fit = metrics::ols_fit(&x, &y).map_err(value_err)?;
    Ok((fit.slope, fit.intercept, fit.r2))
}

#[pyfunction]
#[pyo3(signature = (d, s, k = metrics::DEFAULT_OKS_CONSTANT))]
fn keypoint_similarity(d: f64, s: f64, k: f64) -> PyResult<f64> {
    metrics::keypoint_similarity(d, s, k).map_err(value_err)
}

#[pymodule]
fn phenokey_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_prior, m)?)?;
    m.add_function(wrap_pyfunction!(acr, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(keypoint_similarity, m)?)?;
    Ok(())
}
