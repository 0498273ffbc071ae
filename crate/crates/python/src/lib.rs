//! Python bindings: conformal calibration, graph utilities, TNTP loading and
//! the experiment runner.

use std::collections::HashMap;
use std::path::PathBuf;

use conformal_load_core::conformal::{self, Calibrator, Method, PredictionSet};
use conformal_load_core::experiment::{self, render_table, ExperimentConfig, TableFormat};
use conformal_load_core::graph::{self, Graph};
use conformal_load_core::tensor::Tensor;
use conformal_load_core::{metrics, tntp, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn prediction_set(preds: HashMap<String, Vec<f64>>) -> PyResult<PredictionSet> {
    let mut preds = preds;
    for key in preds.keys() {
        if !matches!(key.as_str(), "mean" | "lower" | "upper" | "spread") {
            return Err(PyValueError::new_err(format!(
                "unknown prediction key '{key}'"
            )));
        }
    }
    let lower = preds.remove("lower");
    let upper = preds.remove("upper");
    let spread = preds.remove("spread");
    let mean = match preds.remove("mean") {
        Some(m) => m,
        // Quantile-only predictions: the midpoint stands in for the mean.
        None => match (&lower, &upper) {
            (Some(l), Some(u)) => l.iter().zip(u).map(|(a, b)| 0.5 * (a + b)).collect(),
            _ => {
                return Err(PyValueError::new_err(
                    "predictions need 'mean' or 'lower' and 'upper'",
                ))
            }
        },
    };
    Ok(PredictionSet {
        mean,
        lower,
        upper,
        spread,
    })
}

/// Rank k = ceil((n + 1)(1 - alpha)) of the conformal quantile.
#[pyfunction]
fn quantile_rank(n: usize, alpha: f64) -> usize {
    conformal::quantile_rank(n, alpha)
}

/// The k-th smallest score, or infinity when k exceeds the sample size.
#[pyfunction]
fn conformal_quantile(scores: Vec<f64>, alpha: f64) -> PyResult<f64> {
    conformal::conformal_quantile(&scores, alpha).map_err(to_py)
}

/// Calibrates `method` on (`calib`, `y_calib`) and returns `(qhat, intervals)`
/// for `test`. Prediction dicts hold lists under `mean`, `lower`, `upper` and
/// `spread`.
#[pyfunction]
#[pyo3(signature = (method, alpha, calib, y_calib, test, epsilon=None))]
fn calibrate(
    method: &str,
    alpha: f64,
    calib: HashMap<String, Vec<f64>>,
    y_calib: Vec<f64>,
    test: HashMap<String, Vec<f64>>,
    epsilon: Option<f64>,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let method: Method = method.parse().map_err(to_py)?;
    let mut cal = Calibrator::new(method, alpha).map_err(to_py)?;
    if let Some(eps) = epsilon {
        cal = cal.with_epsilon(eps).map_err(to_py)?;
    }
    let calibration = cal
        .calibrate(&prediction_set(calib)?, &y_calib)
        .map_err(to_py)?;
    let intervals = cal
        .intervals(calibration.qhat, &prediction_set(test)?)
        .map_err(to_py)?;
    Ok((
        calibration.qhat,
        intervals.iter().map(|iv| (iv.lower, iv.upper)).collect(),
    ))
}

fn intervals_of(pairs: &[(f64, f64)]) -> Vec<conformal::Interval> {
    pairs
        .iter()
        .map(|&(lower, upper)| conformal::Interval { lower, upper })
        .collect()
}

/// Fraction of `y` inside the matching interval.
#[pyfunction]
fn coverage(intervals: Vec<(f64, f64)>, y: Vec<f64>) -> PyResult<f64> {
    metrics::coverage(&intervals_of(&intervals), &y).map_err(to_py)
}

/// Mean interval width.
#[pyfunction]
fn inefficiency(intervals: Vec<(f64, f64)>) -> PyResult<f64> {
    metrics::inefficiency(&intervals_of(&intervals)).map_err(to_py)
}

/// Directed line graph of a digraph given as an edge list.
#[pyfunction]
fn line_graph(num_nodes: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<(usize, usize)>> {
    let weights = vec![1.0; edges.len()];
    let g = Graph::new(num_nodes, edges, weights, Tensor::zeros(num_nodes, 1)).map_err(to_py)?;
    Ok(graph::line_graph(&g).map_err(to_py)?.graph.edges().to_vec())
}

/// Loads a TNTP directory into a dict with the filtered road network.
#[pyfunction]
#[pyo3(signature = (dataset_dir, drop_zone_connectors=true))]
fn load_tntp<'py>(
    py: Python<'py>,
    dataset_dir: PathBuf,
    drop_zone_connectors: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let dataset = tntp::load_dataset(&dataset_dir).map_err(to_py)?;
    let filter = tntp::FilterOptions {
        drop_zone_connectors,
        ..tntp::FilterOptions::road_network()
    };
    let g = dataset.graph(&filter).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("name", &dataset.name)?;
    out.set_item("num_nodes", g.num_nodes())?;
    out.set_item("edges", g.edges().to_vec())?;
    out.set_item("weights", g.weights().to_vec())?;
    Ok(out)
}

/// Runs the experiment described by `settings` (configuration keys to string
/// values) and returns the results table as CSV. Outputs are written to disk
/// when `write` is true.
#[pyfunction]
#[pyo3(signature = (settings, write=false))]
fn run_experiment(
    py: Python<'_>,
    settings: HashMap<String, String>,
    write: bool,
) -> PyResult<String> {
    let mut config = ExperimentConfig::default();
    let mut keys: Vec<_> = settings.keys().collect();
    keys.sort();
    for k in keys {
        config.set(k, &settings[k]).map_err(to_py)?;
    }
    py.detach(|| {
        let output = experiment::run_experiment(&config)?;
        if write {
            experiment::write_outputs(&output, &config.out_dir)?;
        }
        render_table(&output.table, TableFormat::Csv)
    })
    .map_err(to_py)
}

#[pymodule]
fn conformal_load(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(quantile_rank, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(inefficiency, m)?)?;
    m.add_function(wrap_pyfunction!(line_graph, m)?)?;
    m.add_function(wrap_pyfunction!(load_tntp, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
