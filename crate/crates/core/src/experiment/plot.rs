//! Per-edge map data: positions, predictions, intervals and split roles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::Interval;
use crate::graph::WeightScaler;
use crate::{Error, Result};

/// Everything needed to draw one trained model's intervals on the map.
/// Values are kept in standardized units alongside the scaler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub dataset: String,
    pub model: String,
    pub layer: String,
    pub method: String,
    pub run: usize,
    pub config_hash: String,
    pub seed: u64,
    pub scaler: WeightScaler,
    pub qhat: f64,
    pub edges: Vec<(usize, usize)>,
    /// Position of every node (first two feature columns).
    pub node_xy: Vec<(f64, f64)>,
    /// Split role of every edge for the resplit the intervals come from.
    pub roles: Vec<String>,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
    pub intervals: Vec<Interval>,
}

impl RunArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn check(&self) -> Result<()> {
        let m = self.edges.len();
        for len in [
            self.roles.len(),
            self.truth.len(),
            self.predicted.len(),
            self.intervals.len(),
        ] {
            if len != m {
                return Err(Error::ShapeMismatch {
                    op: "run artifact",
                    left: (m, 1),
                    right: (len, 1),
                });
            }
        }
        if let Some(&(i, j)) = self
            .edges
            .iter()
            .find(|&&(i, j)| i >= self.node_xy.len() || j >= self.node_xy.len())
        {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) has no node position"
            )));
        }
        Ok(())
    }
}

/// One CSV row of plot data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgePlotRow {
    pub src: usize,
    pub tgt: usize,
    pub src_x: f64,
    pub src_y: f64,
    pub tgt_x: f64,
    pub tgt_y: f64,
    pub role: String,
    pub truth: f64,
    pub predicted: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub truth_raw: f64,
    pub predicted_raw: f64,
    pub lower_raw: f64,
    pub upper_raw: f64,
    pub width_raw: f64,
    pub covered: bool,
    pub config_hash: String,
    pub seed: u64,
}

/// One row per edge, standardized and raw units side by side.
pub fn emit_plot_data(artifact: &RunArtifact) -> Result<String> {
    artifact.check()?;
    let s = &artifact.scaler;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (e, &(i, j)) in artifact.edges.iter().enumerate() {
        let iv = artifact.intervals[e];
        let (lower_raw, upper_raw) = (s.unstandardize(iv.lower), s.unstandardize(iv.upper));
        w.serialize(EdgePlotRow {
            src: i,
            tgt: j,
            src_x: artifact.node_xy[i].0,
            src_y: artifact.node_xy[i].1,
            tgt_x: artifact.node_xy[j].0,
            tgt_y: artifact.node_xy[j].1,
            role: artifact.roles[e].clone(),
            truth: artifact.truth[e],
            predicted: artifact.predicted[e],
            lower: iv.lower,
            upper: iv.upper,
            width: iv.width(),
            truth_raw: s.unstandardize(artifact.truth[e]),
            predicted_raw: s.unstandardize(artifact.predicted[e]),
            lower_raw,
            upper_raw,
            width_raw: upper_raw - lower_raw,
            covered: iv.contains(artifact.truth[e]),
            config_hash: artifact.config_hash.clone(),
            seed: artifact.seed,
        })?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_plot_data(text: &str) -> Result<Vec<EdgePlotRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
