//! Edge-weight regressors: GAE, DiGAE and the line-graph GNN, each with a
//! mean head and optionally two quantile heads.

mod layers;
mod mc;
mod net;
mod propagation;
mod train;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use layers::GraphLayer;
pub use mc::{mc_dropout_predict, McDropoutPass, McEstimate, StochasticPredictor};
pub use net::{
    decode_adjacency_prob, decode_weights, digae_encode, gae_encode, EdgeModel, EdgePredictions,
    HeadVars,
};
pub use propagation::{digae_propagation, gae_propagation, lgnn_propagation, ModelInputs};
pub use train::{train, EpochRecord, TrainConfig, TrainingLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gae,
    DiGae,
    Lgnn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gae => "gae",
            ModelKind::DiGae => "digae",
            ModelKind::Lgnn => "lgnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gae" => Ok(ModelKind::Gae),
            "digae" => Ok(ModelKind::DiGae),
            "lgnn" => Ok(ModelKind::Lgnn),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// `H' = P H B + b`
    GcnConv,
    /// `H' = H B_self + P H B_neigh + b`
    GraphConv,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::GcnConv => "gcnconv",
            LayerKind::GraphConv => "graphconv",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcnconv" | "gcn" => Ok(LayerKind::GcnConv),
            "graphconv" => Ok(LayerKind::GraphConv),
            other => Err(Error::Config(format!("unknown layer '{other}'"))),
        }
    }
}

/// How the propagation operator is derived from the (weighted) adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// The adjacency as is, no self-loops or normalization.
    Raw,
    /// Self-loops plus symmetric (GAE, LGNN) or row (DiGAE) normalization.
    Normalized,
}

impl std::str::FromStr for Propagation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Propagation::Raw),
            "normalized" | "norm" => Ok(Propagation::Normalized),
            other => Err(Error::Config(format!("unknown propagation '{other}'"))),
        }
    }
}

/// Training target: mean regression alone, or mean plus the `α/2` and
/// `1 − α/2` quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    MeanOnly,
    MeanPlusQuantiles { alpha: f64 },
}

impl Objective {
    pub fn num_heads(&self) -> usize {
        match self {
            Objective::MeanOnly => 1,
            Objective::MeanPlusQuantiles { .. } => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::MeanOnly => "mean",
            Objective::MeanPlusQuantiles { .. } => "quantile",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layer: LayerKind,
    pub propagation: Propagation,
    /// Number of hidden (ReLU) layers before the output projection.
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Embedding width for GAE/DiGAE; LGNN heads are scalar.
    pub embed_dim: usize,
    /// Dropout rate after each hidden layer.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, layer: LayerKind) -> Self {
        ModelConfig {
            kind,
            layer,
            propagation: Propagation::Normalized,
            num_layers: 2,
            hidden_dim: 32,
            embed_dim: 16,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "hidden and embedding widths must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}
