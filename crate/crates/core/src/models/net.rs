//! Model parameters, forward pass and decoding.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{sigmoid, ParamStore, Tape, Var};
use crate::nn::{dropout_mask, DropoutMode};
use crate::rng::{rng_from, stream};
use crate::tensor::{dot, SparseMatrix, Tensor};
use crate::{Error, Result};

use super::layers::GraphLayer;
use super::{ModelConfig, ModelInputs, ModelKind, Objective};

/// Output nodes of one forward pass, each a column over the requested edges.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub mean: Var,
    pub lower: Option<Var>,
    pub upper: Option<Var>,
}

/// Deterministic predictions on a set of edges, in standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePredictions {
    pub mean: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

/// A GAE, DiGAE or LGNN with one output head per objective term.
///
/// All heads share the hidden layers; each head owns only its final
/// projection. The DiGAE keeps two cross-coupled chains, one producing
/// source embeddings and one producing target embeddings.
#[derive(Clone, Debug)]
pub struct EdgeModel {
    pub config: ModelConfig,
    pub objective: Objective,
    pub feature_dim: usize,
    store: ParamStore,
    hidden: Vec<GraphLayer>,
    hidden_target: Vec<GraphLayer>,
    heads: Vec<GraphLayer>,
    heads_target: Vec<GraphLayer>,
}

impl EdgeModel {
    /// Glorot-initialized model; biases start at zero.
    pub fn new(
        config: ModelConfig,
        objective: Objective,
        feature_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if let Objective::MeanPlusQuantiles { alpha } = objective {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
            }
        }
        let mut rng = rng_from(seed, &[stream::INIT]);
        let mut store = ParamStore::new();
        let out_dim = match config.kind {
            ModelKind::Lgnn => 1,
            _ => config.embed_dim,
        };
        let two_chains = config.kind == ModelKind::DiGae;
        let (src, tgt) = if two_chains {
            ("source", "target")
        } else {
            ("hidden", "")
        };
        let mut hidden = Vec::new();
        let mut hidden_target = Vec::new();
        let mut dim = feature_dim;
        for l in 0..config.num_layers {
            hidden.push(GraphLayer::new(
                &mut store,
                &format!("{src}.{l}"),
                config.layer,
                dim,
                config.hidden_dim,
                &mut rng,
            ));
            if two_chains {
                hidden_target.push(GraphLayer::new(
                    &mut store,
                    &format!("{tgt}.{l}"),
                    config.layer,
                    dim,
                    config.hidden_dim,
                    &mut rng,
                ));
            }
            dim = config.hidden_dim;
        }
        let head_names = ["mean", "lower", "upper"];
        let mut heads = Vec::new();
        let mut heads_target = Vec::new();
        for name in &head_names[..objective.num_heads()] {
            let prefix = if two_chains {
                format!("head.{name}.source")
            } else {
                format!("head.{name}")
            };
            heads.push(GraphLayer::new(
                &mut store,
                &prefix,
                config.layer,
                dim,
                out_dim,
                &mut rng,
            ));
            if two_chains {
                heads_target.push(GraphLayer::new(
                    &mut store,
                    &format!("head.{name}.target"),
                    config.layer,
                    dim,
                    out_dim,
                    &mut rng,
                ));
            }
        }
        Ok(EdgeModel {
            config,
            objective,
            feature_dim,
            store,
            hidden,
            hidden_target,
            heads,
            heads_target,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.iter().map(|p| p.value.len()).sum()
    }

    fn check_inputs(&self, inputs: &ModelInputs) -> Result<()> {
        if inputs.kind != self.config.kind {
            return Err(Error::InvalidArgument(format!(
                "inputs built for {} but model is {}",
                inputs.kind.as_str(),
                self.config.kind.as_str()
            )));
        }
        if inputs.feature_dim() != self.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: (inputs.features.rows(), inputs.feature_dim()),
                right: (inputs.features.rows(), self.feature_dim),
            });
        }
        if self.config.kind == ModelKind::DiGae && inputs.secondary.is_none() {
            return Err(Error::InvalidArgument(
                "DiGAE needs a target operator".into(),
            ));
        }
        Ok(())
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        h: Var,
        mode: DropoutMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let (r, c) = tape.value(h).shape();
        match dropout_mask(r, c, mode, rng) {
            Some(mask) => tape.mul_const(h, mask),
            None => Ok(h),
        }
    }

    /// Node-level (or line-graph-node-level) outputs per head: `(Z_S, Z_T)`.
    /// For the GAE and LGNN both entries are the same node.
    fn embed(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        mode: DropoutMode,
        seed: u64,
    ) -> Result<Vec<(Var, Var)>> {
        self.check_inputs(inputs)?;
        mode.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tape.constant(inputs.features.clone());
        let p = &inputs.primary;
        match self.config.kind {
            ModelKind::Gae | ModelKind::Lgnn => {
                let mut h = x;
                for layer in &self.hidden {
                    let pre = layer.forward(tape, &self.store, p, h)?;
                    let act = tape.relu(pre);
                    h = self.dropout(tape, act, mode, &mut rng)?;
                }
                self.heads
                    .iter()
                    .map(|head| head.forward(tape, &self.store, p, h).map(|z| (z, z)))
                    .collect()
            }
            ModelKind::DiGae => {
                let pt = inputs.secondary.as_ref().expect("checked above");
                // Source embeddings aggregate target-role states of out-neighbours
                // and vice versa.
                let (mut hs, mut ht) = (x, x);
                for (ls, lt) in self.hidden.iter().zip(&self.hidden_target) {
                    let pre_s = ls.forward(tape, &self.store, p, ht)?;
                    let pre_t = lt.forward(tape, &self.store, pt, hs)?;
                    let act_s = tape.relu(pre_s);
                    let act_t = tape.relu(pre_t);
                    hs = self.dropout(tape, act_s, mode, &mut rng)?;
                    ht = self.dropout(tape, act_t, mode, &mut rng)?;
                }
                self.heads
                    .iter()
                    .zip(&self.heads_target)
                    .map(|(hs_head, ht_head)| {
                        let zs = hs_head.forward(tape, &self.store, p, ht)?;
                        let zt = ht_head.forward(tape, &self.store, pt, hs)?;
                        Ok((zs, zt))
                    })
                    .collect()
            }
        }
    }

    /// Forward pass restricted to the edges in `subset`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        subset: &[usize],
        mode: DropoutMode,
        seed: u64,
    ) -> Result<HeadVars> {
        if let Some(&bad) = subset.iter().find(|&&e| e >= inputs.num_edges()) {
            return Err(Error::InvalidArgument(format!(
                "edge index {bad} out of range for {} edges",
                inputs.num_edges()
            )));
        }
        let embeddings = self.embed(tape, inputs, mode, seed)?;
        let mut outs = Vec::with_capacity(embeddings.len());
        match self.config.kind {
            ModelKind::Lgnn => {
                let idx = Arc::new(subset.to_vec());
                for (z, _) in embeddings {
                    outs.push(tape.gather_rows(z, &idx)?);
                }
            }
            _ => {
                let pairs = Arc::new(subset.iter().map(|&e| inputs.edges[e]).collect::<Vec<_>>());
                for (zs, zt) in embeddings {
                    outs.push(tape.edge_dot(zs, zt, &pairs)?);
                }
            }
        }
        Ok(HeadVars {
            mean: outs[0],
            lower: outs.get(1).copied(),
            upper: outs.get(2).copied(),
        })
    }

    /// Per-head `(Z_S, Z_T)` with dropout off.
    pub fn encode(&self, inputs: &ModelInputs) -> Result<Vec<(Tensor, Tensor)>> {
        let mut tape = Tape::new();
        let embeddings = self.embed(&mut tape, inputs, DropoutMode::OFF, 0)?;
        Ok(embeddings
            .into_iter()
            .map(|(s, t)| (tape.value(s).clone(), tape.value(t).clone()))
            .collect())
    }

    /// Training objective on `subset` given standardized targets for every
    /// edge. GAE/DiGAE use the Frobenius norm of the residual, the LGNN the
    /// sum of squares; quantile heads add the pinball losses.
    pub fn loss(
        &self,
        tape: &mut Tape,
        heads: HeadVars,
        targets: &[f64],
        subset: &[usize],
    ) -> Result<Var> {
        let y: Vec<f64> = subset.iter().map(|&e| targets[e]).collect();
        let y_col = Tensor::column(y.clone());
        let mut loss = match self.config.kind {
            ModelKind::Lgnn => {
                let t = tape.constant(y_col);
                let r = tape.sub(heads.mean, t)?;
                let sq = tape.square(r);
                tape.sum(sq)
            }
            _ => {
                let ones = Tensor::filled(y.len(), 1, 1.0);
                tape.masked_frobenius(heads.mean, &y_col, &ones)?
            }
        };
        if let (Objective::MeanPlusQuantiles { alpha }, Some(lo), Some(hi)) =
            (self.objective, heads.lower, heads.upper)
        {
            let l = tape.pinball_sum(lo, &y, alpha / 2.0)?;
            let u = tape.pinball_sum(hi, &y, 1.0 - alpha / 2.0)?;
            loss = tape.add(loss, l)?;
            loss = tape.add(loss, u)?;
        }
        Ok(loss)
    }

    /// Loss value on `subset` with gradients accumulated into the parameter
    /// store (zeroed first).
    pub fn loss_and_grad(
        &mut self,
        inputs: &ModelInputs,
        targets: &[f64],
        subset: &[usize],
        mode: DropoutMode,
        seed: u64,
    ) -> Result<f64> {
        if targets.len() != inputs.num_edges() {
            return Err(Error::ShapeMismatch {
                op: "targets",
                left: (targets.len(), 1),
                right: (inputs.num_edges(), 1),
            });
        }
        let mut tape = Tape::new();
        let heads = self.forward(&mut tape, inputs, subset, mode, seed)?;
        let loss = self.loss(&mut tape, heads, targets, subset)?;
        let value = tape.value(loss).item();
        self.store.zero_grad();
        tape.backward(loss, &mut self.store)?;
        Ok(value)
    }

    /// Loss on `subset` without gradients, dropout off.
    pub fn evaluate_loss(
        &self,
        inputs: &ModelInputs,
        targets: &[f64],
        subset: &[usize],
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let heads = self.forward(&mut tape, inputs, subset, DropoutMode::OFF, 0)?;
        let loss = self.loss(&mut tape, heads, targets, subset)?;
        Ok(tape.value(loss).item())
    }

    /// Deterministic predictions. Crossed quantile pairs are reordered so
    /// that `lower ≤ upper` always holds.
    pub fn predict(&self, inputs: &ModelInputs, subset: &[usize]) -> Result<EdgePredictions> {
        let mut tape = Tape::new();
        let heads = self.forward(&mut tape, inputs, subset, DropoutMode::OFF, 0)?;
        let col = |v: Var| tape.value(v).data().to_vec();
        let mean = col(heads.mean);
        let (lower, upper) = match (heads.lower, heads.upper) {
            (Some(l), Some(u)) => {
                let (mut lo, mut hi) = (col(l), col(u));
                for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                    if *a > *b {
                        std::mem::swap(a, b);
                    }
                }
                (Some(lo), Some(hi))
            }
            _ => (None, None),
        };
        Ok(EdgePredictions { mean, lower, upper })
    }

    /// Mean-head output of one forward pass under `mode`.
    pub fn predict_pass(
        &self,
        inputs: &ModelInputs,
        subset: &[usize],
        mode: DropoutMode,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let heads = self.forward(&mut tape, inputs, subset, mode, seed)?;
        Ok(tape.value(heads.mean).data().to_vec())
    }
}

/// `Ŵ_ij = Z^S_i · Z^T_j` for every listed edge.
pub fn decode_weights(zs: &Tensor, zt: &Tensor, edges: &[(usize, usize)]) -> Result<Vec<f64>> {
    if zs.cols() != zt.cols() {
        return Err(Error::ShapeMismatch {
            op: "decode_weights",
            left: zs.shape(),
            right: zt.shape(),
        });
    }
    edges
        .iter()
        .map(|&(i, j)| {
            if i >= zs.rows() || j >= zt.rows() {
                Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range"
                )))
            } else {
                Ok(dot(zs.row(i), zt.row(j)))
            }
        })
        .collect()
}

/// Link probability `σ(Z_i · Z_j)`.
pub fn decode_adjacency_prob(z: &Tensor, i: usize, j: usize) -> Result<f64> {
    if i >= z.rows() || j >= z.rows() {
        return Err(Error::InvalidArgument(format!(
            "node pair ({i}, {j}) out of range"
        )));
    }
    Ok(sigmoid(dot(z.row(i), z.row(j))))
}

fn encode_with(
    features: &Tensor,
    primary: SparseMatrix,
    secondary: Option<SparseMatrix>,
    model: &EdgeModel,
) -> Result<Vec<(Tensor, Tensor)>> {
    let inputs = ModelInputs {
        kind: model.config.kind,
        features: features.clone(),
        primary: Arc::new(primary),
        secondary: secondary.map(Arc::new),
        edges: Arc::new(Vec::new()),
    };
    model.encode(&inputs)
}

/// Mean-head GAE embedding `Z` for an explicit propagation operator.
pub fn gae_encode(features: &Tensor, prop: &SparseMatrix, model: &EdgeModel) -> Result<Tensor> {
    if model.config.kind != ModelKind::Gae {
        return Err(Error::InvalidArgument(
            "gae_encode needs a GAE model".into(),
        ));
    }
    let mut heads = encode_with(features, prop.clone(), None, model)?;
    Ok(heads.swap_remove(0).0)
}

/// Mean-head DiGAE embeddings `(Z_S, Z_T)` for explicit source and target
/// operators.
pub fn digae_encode(
    features: &Tensor,
    source_prop: &SparseMatrix,
    target_prop: &SparseMatrix,
    model: &EdgeModel,
) -> Result<(Tensor, Tensor)> {
    if model.config.kind != ModelKind::DiGae {
        return Err(Error::InvalidArgument(
            "digae_encode needs a DiGAE model".into(),
        ));
    }
    let mut heads = encode_with(
        features,
        source_prop.clone(),
        Some(target_prop.clone()),
        model,
    )?;
    Ok(heads.swap_remove(0))
}
