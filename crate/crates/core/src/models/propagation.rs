//! Propagation operators and the constant inputs a model consumes.

use std::sync::Arc;

use crate::graph::{line_graph, Graph, MaskedWeightedAdjacency};
use crate::tensor::{SparseMatrix, Tensor};
use crate::Result;

use super::{ModelConfig, ModelKind, Propagation};

/// Everything a forward pass reads besides the parameters.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub kind: ModelKind,
    /// Node features for GAE/DiGAE, `[X_i ‖ X_j]` edge features for LGNN.
    pub features: Tensor,
    /// GAE: `P`. DiGAE: source operator `P_S`. LGNN: line-graph operator.
    pub primary: Arc<SparseMatrix>,
    /// DiGAE target operator `P_T`.
    pub secondary: Option<Arc<SparseMatrix>>,
    /// Edges of the original graph, in edge order.
    pub edges: Arc<Vec<(usize, usize)>>,
}

impl ModelInputs {
    /// Builds the operators for `config.kind`. `adjacency` is the masked and
    /// filled weight matrix; LGNN ignores it and only sees the line graph.
    pub fn build(
        graph: &Graph,
        adjacency: &MaskedWeightedAdjacency,
        config: &ModelConfig,
    ) -> Result<Self> {
        let edges = Arc::new(graph.edges().to_vec());
        match config.kind {
            ModelKind::Gae => Ok(ModelInputs {
                kind: config.kind,
                features: graph.node_features().clone(),
                primary: Arc::new(gae_propagation(adjacency, config.propagation)?),
                secondary: None,
                edges,
            }),
            ModelKind::DiGae => {
                let (ps, pt) = digae_propagation(adjacency, config.propagation)?;
                Ok(ModelInputs {
                    kind: config.kind,
                    features: graph.node_features().clone(),
                    primary: Arc::new(ps),
                    secondary: Some(Arc::new(pt)),
                    edges,
                })
            }
            ModelKind::Lgnn => {
                let lg = line_graph(graph)?;
                Ok(ModelInputs {
                    kind: config.kind,
                    features: lg.graph.node_features().clone(),
                    primary: Arc::new(lgnn_propagation(&lg.graph, config.propagation)?),
                    secondary: None,
                    edges,
                })
            }
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

fn triplets(adj: &MaskedWeightedAdjacency, transpose: bool) -> Vec<(usize, usize, f64)> {
    adj.edges()
        .iter()
        .zip(adj.edge_values())
        .map(|(&(i, j), &v)| if transpose { (j, i, v) } else { (i, j, v) })
        .collect()
}

fn sym_normalize(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Result<SparseMatrix> {
    let mut deg = vec![0.0; n];
    for &(i, _, v) in &trip {
        deg[i] += v;
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    for t in &mut trip {
        t.2 *= inv_sqrt[t.0] * inv_sqrt[t.1];
    }
    SparseMatrix::from_triplets(n, n, &trip)
}

fn row_normalize(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Result<SparseMatrix> {
    let mut deg = vec![0.0; n];
    for &(i, _, v) in &trip {
        deg[i] += v;
    }
    for t in &mut trip {
        if deg[t.0] > 0.0 {
            t.2 /= deg[t.0];
        }
    }
    SparseMatrix::from_triplets(n, n, &trip)
}

/// Undirected operator for the GAE.
///
/// Raw: binary support of `W ∨ Wᵀ`. Normalized: `D^{-1/2} (S + I) D^{-1/2}`
/// with `S = (W + Wᵀ) / w̄`, `w̄` the mean training weight, so that the
/// filled entries still carry their magnitude relative to observed ones.
pub fn gae_propagation(adj: &MaskedWeightedAdjacency, mode: Propagation) -> Result<SparseMatrix> {
    let n = adj.num_nodes();
    match mode {
        Propagation::Raw => {
            let mut trip = Vec::new();
            for (&(i, j), &v) in adj.edges().iter().zip(adj.edge_values()) {
                if v != 0.0 {
                    trip.push((i, j, 1.0));
                    trip.push((j, i, 1.0));
                }
            }
            // Reciprocal pairs sum to 2 above; clamp back to binary.
            let m = SparseMatrix::from_triplets(n, n, &trip)?;
            let mut bin = Vec::with_capacity(m.nnz());
            for r in 0..n {
                bin.extend(m.row_iter(r).map(|(c, _)| (r, c, 1.0)));
            }
            SparseMatrix::from_triplets(n, n, &bin)
        }
        Propagation::Normalized => {
            let scale = if adj.train_mean > 0.0 {
                1.0 / adj.train_mean
            } else {
                1.0
            };
            let mut trip: Vec<_> = triplets(adj, false)
                .into_iter()
                .chain(triplets(adj, true))
                .map(|(i, j, v)| (i, j, v * scale))
                .collect();
            trip.extend((0..n).map(|i| (i, i, 1.0)));
            sym_normalize(n, trip)
        }
    }
}

/// Source and target operators `(P_S, P_T)` for the DiGAE.
///
/// Raw: `(W, Wᵀ)`. Normalized: row-normalized `W + w̄ I` and `Wᵀ + w̄ I`,
/// where the self-loop weight `w̄` is the mean training weight.
pub fn digae_propagation(
    adj: &MaskedWeightedAdjacency,
    mode: Propagation,
) -> Result<(SparseMatrix, SparseMatrix)> {
    let n = adj.num_nodes();
    match mode {
        Propagation::Raw => Ok((
            SparseMatrix::from_triplets(n, n, &triplets(adj, false))?,
            SparseMatrix::from_triplets(n, n, &triplets(adj, true))?,
        )),
        Propagation::Normalized => {
            let s = if adj.train_mean > 0.0 {
                adj.train_mean
            } else {
                1.0
            };
            let with_loops = |mut t: Vec<(usize, usize, f64)>| {
                t.extend((0..n).map(|i| (i, i, s)));
                t
            };
            Ok((
                row_normalize(n, with_loops(triplets(adj, false)))?,
                row_normalize(n, with_loops(triplets(adj, true)))?,
            ))
        }
    }
}

/// Operator on the line graph. Raw: directed binary `A^L`. Normalized:
/// symmetric normalization of `(A^L ∨ A^Lᵀ) + I`.
pub fn lgnn_propagation(line: &Graph, mode: Propagation) -> Result<SparseMatrix> {
    let n = line.num_nodes();
    match mode {
        Propagation::Raw => {
            let trip: Vec<_> = line.edges().iter().map(|&(i, j)| (i, j, 1.0)).collect();
            SparseMatrix::from_triplets(n, n, &trip)
        }
        Propagation::Normalized => {
            let mut trip = Vec::with_capacity(2 * line.num_edges() + n);
            for &(i, j) in line.edges() {
                trip.push((i, j, 1.0));
                trip.push((j, i, 1.0));
            }
            let m = SparseMatrix::from_triplets(n, n, &trip)?;
            let mut bin = Vec::with_capacity(m.nnz() + n);
            for r in 0..n {
                bin.extend(m.row_iter(r).map(|(c, _)| (r, c, 1.0)));
            }
            bin.extend((0..n).map(|i| (i, i, 1.0)));
            sym_normalize(n, bin)
        }
    }
}
