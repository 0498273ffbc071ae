//! Directed weighted graphs, edge splits, masked weighted adjacency and the
//! directed line-graph transform.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from, stream};
use crate::tensor::{SparseMatrix, Tensor};
use crate::{Error, Result};

/// Directed graph with nonnegative edge weights and per-node features.
///
/// Self-loops and parallel edges are rejected at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    node_features: Tensor,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        weights: Vec<f64>,
        node_features: Tensor,
    ) -> Result<Self> {
        if weights.len() != edges.len() {
            return Err(Error::InvalidGraph(format!(
                "{} weights for {} edges",
                weights.len(),
                edges.len()
            )));
        }
        if node_features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                node_features.rows()
            )));
        }
        if !node_features.is_finite() {
            return Err(Error::InvalidGraph("non-finite node feature".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (e, &(s, t)) in edges.iter().enumerate() {
            if s >= num_nodes || t >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {e} ({s}, {t}) has endpoint >= {num_nodes}"
                )));
            }
            if s == t {
                return Err(Error::InvalidGraph(format!(
                    "edge {e} is a self-loop on node {s}"
                )));
            }
            if !seen.insert((s, t)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({s}, {t})")));
            }
        }
        if let Some((e, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::InvalidGraph(format!(
                "edge {e} has invalid weight {w}"
            )));
        }
        Ok(Graph {
            num_nodes,
            edges,
            weights,
            node_features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// `[X_i ‖ X_j]` for every edge `(i, j)`, one row per edge.
    pub fn edge_features(&self) -> Tensor {
        let f = self.feature_dim();
        let mut out = Tensor::zeros(self.num_edges(), 2 * f);
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let row = out.row_mut(e);
            row[..f].copy_from_slice(self.node_features.row(i));
            row[f..].copy_from_slice(self.node_features.row(j));
        }
        out
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(s, _) in &self.edges {
            d[s] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(_, t) in &self.edges {
            d[t] += 1;
        }
        d
    }

    /// Same topology and features with new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Graph> {
        Graph::new(
            self.num_nodes,
            self.edges.clone(),
            weights,
            self.node_features.clone(),
        )
    }
}

/// Binary `n × n` adjacency restricted to the edges in `subset`.
pub fn build_adjacency(graph: &Graph, subset: &[usize]) -> Result<Tensor> {
    let n = graph.num_nodes();
    let mut a = Tensor::zeros(n, n);
    for &e in subset {
        let &(i, j) = graph
            .edges()
            .get(e)
            .ok_or_else(|| Error::InvalidArgument(format!("edge index {e} out of range")))?;
        a.set(i, j, 1.0);
    }
    Ok(a)
}

/// Disjoint train/validation/calibration/test edge index sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: (f64, f64, f64),
    pub calib_ratio: f64,
    pub seed: u64,
}

impl EdgeSplit {
    /// Builds a split from explicit index sets and checks that they
    /// partition `0..num_edges`. Validation, calibration and test sets may be
    /// empty here; [`split_edges`] is stricter.
    pub fn from_parts(
        num_edges: usize,
        train: Vec<usize>,
        val: Vec<usize>,
        calib: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let total = num_edges.max(1) as f64;
        let split = EdgeSplit {
            fractions: (
                train.len() as f64 / total,
                val.len() as f64 / total,
                (calib.len() + test.len()) as f64 / total,
            ),
            calib_ratio: if calib.len() + test.len() == 0 {
                0.0
            } else {
                calib.len() as f64 / (calib.len() + test.len()) as f64
            },
            train,
            val,
            calib,
            test,
            seed: 0,
        };
        split.validate(num_edges)?;
        Ok(split)
    }

    /// Checks the partition property against `num_edges`.
    pub fn validate(&self, num_edges: usize) -> Result<()> {
        let mut seen = vec![false; num_edges];
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("calib", &self.calib),
            ("test", &self.test),
        ] {
            for &e in set {
                if e >= num_edges {
                    return Err(Error::InvalidSplit(format!(
                        "{name} index {e} >= {num_edges}"
                    )));
                }
                if std::mem::replace(&mut seen[e], true) {
                    return Err(Error::InvalidSplit(format!("edge {e} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSplit(format!("edge {missing} not assigned")));
        }
        Ok(())
    }

    /// Calibration and test edges together, sorted.
    pub fn calib_and_test(&self) -> Vec<usize> {
        let mut ct: Vec<usize> = self.calib.iter().chain(&self.test).copied().collect();
        ct.sort_unstable();
        ct
    }

    /// Redraws the calibration/test division of the combined bucket while
    /// leaving train and validation untouched.
    pub fn resplit(&self, seed: u64) -> Result<EdgeSplit> {
        let mut ct = self.calib_and_test();
        let mut rng = rng_from(seed, &[stream::RESPLIT]);
        ct.shuffle(&mut rng);
        let (calib, test) = divide_ct(ct, self.calib_ratio)?;
        Ok(EdgeSplit {
            calib,
            test,
            seed,
            ..self.clone()
        })
    }

    /// Split-membership label of edge `e`.
    pub fn role_of(&self, e: usize) -> EdgeRole {
        if self.train.contains(&e) {
            EdgeRole::Train
        } else if self.val.contains(&e) {
            EdgeRole::Val
        } else if self.calib.contains(&e) {
            EdgeRole::Calib
        } else {
            EdgeRole::Test
        }
    }

    /// Per-edge roles for a graph with `num_edges` edges.
    pub fn roles(&self, num_edges: usize) -> Vec<EdgeRole> {
        let mut roles = vec![EdgeRole::Test; num_edges];
        for &e in &self.train {
            roles[e] = EdgeRole::Train;
        }
        for &e in &self.val {
            roles[e] = EdgeRole::Val;
        }
        for &e in &self.calib {
            roles[e] = EdgeRole::Calib;
        }
        roles
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRole {
    Train,
    Val,
    Calib,
    Test,
}

impl EdgeRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeRole::Train => "train",
            EdgeRole::Val => "val",
            EdgeRole::Calib => "calib",
            EdgeRole::Test => "test",
        }
    }
}

fn divide_ct(mut ct: Vec<usize>, calib_ratio: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_calib = (ct.len() as f64 * calib_ratio).round() as usize;
    if n_calib == 0 || n_calib >= ct.len() {
        return Err(Error::InvalidSplit(format!(
            "calibration/test division of {} edges at ratio {calib_ratio} leaves an empty set",
            ct.len()
        )));
    }
    let mut test = ct.split_off(n_calib);
    ct.sort_unstable();
    test.sort_unstable();
    Ok((ct, test))
}

/// Uniform random split into train / validation / calibration+test, with
/// the last bucket divided by `calib_ratio`.
pub fn split_edges(
    graph: &Graph,
    fractions: (f64, f64, f64),
    calib_ratio: f64,
    seed: u64,
) -> Result<EdgeSplit> {
    let m = graph.num_edges();
    let (ft, fv, fct) = fractions;
    if [ft, fv, fct].iter().any(|f| !(0.0..=1.0).contains(f))
        || ((ft + fv + fct) - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidSplit(format!(
            "fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    if !(calib_ratio > 0.0 && calib_ratio < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "calib_ratio {calib_ratio} outside (0, 1)"
        )));
    }
    if m < 4 {
        return Err(Error::InvalidSplit(format!(
            "need at least 4 edges, got {m}"
        )));
    }
    let n_train = (m as f64 * ft).round() as usize;
    let n_val = ((m as f64 * fv).round() as usize).min(m - n_train);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rng = rng_from(seed, &[stream::SPLIT]);
    perm.shuffle(&mut rng);
    let ct = perm.split_off(n_train + n_val);
    let mut val = perm.split_off(n_train);
    let mut train = perm;
    train.sort_unstable();
    val.sort_unstable();
    let (calib, test) = divide_ct(ct, calib_ratio)?;
    Ok(EdgeSplit {
        train,
        val,
        calib,
        test,
        fractions,
        calib_ratio,
        seed,
    })
}

/// Value assigned to non-training edges in the masked weighted adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    Zero,
    Mean,
    Bootstrap,
}

impl FillMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FillMode::Zero => "zero",
            FillMode::Mean => "mean",
            FillMode::Bootstrap => "bootstrap",
        }
    }
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(FillMode::Zero),
            "mean" => Ok(FillMode::Mean),
            "bootstrap" | "random" => Ok(FillMode::Bootstrap),
            other => Err(Error::Config(format!("unknown fill mode '{other}'"))),
        }
    }
}

/// Weighted adjacency seen by the encoders: observed weights on training
/// edges, a fill value on every other edge, zero on non-edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedWeightedAdjacency {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// One entry per graph edge.
    edge_values: Vec<f64>,
    pub fill_mode: FillMode,
    /// `(edge index, δ)` for every non-training edge, in edge order.
    pub delta_values: Vec<(usize, f64)>,
    /// Mean observed training weight.
    pub train_mean: f64,
}

impl MaskedWeightedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_values(&self) -> &[f64] {
        &self.edge_values
    }

    /// Dense `n × n` matrix.
    pub fn matrix(&self) -> Tensor {
        let mut m = Tensor::zeros(self.num_nodes, self.num_nodes);
        for (&(i, j), &v) in self.edges.iter().zip(&self.edge_values) {
            m.set(i, j, v);
        }
        m
    }

    pub fn sparse(&self) -> SparseMatrix {
        let trip: Vec<_> = self
            .edges
            .iter()
            .zip(&self.edge_values)
            .map(|(&(i, j), &v)| (i, j, v))
            .collect();
        SparseMatrix::from_triplets(self.num_nodes, self.num_nodes, &trip)
            .expect("edges validated by Graph")
    }

    /// Copy with every entry multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        MaskedWeightedAdjacency {
            edge_values: self.edge_values.iter().map(|v| v * s).collect(),
            delta_values: self.delta_values.iter().map(|&(e, v)| (e, v * s)).collect(),
            train_mean: self.train_mean * s,
            ..self.clone()
        }
    }
}

pub fn fill_weights(
    graph: &Graph,
    split: &EdgeSplit,
    fill_mode: FillMode,
    seed: u64,
) -> Result<MaskedWeightedAdjacency> {
    split.validate(graph.num_edges())?;
    let train_weights: Vec<f64> = split.train.iter().map(|&e| graph.weights()[e]).collect();
    if train_weights.is_empty() && fill_mode != FillMode::Zero {
        return Err(Error::InvalidSplit(format!(
            "{} fill needs at least one training edge",
            fill_mode.as_str()
        )));
    }
    let train_mean = if train_weights.is_empty() {
        0.0
    } else {
        train_weights.iter().sum::<f64>() / train_weights.len() as f64
    };
    let roles = split.roles(graph.num_edges());
    let mut rng = rng_from(seed, &[stream::FILL]);
    let mut edge_values = Vec::with_capacity(graph.num_edges());
    let mut delta_values = Vec::new();
    for (e, role) in roles.iter().enumerate() {
        let v = if *role == EdgeRole::Train {
            graph.weights()[e]
        } else {
            let delta = match fill_mode {
                FillMode::Zero => 0.0,
                FillMode::Mean => train_mean,
                FillMode::Bootstrap => train_weights[rng.random_range(0..train_weights.len())],
            };
            delta_values.push((e, delta));
            delta
        };
        edge_values.push(v);
    }
    Ok(MaskedWeightedAdjacency {
        num_nodes: graph.num_nodes(),
        edges: graph.edges().to_vec(),
        edge_values,
        fill_mode,
        delta_values,
        train_mean,
    })
}

/// Line graph of a directed graph plus the map from line-graph nodes back to
/// original edges.
#[derive(Clone, Debug, PartialEq)]
pub struct LineGraph {
    /// One node per original edge, in original edge order. Its own edge
    /// weights are all 1; the regression labels live in `labels`.
    pub graph: Graph,
    /// Original edge weight per line-graph node.
    pub labels: Vec<f64>,
    /// Original `(i, j)` per line-graph node.
    pub origin: Vec<(usize, usize)>,
}

/// Directed line graph: node per edge, `(i,j) → (j,k)` for every head-to-tail
/// pair. Node features are `[X_i ‖ X_j]`.
pub fn line_graph(graph: &Graph) -> Result<LineGraph> {
    if graph.num_edges() == 0 {
        return Err(Error::InvalidGraph(
            "line graph of an edgeless graph".into(),
        ));
    }
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); graph.num_nodes()];
    for (e, &(s, _)) in graph.edges().iter().enumerate() {
        out_edges[s].push(e);
    }
    let mut l_edges = Vec::new();
    for (e1, &(_, j)) in graph.edges().iter().enumerate() {
        for &e2 in &out_edges[j] {
            l_edges.push((e1, e2));
        }
    }
    let ones = vec![1.0; l_edges.len()];
    let l_graph = Graph::new(graph.num_edges(), l_edges, ones, graph.edge_features())?;
    Ok(LineGraph {
        graph: l_graph,
        labels: graph.weights().to_vec(),
        origin: graph.edges().to_vec(),
    })
}

/// Affine map between raw and standardized edge weights, fitted on training
/// edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScaler {
    pub mean: f64,
    pub std: f64,
}

impl WeightScaler {
    pub const IDENTITY: WeightScaler = WeightScaler {
        mean: 0.0,
        std: 1.0,
    };

    /// Mean and sample standard deviation of `values`; a degenerate spread
    /// falls back to unit scale.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            1.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        WeightScaler {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn fit_train(graph: &Graph, split: &EdgeSplit) -> Self {
        let w: Vec<f64> = split.train.iter().map(|&e| graph.weights()[e]).collect();
        Self::fit(&w)
    }

    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Converts a width (difference) from standardized to raw units.
    pub fn unscale_width(&self, w: f64) -> f64 {
        w * self.std
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_digraph(rng: &mut impl Rng, max_nodes: usize) -> Graph {
        let n = rng.random_range(2..=max_nodes);
        let p = rng.random_range(0.1..0.7);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1));
        }
        let weights = edges.iter().map(|_| rng.random_range(0.0..10.0)).collect();
        let feats = Tensor::from_vec(
            n,
            2,
            (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        Graph::new(n, edges, weights, feats).unwrap()
    }

    fn chain(n_edges: usize) -> Graph {
        // Complete-ish digraph with deterministic weights 1..=m.
        let mut edges = Vec::new();
        'outer: for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    edges.push((i, j));
                    if edges.len() == n_edges {
                        break 'outer;
                    }
                }
            }
        }
        let w = (1..=edges.len()).map(|v| v as f64).collect();
        Graph::new(10, edges, w, Tensor::zeros(10, 2)).unwrap()
    }

    #[test]
    fn graph_rejects_invalid_input() {
        let f = Tensor::zeros(2, 2);
        assert!(Graph::new(2, vec![(0, 2)], vec![1.0], f.clone()).is_err());
        assert!(Graph::new(2, vec![(0, 1), (0, 1)], vec![1.0, 1.0], f.clone()).is_err());
        assert!(Graph::new(2, vec![(1, 1)], vec![1.0], f.clone()).is_err());
        assert!(Graph::new(2, vec![(0, 1)], vec![-1.0], f.clone()).is_err());
        assert!(Graph::new(2, vec![(0, 1)], vec![], f.clone()).is_err());
        assert!(Graph::new(3, vec![(0, 1)], vec![1.0], f).is_err());
    }

    #[test]
    fn adjacency_single_edge_and_empty() {
        let g = Graph::new(2, vec![(0, 1)], vec![3.0], Tensor::zeros(2, 2)).unwrap();
        assert_eq!(
            build_adjacency(&g, &[0]).unwrap().data(),
            &[0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(build_adjacency(&g, &[]).unwrap().data(), &[0.0; 4]);
        assert!(build_adjacency(&g, &[1]).is_err());
    }

    #[test]
    fn adjacency_matches_pair_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_digraph(&mut rng, 6);
        let all: Vec<usize> = (0..g.num_edges()).collect();
        let a = build_adjacency(&g, &all).unwrap();
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                let member = g.edges().contains(&(i, j));
                assert_eq!(a.get(i, j), if member { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn split_sizes_rounding_exact() {
        let g = chain(10);
        let s = split_edges(&g, (0.5, 0.1, 0.4), 0.5, 3).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.calib.len(), s.test.len()),
            (5, 1, 2, 2)
        );
        s.validate(10).unwrap();
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let g = chain(20);
        let a = split_edges(&g, (0.5, 0.1, 0.4), 0.5, 9).unwrap();
        let b = split_edges(&g, (0.5, 0.1, 0.4), 0.5, 9).unwrap();
        let c = split_edges(&g, (0.5, 0.1, 0.4), 0.5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_bad_arguments() {
        let g = chain(10);
        assert!(split_edges(&g, (0.5, 0.1, 0.3), 0.5, 0).is_err());
        assert!(split_edges(&g, (0.5, 0.1, 0.4), 0.0, 0).is_err());
        assert!(split_edges(&chain(3), (0.5, 0.1, 0.4), 0.5, 0).is_err());
        // 4 edges: ct bucket of 2 at ratio 0.9 → calib 2, test 0.
        assert!(split_edges(&chain(4), (0.5, 0.0, 0.5), 0.9, 0).is_err());
    }

    #[test]
    fn calib_membership_frequency() {
        // Monte-Carlo oracle: calib is 0.4 × 0.5 = 20% of edges.
        let g = chain(20);
        let mut counts = [0usize; 20];
        for seed in 0..1000 {
            for e in split_edges(&g, (0.5, 0.1, 0.4), 0.5, seed).unwrap().calib {
                counts[e] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 1000.0;
            assert!((f - 0.2).abs() <= 0.03, "frequency {f}");
        }
    }

    #[test]
    fn resplit_keeps_train_and_val() {
        let g = chain(40);
        let s = split_edges(&g, (0.5, 0.1, 0.4), 0.5, 1).unwrap();
        for seed in 0..20 {
            let r = s.resplit(seed).unwrap();
            r.validate(40).unwrap();
            assert_eq!(r.train, s.train);
            assert_eq!(r.val, s.val);
            assert_eq!(r.calib_and_test(), s.calib_and_test());
        }
        assert_ne!(s.resplit(1).unwrap().calib, s.resplit(2).unwrap().calib);
    }

    #[test]
    fn fill_mean_and_zero() {
        let feats = Tensor::zeros(3, 2);
        let g = Graph::new(
            3,
            vec![(0, 1), (1, 2), (2, 0), (0, 2)],
            vec![2.0, 4.0, 7.0, 9.0],
            feats,
        )
        .unwrap();
        let s = EdgeSplit::from_parts(4, vec![0, 1], vec![2], vec![3], vec![]).unwrap();
        let m = fill_weights(&g, &s, FillMode::Mean, 0).unwrap();
        assert_eq!(m.edge_values(), &[2.0, 4.0, 3.0, 3.0]);
        assert_eq!(m.delta_values, vec![(2, 3.0), (3, 3.0)]);
        let dense = m.matrix();
        assert_eq!(dense.get(2, 0), 3.0);
        assert_eq!(dense.get(1, 0), 0.0);

        let z = fill_weights(&g, &s, FillMode::Zero, 0).unwrap();
        let a_train = build_adjacency(&g, &s.train).unwrap();
        let w_full = {
            let all: Vec<usize> = (0..4).collect();
            let mut w = build_adjacency(&g, &all).unwrap();
            for (e, &(i, j)) in g.edges().iter().enumerate() {
                w.set(i, j, g.weights()[e]);
            }
            w
        };
        assert_eq!(z.matrix(), a_train.hadamard(&w_full).unwrap());
    }

    #[test]
    fn fill_requires_training_edges() {
        let g = Graph::new(2, vec![(0, 1)], vec![1.0], Tensor::zeros(2, 1)).unwrap();
        let s = EdgeSplit::from_parts(1, vec![], vec![], vec![0], vec![]).unwrap();
        assert!(fill_weights(&g, &s, FillMode::Mean, 0).is_err());
        assert!(fill_weights(&g, &s, FillMode::Bootstrap, 0).is_err());
        assert!(fill_weights(&g, &s, FillMode::Zero, 0).is_ok());
    }

    #[test]
    fn bootstrap_fill_mean() {
        // 2 training edges with weights {1, 5}; 10⁴ filled edges.
        let n = 10_002;
        let edges: Vec<(usize, usize)> =
            (0..n - 1).map(|i| (i, i + 1)).chain([(n - 1, 0)]).collect();
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        w[1] = 5.0;
        let g = Graph::new(n, edges, w, Tensor::zeros(n, 1)).unwrap();
        let s = EdgeSplit::from_parts(n, vec![0, 1], vec![], (2..n).collect(), vec![]).unwrap();
        let m = fill_weights(&g, &s, FillMode::Bootstrap, 17).unwrap();
        let fills: Vec<f64> = m.delta_values.iter().map(|&(_, v)| v).collect();
        assert_eq!(fills.len(), 10_000);
        assert!(fills.iter().all(|&v| v == 1.0 || v == 5.0));
        let mean = fills.iter().sum::<f64>() / fills.len() as f64;
        assert!((mean - 3.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn line_graph_path_and_cycle() {
        let f = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let path = Graph::new(3, vec![(0, 1), (1, 2)], vec![5.0, 6.0], f.clone()).unwrap();
        let l = line_graph(&path).unwrap();
        assert_eq!(l.graph.num_nodes(), 2);
        assert_eq!(l.graph.edges(), &[(0, 1)]);
        assert_eq!(l.labels, vec![5.0, 6.0]);
        assert_eq!(l.origin, vec![(0, 1), (1, 2)]);
        assert_eq!(l.graph.node_features().row(1), &[1.0, 0.0, 2.0, 0.0]);

        let cycle = Graph::new(3, vec![(0, 1), (1, 2), (2, 0)], vec![1.0; 3], f).unwrap();
        let lc = line_graph(&cycle).unwrap();
        let mut e = lc.graph.edges().to_vec();
        e.sort_unstable();
        assert_eq!(e, vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn line_graph_keeps_reverse_pairs() {
        let g = Graph::new(2, vec![(0, 1), (1, 0)], vec![1.0, 2.0], Tensor::zeros(2, 1)).unwrap();
        let l = line_graph(&g).unwrap();
        assert_eq!(l.graph.edges(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn line_graph_edge_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = random_digraph(&mut rng, 8);
            let l = line_graph(&g).unwrap();
            let (indeg, outdeg) = (g.in_degrees(), g.out_degrees());
            let expected: usize = (0..g.num_nodes()).map(|j| indeg[j] * outdeg[j]).sum();
            assert_eq!(l.graph.num_nodes(), g.num_edges());
            assert_eq!(l.graph.num_edges(), expected);
        }
    }

    #[test]
    fn scaler_roundtrip_and_degenerate() {
        let s = WeightScaler::fit(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!((s.unstandardize(s.standardize(7.5)) - 7.5).abs() < 1e-12);
        let c = WeightScaler::fit(&[4.0, 4.0]);
        assert_eq!((c.mean, c.std), (4.0, 1.0));
    }
}
