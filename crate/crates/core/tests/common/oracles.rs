//! Independent reference computations for the protocol-level checks.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use conformal_load_core::conformal::{quantile_rank, Calibrator, Method, PredictionSet};
use conformal_load_core::graph::{line_graph, Graph};
use conformal_load_core::metrics::coverage;
use conformal_load_core::tensor::Tensor;
use conformal_load_core::tntp::{self, FilterOptions};
use conformal_load_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const CALIBRATED: [Method; 4] = [Method::Cp, Method::CpErc, Method::Cqr, Method::CqrErc];

/// i.i.d. heteroscedastic regression: `y = sin(3x) + σ(x) ε` with
/// imperfect point, quantile and spread estimates.
pub fn iid_predictions(rng: &mut ChaCha8Rng, n: usize) -> (PredictionSet, Vec<f64>) {
    let mut set = PredictionSet {
        mean: Vec::with_capacity(n),
        lower: Some(Vec::with_capacity(n)),
        upper: Some(Vec::with_capacity(n)),
        spread: Some(Vec::with_capacity(n)),
    };
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let sigma = 0.2 + 0.5 * x.abs();
        let eps: f64 = StandardNormal.sample(rng);
        let truth = (3.0 * x).sin();
        let m = truth + 0.1 * x;
        y.push(truth + sigma * eps);
        set.mean.push(m);
        set.lower.as_mut().unwrap().push(m - 1.2 * sigma);
        set.upper.as_mut().unwrap().push(m + 1.6 * sigma);
        set.spread
            .as_mut()
            .unwrap()
            .push(sigma * rng.random_range(0.7..1.3));
    }
    (set, y)
}

/// Mean test coverage of `method` over `trials` independent calibrate/test
/// draws, and the exact finite-sample target `k / (n + 1)`.
pub fn exchangeable_coverage(
    method: Method,
    n: usize,
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cal = Calibrator::new(method, alpha)?.with_epsilon(0.05)?;
    let mut total = 0.0;
    for _ in 0..trials {
        let (calib, cy) = iid_predictions(&mut rng, n);
        let (test, ty) = iid_predictions(&mut rng, n);
        let c = cal.calibrate(&calib, &cy)?;
        total += coverage(&cal.intervals(c.qhat, &test)?, &ty)?;
    }
    let target = quantile_rank(n, alpha) as f64 / (n + 1) as f64;
    Ok((total / trials as f64, target))
}

/// Random simple digraph on at most `max_nodes` nodes.
pub fn random_digraph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Result<Graph> {
    let n = rng.random_range(1..=max_nodes);
    let p = rng.random_range(0.1..0.9);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let w = vec![1.0; edges.len()];
    Graph::new(n, edges, w, Tensor::zeros(n, 1))
}

/// `e → f` whenever the head of `e` is the tail of `f`, by scanning every
/// ordered pair of edges.
pub fn brute_force_line_edges(edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (a, &(_, head)) in edges.iter().enumerate() {
        for (b, &(tail, _)) in edges.iter().enumerate() {
            if a != b && head == tail {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Number of random digraphs whose line graph differs from the oracle.
pub fn line_graph_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut checked = 0;
    while checked < instances {
        let g = random_digraph(&mut rng, 8)?;
        if g.num_edges() == 0 {
            continue;
        }
        checked += 1;
        let lg = line_graph(&g)?;
        let got: Vec<(usize, usize)> = lg.graph.edges().to_vec();
        let got_set: BTreeSet<_> = got.iter().copied().collect();
        let ok = got.len() == got_set.len()
            && got_set == brute_force_line_edges(g.edges())
            && lg.graph.num_nodes() == g.num_edges()
            && lg.origin == g.edges()
            && lg.labels == g.weights();
        if !ok {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Violations of `y ∈ interval ⇔ score ≤ q` for `method` over random
/// single-point instances with the ERC width floor kept inactive.
pub fn membership_violations(method: Method, instances: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let mean = rng.random_range(-5.0..5.0);
        let lo = mean - rng.random_range(0.01..2.0);
        let hi = mean + rng.random_range(0.01..2.0);
        let set = PredictionSet {
            mean: vec![mean],
            lower: Some(vec![lo]),
            upper: Some(vec![hi]),
            spread: Some(vec![rng.random_range(0.0..2.0)]),
        };
        let y = rng.random_range(-10.0..10.0);
        let q = rng.random_range(-1.0..4.0);
        let eps = rng.random_range(0.01..1.0);
        let cal = Calibrator::new(method, 0.1)?.with_epsilon(eps)?;
        let score = cal.scores(&set, &[y])?[0];
        let iv = cal.intervals(q, &set)?[0];
        if iv.contains(y) != (score <= q) {
            bad += 1;
        }
    }
    Ok(bad)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

/// Golden TNTP files: the link file is reproduced byte for byte by the
/// writer, and the assembled graphs have hand-counted sizes.
pub fn golden_round_trip() -> std::result::Result<(), String> {
    let dir = golden_dir();
    let text = std::fs::read_to_string(dir.join("Toy_net.tntp")).map_err(|e| e.to_string())?;
    let net = tntp::parse_net(&text).map_err(|e| e.to_string())?;
    let written = tntp::write_net(&net);
    if written != text {
        return Err("writer output differs from the golden link file".into());
    }
    if tntp::parse_net(&written).map_err(|e| e.to_string())? != net {
        return Err("re-parsed network differs".into());
    }
    let ds = tntp::load_dataset(&dir).map_err(|e| e.to_string())?;
    if ds.name != "Toy" || ds.flows.len() != 10 || ds.coords.rows() != 6 {
        return Err(format!(
            "unexpected dataset contents: {} flows, {} nodes",
            ds.flows.len(),
            ds.coords.rows()
        ));
    }
    let raw = ds
        .graph(&FilterOptions::none())
        .map_err(|e| e.to_string())?;
    let road = ds
        .graph(&FilterOptions::road_network())
        .map_err(|e| e.to_string())?;
    // Filter: connectors 1→3, 3→1, 2→4 and the zero-flow 5→4 go, as do
    // the zone nodes 1 and 2.
    let got = (
        raw.num_nodes(),
        raw.num_edges(),
        road.num_nodes(),
        road.num_edges(),
    );
    if got != (6, 10, 4, 6) {
        return Err(format!("graph sizes {got:?}, expected (6, 10, 4, 6)"));
    }
    Ok(())
}

/// Directory holding `Anaheim/` and `ChicagoSketch/` TNTP files.
pub const DATA_ENV: &str = "CONFORMAL_LOAD_DATA";

/// `ChicagoSketch` also matches the upstream folder name `Chicago-Sketch`.
pub fn dataset_dir(name: &str) -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os(DATA_ENV)?);
    let hyphenated = name.replace("Sketch", "-Sketch");
    [name, hyphenated.as_str()]
        .iter()
        .map(|n| root.join(n))
        .find(|dir| dir.is_dir())
}

/// Header counts match the parsed files and the filtered graph lies within
/// 5% of the expected size.
pub fn real_counts(name: &str, nodes: usize, edges: usize) -> std::result::Result<String, String> {
    let dir = dataset_dir(name).ok_or_else(|| format!("{name} not found (set {DATA_ENV})"))?;
    let ds = tntp::load_dataset(&dir).map_err(|e| e.to_string())?;
    if ds.net.num_links() != Some(ds.net.links.len()) {
        return Err(format!(
            "{name}: header links {:?} vs {} parsed",
            ds.net.num_links(),
            ds.net.links.len()
        ));
    }
    let max_node = ds
        .net
        .links
        .iter()
        .map(|l| l.init_node.max(l.term_node) + 1)
        .max()
        .unwrap_or(0);
    if ds.net.num_nodes().is_some_and(|n| n < max_node) {
        return Err(format!(
            "{name}: header nodes {:?} below max id {max_node}",
            ds.net.num_nodes()
        ));
    }
    let g = ds
        .graph(&FilterOptions::road_network())
        .map_err(|e| e.to_string())?;
    let within = |got: usize, want: usize| (got as f64 - want as f64).abs() <= 0.05 * want as f64;
    let msg = format!(
        "{name}: {} nodes / {} edges (expected {nodes} / {edges})",
        g.num_nodes(),
        g.num_edges()
    );
    if within(g.num_nodes(), nodes) && within(g.num_edges(), edges) {
        Ok(msg)
    } else {
        Err(msg)
    }
}
