//! Helpers shared by integration test targets.
#![allow(dead_code)]

pub mod oracles;

use std::sync::Arc;

use conformal_load_core::autograd::{ParamId, ParamStore, Tape, Var};
use conformal_load_core::graph::{fill_weights, split_edges, FillMode};
use conformal_load_core::models::{
    EdgeModel, LayerKind, ModelConfig, ModelInputs, ModelKind, Objective,
};
use conformal_load_core::nn::DropoutMode;
use conformal_load_core::synthetic::{road_network, RoadNetworkOptions};
use conformal_load_core::tensor::{SparseMatrix, Tensor};
use conformal_load_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-2)`; the floor keeps exact zeros from
/// turning rounding noise into a unit relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Worst relative error between backward and central differences of `f`
/// over every entry of every parameter.
pub fn check_gradients<F>(store: &mut ParamStore, ids: &[ParamId], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let mut worst = 0.0f64;
    for &id in ids {
        let analytic = store.get(id).grad.clone();
        for k in 0..analytic.len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Entries of magnitude in [0.2, 1.5] with random sign, away from ReLU kinks.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Arc<SparseMatrix> {
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(0.4) {
                t.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    Arc::new(SparseMatrix::from_triplets(rows, cols, &t).unwrap())
}

/// Reduces a matrix node to a scalar through fixed random weights so that
/// every entry of the gradient is distinct.
fn project(tape: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

/// Names of the operations covered by [`op_instance`].
pub const OPS: [&str; 19] = [
    "matmul",
    "spmm",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "transpose",
    "relu",
    "sigmoid",
    "mul_const",
    "edge_dot",
    "gather_rows",
    "sum",
    "sqrt",
    "square",
    "masked_frobenius",
    "pinball_sum",
    "dag3",
];

/// Worst relative error for one random instance of operation `op`.
pub fn op_instance(op: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c, k) = (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..5),
    );
    let mut store = ParamStore::new();
    let a = store.add("a", uniform(&mut rng, r, c, -1.0, 1.0));
    let proj = uniform(&mut rng, r, c, -1.0, 1.0);
    match op {
        "matmul" => {
            let b = store.add("b", uniform(&mut rng, c, k, -1.0, 1.0));
            let w = uniform(&mut rng, r, k, -1.0, 1.0);
            check_gradients(&mut store, &[a, b], |t, s| {
                let (x, y) = (t.param(s, a), t.param(s, b));
                let m = t.matmul(x, y)?;
                project(t, m, &w)
            })
        }
        "spmm" => {
            let m = sparse(&mut rng, k, r);
            let w = uniform(&mut rng, k, c, -1.0, 1.0);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let y = t.spmm(&m, x)?;
                project(t, y, &w)
            })
        }
        "add" | "sub" | "mul" => {
            let b = store.add("b", uniform(&mut rng, r, c, -1.0, 1.0));
            check_gradients(&mut store, &[a, b], |t, s| {
                let (x, y) = (t.param(s, a), t.param(s, b));
                let z = match op {
                    "add" => t.add(x, y)?,
                    "sub" => t.sub(x, y)?,
                    _ => t.mul(x, y)?,
                };
                project(t, z, &proj)
            })
        }
        "add_bias" => {
            let b = store.add("b", uniform(&mut rng, 1, c, -1.0, 1.0));
            check_gradients(&mut store, &[a, b], |t, s| {
                let (x, y) = (t.param(s, a), t.param(s, b));
                let z = t.add_bias(x, y)?;
                project(t, z, &proj)
            })
        }
        "scale" => {
            let f = rng.random_range(-3.0..3.0);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.scale(x, f);
                project(t, z, &proj)
            })
        }
        "transpose" => {
            let w = proj.transpose();
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.transpose(x);
                project(t, z, &w)
            })
        }
        "relu" => {
            store.get_mut(a).value = off_kink(&mut rng, r, c);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.relu(x);
                project(t, z, &proj)
            })
        }
        "sigmoid" => {
            store.get_mut(a).value = uniform(&mut rng, r, c, -4.0, 4.0);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.sigmoid(x);
                project(t, z, &proj)
            })
        }
        "mul_const" => {
            // An inverted-dropout mask: zeros and 1/(1 − p).
            let p = 0.3;
            let mask = Tensor::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|_| {
                        if rng.random_bool(p) {
                            0.0
                        } else {
                            1.0 / (1.0 - p)
                        }
                    })
                    .collect(),
            )
            .unwrap();
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.mul_const(x, mask.clone())?;
                project(t, z, &proj)
            })
        }
        "edge_dot" => {
            let n = r + 1;
            let zs = store.add("zs", uniform(&mut rng, n, c, -1.0, 1.0));
            let zt = store.add("zt", uniform(&mut rng, n, c, -1.0, 1.0));
            let pairs: Arc<Vec<(usize, usize)>> = Arc::new(
                (0..6)
                    .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
                    .collect(),
            );
            let w = uniform(&mut rng, pairs.len(), 1, -1.0, 1.0);
            check_gradients(&mut store, &[zs, zt], |t, s| {
                let (x, y) = (t.param(s, zs), t.param(s, zt));
                let z = t.edge_dot(x, y, &pairs)?;
                project(t, z, &w)
            })
        }
        "gather_rows" => {
            let idx: Arc<Vec<usize>> = Arc::new((0..5).map(|_| rng.random_range(0..r)).collect());
            let w = uniform(&mut rng, idx.len(), c, -1.0, 1.0);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.gather_rows(x, &idx)?;
                project(t, z, &w)
            })
        }
        "sum" => check_gradients(&mut store, &[a], |t, s| {
            let x = t.param(s, a);
            let z = t.square(x);
            Ok(t.sum(z))
        }),
        "sqrt" => {
            store.get_mut(a).value = uniform(&mut rng, r, c, 0.2, 3.0);
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                let z = t.sqrt(x);
                project(t, z, &proj)
            })
        }
        "square" => check_gradients(&mut store, &[a], |t, s| {
            let x = t.param(s, a);
            let z = t.square(x);
            project(t, z, &proj)
        }),
        "masked_frobenius" => {
            let target = uniform(&mut rng, r, c, -1.0, 1.0);
            let mut mask = Tensor::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|_| f64::from(rng.random_bool(0.6)))
                    .collect(),
            )
            .unwrap();
            mask.data_mut()[0] = 1.0;
            let target = target.hadamard(&mask).unwrap();
            // Keep the residual norm away from zero, where the norm has a kink.
            let mut start = uniform(&mut rng, r, c, -1.0, 1.0);
            start.data_mut()[0] = target.data()[0] + 0.5;
            store.get_mut(a).value = start;
            check_gradients(&mut store, &[a], |t, s| {
                let x = t.param(s, a);
                t.masked_frobenius(x, &target, &mask)
            })
        }
        "pinball_sum" => {
            let n = r * c;
            let pred = store.add("p", Tensor::zeros(n, 1));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            // Predictions at least 0.1 from their targets.
            store.get_mut(pred).value = Tensor::column(
                y.iter()
                    .map(|&v| {
                        v + rng.random_range(0.1..1.0)
                            * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                    })
                    .collect(),
            );
            let q = rng.random_range(0.01..0.99);
            check_gradients(&mut store, &[pred], |t, s| {
                let x = t.param(s, pred);
                t.pinball_sum(x, &y, q)
            })
        }
        "dag3" => dag3(&mut rng),
        other => panic!("unknown op {other}"),
    }
}

/// A random three-layer network with a shared input branch: sigmoid and
/// ReLU layers, a skip connection and a squared-error head.
fn dag3(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, d, h) = (
        rng.random_range(2..6),
        rng.random_range(1..4),
        rng.random_range(1..4),
    );
    let x = uniform(rng, n, d, -1.0, 1.0);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", uniform(rng, d, h, -1.0, 1.0));
    let b1 = store.add("b1", uniform(rng, 1, h, -0.5, 0.5));
    let w2 = store.add("w2", uniform(rng, h, h, -1.0, 1.0));
    let w3 = store.add("w3", uniform(rng, h, 1, -1.0, 1.0));
    let target = uniform(rng, n, 1, -1.0, 1.0);
    let f = |t: &mut Tape, s: &ParamStore| -> Result<Var> {
        let xi = t.constant(x.clone());
        let (w1v, b1v, w2v, w3v) = (
            t.param(s, w1),
            t.param(s, b1),
            t.param(s, w2),
            t.param(s, w3),
        );
        let z1 = t.matmul(xi, w1v)?;
        let z1 = t.add_bias(z1, b1v)?;
        let h1 = t.sigmoid(z1);
        let z2 = t.matmul(h1, w2v)?;
        let h2 = t.add(z2, h1)?;
        let h2 = t.mul(h2, h1)?;
        let out = t.matmul(h2, w3v)?;
        let tv = t.constant(target.clone());
        let r = t.sub(out, tv)?;
        let sq = t.square(r);
        Ok(t.sum(sq))
    };
    check_gradients(&mut store, &[w1, b1, w2, w3], f)
}

/// Worst relative error of a full model loss (forward, decoder and loss)
/// under a fixed training-mode dropout mask.
pub fn model_instance(
    kind: ModelKind,
    layer: LayerKind,
    quantiles: bool,
    seed: u64,
) -> Result<f64> {
    let options = RoadNetworkOptions {
        rows: 3,
        cols: 3,
        ..RoadNetworkOptions::small()
    };
    let g = road_network(&options, seed)?;
    let split = split_edges(&g, (0.5, 0.1, 0.4), 0.5, seed)?;
    let adj = fill_weights(&g, &split, FillMode::Mean, seed)?;
    let config = ModelConfig {
        hidden_dim: 3,
        embed_dim: 2,
        dropout: 0.2,
        ..ModelConfig::new(kind, layer)
    };
    let inputs = ModelInputs::build(&g, &adj, &config)?;
    let objective = if quantiles {
        Objective::MeanPlusQuantiles { alpha: 0.1 }
    } else {
        Objective::MeanOnly
    };
    let mut model = EdgeModel::new(config, objective, inputs.feature_dim(), seed)?;
    // Biases start at zero, which puts fully dropped rows exactly on the ReLU
    // kink; jitter every parameter so instances are generic.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let mean = g.weights().iter().sum::<f64>() / g.num_edges() as f64;
    let targets: Vec<f64> = g.weights().iter().map(|w| w / mean - 1.0).collect();
    let mode = DropoutMode::train(0.2);
    let subset = split.train.clone();
    model.loss_and_grad(&inputs, &targets, &subset, mode, seed)?;
    let grads: Vec<Tensor> = model.params().iter().map(|p| p.grad.clone()).collect();
    let mut worst = 0.0f64;
    let loss = |m: &EdgeModel| -> Result<f64> {
        let mut tape = Tape::new();
        let heads = m.forward(&mut tape, &inputs, &subset, mode, seed)?;
        let l = m.loss(&mut tape, heads, &targets, &subset)?;
        Ok(tape.value(l).item())
    };
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = model.params().iter().nth(pi).unwrap().value.data()[k];
            let set = |m: &mut EdgeModel, v: f64| {
                m.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[k] = v
            };
            set(&mut model, orig + FD_STEP);
            let up = loss(&model)?;
            set(&mut model, orig - FD_STEP);
            let down = loss(&model)?;
            set(&mut model, orig);
            worst = worst.max(relative_error(
                grad.data()[k],
                (up - down) / (2.0 * FD_STEP),
            ));
        }
    }
    Ok(worst)
}
