//! Monte Carlo dropout: many stochastic forward passes, summarized per edge.

use rayon::prelude::*;

use crate::nn::DropoutMode;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

use super::{EdgeModel, ModelInputs};

/// Anything that yields one random prediction vector per seed.
pub trait StochasticPredictor: Sync {
    fn stochastic_pass(&self, seed: u64) -> Result<Vec<f64>>;
}

/// Per-edge sample mean and standard deviation (denominator `K − 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Runs `k ≥ 2` passes, pass `i` seeded from `(base_seed, i)`. Passes run in
/// parallel but are combined in index order, so the result does not depend
/// on the thread count.
pub fn mc_dropout_predict<P: StochasticPredictor>(
    predictor: &P,
    k: usize,
    base_seed: u64,
) -> Result<McEstimate> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 passes, got {k}"
        )));
    }
    let passes: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| predictor.stochastic_pass(derive_seed(base_seed, &[stream::MC, i as u64])))
        .collect::<Result<_>>()?;
    let n = passes[0].len();
    if let Some(bad) = passes.iter().find(|p| p.len() != n) {
        return Err(Error::ShapeMismatch {
            op: "mc_dropout_predict",
            left: (n, 1),
            right: (bad.len(), 1),
        });
    }
    let mut mean = vec![0.0; n];
    for p in &passes {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut var = vec![0.0; n];
    for p in &passes {
        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / (k - 1) as f64).sqrt())
        .collect();
    Ok(McEstimate { mean, std })
}

/// Mean head of an [`EdgeModel`] with dropout kept on, over fixed edges.
pub struct McDropoutPass<'a> {
    pub model: &'a EdgeModel,
    pub inputs: &'a ModelInputs,
    pub subset: &'a [usize],
}

impl StochasticPredictor for McDropoutPass<'_> {
    fn stochastic_pass(&self, seed: u64) -> Result<Vec<f64>> {
        let mode = DropoutMode::monte_carlo(self.model.config.dropout);
        self.model
            .predict_pass(self.inputs, self.subset, mode, seed)
    }
}

impl EdgeModel {
    /// MC-dropout mean and spread on `subset`.
    pub fn mc_dropout(
        &self,
        inputs: &ModelInputs,
        subset: &[usize],
        k: usize,
        seed: u64,
    ) -> Result<McEstimate> {
        mc_dropout_predict(
            &McDropoutPass {
                model: self,
                inputs,
                subset,
            },
            k,
            seed,
        )
    }
}
