//! Full-batch training with Adam and validation-based early stopping.

use serde::{Deserialize, Serialize};

use crate::graph::EdgeSplit;
use crate::nn::{Adam, AdamConfig, DropoutMode};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

use super::{EdgeModel, ModelInputs};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Seeds the per-epoch dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 2000,
            patience: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Trains on `split.train`, selects on `split.val` and restores the best
/// parameters. `targets` holds a standardized value for every edge; only
/// training and validation entries are ever read. Falls back to the
/// (dropout-free) training loss for selection when there is no validation
/// set.
pub fn train(
    model: &mut EdgeModel,
    inputs: &ModelInputs,
    targets: &[f64],
    split: &EdgeSplit,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    split.validate(inputs.num_edges())?;
    if split.train.is_empty() {
        return Err(Error::InvalidSplit("no training edges".into()));
    }
    if config.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be positive".into()));
    }
    let selection: &[usize] = if split.val.is_empty() {
        &split.train
    } else {
        &split.val
    };
    let mut adam = Adam::new(config.adam, model.params());
    let mode = DropoutMode::train(model.config.dropout);
    let mut best = model.params().clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let seed = derive_seed(config.seed, &[stream::DROPOUT, epoch as u64]);
        let train_loss = match model.loss_and_grad(inputs, targets, &split.train, mode, seed) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!("training loss {v}"),
                })
            }
            Err(Error::NonFinite(msg)) => return Err(Error::Diverged { epoch, msg }),
            Err(e) => return Err(e),
        };
        adam.step(model.params_mut());
        if let Some(p) = model.params().iter().find(|p| !p.value.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                msg: format!("parameter {} became non-finite", p.name),
            });
        }
        let val_loss = model.evaluate_loss(inputs, targets, selection)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("validation loss {val_loss}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.params().clone();
        } else if epoch - best_epoch >= config.patience {
            stopped_early = true;
            break;
        }
    }
    model.params_mut().load_values(&best)?;
    log::debug!(
        "trained {} {} for {} epochs, best val loss {best_val:.5} at epoch {best_epoch}",
        model.config.kind.as_str(),
        model.objective.as_str(),
        epochs.len()
    );
    Ok(TrainingLog {
        epochs,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fill_weights, split_edges, FillMode, Graph, WeightScaler};
    use crate::models::{LayerKind, ModelConfig, ModelKind, Objective};
    use crate::synthetic::{road_network, RoadNetworkOptions};

    fn setup(kind: ModelKind) -> (Graph, EdgeSplit, ModelInputs, Vec<f64>, ModelConfig) {
        let g = road_network(&RoadNetworkOptions::small(), 4).unwrap();
        let split = split_edges(&g, (0.6, 0.2, 0.2), 0.5, 1).unwrap();
        let adj = fill_weights(&g, &split, FillMode::Mean, 2).unwrap();
        let config = ModelConfig::new(kind, LayerKind::GraphConv);
        let inputs = ModelInputs::build(&g, &adj, &config).unwrap();
        let scaler = WeightScaler::fit_train(&g, &split);
        let targets = g.weights().iter().map(|&w| scaler.standardize(w)).collect();
        (g, split, inputs, targets, config)
    }

    #[test]
    fn training_reduces_loss_and_restores_best() {
        for kind in [ModelKind::Gae, ModelKind::DiGae, ModelKind::Lgnn] {
            let (_, split, inputs, targets, config) = setup(kind);
            let mut model =
                EdgeModel::new(config, Objective::MeanOnly, inputs.feature_dim(), 3).unwrap();
            let before = model.evaluate_loss(&inputs, &targets, &split.val).unwrap();
            let tc = TrainConfig {
                max_epochs: 150,
                patience: 30,
                ..TrainConfig::default()
            };
            let log = train(&mut model, &inputs, &targets, &split, &tc).unwrap();
            let after = model.evaluate_loss(&inputs, &targets, &split.val).unwrap();
            assert!(after < before, "{kind:?}: {after} !< {before}");
            assert!((after - log.best_val_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn held_out_labels_do_not_influence_training() {
        let (_, split, inputs, targets, config) = setup(ModelKind::Gae);
        let mut perturbed = targets.clone();
        for &e in split.calib.iter().chain(&split.test) {
            perturbed[e] += 100.0;
        }
        let tc = TrainConfig {
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let objective = Objective::MeanPlusQuantiles { alpha: 0.1 };
        let mut a = EdgeModel::new(config, objective, inputs.feature_dim(), 3).unwrap();
        let mut b = a.clone();
        train(&mut a, &inputs, &targets, &split, &tc).unwrap();
        train(&mut b, &inputs, &perturbed, &split, &tc).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value, pb.value);
        }
    }

    #[test]
    fn empty_subset_gives_zero_gradient() {
        let (_, _, inputs, targets, config) = setup(ModelKind::DiGae);
        let mut model = EdgeModel::new(
            config,
            Objective::MeanPlusQuantiles { alpha: 0.1 },
            inputs.feature_dim(),
            3,
        )
        .unwrap();
        let loss = model
            .loss_and_grad(&inputs, &targets, &[], DropoutMode::OFF, 0)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(model
            .params()
            .iter()
            .all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn divergence_is_reported() {
        let (_, split, inputs, mut targets, config) = setup(ModelKind::Lgnn);
        targets[split.train[0]] = f64::NAN;
        let mut model =
            EdgeModel::new(config, Objective::MeanOnly, inputs.feature_dim(), 3).unwrap();
        let err = train(
            &mut model,
            &inputs,
            &targets,
            &split,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
    }
}
