//! The experimental protocol: per run, split and train once; per resplit,
//! calibrate and evaluate every method.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::conformal::{select_epsilon, Calibrator, Method, PredictionSet};
use crate::graph::{fill_weights, split_edges, EdgeRole, EdgeSplit, Graph, WeightScaler};
use crate::metrics::{EvaluationReport, WscConfig};
use crate::models::{
    train, EdgeModel, LayerKind, ModelConfig, ModelInputs, ModelKind, Objective, TrainConfig,
};
use crate::nn::AdamConfig;
use crate::rng::{derive_seed, stream};
use crate::synthetic::{road_network, RoadNetworkOptions};
use crate::tensor::Tensor;
use crate::tntp::{load_dataset, FilterOptions};
use crate::{Error, Result};

use super::config::ExperimentConfig;
use super::plot::{emit_plot_data, RunArtifact};
use super::table::{render_table, ResplitRecord, ResultsTable, TableFormat};

/// Smallest test set on which worst-slice coverage is computed.
pub const MIN_WSC_POINTS: usize = 20;

/// Outcome of one (model, layer, run) training session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub layer: String,
    pub run: usize,
    pub split_seed: u64,
    /// `ok` or the reason the run was excluded.
    pub status: String,
    pub epsilon: Option<f64>,
    pub epochs: BTreeMap<String, usize>,
    pub best_val_loss: BTreeMap<String, f64>,
    pub num_train: usize,
    pub num_val: usize,
    pub num_calib_test: usize,
}

/// In-memory result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub table: ResultsTable,
    pub records: Vec<ResplitRecord>,
    pub runs: Vec<RunSummary>,
    pub artifacts: Vec<RunArtifact>,
    /// `(run, file stem, checkpoint)`.
    pub checkpoints: Vec<(usize, String, Checkpoint)>,
}

/// Reads the configured dataset: a TNTP directory or the synthetic network.
pub fn load_graph(config: &ExperimentConfig) -> Result<(String, Graph)> {
    if config.is_synthetic() {
        let options = RoadNetworkOptions {
            rows: config.synthetic_size,
            cols: config.synthetic_size,
            ..RoadNetworkOptions::default()
        };
        return Ok((
            "synthetic".to_string(),
            road_network(&options, config.seed)?,
        ));
    }
    let dataset = load_dataset(&config.dataset_dir)?;
    let filter = FilterOptions {
        drop_zone_connectors: config.drop_zone_connectors,
        ..FilterOptions::road_network()
    };
    let graph = dataset.graph(&filter)?;
    Ok((dataset.name, graph))
}

/// Validates `config`, loads its dataset and runs the protocol.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let (name, graph) = load_graph(config)?;
    run_on_graph(config, &name, &graph)
}

/// Point and quantile predictions on every edge, plus checkpoints by tag.
type Predictions = (
    Option<PredictionSet>,
    Option<PredictionSet>,
    Vec<(String, Checkpoint)>,
);

struct Trained {
    model: EdgeModel,
    epochs: usize,
    best_val: f64,
}

struct RunOutcome {
    summary: RunSummary,
    records: Vec<ResplitRecord>,
    artifacts: Vec<RunArtifact>,
    checkpoints: Vec<(usize, String, Checkpoint)>,
}

fn objective_tag(objective: Objective) -> &'static str {
    objective.as_str()
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    dataset: &'a str,
    graph: &'a Graph,
    edge_features: &'a Tensor,
    model: ModelKind,
    layer: LayerKind,
    run: usize,
}

impl RunContext<'_> {
    fn model_config(&self) -> ModelConfig {
        let c = self.config;
        ModelConfig {
            propagation: c.propagation,
            num_layers: c.num_layers,
            hidden_dim: c.hidden_dim,
            embed_dim: c.embed_dim,
            dropout: c.dropout,
            ..ModelConfig::new(self.model, self.layer)
        }
    }

    fn fit(
        &self,
        inputs: &ModelInputs,
        targets: &[f64],
        split: &EdgeSplit,
        objective: Objective,
        variant: u64,
    ) -> Result<Trained> {
        let c = self.config;
        let tag = match objective {
            Objective::MeanOnly => 0,
            Objective::MeanPlusQuantiles { .. } => 1,
        };
        let coords = [self.run as u64, tag, variant];
        let mut model = EdgeModel::new(
            self.model_config(),
            objective,
            inputs.feature_dim(),
            derive_seed(c.seed, &[&[stream::INIT][..], &coords].concat()),
        )?;
        let tc = TrainConfig {
            adam: AdamConfig {
                lr: c.learning_rate,
                ..AdamConfig::default()
            },
            max_epochs: c.max_epochs,
            patience: c.patience,
            seed: derive_seed(c.seed, &[&[stream::DROPOUT][..], &coords].concat()),
        };
        let log = train(&mut model, inputs, targets, split, &tc)?;
        Ok(Trained {
            model,
            epochs: log.epochs.len(),
            best_val: log.best_val_loss,
        })
    }

    /// Predictions on every edge from freshly trained models.
    fn predict_all(
        &self,
        inputs: &ModelInputs,
        targets: &[f64],
        split: &EdgeSplit,
        variant: u64,
        summary: &mut RunSummary,
    ) -> Result<Predictions> {
        let c = self.config;
        let all: Vec<usize> = (0..self.graph.num_edges()).collect();
        let mut checkpoints = Vec::new();
        let meta = |objective: Objective| {
            let mut m = BTreeMap::new();
            m.insert(
                "config_hash".to_string(),
                serde_json::json!(self.config_hash),
            );
            m.insert("seed".to_string(), serde_json::json!(c.seed));
            m.insert("dataset".to_string(), serde_json::json!(self.dataset));
            m.insert("model".to_string(), serde_json::json!(self.model.as_str()));
            m.insert("layer".to_string(), serde_json::json!(self.layer.as_str()));
            m.insert(
                "objective".to_string(),
                serde_json::json!(objective.as_str()),
            );
            m.insert("run".to_string(), serde_json::json!(self.run));
            m
        };
        let needs_mean = c.methods.iter().any(|m| !m.uses_quantiles());
        let needs_quantiles = c.methods.iter().any(|m| m.uses_quantiles());
        let mean_set = if needs_mean {
            let t = self.fit(inputs, targets, split, Objective::MeanOnly, variant)?;
            summary.epochs.insert("mean".into(), t.epochs);
            summary.best_val_loss.insert("mean".into(), t.best_val);
            let p = t.model.predict(inputs, &all)?;
            let spread = if c.methods.contains(&Method::CpErc) {
                let seed = derive_seed(c.seed, &[stream::MC, self.run as u64, variant]);
                Some(t.model.mc_dropout(inputs, &all, c.mc_samples, seed)?.std)
            } else {
                None
            };
            checkpoints.push((
                objective_tag(Objective::MeanOnly).to_string(),
                Checkpoint::from_params(t.model.params(), meta(Objective::MeanOnly)),
            ));
            Some(PredictionSet {
                mean: p.mean,
                lower: None,
                upper: None,
                spread,
            })
        } else {
            None
        };
        let quantile_set = if needs_quantiles {
            let objective = Objective::MeanPlusQuantiles { alpha: c.alpha };
            let t = self.fit(inputs, targets, split, objective, variant)?;
            summary.epochs.insert("quantile".into(), t.epochs);
            summary.best_val_loss.insert("quantile".into(), t.best_val);
            let p = t.model.predict(inputs, &all)?;
            checkpoints.push((
                objective_tag(objective).to_string(),
                Checkpoint::from_params(t.model.params(), meta(objective)),
            ));
            Some(PredictionSet {
                mean: p.mean,
                lower: p.lower,
                upper: p.upper,
                spread: None,
            })
        } else {
            None
        };
        Ok((mean_set, quantile_set, checkpoints))
    }

    fn execute(&self) -> Result<RunOutcome> {
        let c = self.config;
        let g = self.graph;
        let split_seed = derive_seed(c.seed, &[stream::SPLIT, self.run as u64]);
        let split = split_edges(
            g,
            (
                c.train_fraction,
                c.val_fraction,
                1.0 - c.train_fraction - c.val_fraction,
            ),
            c.calib_ratio,
            split_seed,
        )?;
        let mut scaler = WeightScaler::fit_train(g, &split);
        if !c.center_targets {
            scaler.mean = 0.0;
        }
        let targets: Vec<f64> = g.weights().iter().map(|&w| scaler.standardize(w)).collect();
        let adj = fill_weights(
            g,
            &split,
            c.fill_mode,
            derive_seed(c.seed, &[stream::FILL, self.run as u64]),
        )?;
        let inputs = ModelInputs::build(g, &adj, &self.model_config())?;
        let mut summary = RunSummary {
            model: self.model.as_str().to_string(),
            layer: self.layer.as_str().to_string(),
            run: self.run,
            split_seed,
            status: "ok".to_string(),
            epsilon: None,
            epochs: BTreeMap::new(),
            best_val_loss: BTreeMap::new(),
            num_train: split.train.len(),
            num_val: split.val.len(),
            num_calib_test: split.calib.len() + split.test.len(),
        };

        let (mut mean_set, mut quantile_set, mut ckpts) =
            self.predict_all(&inputs, &targets, &split, 0, &mut summary)?;
        let mut records = Vec::new();
        let mut artifacts = Vec::new();
        for s in 1..=c.resplits {
            let resplit = split.resplit(derive_seed(
                c.seed,
                &[stream::RESPLIT, self.run as u64, s as u64],
            ))?;
            debug_assert_eq!(resplit.train, split.train);
            debug_assert_eq!(resplit.val, split.val);
            if c.retrain_per_resplit && s > 1 {
                let retrained =
                    self.predict_all(&inputs, &targets, &split, s as u64, &mut summary)?;
                (mean_set, quantile_set, ckpts) = retrained;
            }
            let y_of = |idx: &[usize]| idx.iter().map(|&e| targets[e]).collect::<Vec<_>>();
            let (y_val, y_cal, y_test) =
                (y_of(&split.val), y_of(&resplit.calib), y_of(&resplit.test));
            let test_features = self.edge_features.gather_rows(&resplit.test);
            let wsc_cfg = WscConfig {
                num_directions: c.wsc_directions,
                seed: derive_seed(c.seed, &[stream::WSC, self.run as u64, s as u64]),
                ..WscConfig::default()
            };
            for &method in &c.methods {
                let preds = if method.uses_quantiles() {
                    &quantile_set
                } else {
                    &mean_set
                };
                let preds = preds.as_ref().expect("trained for every configured method");
                let mut cal = Calibrator::new(method, c.alpha)?;
                cal.eta = c.eta;
                if method == Method::CpErc {
                    let eps = select_epsilon(&preds.select(&split.val), &y_val, c.alpha)?;
                    summary.epsilon = Some(eps);
                    cal = cal.with_epsilon(eps)?;
                }
                let calibration = cal.calibrate(&preds.select(&resplit.calib), &y_cal)?;
                let test_preds = preds.select(&resplit.test);
                let intervals = cal.intervals(calibration.qhat, &test_preds)?;
                let wsc_input =
                    (resplit.test.len() >= MIN_WSC_POINTS).then_some((&test_features, &wsc_cfg));
                let report = EvaluationReport::evaluate(&intervals, &y_test, wsc_input)?;
                records.push(ResplitRecord {
                    dataset: self.dataset.to_string(),
                    model: self.model.as_str().to_string(),
                    layer: self.layer.as_str().to_string(),
                    method: method.as_str().to_string(),
                    run: self.run,
                    resplit: s,
                    n_calib: resplit.calib.len(),
                    n_test: resplit.test.len(),
                    qhat: calibration.qhat,
                    coverage: report.coverage,
                    inefficiency: report.inefficiency,
                    inefficiency_raw: scaler.unscale_width(report.inefficiency),
                    wsc: report.wsc,
                    wsc_eval_coverage: report.wsc_eval_coverage,
                });
                if s == 1 {
                    let all: Vec<usize> = (0..g.num_edges()).collect();
                    let all_preds = preds.select(&all);
                    let node_xy = (0..g.num_nodes())
                        .map(|i| {
                            let row = g.node_features().row(i);
                            (
                                row.first().copied().unwrap_or(0.0),
                                row.get(1).copied().unwrap_or(0.0),
                            )
                        })
                        .collect();
                    let predicted = if method.uses_quantiles() {
                        let (lo, hi) = (
                            all_preds.lower.as_ref().unwrap(),
                            all_preds.upper.as_ref().unwrap(),
                        );
                        lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
                    } else {
                        all_preds.mean.clone()
                    };
                    artifacts.push(RunArtifact {
                        dataset: self.dataset.to_string(),
                        model: self.model.as_str().to_string(),
                        layer: self.layer.as_str().to_string(),
                        method: method.as_str().to_string(),
                        run: self.run,
                        config_hash: self.config_hash.to_string(),
                        seed: c.seed,
                        scaler,
                        qhat: calibration.qhat,
                        edges: g.edges().to_vec(),
                        node_xy,
                        roles: resplit
                            .roles(g.num_edges())
                            .iter()
                            .map(|r| r.as_str().to_string())
                            .collect(),
                        truth: targets.clone(),
                        predicted,
                        intervals: cal.intervals(calibration.qhat, &all_preds)?,
                    });
                }
            }
        }
        let prefix = format!("{}_{}", self.model.as_str(), self.layer.as_str());
        let checkpoints = ckpts
            .into_iter()
            .map(|(tag, ck)| (self.run, format!("checkpoint_{prefix}_{tag}"), ck))
            .collect();
        Ok(RunOutcome {
            summary,
            records,
            artifacts,
            checkpoints,
        })
    }
}

/// Runs the protocol on an already loaded graph. Runs execute in parallel;
/// every random stream is derived from (seed, run, resplit), and results are
/// merged in a fixed order, so outputs do not depend on scheduling.
pub fn run_on_graph(
    config: &ExperimentConfig,
    dataset: &str,
    graph: &Graph,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let config_hash = config.hash();
    let edge_features = graph.edge_features();
    let mut tasks = Vec::new();
    for &model in &config.models {
        for &layer in &config.layers {
            for run in 1..=config.runs {
                tasks.push((model, layer, run));
            }
        }
    }
    let outcomes: Vec<(ModelKind, LayerKind, usize, Result<RunOutcome>)> = tasks
        .par_iter()
        .map(|&(model, layer, run)| {
            let ctx = RunContext {
                config,
                config_hash: &config_hash,
                dataset,
                graph,
                edge_features: &edge_features,
                model,
                layer,
                run,
            };
            (model, layer, run, ctx.execute())
        })
        .collect();

    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut artifacts = Vec::new();
    let mut checkpoints = Vec::new();
    for (model, layer, run, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                records.extend(o.records);
                runs.push(o.summary);
                artifacts.extend(o.artifacts);
                checkpoints.extend(o.checkpoints);
            }
            Err(Error::Diverged { epoch, msg }) => {
                log::warn!(
                    "{} {} run {run} diverged at epoch {epoch} ({msg}); excluded",
                    model.as_str(),
                    layer.as_str()
                );
                runs.push(RunSummary {
                    model: model.as_str().to_string(),
                    layer: layer.as_str().to_string(),
                    run,
                    split_seed: derive_seed(config.seed, &[stream::SPLIT, run as u64]),
                    status: format!("diverged at epoch {epoch}: {msg}"),
                    epsilon: None,
                    epochs: BTreeMap::new(),
                    best_val_loss: BTreeMap::new(),
                    num_train: 0,
                    num_val: 0,
                    num_calib_test: 0,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(Error::Diverged {
            epoch: 0,
            msg: "every run diverged".into(),
        });
    }
    let table = ResultsTable::from_records(&records, &config_hash, config.seed);
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash,
        dataset: dataset.to_string(),
        num_nodes: graph.num_nodes(),
        num_edges: graph.num_edges(),
        table,
        records,
        runs,
        artifacts,
        checkpoints,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Name of the plot-data file for an artifact. The first configured
/// (model, layer, method) of each run gets the plain `edges_<run>.csv`.
pub fn edges_file_name(artifact: &RunArtifact, primary: bool) -> String {
    if primary {
        format!("edges_{}.csv", artifact.run)
    } else {
        format!(
            "edges_{}_{}_{}_{}.csv",
            artifact.run, artifact.model, artifact.layer, artifact.method
        )
    }
}

/// Writes `edges_*.csv` for every artifact into `out_dir`.
pub fn write_plot_data(
    artifacts: &[RunArtifact],
    primary: Option<(&str, &str, &str)>,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for a in artifacts {
        let is_primary = primary == Some((a.model.as_str(), a.layer.as_str(), a.method.as_str()));
        let name = edges_file_name(a, is_primary);
        write(&out_dir.join(&name), &emit_plot_data(a)?)?;
        names.push(name);
        if is_primary {
            let extra = edges_file_name(a, false);
            write(&out_dir.join(&extra), &emit_plot_data(a)?)?;
            names.push(extra);
        }
    }
    Ok(names)
}

/// Persists tables, per-resplit records, summaries, checkpoints, run
/// artifacts and plot data under `out_dir`.
pub fn write_outputs(output: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    write(&out_dir.join("config.txt"), &output.config.to_text())?;
    write(
        &out_dir.join("results.csv"),
        &render_table(&output.table, TableFormat::Csv)?,
    )?;
    write(
        &out_dir.join("results.md"),
        &render_table(&output.table, TableFormat::Markdown)?,
    )?;

    let mut sorted = output.records.clone();
    sorted.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.method, &a.layer, a.run, a.resplit)
            .cmp(&(&b.dataset, &b.model, &b.method, &b.layer, b.run, b.resplit))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "model",
        "method",
        "layer",
        "run",
        "resplit",
        "n_calib",
        "n_test",
        "qhat",
        "coverage",
        "inefficiency",
        "inefficiency_raw",
        "wsc",
        "wsc_eval_coverage",
        "config_hash",
        "seed",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &sorted {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.method.clone(),
            r.layer.clone(),
            r.run.to_string(),
            r.resplit.to_string(),
            r.n_calib.to_string(),
            r.n_test.to_string(),
            r.qhat.to_string(),
            r.coverage.to_string(),
            r.inefficiency.to_string(),
            r.inefficiency_raw.to_string(),
            opt(r.wsc),
            opt(r.wsc_eval_coverage),
            output.config_hash.clone(),
            output.config.seed.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write(
        &out_dir.join("resplits.csv"),
        &String::from_utf8(bytes).expect("utf-8"),
    )?;

    let wsc = WscConfig {
        num_directions: output.config.wsc_directions,
        ..WscConfig::default()
    };
    let summary = serde_json::json!({
        "config_hash": output.config_hash,
        "seed": output.config.seed,
        "dataset": output.dataset,
        "num_nodes": output.num_nodes,
        "num_edges": output.num_edges,
        "config": output.config,
        "wsc": {
            "num_directions": wsc.num_directions,
            "deltas": wsc.deltas,
            "tuning_fraction": wsc.tuning_fraction,
            "quantile_levels": wsc.quantile_levels,
            "min_points": MIN_WSC_POINTS,
        },
        "results": output.table.rows,
        "runs": output.runs,
    });
    write(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;

    for a in &output.artifacts {
        let dir = out_dir.join(format!("run_{}", a.run));
        create_dir(&dir)?;
        a.save(&dir.join(format!(
            "artifact_{}_{}_{}.json",
            a.model, a.layer, a.method
        )))?;
    }
    for (run, stem, ck) in &output.checkpoints {
        let dir = out_dir.join(format!("run_{run}"));
        create_dir(&dir)?;
        ck.save(&dir.join(format!("{stem}.json")))?;
    }
    let c = &output.config;
    let primary = (
        c.models[0].as_str(),
        c.layers[0].as_str(),
        c.methods[0].as_str(),
    );
    write_plot_data(&output.artifacts, Some(primary), out_dir)?;
    Ok(())
}

/// Regenerates plot data from the run artifacts stored under `run_dir`.
pub fn plot_data_from_dir(run_dir: &Path) -> Result<Vec<String>> {
    let config = ExperimentConfig::load(&run_dir.join("config.txt"))?;
    let mut paths = Vec::new();
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    for entry in entries {
        let dir = entry.map_err(|e| Error::io(run_dir, e))?.path();
        let is_run = dir.is_dir()
            && dir
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_"));
        if !is_run {
            continue;
        }
        for f in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = f.map_err(|e| Error::io(&dir, e))?.path();
            if p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("artifact_"))
            {
                paths.push(p);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!(
            "no run artifacts under {}",
            run_dir.display()
        )));
    }
    let artifacts: Vec<RunArtifact> = paths
        .iter()
        .map(|p| RunArtifact::load(p))
        .collect::<Result<_>>()?;
    let primary = (
        config.models[0].as_str(),
        config.layers[0].as_str(),
        config.methods[0].as_str(),
    );
    write_plot_data(&artifacts, Some(primary), run_dir)
}

/// Role names in the order the plot data uses them.
pub fn role_names() -> [&'static str; 4] {
    [
        EdgeRole::Train,
        EdgeRole::Val,
        EdgeRole::Calib,
        EdgeRole::Test,
    ]
    .map(|r| r.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            models: vec![ModelKind::Gae, ModelKind::DiGae, ModelKind::Lgnn],
            runs: 2,
            resplits: 3,
            synthetic_size: 6,
            hidden_dim: 8,
            embed_dim: 4,
            max_epochs: 30,
            patience: 10,
            mc_samples: 5,
            wsc_directions: 20,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn every_combination_yields_a_row_and_resplit_records() {
        let c = quick();
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.table.rows.len(), 3 * 5);
        assert_eq!(out.records.len(), 3 * 5 * 2 * 3);
        assert!(out.runs.iter().all(|r| r.status == "ok"));
        for r in &out.records {
            assert!((0.0..=1.0).contains(&r.coverage));
            assert!(r.inefficiency >= 0.0);
            if let (Some(w), Some(m)) = (r.wsc, r.wsc_eval_coverage) {
                assert!(w <= m + 1e-12);
            }
        }
        for r in out.records.iter().filter(|r| r.method == "qr") {
            assert_eq!(r.qhat, 0.0);
        }
    }

    #[test]
    fn train_and_val_edges_never_reach_calibration() {
        let c = quick();
        let out = run_experiment(&c).unwrap();
        for a in &out.artifacts {
            let train = a.roles.iter().filter(|r| *r == "train").count();
            let s = out
                .runs
                .iter()
                .find(|s| s.run == a.run && s.model == a.model)
                .unwrap();
            assert_eq!(train, s.num_train);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let c = ExperimentConfig {
            methods: vec![Method::Cp, Method::CpErc],
            ..quick()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let a = one.install(|| run_experiment(&c)).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn outputs_are_written_and_plot_data_regenerates() {
        let c = ExperimentConfig { runs: 1, ..quick() };
        let out = run_experiment(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&out, dir.path()).unwrap();
        for f in [
            "results.csv",
            "results.md",
            "resplits.csv",
            "summary.json",
            "config.txt",
            "edges_1.csv",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let before = std::fs::read_to_string(dir.path().join("edges_1.csv")).unwrap();
        std::fs::remove_file(dir.path().join("edges_1.csv")).unwrap();
        plot_data_from_dir(dir.path()).unwrap();
        let after = std::fs::read_to_string(dir.path().join("edges_1.csv")).unwrap();
        assert_eq!(before, after);
        assert!(
            ExperimentConfig::load(&dir.path().join("config.txt"))
                .unwrap()
                .hash()
                == out.config_hash
        );
    }
}
