//! Experiment configuration: flat `key = value` files, validation and a
//! stable hash for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conformal::Method;
use crate::graph::FillMode;
use crate::models::{LayerKind, ModelKind, Propagation};
use crate::{Error, Result};

/// Value of `dataset_dir` that selects the built-in synthetic road network.
pub const SYNTHETIC_DATASET: &str = "synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Directory with `*_net.tntp`, `*_flow.tntp` and `*_node.tntp`, or
    /// `synthetic`.
    pub dataset_dir: PathBuf,
    pub methods: Vec<Method>,
    pub models: Vec<ModelKind>,
    pub layers: Vec<LayerKind>,
    pub alpha: f64,
    pub fill_mode: FillMode,
    pub runs: usize,
    pub resplits: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Share of the calibration+test bucket that goes to calibration.
    pub calib_ratio: f64,
    pub propagation: Propagation,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub mc_samples: usize,
    pub wsc_directions: usize,
    pub eta: f64,
    pub retrain_per_resplit: bool,
    /// Subtract the train mean before dividing by the train std. When off,
    /// targets are only rescaled and keep their sign.
    pub center_targets: bool,
    /// Grid size of the synthetic network (`synthetic` dataset only).
    pub synthetic_size: usize,
    /// Drop zone-connector links when reading TNTP files.
    pub drop_zone_connectors: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_dir: PathBuf::from(SYNTHETIC_DATASET),
            methods: vec![Method::Cp, Method::Cqr],
            models: vec![ModelKind::Gae],
            layers: vec![LayerKind::GraphConv],
            alpha: 0.05,
            fill_mode: FillMode::Mean,
            runs: 10,
            resplits: 100,
            seed: 0,
            out_dir: PathBuf::from("out"),
            train_fraction: 0.5,
            val_fraction: 0.1,
            calib_ratio: 0.5,
            propagation: Propagation::Normalized,
            num_layers: 2,
            hidden_dim: 32,
            embed_dim: 16,
            dropout: 0.2,
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 100,
            mc_samples: 1000,
            wsc_directions: 1000,
            eta: crate::conformal::DEFAULT_ETA,
            retrain_per_resplit: false,
            center_targets: false,
            synthetic_size: 12,
            drop_zone_connectors: true,
        }
    }
}

fn parse_list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config("empty list".into()));
    }
    Ok(items)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got '{v}'"
        ))),
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> &'static str) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one field from its textual form. `method`, `model` and `layer`
    /// accept comma-separated lists.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset_dir" | "dataset" => self.dataset_dir = PathBuf::from(v),
            "method" | "methods" => self.methods = parse_list(v)?,
            "model" | "models" => self.models = parse_list(v)?,
            "layer" | "layers" => self.layers = parse_list(v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "fill_mode" => self.fill_mode = v.parse()?,
            "runs" => self.runs = parse_num(key, v)?,
            "resplits" => self.resplits = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "train_fraction" => self.train_fraction = parse_num(key, v)?,
            "val_fraction" => self.val_fraction = parse_num(key, v)?,
            "calib_ratio" => self.calib_ratio = parse_num(key, v)?,
            "propagation" => self.propagation = v.parse()?,
            "num_layers" => self.num_layers = parse_num(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "mc_samples" => self.mc_samples = parse_num(key, v)?,
            "wsc_directions" => self.wsc_directions = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "retrain_per_resplit" => self.retrain_per_resplit = parse_bool(key, v)?,
            "center_targets" => self.center_targets = parse_bool(key, v)?,
            "synthetic_size" => self.synthetic_size = parse_num(key, v)?,
            "drop_zone_connectors" => self.drop_zone_connectors = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored; a repeated key is an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            if seen.insert(key.to_string(), i + 1).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            config.set(key, value).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical `key = value` listing; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let fields = self.fields();
        fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset_dir", self.dataset_dir.display().to_string()),
            ("method", join(&self.methods, Method::as_str)),
            ("model", join(&self.models, ModelKind::as_str)),
            ("layer", join(&self.layers, LayerKind::as_str)),
            ("alpha", self.alpha.to_string()),
            ("fill_mode", self.fill_mode.as_str().to_string()),
            ("runs", self.runs.to_string()),
            ("resplits", self.resplits.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("calib_ratio", self.calib_ratio.to_string()),
            (
                "propagation",
                match self.propagation {
                    Propagation::Raw => "raw".to_string(),
                    Propagation::Normalized => "normalized".to_string(),
                },
            ),
            ("num_layers", self.num_layers.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("wsc_directions", self.wsc_directions.to_string()),
            ("eta", self.eta.to_string()),
            ("retrain_per_resplit", self.retrain_per_resplit.to_string()),
            ("center_targets", self.center_targets.to_string()),
            ("synthetic_size", self.synthetic_size.to_string()),
            (
                "drop_zone_connectors",
                self.drop_zone_connectors.to_string(),
            ),
        ]
    }

    /// First 16 hex digits of the SHA-256 of the canonical listing, with
    /// `out_dir` left out so that moving outputs does not change it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.fields() {
            if k != "out_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset_dir.as_os_str() == SYNTHETIC_DATASET
    }

    /// Checks every field; called before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return err(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.runs == 0 || self.resplits == 0 {
            return err("runs and resplits must be positive".into());
        }
        let (tr, va) = (self.train_fraction, self.val_fraction);
        if !(tr > 0.0 && va >= 0.0 && tr + va < 1.0) {
            return err(format!(
                "fractions train={tr}, val={va} leave no calibration/test bucket"
            ));
        }
        if !(self.calib_ratio > 0.0 && self.calib_ratio < 1.0) {
            return err(format!("calib_ratio {} outside (0, 1)", self.calib_ratio));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return err("hidden_dim and embed_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            return err("max_epochs must be positive".into());
        }
        let needs_mc = self.methods.contains(&Method::CpErc);
        if needs_mc && self.mc_samples < 2 {
            return err("cp-erc needs mc_samples ≥ 2".into());
        }
        if needs_mc && self.dropout == 0.0 {
            return err("cp-erc needs dropout > 0 for a nonzero MC spread".into());
        }
        if needs_mc && self.val_fraction == 0.0 {
            return err(
                "cp-erc selects epsilon on validation edges; val_fraction must be positive".into(),
            );
        }
        if self.wsc_directions == 0 {
            return err("wsc_directions must be positive".into());
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return err(format!("eta {} must be positive", self.eta));
        }
        if self.is_synthetic() && self.synthetic_size < 2 {
            return err("synthetic_size must be at least 2".into());
        }
        for (name, empty) in [
            ("method", self.methods.is_empty()),
            ("model", self.models.is_empty()),
            ("layer", self.layers.is_empty()),
        ] {
            if empty {
                return err(format!("{name} list is empty"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_overrides_defaults() {
        let c = ExperimentConfig::parse(
            "# comment\nmethod = cp, cqr-erc\nmodel=digae\nalpha = 0.1  # trailing\n\nruns = 3\nretrain_per_resplit = yes\n",
        )
        .unwrap();
        assert_eq!(c.methods, vec![Method::Cp, Method::CqrErc]);
        assert_eq!(c.models, vec![ModelKind::DiGae]);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.runs, 3);
        assert!(c.retrain_per_resplit);
        assert_eq!(c.resplits, 100);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("method", "cp,cp-erc,qr").unwrap();
        c.set("fill_mode", "bootstrap").unwrap();
        c.set("alpha", "0.1").unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_settings_but_not_out_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn errors_point_at_lines() {
        match ExperimentConfig::parse("runs = 2\nbogus = 1\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("runs 2"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("runs=1\nruns=2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(ExperimentConfig::parse("model = transformer").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(ExperimentConfig::default().validate().is_ok());
        for (k, v) in [
            ("alpha", "0"),
            ("alpha", "1.5"),
            ("runs", "0"),
            ("calib_ratio", "1"),
            ("train_fraction", "0.95"),
            ("dropout", "1"),
            ("learning_rate", "-1"),
            ("eta", "0"),
        ] {
            let mut c = ExperimentConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        let mut c = ExperimentConfig::default();
        c.set("method", "cp-erc").unwrap();
        c.set("dropout", "0").unwrap();
        assert!(c.validate().is_err());
    }
}
