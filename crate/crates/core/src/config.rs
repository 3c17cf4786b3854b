//! Run configuration for the command-line tool.
//!
//! A config file is a flat TOML table whose keys mirror the long flag names
//! (with `-` written as `_`). Flags override file values. Unknown keys are
//! rejected, and every value is checked before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvOptions, SyntheticParams, TabularParams};
use crate::error::{Error, Result};
use crate::influence::{InfluenceConfig, LossAggregation};
use crate::pipeline::{Pretrain, PruneStrategy, StrategyKind, SweepConfig, DEFAULT_FRACTIONS};
use crate::surrogates::SurrogateKind;
use crate::training::{Optimizer, TrainConfig};

/// Synthetic generator used when no `data` path is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// One-dimensional Gaussian cells with the ordered means `mu`.
    #[default]
    Gaussian,
    /// The census-style tabular stand-in.
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(u64),
    Many(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub coerce_labels: bool,
    pub balance: bool,
    pub generator: Generator,
    pub n_per_cell: usize,
    pub mu: [f64; 4],
    pub sigma: f64,
    pub dim: usize,

    pub surrogate: String,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub seed: OneOrMany,
    pub train_fraction: f64,

    /// Step size of the counterfactual update; defaults to `lr`.
    pub eta: Option<f64>,
    pub tile_size: usize,
    pub loss_aggregation: LossAggregation,

    pub fractions: Vec<f64>,
    pub strategies: Vec<String>,
    pub order_flip: bool,
    pub pretrain: Pretrain,

    pub snapshot: Option<PathBuf>,
    pub pairs: usize,
    pub threshold: f64,

    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticParams::default();
        let train = TrainConfig::default();
        Self {
            data: None,
            coerce_labels: false,
            balance: false,
            generator: Generator::Gaussian,
            n_per_cell: synth.n_per_cell,
            mu: [synth.mu.z0_neg, synth.mu.z1_neg, synth.mu.z0_pos, synth.mu.z1_pos],
            sigma: synth.sigma,
            dim: TabularParams::default().dim,
            surrogate: SurrogateKind::RelaxedDp.name().to_string(),
            lambda: train.lambda,
            lr: train.learning_rate,
            epochs: train.epochs,
            batch: train.batch_size,
            hidden: train.hidden,
            init_scale: train.init_scale,
            seed: OneOrMany::One(0),
            train_fraction: 0.8,
            eta: None,
            tile_size: 256,
            loss_aggregation: LossAggregation::Aggregated,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            strategies: StrategyKind::ALL.iter().map(|s| s.name().to_string()).collect(),
            order_flip: false,
            pretrain: Pretrain::Regularized,
            snapshot: None,
            pairs: 1000,
            threshold: 0.95,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // unknown keys are quoted in the message; otherwise use the line the error points at
            let quoted = msg.starts_with("unknown field").then(|| msg.split('`').nth(1)).flatten();
            let from_span = e.span().and_then(|span| {
                let line_start = text[..span.start].rfind('\n').map_or(0, |p| p + 1);
                let line = &text[line_start..];
                line.split_once('=').map(|(k, _)| k.trim().to_string())
            });
            let key = quoted
                .map(str::to_string)
                .or(from_span)
                .unwrap_or_else(|| "<document>".to_string());
            Error::config(key, msg)
        })
    }

    /// Reads a TOML config, or the `config` object of a run manifest when
    /// the file has a `.json` extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_manifest_str(&text);
        }
        Self::from_toml_str(&text)
    }

    pub fn from_manifest_str(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let config = value
            .get_mut("config")
            .map(serde_json::Value::take)
            .ok_or_else(|| Error::config("config", "manifest has no `config` object"))?;
        serde_json::from_value(config).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seed {
            OneOrMany::One(s) => vec![*s],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    /// First configured seed, used by single-run commands.
    pub fn primary_seed(&self) -> u64 {
        self.seeds().first().copied().unwrap_or(0)
    }

    pub fn surrogate_kind(&self) -> Result<SurrogateKind> {
        self.surrogate
            .parse()
            .map_err(|e: Error| Error::config("surrogate", e.to_string()))
    }

    pub fn prune_strategies(&self) -> Result<Vec<PruneStrategy>> {
        self.strategies
            .iter()
            .map(|s| {
                let kind: StrategyKind = s.parse().map_err(|e: Error| Error::config("strategies", e.to_string()))?;
                Ok(PruneStrategy {
                    kind,
                    order_flip: self.order_flip,
                })
            })
            .collect()
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        SyntheticParams {
            mu: crate::data::CellMeans::from_array(self.mu),
            sigma: self.sigma,
            n_per_cell: self.n_per_cell,
        }
    }

    pub fn tabular_params(&self) -> TabularParams {
        TabularParams {
            n_per_cell: self.n_per_cell,
            dim: self.dim,
        }
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            coerce_labels: self.coerce_labels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            lambda: self.lambda,
            seed: self.primary_seed(),
            init_scale: self.init_scale,
            hidden: self.hidden,
            optimizer: Optimizer::Adam,
            ..TrainConfig::default()
        }
    }

    /// Influence settings for a training set of `n` examples.
    pub fn influence_config(&self, n: usize) -> InfluenceConfig {
        InfluenceConfig {
            eta: self.eta.unwrap_or(self.lr),
            lambda: self.lambda,
            n,
            tile_size: self.tile_size,
            loss_aggregation: self.loss_aggregation,
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            fractions: self.fractions.clone(),
            strategies: self.prune_strategies()?,
            seeds: self.seeds(),
            train: self.train_config(),
            surrogate: self.surrogate_kind()?,
            lambda: self.lambda,
            train_fraction: self.train_fraction,
            pretrain: self.pretrain,
            tile_size: self.tile_size,
            loss_aggregation: self.loss_aggregation,
        })
    }

    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        self.surrogate_kind()?;
        self.prune_strategies()?;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("sigma", self.sigma)?;
        if let Some(eta) = self.eta {
            positive("eta", eta)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be >= 0 and finite, got {}", self.lambda)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be >= 0 and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.n_per_cell == 0 {
            return Err(Error::config("n_per_cell", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.tile_size == 0 {
            return Err(Error::config("tile_size", "must be at least 1"));
        }
        if self.pairs < 2 {
            return Err(Error::config("pairs", "must be at least 2"));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold", "must lie in [-1, 1]"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if self.seeds().is_empty() {
            return Err(Error::config("seed", "at least one seed is required"));
        }
        if self.fractions.is_empty() {
            return Err(Error::config("fractions", "at least one keep fraction is required"));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::config("fractions", format!("{f} is outside (0, 1]")));
        }
        self.synthetic_params()
            .validate()
            .map_err(|e| Error::config("mu", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut view = serde_json::to_value(self).expect("run config serializes to JSON");
        if let Some(map) = view.as_object_mut() {
            map.remove("out");
        }
        hex::encode(Sha256::digest(view.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.hidden, 64);
        assert_eq!(c.train_fraction, 0.8);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        match RunConfig::from_toml_str("lambda = 1.0\nlamda = 2.0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lamda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_mismatch_is_error() {
        match RunConfig::from_toml_str("lambda = 1.0\nepochs = \"many\"\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "epochs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_surrogate_lists_kinds() {
        let c = RunConfig {
            surrogate: "xyz".into(),
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Config { key, msg }) => {
                assert_eq!(key, "surrogate");
                assert!(msg.contains("dp, tpr, fpr, eo, cov, mine"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constraint_violations_name_key() {
        let cases = [
            ("lr = -1.0", "lr"),
            ("epochs = 0", "epochs"),
            ("fractions = [0.0]", "fractions"),
            ("mu = [1.0, 0.0, 2.0, 3.0]", "mu"),
            ("strategies = [\"best\"]", "strategies"),
        ];
        for (text, key) in cases {
            let c = RunConfig::from_toml_str(text).unwrap();
            match c.validate() {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn seeds_accept_scalar_or_list() {
        assert_eq!(RunConfig::from_toml_str("seed = 7").unwrap().seeds(), vec![7]);
        assert_eq!(RunConfig::from_toml_str("seed = [1, 2]").unwrap().seeds(), vec![1, 2]);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = RunConfig {
            lambda: 2.5,
            seed: OneOrMany::Many(vec![3, 4]),
            data: Some("x.csv".into()),
            ..Default::default()
        };
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let moved = RunConfig { out: "elsewhere".into(), ..c.clone() };
        assert_eq!(moved.hash(), c.hash());
        assert_ne!(RunConfig { lambda: 2.0, ..c.clone() }.hash(), c.hash());
    }

    #[test]
    fn manifest_config_round_trip() {
        let c = RunConfig {
            epochs: 3,
            seed: OneOrMany::Many(vec![1, 2]),
            ..Default::default()
        };
        let mut view = serde_json::to_value(&c).unwrap();
        view.as_object_mut().unwrap().remove("out");
        let manifest = serde_json::json!({ "command": "train", "config": view }).to_string();
        let back = RunConfig::from_manifest_str(&manifest).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_manifest_str("{}").is_err());
    }
}
