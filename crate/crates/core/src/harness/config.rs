use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{FederationSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::fedcore::{Algorithm, OrderMode};
use crate::models::{BatchSize, LocalTrainConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub algorithm: Algorithm,
    pub order_mode: OrderMode,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub eval_every: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedFv,
            order_mode: OrderMode::LossAscending,
            seeds: vec![0, 1, 2, 3, 4],
            rounds: 300,
            eval_every: 10,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedFvSection {
    pub alpha: f64,
    pub tau: usize,
    /// Fraction of clients sampled per round; `m = round(frac * K)`, at least 1.
    pub sample_frac: f64,
    pub dropout: f64,
}

impl Default for FedFvSection {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tau: 10,
            sample_frac: 0.1,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    SoftmaxRegression,
    Mlp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelChoice,
    /// Hidden width; used by `mlp2` only.
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelChoice::SoftmaxRegression,
            hidden: 32,
        }
    }
}

impl ModelSection {
    pub fn model_kind(&self) -> ModelKind {
        match self.kind {
            ModelChoice::SoftmaxRegression => ModelKind::SoftmaxRegression,
            ModelChoice::Mlp2 => ModelKind::Mlp2 {
                hidden: self.hidden,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub examples_per_class: usize,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub spread_skew: f64,
    /// IDX image and label files, for `source = "idx"`.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub num_clients: usize,
    pub shards_per_client: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes: 10,
            examples_per_class: 500,
            feature_dim: 32,
            cluster_spread: 0.4,
            spread_skew: 0.8,
            images: None,
            labels: None,
            num_clients: 100,
            shards_per_client: 2,
        }
    }
}

impl DataSection {
    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            num_classes: self.num_classes,
            examples_per_class: self.examples_per_class,
            feature_dim: self.feature_dim,
            cluster_spread: self.cluster_spread,
            spread_skew: self.spread_skew,
            seed,
        }
    }

    pub fn federation_spec(&self, seed: u64) -> FederationSpec {
        FederationSpec {
            num_clients: self.num_clients,
            shards_per_client: self.shards_per_client,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: BatchSize::Full,
            learning_rate: 0.1,
        }
    }
}

impl TrainSection {
    pub fn local_config(&self, seed: u64) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            shuffle_seed: seed,
        }
    }
}

/// Everything an experiment needs. Every section and key is optional in the
/// file; missing ones take the defaults below.
///
/// ```toml
/// [run]
/// algorithm = "fedfv"          # or "fedavg"
/// order_mode = "loss_ascending" # "random", "reverse"
/// seeds = [0, 1, 2, 3, 4]
/// rounds = 300
/// eval_every = 10
/// output_dir = "out"
///
/// [fedfv]
/// alpha = 0.1
/// tau = 10
/// sample_frac = 0.1
/// dropout = 0.0
///
/// [model]
/// kind = "softmax_regression"  # or "mlp2"
/// hidden = 32
///
/// [data]
/// source = "synthetic"         # or "idx" with images/labels paths
/// num_classes = 10
/// examples_per_class = 500
/// feature_dim = 32
/// cluster_spread = 0.4
/// spread_skew = 0.8
/// num_clients = 100
/// shards_per_client = 2
///
/// [train]
/// epochs = 1
/// batch_size = "full"          # or an integer
/// learning_rate = 0.1
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub fedfv: FedFvSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
}

fn check(ok: bool, field: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, reason))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    /// Clients sampled per round.
    pub fn sample_count(&self) -> usize {
        ((self.fedfv.sample_frac * self.data.num_clients as f64).round() as usize).max(1)
    }

    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        check(!r.seeds.is_empty(), "run.seeds", "need at least one seed")?;
        let mut seeds = r.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        check(seeds.len() == r.seeds.len(), "run.seeds", "seeds repeat")?;
        check(r.rounds >= 1, "run.rounds", "must be at least 1")?;
        check(r.eval_every >= 1, "run.eval_every", "must be at least 1")?;

        let f = &self.fedfv;
        check(
            (0.0..=1.0).contains(&f.alpha),
            "fedfv.alpha",
            "must lie in [0, 1]",
        )?;
        check(
            f.sample_frac > 0.0 && f.sample_frac <= 1.0,
            "fedfv.sample_frac",
            "must lie in (0, 1]",
        )?;
        check(
            (0.0..1.0).contains(&f.dropout),
            "fedfv.dropout",
            "must lie in [0, 1)",
        )?;

        if self.model.kind == ModelChoice::Mlp2 {
            check(self.model.hidden >= 1, "model.hidden", "must be at least 1")?;
        }

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                check(d.num_classes >= 2, "data.num_classes", "must be at least 2")?;
                check(
                    d.examples_per_class >= 1,
                    "data.examples_per_class",
                    "must be at least 1",
                )?;
                check(
                    d.feature_dim + 1 >= d.num_classes,
                    "data.feature_dim",
                    "must be at least num_classes - 1",
                )?;
                check(
                    d.cluster_spread >= 0.0 && d.cluster_spread.is_finite(),
                    "data.cluster_spread",
                    "must be non-negative",
                )?;
                check(
                    (0.0..1.0).contains(&d.spread_skew),
                    "data.spread_skew",
                    "must lie in [0, 1)",
                )?;
                let total = d.num_classes * d.examples_per_class;
                let shards = d.num_clients * d.shards_per_client;
                check(
                    shards <= total,
                    "data.shards_per_client",
                    format!("{shards} shards but only {total} examples"),
                )?;
            }
            DataSource::Idx => {
                check(
                    d.images.is_some(),
                    "data.images",
                    "required when source = \"idx\"",
                )?;
                check(
                    d.labels.is_some(),
                    "data.labels",
                    "required when source = \"idx\"",
                )?;
            }
        }
        check(d.num_clients >= 1, "data.num_clients", "must be at least 1")?;
        check(
            d.shards_per_client >= 1,
            "data.shards_per_client",
            "must be at least 1",
        )?;

        let t = &self.train;
        check(t.epochs >= 1, "train.epochs", "must be at least 1")?;
        check(
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "train.learning_rate",
            "must be positive",
        )?;
        check(
            t.batch_size != BatchSize::Size(0),
            "train.batch_size",
            "must be positive or \"full\"",
        )?;
        Ok(())
    }
}

/// Command-line values that replace config-file keys when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seeds: Vec<u64>,
    pub algorithm: Option<Algorithm>,
    pub alpha: Option<f64>,
    pub tau: Option<usize>,
    pub rounds: Option<usize>,
    pub sample_frac: Option<f64>,
    pub dropout: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub order_mode: Option<OrderMode>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if !self.seeds.is_empty() {
            cfg.run.seeds = self.seeds.clone();
        }
        if let Some(v) = self.algorithm {
            cfg.run.algorithm = v;
        }
        if let Some(v) = self.alpha {
            cfg.fedfv.alpha = v;
        }
        if let Some(v) = self.tau {
            cfg.fedfv.tau = v;
        }
        if let Some(v) = self.rounds {
            cfg.run.rounds = v;
        }
        if let Some(v) = self.sample_frac {
            cfg.fedfv.sample_frac = v;
        }
        if let Some(v) = self.dropout {
            cfg.fedfv.dropout = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.run.output_dir = v.clone();
        }
        if let Some(v) = self.order_mode {
            cfg.run.order_mode = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.sample_count(), 10);
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.batch_size = BatchSize::Size(16);
        cfg.model.kind = ModelChoice::Mlp2;
        cfg.run.algorithm = Algorithm::FedAvg;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_sections() {
        let cfg = ExperimentConfig::from_toml_str(
            "[run]\nalgorithm = \"fedavg\"\nseeds = [3]\n[train]\nbatch_size = 8\n[fedfv]\nalpha = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.run.algorithm, Algorithm::FedAvg);
        assert_eq!(cfg.run.seeds, vec![3]);
        assert_eq!(cfg.train.batch_size, BatchSize::Size(8));
        assert_eq!(cfg.fedfv.alpha, 0.5);
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "[run]\nunknown_key = 1\n",
            "[fedfv]\nalpha = \"high\"\n",
            "[train]\nbatch_size = \"half\"\n",
            "[run\n",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(matches!(e, Error::ConfigSyntax(_)), "{bad}: {e}");
            assert!(e.is_config_error());
        }
    }

    type Breaker = Box<dyn Fn(&mut ExperimentConfig)>;

    #[test]
    fn validation_names_the_field() {
        let cases: Vec<(&str, Breaker)> = vec![
            ("fedfv.alpha", Box::new(|c| c.fedfv.alpha = 1.5)),
            ("fedfv.sample_frac", Box::new(|c| c.fedfv.sample_frac = 0.0)),
            ("fedfv.dropout", Box::new(|c| c.fedfv.dropout = 1.0)),
            ("run.seeds", Box::new(|c| c.run.seeds.clear())),
            ("run.seeds", Box::new(|c| c.run.seeds = vec![1, 1])),
            ("run.rounds", Box::new(|c| c.run.rounds = 0)),
            (
                "train.learning_rate",
                Box::new(|c| c.train.learning_rate = -0.1),
            ),
            (
                "train.batch_size",
                Box::new(|c| c.train.batch_size = BatchSize::Size(0)),
            ),
            (
                "data.shards_per_client",
                Box::new(|c| c.data.shards_per_client = 100),
            ),
            ("data.feature_dim", Box::new(|c| c.data.feature_dim = 3)),
            ("data.images", Box::new(|c| c.data.source = DataSource::Idx)),
        ];
        for (field, mutate) in cases {
            let mut cfg = ExperimentConfig::default();
            mutate(&mut cfg);
            match cfg.validate() {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = ExperimentConfig::default();
        ConfigOverrides {
            seeds: vec![7, 8],
            alpha: Some(0.0),
            order_mode: Some(OrderMode::Reverse),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.run.seeds, vec![7, 8]);
        assert_eq!(cfg.fedfv.alpha, 0.0);
        assert_eq!(cfg.fedfv.tau, 10);
        assert_eq!(cfg.run.order_mode, OrderMode::Reverse);
    }
}
