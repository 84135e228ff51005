use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::synthetic::SyntheticSpec;
use crate::dpsgd::DEFAULT_DELTA;
use crate::error::{Error, Result};
use crate::models::{LrSchedule, ModelDims, ModelKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Movielens,
    Yelp,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory with `ratings.dat` and `movies.dat`, or with the Yelp
    /// `review.json` and `business.json`.
    pub path: PathBuf,
    /// Yelp state filter.
    pub state: String,
    /// Keep at most this many users (chosen by `subsample_seed`).
    pub max_users: Option<usize>,
    pub subsample_seed: u64,
    /// Store cache file; built on first use.
    pub cache: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Movielens,
            path: PathBuf::from("data/ml-1m"),
            state: "AZ".into(),
            max_users: None,
            subsample_seed: 0,
            cache: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self.kind {
            DatasetKind::Movielens => "movielens".into(),
            DatasetKind::Yelp => format!("yelp-{}", self.state.to_lowercase()),
            DatasetKind::Synthetic => "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub gmf_dim: usize,
    pub mlp_layers: Vec<usize>,
    pub dropout: f64,
    pub vae_hidden: usize,
    pub vae_latent: usize,
    pub vae_beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::new(0, 0);
        Self {
            kind: ModelKind::Ncf,
            latent_dim: d.latent_dim,
            gmf_dim: d.gmf_dim,
            mlp_layers: d.mlp_layers,
            dropout: d.dropout,
            vae_hidden: d.vae_hidden,
            vae_latent: d.vae_latent,
            vae_beta: d.vae_beta,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, num_users: usize, num_items: usize) -> ModelDims {
        ModelDims {
            num_users,
            num_items,
            latent_dim: self.latent_dim,
            gmf_dim: self.gmf_dim,
            mlp_layers: self.mlp_layers.clone(),
            dropout: self.dropout,
            vae_hidden: self.vae_hidden,
            vae_latent: self.vae_latent,
            vae_beta: self.vae_beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    None,
    Dpsgd,
    Ldp,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Dpsgd => "dpsgd",
            Regime::Ldp => "ldp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    pub regime: Regime,
    /// Noise multipliers for DPSGD, epsilons for LDP. Ignored for `none`.
    pub budgets: Vec<f64>,
    pub delta: f64,
    pub clip_norm: f64,
    /// Also run the non-private baseline for every seed.
    pub include_baseline: bool,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Dpsgd,
            budgets: vec![0.2, 0.4, 0.8, 2.0, 4.0],
            delta: DEFAULT_DELTA,
            clip_norm: 1.0,
            include_baseline: true,
        }
    }
}

/// Training knobs; unset values take the model's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub embedding_lr_scale: Option<f64>,
    pub weight_decay: Option<f64>,
    pub schedule: Option<LrSchedule>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub negatives_per_positive: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub privacy: PrivacyConfig,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    /// Recommendation list length.
    pub k: usize,
    pub output_dir: PathBuf,
    /// Parallel runs in a sweep.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            privacy: PrivacyConfig::default(),
            train: TrainSection::default(),
            seeds: vec![0, 1, 2],
            k: 10,
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// One documented configuration key.
#[derive(Debug, Clone)]
pub struct ConfigKey {
    pub key: &'static str,
    pub default: String,
    pub doc: &'static str,
}

const KEY_DOCS: &[(&str, &str)] = &[
    ("dataset.kind", "movielens, yelp or synthetic"),
    ("dataset.path", "directory holding the raw files"),
    ("dataset.state", "Yelp state filter"),
    ("dataset.max_users", "subsample to at most this many users (null keeps all)"),
    ("dataset.subsample_seed", "seed of the user subsample"),
    ("dataset.cache", "store cache file, built on first use (null disables)"),
    ("dataset.synthetic.users", "synthetic generator: users"),
    ("dataset.synthetic.items", "synthetic generator: items"),
    ("dataset.synthetic.clusters", "synthetic generator: taste clusters"),
    ("dataset.synthetic.genres", "synthetic generator: categories"),
    ("dataset.synthetic.min_profile", "synthetic generator: smallest profile"),
    ("dataset.synthetic.max_profile", "synthetic generator: largest profile"),
    ("dataset.synthetic.popularity_exponent", "synthetic generator: Zipf exponent"),
    ("dataset.synthetic.affinity", "synthetic generator: in-cluster probability"),
    ("dataset.synthetic.seed", "synthetic generator: seed"),
    ("model.kind", "SVD, BPR, NCF or VAE"),
    ("model.latent_dim", "SVD/BPR embedding size"),
    ("model.gmf_dim", "NCF GMF embedding size"),
    ("model.mlp_layers", "NCF MLP widths; the first is the concatenated embedding size"),
    ("model.dropout", "NCF dropout after hidden layers"),
    ("model.vae_hidden", "VAE hidden width"),
    ("model.vae_latent", "VAE latent size"),
    ("model.vae_beta", "VAE KL weight"),
    ("privacy.regime", "none, dpsgd or ldp"),
    ("privacy.budgets", "noise multipliers (dpsgd) or epsilons (ldp)"),
    ("privacy.delta", "DPSGD delta"),
    ("privacy.clip_norm", "DPSGD per-example clipping norm"),
    ("privacy.include_baseline", "also run the non-private model for each seed"),
    ("train.batch_size", "examples per step (null: model default)"),
    ("train.learning_rate", "SGD step size (null: model default)"),
    ("train.embedding_lr_scale", "learning-rate multiplier for embedding tables (null: model and regime default)"),
    ("train.weight_decay", "L2 coefficient (null: model default)"),
    ("train.schedule", "learning-rate schedule object (null: model default)"),
    ("train.max_epochs", "epoch limit (null: model default)"),
    ("train.patience", "epochs without validation NDCG gain before stopping (null: 6)"),
    ("train.negatives_per_positive", "sampled negatives per positive (null: model default)"),
    ("seeds", "one run per seed and budget"),
    ("k", "recommendation list length"),
    ("output_dir", "where records/ and reports/ go"),
    ("workers", "runs executed in parallel"),
];

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), value.clone())),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str::<Self>(&text)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
            .and_then(|c| c.validate().map(|_| c))
    }

    /// Every documented key with its default value.
    pub fn keys() -> Vec<ConfigKey> {
        let mut flat = Vec::new();
        flatten("", &serde_json::to_value(Self::default()).expect("config serializes"), &mut flat);
        KEY_DOCS
            .iter()
            .map(|&(key, doc)| ConfigKey {
                key,
                default: flat
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_else(|| "null".into()),
                doc,
            })
            .collect()
    }

    /// Applies `key=value` overrides. Values are read as JSON when they
    /// parse and as strings otherwise; the result is checked against the
    /// schema, so unknown keys and wrong types are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{ov}` is not key=value")))?;
            if !KEY_DOCS.iter().any(|(k, _)| *k == key) && !key.starts_with("train.schedule.") {
                return Err(Error::invalid(format!("unknown config key `{key}`")));
            }
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut value;
            for part in key.split('.') {
                if slot.is_null() {
                    *slot = Value::Object(Default::default());
                }
                slot = slot
                    .as_object_mut()
                    .ok_or_else(|| Error::invalid(format!("`{key}` does not name a nested key")))?
                    .entry(part)
                    .or_insert(Value::Null);
            }
            *slot = parsed;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| Error::invalid(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        let p = &self.privacy;
        if p.regime != Regime::None {
            if p.budgets.is_empty() {
                return bad("privacy.budgets must not be empty".into());
            }
            if let Some(b) = p.budgets.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
                return bad(format!("budget {b} must be positive and finite"));
            }
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return bad(format!("privacy.delta {} must be in (0, 1)", p.delta));
        }
        if !(p.clip_norm > 0.0) {
            return bad(format!("privacy.clip_norm {} must be positive", p.clip_norm));
        }
        if self.dataset.max_users == Some(0) {
            return bad("dataset.max_users must be positive".into());
        }
        self.model.dims(1, 1).validate(self.model.kind)?;
        let t = self.train_config(0);
        if t.batch_size == 0 || t.max_epochs == 0 {
            return bad("train.batch_size and train.max_epochs must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) || !(t.weight_decay >= 0.0) {
            return bad("train.learning_rate must be positive and train.weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Effective non-private training settings for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        self.train_config_for(Regime::None, seed)
    }

    /// Effective training settings for one seed under `regime`. Unset keys
    /// fall back to the model's defaults for that regime.
    pub fn train_config_for(&self, regime: Regime, seed: u64) -> TrainConfig {
        let d = match regime {
            Regime::Dpsgd => TrainConfig::for_kind_dpsgd(self.model.kind, seed),
            _ => TrainConfig::for_kind(self.model.kind, seed),
        };
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            embedding_lr_scale: t.embedding_lr_scale.unwrap_or(d.embedding_lr_scale),
            weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: t.max_epochs.unwrap_or(d.max_epochs),
            patience: t.patience.unwrap_or(d.patience),
            schedule: t.schedule.unwrap_or(d.schedule),
            negatives_per_positive: t.negatives_per_positive.unwrap_or(d.negatives_per_positive),
            k: self.k,
            seed,
        }
    }

    /// Desk-scale preset: at most 1,000 MovieLens users.
    pub fn mini(kind: ModelKind) -> Self {
        let mut cfg = Self::default();
        cfg.model.kind = kind;
        cfg.dataset.max_users = Some(1000);
        cfg
    }
}
