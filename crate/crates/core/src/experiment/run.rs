use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::config::{DatasetConfig, DatasetKind, ExperimentConfig, Regime};
use super::write_atomic;
use crate::dataset::{
    parse_movielens, parse_yelp, read_cache, write_cache, preprocess, segment, split_per_user, subsample_users, synthetic,
    InteractionStore, PreprocessStats, SegmentMap, SplitDataset, SplitRatios,
};
use crate::error::{Error, Result};
use crate::ldp::{perturb_training_set, LdpSpec};
use crate::metrics::{evaluate, MetricsReport};
use crate::models::{train, EpochLog, ModelState, PrivacyRegime, TrainData};

/// Realized privacy loss; infinite for the non-private baseline, stored
/// as the string `"inf"` because JSON has no infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(pub f64);

impl Epsilon {
    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Epsilon(v)),
            Repr::Str(s) if s == "inf" => Ok(Epsilon(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad epsilon `{s}`"))),
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub regime: Regime,
    /// Noise multiplier (DPSGD) or epsilon (LDP); `None` for the baseline.
    pub budget: Option<f64>,
}

impl BudgetPoint {
    pub const BASELINE: BudgetPoint = BudgetPoint {
        regime: Regime::None,
        budget: None,
    };

    pub fn new(regime: Regime, budget: f64) -> Self {
        if regime == Regime::None {
            Self::BASELINE
        } else {
            BudgetPoint {
                regime,
                budget: Some(budget),
            }
        }
    }

    /// Every point a config asks for, baseline first.
    pub fn grid(cfg: &ExperimentConfig) -> Vec<BudgetPoint> {
        let p = &cfg.privacy;
        let mut out = Vec::new();
        if p.regime == Regime::None || p.include_baseline {
            out.push(Self::BASELINE);
        }
        if p.regime != Regime::None {
            out.extend(p.budgets.iter().map(|&b| Self::new(p.regime, b)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Identifies (config, budget point, seed); also the record's file name.
    pub fingerprint: String,
    /// Identifies the config without budgets and seeds.
    pub config_fingerprint: String,
    pub dataset: String,
    pub model: String,
    pub regime: Regime,
    pub budget: Option<f64>,
    pub seed: u64,
    pub realized_epsilon: Epsilon,
    pub delta: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub dpsgd_steps: Option<u64>,
    pub wall_time_secs: f64,
    pub train_log: Vec<EpochLog>,
    pub metrics: Option<MetricsReport>,
}

fn sha_hex(value: &serde_json::Value) -> String {
    // serde_json maps are sorted, so this is canonical
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    hex::encode(&Sha256::digest(&bytes)[..12])
}

/// Fingerprint of everything that shapes a run except budget and seed.
pub fn config_fingerprint(cfg: &ExperimentConfig) -> String {
    sha_hex(&serde_json::json!({
        "dataset": cfg.dataset,
        "model": cfg.model,
        "train": cfg.train,
        "k": cfg.k,
    }))
}

pub fn run_fingerprint(cfg: &ExperimentConfig, point: BudgetPoint, seed: u64) -> String {
    let privacy = match point.regime {
        Regime::None => serde_json::Value::Null,
        Regime::Ldp => serde_json::json!({ "epsilon": point.budget }),
        Regime::Dpsgd => serde_json::json!({
            "noise_multiplier": point.budget,
            "delta": cfg.privacy.delta,
            "clip_norm": cfg.privacy.clip_norm,
        }),
    };
    sha_hex(&serde_json::json!({
        "config": config_fingerprint(cfg),
        "regime": point.regime,
        "privacy": privacy,
        "seed": seed,
    }))
}

fn yelp_file(dir: &Path, short: &str) -> PathBuf {
    let plain = dir.join(format!("{short}.json"));
    if plain.exists() {
        plain
    } else {
        dir.join(format!("yelp_academic_dataset_{short}.json"))
    }
}

/// Reads, subsamples and preprocesses the configured dataset, going
/// through the store cache when one is configured. Stats are `None` on a
/// cache hit.
pub fn load_store(cfg: &DatasetConfig) -> Result<(InteractionStore, Option<PreprocessStats>)> {
    if let Some(path) = cfg.cache.as_deref().filter(|p| p.exists()) {
        log::info!("reading store cache {}", path.display());
        return Ok((read_cache(path)?, None));
    }
    let raw = match cfg.kind {
        DatasetKind::Movielens => parse_movielens(&cfg.path.join("ratings.dat"), &cfg.path.join("movies.dat"))?,
        DatasetKind::Yelp => parse_yelp(&yelp_file(&cfg.path, "review"), &yelp_file(&cfg.path, "business"), &cfg.state)?,
        DatasetKind::Synthetic => synthetic::generate(&cfg.synthetic),
    };
    if !raw.report.issues.is_empty() {
        log::warn!("{} malformed lines skipped", raw.report.issues.len());
    }
    let raw = match cfg.max_users {
        Some(n) => subsample_users(&raw, n, cfg.subsample_seed),
        None => raw,
    };
    let (store, stats) = preprocess(&raw)?;
    if let Some(path) = &cfg.cache {
        write_cache(&store, path)?;
    }
    Ok((store, Some(stats)))
}

/// Split and segments for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitDataset,
    pub segments: SegmentMap,
}

pub fn prepare(store: &InteractionStore, seed: u64) -> Result<Prepared> {
    let split = split_per_user(store, SplitRatios::default(), seed)?;
    let segments = segment(store, &split);
    Ok(Prepared { split, segments })
}

/// Trains and evaluates one (budget point, seed) and writes its record.
/// Divergence yields a record marked failed rather than an error.
pub fn run_one(
    cfg: &ExperimentConfig,
    store: &InteractionStore,
    point: BudgetPoint,
    seed: u64,
) -> Result<(RunRecord, Option<ModelState>)> {
    let started = Instant::now();
    let prepared = prepare(store, seed)?;
    let num_items = store.num_items();
    let input = match point {
        BudgetPoint {
            regime: Regime::Ldp,
            budget: Some(eps),
        } => perturb_training_set(&prepared.split, num_items, &LdpSpec::new(eps, seed)?)?,
        _ => prepared.split.train.clone(),
    };
    let regime = match point {
        BudgetPoint {
            regime: Regime::Dpsgd,
            budget: Some(sigma),
        } => PrivacyRegime::Dpsgd {
            clip_norm: cfg.privacy.clip_norm,
            noise_multiplier: sigma,
            delta: cfg.privacy.delta,
        },
        _ => PrivacyRegime::NonPrivate,
    };
    let dims = cfg.model.dims(store.num_users(), num_items);
    let state = ModelState::init(cfg.model.kind, dims, seed)?;
    let data = TrainData {
        input: &input,
        valid: &prepared.split.valid,
        exclude: &prepared.split.train,
        num_items,
    };
    let tc = cfg.train_config_for(point.regime, seed);

    let mut record = RunRecord {
        fingerprint: run_fingerprint(cfg, point, seed),
        config_fingerprint: config_fingerprint(cfg),
        dataset: cfg.dataset.name(),
        model: cfg.model.kind.to_string(),
        regime: point.regime,
        budget: point.budget,
        seed,
        realized_epsilon: Epsilon(match point {
            BudgetPoint {
                regime: Regime::Ldp,
                budget: Some(eps),
            } => eps,
            _ => f64::INFINITY,
        }),
        delta: (point.regime == Regime::Dpsgd).then_some(cfg.privacy.delta),
        status: RunStatus::Ok,
        error: None,
        epochs_trained: 0,
        best_epoch: 0,
        stopped_early: false,
        dpsgd_steps: None,
        wall_time_secs: 0.0,
        train_log: Vec::new(),
        metrics: None,
    };

    let state = match train(state, data, &tc, regime) {
        Ok(outcome) => {
            if let Some(ledger) = &outcome.ledger {
                record.realized_epsilon = Epsilon(ledger.epsilon(cfg.privacy.delta)?);
                record.dpsgd_steps = Some(ledger.steps());
            }
            record.epochs_trained = outcome.epochs_trained;
            record.best_epoch = outcome.best_epoch;
            record.stopped_early = outcome.stopped_early;
            record.train_log = outcome.log;
            let report = evaluate(
                &outcome.state,
                &prepared.split,
                &prepared.segments,
                &input,
                &store.item_categories,
                store.category_names.len(),
                cfg.k,
            )?;
            record.metrics = Some(report);
            Some(outcome.state)
        }
        Err(e @ (Error::Diverged(_) | Error::Numeric(_))) => {
            log::warn!("run {} failed: {e}", record.fingerprint);
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    record.wall_time_secs = started.elapsed().as_secs_f64();
    let path = records_dir(&cfg.output_dir).join(format!("{}.json", record.fingerprint));
    write_atomic(&path, &serde_json::to_vec_pretty(&record)?)?;
    Ok((record, state))
}

pub(crate) fn records_dir(output: &Path) -> PathBuf {
    output.join("records")
}

/// Every record under `output/records`, sorted by fingerprint.
pub fn load_records(output: &Path) -> Result<Vec<RunRecord>> {
    let dir = records_dir(output);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
                path: p.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Records of this sweep's grid, in grid order (seed-major).
    pub records: Vec<RunRecord>,
    /// Runs skipped because their record already existed.
    pub reused: usize,
}

/// Runs every (budget point, seed) of the config, skipping points whose
/// record already exists.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (store, _) = load_store(&cfg.dataset)?;
    sweep_with_store(cfg, &store)
}

pub fn sweep_with_store(cfg: &ExperimentConfig, store: &InteractionStore) -> Result<SweepOutcome> {
    let jobs: Vec<(u64, BudgetPoint)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| BudgetPoint::grid(cfg).into_iter().map(move |p| (s, p)))
        .collect();
    let dir = records_dir(&cfg.output_dir);
    let existing = |seed, point| -> Option<RunRecord> {
        let path = dir.join(format!("{}.json", run_fingerprint(cfg, point, seed)));
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<(RunRecord, bool)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, point)| {
                if let Some(r) = existing(seed, point) {
                    return Ok((r, true));
                }
                log::info!("running {:?} seed {seed}", point);
                run_one(cfg, store, point, seed).map(|(r, _)| (r, false))
            })
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    let mut reused = 0;
    for r in results {
        let (rec, was_reused) = r?;
        reused += usize::from(was_reused);
        records.push(rec);
    }
    Ok(SweepOutcome { records, reused })
}

