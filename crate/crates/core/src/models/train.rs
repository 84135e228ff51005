//! Mini-batch training shared by every model and privacy regime.
//!
//! Each step computes per-example gradients, clips them (DPSGD only), sums
//! them, adds Gaussian noise (DPSGD only), averages and takes one SGD step
//! with weight decay. Non-private training runs the exact same path with
//! clipping and noise switched off.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{recommend_topk, ModelKind, ModelState, TrainExample};
use crate::dpsgd::{self, NoisyAggregator, PrivacyLedger, SparseGradient};
use crate::error::{Error, Result};
use crate::metrics::ndcg_at_k;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` after `patience` epochs without a lower
    /// validation loss.
    Plateau { patience: usize, factor: f64 },
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ncf => LrSchedule::Step { every: 4, gamma: 0.9 },
            _ => LrSchedule::Plateau {
                patience: 4,
                factor: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PrivacyRegime {
    NonPrivate,
    Dpsgd {
        clip_norm: f64,
        noise_multiplier: f64,
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate of embedding tables.
    pub embedding_lr_scale: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early-stopping patience on validation NDCG.
    pub patience: usize,
    pub schedule: LrSchedule,
    pub negatives_per_positive: usize,
    /// Cutoff for validation NDCG.
    pub k: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults tuned for plain SGD on MovieLens-shaped data.
    pub fn for_kind(kind: ModelKind, seed: u64) -> Self {
        let (batch_size, learning_rate, embedding_lr_scale) = match kind {
            ModelKind::Svd => (256, 20.0, 1.0),
            ModelKind::Bpr => (256, 5.0, 1.0),
            ModelKind::Ncf => (256, 0.5, 100.0),
            // one example per user, so smaller batches keep enough steps
            ModelKind::Vae => (100, 0.05, 1.0),
        };
        Self {
            batch_size,
            learning_rate,
            embedding_lr_scale,
            weight_decay: if kind == ModelKind::Vae { 0.01 } else { 1e-5 },
            max_epochs: 400,
            patience: 6,
            schedule: LrSchedule::for_kind(kind),
            negatives_per_positive: if kind == ModelKind::Bpr { 1 } else { 4 },
            k: 10,
            seed,
        }
    }

    /// Defaults for DPSGD training. Noise lands on every embedding row at each
    /// step while the signal is sparse, so NCF drops its embedding multiplier.
    pub fn for_kind_dpsgd(kind: ModelKind, seed: u64) -> Self {
        let mut c = Self::for_kind(kind, seed);
        if kind == ModelKind::Ncf {
            c.embedding_lr_scale = 1.0;
        }
        c
    }
}

/// Per-user item sets a training run reads.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    /// Training positives the model learns from (perturbed under LDP).
    pub input: &'a [Vec<usize>],
    /// Validation positives for early stopping.
    pub valid: &'a [Vec<usize>],
    /// Items never recommended during validation (the clean training set).
    pub exclude: &'a [Vec<usize>],
    pub num_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_ndcg: f64,
    pub learning_rate: f64,
    /// Privacy spent so far, DPSGD only.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation NDCG.
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub stopped_early: bool,
    pub examples_per_epoch: usize,
    pub ledger: Option<PrivacyLedger>,
}

/// Uniform item outside `positives` (sorted), or `None` when there is none.
pub fn sample_negative<R: Rng + ?Sized>(positives: &[usize], num_items: usize, rng: &mut R) -> Option<usize> {
    let free = num_items.checked_sub(positives.len())?;
    if free == 0 {
        return None;
    }
    let rank = rng.random_range(0..free);
    // smallest item with exactly `rank` free items before it
    let mut item = rank;
    loop {
        let taken = positives.partition_point(|&p| p <= item);
        let next = rank + taken;
        if next == item {
            return Some(item);
        }
        item = next;
    }
}

/// One epoch's worth of examples, in user order.
pub fn build_epoch_examples<R: Rng + ?Sized>(
    kind: ModelKind,
    input: &[Vec<usize>],
    num_items: usize,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Vec<TrainExample> {
    let mut out = Vec::new();
    for (user, items) in input.iter().enumerate() {
        match kind {
            ModelKind::Svd | ModelKind::Ncf => {
                for &item in items {
                    out.push(TrainExample::Pointwise { user, item, label: 1.0 });
                    for _ in 0..negatives_per_positive {
                        if let Some(neg) = sample_negative(items, num_items, rng) {
                            out.push(TrainExample::Pointwise {
                                user,
                                item: neg,
                                label: 0.0,
                            });
                        }
                    }
                }
            }
            ModelKind::Bpr => {
                for &pos in items {
                    for _ in 0..negatives_per_positive.max(1) {
                        if let Some(neg) = sample_negative(items, num_items, rng) {
                            out.push(TrainExample::Triple { user, pos, neg });
                        }
                    }
                }
            }
            ModelKind::Vae => {
                if !items.is_empty() {
                    out.push(TrainExample::Row {
                        user,
                        items: items.clone(),
                    });
                }
            }
        }
    }
    out
}

enum Validation {
    Examples(Vec<TrainExample>),
    Heldout,
}

fn validation_set(kind: ModelKind, data: &TrainData<'_>, cfg: &TrainConfig) -> Validation {
    if kind == ModelKind::Vae {
        return Validation::Heldout;
    }
    let mut rng = rng::stream(cfg.seed, rng::tag::VALIDATION);
    let mut out = Vec::new();
    for (user, valid) in data.valid.iter().enumerate() {
        let mut seen: Vec<usize> = data.input[user].iter().chain(valid).copied().collect();
        seen.sort_unstable();
        seen.dedup();
        for &item in valid {
            match kind {
                ModelKind::Bpr => {
                    if let Some(neg) = sample_negative(&seen, data.num_items, &mut rng) {
                        out.push(TrainExample::Triple { user, pos: item, neg });
                    }
                }
                _ => {
                    out.push(TrainExample::Pointwise { user, item, label: 1.0 });
                    for _ in 0..cfg.negatives_per_positive {
                        if let Some(neg) = sample_negative(&seen, data.num_items, &mut rng) {
                            out.push(TrainExample::Pointwise {
                                user,
                                item: neg,
                                label: 0.0,
                            });
                        }
                    }
                }
            }
        }
    }
    Validation::Examples(out)
}

fn validation_loss(state: &ModelState, set: &Validation, data: &TrainData<'_>) -> Result<f64> {
    let losses: Vec<f64> = match set {
        Validation::Examples(examples) => examples
            .par_iter()
            .map(|ex| state.loss(ex))
            .collect::<Result<Vec<_>>>()?,
        Validation::Heldout => (0..data.valid.len())
            .into_par_iter()
            .filter(|&u| !data.valid[u].is_empty())
            .map(|u| state.vae_heldout_loss(&data.input[u], &data.valid[u]))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    })
}

/// Mean NDCG@k on the validation sets, ranking everything outside the
/// user's clean training positives.
pub(crate) fn validation_ndcg(state: &ModelState, data: &TrainData<'_>, k: usize) -> Result<f64> {
    let scores: Vec<f64> = (0..data.valid.len())
        .into_par_iter()
        .filter(|&u| !data.valid[u].is_empty())
        .map(|u| {
            let rec = recommend_topk(state, u, k, &data.input[u], &data.exclude[u])?;
            Ok(ndcg_at_k(&rec.items, &data.valid[u], k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    })
}

/// Examples whose gradients are materialised at once; bounds memory for the
/// VAE, whose per-example gradients are dense.
fn chunk_len(kind: ModelKind) -> usize {
    if kind == ModelKind::Vae {
        32
    } else {
        1024
    }
}

pub fn train(
    mut state: ModelState,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    regime: PrivacyRegime,
) -> Result<TrainOutcome> {
    let kind = state.kind;
    if data.input.len() != state.dims.num_users
        || data.valid.len() != state.dims.num_users
        || data.exclude.len() != state.dims.num_users
        || data.num_items != state.dims.num_items
    {
        return Err(Error::invalid("training data does not match the model dimensions"));
    }
    if cfg.batch_size == 0
        || cfg.k == 0
        || !(cfg.learning_rate >= 0.0)
        || !(cfg.embedding_lr_scale > 0.0)
        || !(cfg.weight_decay >= 0.0)
    {
        return Err(Error::invalid(format!("invalid training config {cfg:?}")));
    }

    let mut batch_rng = rng::stream(cfg.seed, rng::tag::BATCH);
    let mut noise_rng = rng::stream(cfg.seed, rng::tag::NOISE);
    let example_seed = rng::derive(cfg.seed, rng::tag::EXAMPLE);

    let examples_per_epoch = {
        let mut probe = rng::stream(cfg.seed, rng::tag::NEGATIVES);
        build_epoch_examples(kind, data.input, data.num_items, cfg.negatives_per_positive, &mut probe).len()
    };
    if examples_per_epoch == 0 {
        return Err(Error::invalid("no training examples"));
    }

    let (clip_norm, noise_multiplier, delta) = match regime {
        PrivacyRegime::NonPrivate => (f64::INFINITY, 0.0, None),
        PrivacyRegime::Dpsgd {
            clip_norm,
            noise_multiplier,
            delta,
        } => (clip_norm, noise_multiplier, Some(delta)),
    };
    let batch = cfg.batch_size.min(examples_per_epoch);
    let mut ledger = match regime {
        PrivacyRegime::NonPrivate => None,
        PrivacyRegime::Dpsgd { .. } => {
            let spec = dpsgd::ClipNoiseSpec::new(clip_norm, noise_multiplier, batch, examples_per_epoch)?;
            Some(PrivacyLedger::new(spec.sample_rate, noise_multiplier)?)
        }
    };
    let clipping = clip_norm.is_finite();
    let embedding_ranges = state.embedding_ranges();

    let validation = validation_set(kind, &data, cfg);
    let mut aggregator = NoisyAggregator::new(state.num_params(), clip_norm, noise_multiplier);
    let mut step_grad = vec![0.0; state.num_params()];

    let mut lr = cfg.learning_rate;
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_params = state.params().to_vec();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut best_valid_loss = f64::INFINITY;
    let mut plateau = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut examples =
            build_epoch_examples(kind, data.input, data.num_items, cfg.negatives_per_positive, &mut batch_rng);
        examples.shuffle(&mut batch_rng);
        let steps = examples.len() / batch;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for step in 0..steps {
            let batch_examples = &examples[step * batch..(step + 1) * batch];
            aggregator.reset();
            for (c, chunk) in batch_examples.chunks(chunk_len(kind)).enumerate() {
                let base = (epoch as u64) << 40 | ((step * batch + c * chunk_len(kind)) as u64);
                let grads: Vec<(f64, SparseGradient)> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(j, ex)| {
                        let draw = rng::derive(example_seed, base + j as u64);
                        let (loss, mut grad) = state.loss_and_grad(ex, Some(draw))?;
                        if clipping {
                            grad.clip(clip_norm)?;
                        } else {
                            grad.check_finite()?;
                        }
                        Ok((loss, grad))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| diverged(epoch, &log, e))?;
                for (loss, grad) in &grads {
                    loss_sum += loss;
                    loss_count += 1;
                    aggregator.add_sparse(grad)?;
                }
            }
            aggregator.finish_into(&mut noise_rng, &mut step_grad)?;
            update(&mut state, &step_grad, lr, cfg, &embedding_ranges);
            if let Some(l) = ledger.as_mut() {
                l.step();
            }
        }

        let train_loss = loss_sum / loss_count.max(1) as f64;
        let valid_loss = validation_loss(&state, &validation, &data).map_err(|e| diverged(epoch, &log, e))?;
        let valid_ndcg = validation_ndcg(&state, &data, cfg.k)?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(diverged(
                epoch,
                &log,
                Error::Numeric(format!("train loss {train_loss}, validation loss {valid_loss}")),
            ));
        }
        let epsilon = match (&ledger, delta) {
            (Some(l), Some(d)) => Some(l.epsilon(d)?),
            _ => None,
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
            valid_ndcg,
            learning_rate: lr,
            epsilon,
        });
        log::debug!(
            "{kind} epoch {epoch}: loss {train_loss:.5} valid loss {valid_loss:.5} ndcg {valid_ndcg:.4} lr {lr:.3e}"
        );

        match cfg.schedule {
            LrSchedule::Constant => {}
            LrSchedule::Plateau { patience, factor } => {
                if valid_loss < best_valid_loss {
                    best_valid_loss = valid_loss;
                    plateau = 0;
                } else {
                    plateau += 1;
                    if plateau >= patience {
                        lr *= factor;
                        plateau = 0;
                    }
                }
            }
            LrSchedule::Step { every, gamma } => {
                if every > 0 && epoch % every == 0 {
                    lr *= gamma;
                }
            }
        }

        if valid_ndcg > best_ndcg {
            best_ndcg = valid_ndcg;
            best_params.copy_from_slice(state.params());
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let epochs_trained = log.len();
    state.set_params(&best_params)?;
    Ok(TrainOutcome {
        state,
        log,
        best_epoch,
        epochs_trained,
        stopped_early,
        examples_per_epoch,
        ledger,
    })
}

/// SGD step with the embedding tables on their own learning rate. Scaling
/// the already-noised gradient is post-processing, so privacy accounting is
/// unaffected.
fn update(state: &mut ModelState, grad: &[f64], lr: f64, cfg: &TrainConfig, embeddings: &[std::ops::Range<usize>]) {
    if cfg.embedding_lr_scale == 1.0 {
        dpsgd::apply_update_raw(state.params_mut(), grad, lr, cfg.weight_decay);
        return;
    }
    let params = state.params_mut();
    let mut start = 0;
    for r in embeddings {
        dpsgd::apply_update_raw(&mut params[start..r.start], &grad[start..r.start], lr, cfg.weight_decay);
        dpsgd::apply_update_raw(
            &mut params[r.clone()],
            &grad[r.clone()],
            lr * cfg.embedding_lr_scale,
            cfg.weight_decay,
        );
        start = r.end;
    }
    let n = params.len();
    dpsgd::apply_update_raw(&mut params[start..n], &grad[start..n], lr, cfg.weight_decay);
}

fn diverged(epoch: usize, log: &[EpochLog], cause: Error) -> Error {
    let last = log
        .last()
        .map(|l| format!("last completed epoch {} had loss {:.5}", l.epoch, l.train_loss))
        .unwrap_or_else(|| "no epoch completed".into());
    Error::Diverged(format!("epoch {epoch}: {cause}; {last}"))
}
