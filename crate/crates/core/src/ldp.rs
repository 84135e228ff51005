//! Randomized-response perturbation of binary implicit feedback.
//!
//! Each training positive survives with probability `e^ε / (e^ε + 1)` and
//! each non-positive (user, item) pair is promoted to a positive with
//! probability `1 / (e^ε + 1)`. Validation and test sets are never touched.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl LdpSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        flip_probabilities(epsilon)?;
        Ok(Self { epsilon, seed })
    }
}

/// Returns `(p_pos, p_neg)`: the probability of keeping a positive and of
/// adding a negative or missing item.
pub fn flip_probabilities(epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "LDP epsilon must be positive and finite, got {epsilon}"
        )));
    }
    // 1 / (e^ε + 1) written via e^-ε so that large budgets do not overflow.
    let t = (-epsilon).exp();
    let p_neg = t / (1.0 + t);
    let p_pos = 1.0 / (1.0 + t);
    Ok((p_pos, p_neg))
}

/// Perturbs one user's training positives. `train` must be sorted.
///
/// Additions are drawn as `k ~ Binomial(m, p_neg)` followed by `k` uniform
/// picks without replacement from the `m` non-positive items, which has the
/// same distribution as `m` independent coin flips.
pub fn perturb_user<R: Rng + ?Sized>(
    train: &[usize],
    num_items: usize,
    p_pos: f64,
    p_neg: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut out: Vec<usize> = train
        .iter()
        .copied()
        .filter(|_| rng.random_bool(p_pos))
        .collect();

    let m = num_items - train.len();
    if m > 0 && p_neg > 0.0 {
        let k = Binomial::new(m as u64, p_neg)
            .expect("p_neg in [0, 1]")
            .sample(rng) as usize;
        if k > 0 {
            let mut picks: Vec<usize> = index::sample(rng, m, k).into_vec();
            picks.sort_unstable();
            out.extend(complement_positions(train, &picks));
        }
    }
    out.sort_unstable();
    out
}

/// Maps sorted ranks within the complement of `excluded` (sorted) to item
/// indices.
fn complement_positions<'a>(excluded: &'a [usize], ranks: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    let mut skip = 0;
    ranks.iter().map(move |&r| {
        // smallest item i with i - |excluded ∩ [0, i)| == r and i not excluded
        let mut item = r + skip;
        while skip < excluded.len() && excluded[skip] <= item {
            skip += 1;
            item = r + skip;
        }
        item
    })
}

/// Perturbs every user's training set. Each user gets an RNG derived from
/// `(spec.seed, user)`, so the result is independent of evaluation order.
pub fn perturb_training_set(split: &SplitDataset, num_items: usize, spec: &LdpSpec) -> Result<Vec<Vec<usize>>> {
    let (p_pos, p_neg) = flip_probabilities(spec.epsilon)?;
    Ok(split
        .train
        .iter()
        .enumerate()
        .map(|(u, train)| {
            let mut rng = rng::stream(rng::derive(spec.seed, u as u64), rng::tag::LDP);
            perturb_user(train, num_items, p_pos, p_neg, &mut rng)
        })
        .collect())
}
