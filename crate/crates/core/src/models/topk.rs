use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::error::{Error, Result};

/// Top-k items for one user, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Requested length; `items` is shorter only when candidates ran out.
    pub k: usize,
}

impl RecommendationList {
    pub fn is_short(&self) -> bool {
        self.items.len() < self.k
    }
}

fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` best scores outside `exclude` (sorted), by descending
/// score with ties going to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize, exclude: &[usize]) -> Vec<usize> {
    let mut candidates: Vec<usize> = Vec::with_capacity(scores.len().saturating_sub(exclude.len()));
    let mut ex = exclude.iter().peekable();
    for i in 0..scores.len() {
        while ex.peek().is_some_and(|&&e| e < i) {
            ex.next();
        }
        if ex.peek().is_some_and(|&&e| e == i) {
            continue;
        }
        candidates.push(i);
    }
    if candidates.len() > k && k > 0 {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    candidates.truncate(k);
    candidates
}

pub fn recommend_topk(
    state: &ModelState,
    user: usize,
    k: usize,
    history: &[usize],
    exclude: &[usize],
) -> Result<RecommendationList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if exclude.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("exclude list must be sorted and duplicate-free"));
    }
    let scores = state.score_all(user, history)?;
    let items = top_k_indices(&scores, k, exclude);
    Ok(RecommendationList {
        user,
        scores: items.iter().map(|&i| scores[i]).collect(),
        items,
        k,
    })
}
