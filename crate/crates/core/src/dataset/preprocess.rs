use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{external_id_cmp, InteractionStore, RawDataset, RawRating};
use crate::error::{Error, Result};
use crate::rng;

/// Ratings at or above this value are positive feedback.
pub const POSITIVE_THRESHOLD: u8 = 3;
/// Minimum positives per user and per item after filtering.
pub const MIN_INTERACTIONS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub input_ratings: usize,
    pub without_categories: usize,
    pub duplicates: usize,
    pub below_threshold: usize,
    pub fixpoint_rounds: usize,
    pub removed_by_count_filters: usize,
}

/// Drops negative ratings and iterates the item and user minimum-count
/// filters until nothing changes, then assigns contiguous indices.
///
/// Duplicate (user, item) pairs are collapsed first, keeping the most recent
/// rating (input order breaks timestamp ties).
pub fn preprocess(raw: &RawDataset) -> Result<(InteractionStore, PreprocessStats)> {
    if raw.ratings.is_empty() {
        return Err(Error::invalid("no ratings to preprocess"));
    }
    let mut stats = PreprocessStats {
        input_ratings: raw.ratings.len(),
        ..Default::default()
    };

    let mut latest: HashMap<(&str, &str), &RawRating> = HashMap::with_capacity(raw.ratings.len());
    for r in &raw.ratings {
        if !raw.categories.contains_key(&r.item) {
            stats.without_categories += 1;
            continue;
        }
        let key = (r.user.as_str(), r.item.as_str());
        match latest.get(&key) {
            Some(prev) => {
                stats.duplicates += 1;
                if r.timestamp.unwrap_or(i64::MIN) >= prev.timestamp.unwrap_or(i64::MIN) {
                    latest.insert(key, r);
                }
            }
            None => {
                latest.insert(key, r);
            }
        }
    }

    let mut kept: Vec<&RawRating> = latest
        .into_values()
        .filter(|r| {
            let keep = r.rating >= POSITIVE_THRESHOLD;
            if !keep {
                stats.below_threshold += 1;
            }
            keep
        })
        .collect();

    loop {
        stats.fixpoint_rounds += 1;
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            *item_count.entry(r.item.as_str()).or_default() += 1;
        }
        let before = kept.len();
        kept.retain(|r| item_count[r.item.as_str()] >= MIN_INTERACTIONS);

        let mut user_count: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            *user_count.entry(r.user.as_str()).or_default() += 1;
        }
        kept.retain(|r| user_count[r.user.as_str()] >= MIN_INTERACTIONS);

        stats.removed_by_count_filters += before - kept.len();
        if kept.len() == before {
            break;
        }
    }

    if kept.is_empty() {
        return Err(Error::EmptyStore(format!(
            "{} input ratings, {} without categories, {} duplicates, {} below {}, {} removed by min-{} filters",
            stats.input_ratings,
            stats.without_categories,
            stats.duplicates,
            stats.below_threshold,
            POSITIVE_THRESHOLD,
            stats.removed_by_count_filters,
            MIN_INTERACTIONS
        )));
    }

    let mut user_ids: Vec<String> = kept
        .iter()
        .map(|r| r.user.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    user_ids.sort_by(|a, b| external_id_cmp(a, b));
    let mut item_ids: Vec<String> = kept
        .iter()
        .map(|r| r.item.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    item_ids.sort_by(|a, b| external_id_cmp(a, b));

    let user_index: HashMap<&str, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let item_index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();

    let mut per_user: Vec<Vec<(usize, Option<i64>)>> = vec![Vec::new(); user_ids.len()];
    for r in &kept {
        per_user[user_index[r.user.as_str()]].push((item_index[r.item.as_str()], r.timestamp));
    }
    let mut positives = Vec::with_capacity(per_user.len());
    let mut timestamps = Vec::with_capacity(per_user.len());
    for mut list in per_user {
        list.sort_unstable_by_key(|&(i, _)| i);
        positives.push(list.iter().map(|&(i, _)| i).collect());
        timestamps.push(list.iter().map(|&(_, t)| t).collect());
    }

    let labels: BTreeSet<&str> = item_ids
        .iter()
        .flat_map(|id| raw.categories[id].iter().map(String::as_str))
        .collect();
    let category_names: Vec<String> = labels.into_iter().map(str::to_owned).collect();
    let category_index: HashMap<&str, usize> = category_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let item_categories = item_ids
        .iter()
        .map(|id| {
            let mut cats: Vec<usize> = raw.categories[id]
                .iter()
                .map(|c| category_index[c.as_str()])
                .collect();
            cats.sort_unstable();
            cats.dedup();
            cats
        })
        .collect();

    Ok((
        InteractionStore {
            positives,
            timestamps,
            item_categories,
            category_names,
            user_ids,
            item_ids,
        },
        stats,
    ))
}

/// Keeps the ratings of at most `max_users` users chosen uniformly at random
/// among those with at least [`MIN_INTERACTIONS`] positive ratings. Used for
/// desk-scale profiles; run [`preprocess`] afterwards.
pub fn subsample_users(raw: &RawDataset, max_users: usize, seed: u64) -> RawDataset {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &raw.ratings {
        if r.rating >= POSITIVE_THRESHOLD {
            *counts.entry(r.user.as_str()).or_default() += 1;
        }
    }
    let mut eligible: Vec<&str> = counts
        .into_iter()
        .filter(|&(_, c)| c >= MIN_INTERACTIONS)
        .map(|(u, _)| u)
        .collect();
    eligible.sort_by(|a, b| external_id_cmp(a, b));
    let mut rng = rng::stream(seed, rng::tag::SUBSAMPLE);
    eligible.shuffle(&mut rng);
    eligible.truncate(max_users);
    let chosen: HashSet<&str> = eligible.into_iter().collect();
    RawDataset {
        ratings: raw
            .ratings
            .iter()
            .filter(|r| chosen.contains(r.user.as_str()))
            .cloned()
            .collect(),
        categories: raw.categories.clone(),
        report: raw.report.clone(),
    }
}
