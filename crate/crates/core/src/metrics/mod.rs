//! Ranking quality and popularity-bias metrics over top-k lists.
//!
//! The primitives work on plain item slices so they can be checked against
//! brute-force references. [`evaluate`] ranks every user with a trained
//! model and assembles a [`MetricsReport`].

mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemGroup, SegmentMap, SplitDataset, UserType};
use crate::error::{Error, Result};
use crate::models::{top_k_indices, ModelState};

pub use report::{flat_columns, group_labels, GroupMetrics, MetricsReport, METRICS};

/// Smoothing weight of the calibration metric.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// NDCG@k with binary relevance. `relevant` need not be sorted. Returns 0
/// when `relevant` is empty; callers drop such users from averages.
pub fn ndcg_at_k(list: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / ideal
}

/// How list positions are weighted when building a category distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weight `1 / log2(rank + 1)`, rank counted from 1.
    RankDiscounted,
}

impl Weighting {
    fn weight(self, rank: usize) -> f64 {
        match self {
            Weighting::Uniform => 1.0,
            Weighting::RankDiscounted => 1.0 / ((rank + 2) as f64).log2(),
        }
    }
}

/// Category distribution of `items`. Each item spreads its weight evenly
/// over its categories; items without categories contribute nothing.
pub fn category_distribution(
    items: &[usize],
    categories: &[Vec<usize>],
    num_categories: usize,
    weighting: Weighting,
) -> Vec<f64> {
    let mut dist = vec![0.0; num_categories];
    let mut total = 0.0;
    for (rank, &i) in items.iter().enumerate() {
        let cats = &categories[i];
        if cats.is_empty() {
            continue;
        }
        let w = weighting.weight(rank);
        let share = w / cats.len() as f64;
        for &c in cats {
            dist[c] += share;
        }
        total += w;
    }
    if total > 0.0 {
        for d in &mut dist {
            *d /= total;
        }
    }
    dist
}

/// `KL(p || (1 - alpha) q + alpha p)` with the natural log, where `p` comes
/// from the history and `q` from the list.
pub fn kld_miscalibration(
    history: &[usize],
    list: &[usize],
    categories: &[Vec<usize>],
    num_categories: usize,
    alpha: f64,
    weighting: Weighting,
) -> f64 {
    let p = category_distribution(history, categories, num_categories, Weighting::Uniform);
    let q = category_distribution(list, categories, num_categories, weighting);
    kl_smoothed(&p, &q, alpha)
}

pub(crate) fn kl_smoothed(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pz, _)| pz > 0.0)
        .map(|(&pz, &qz)| pz * (pz / ((1.0 - alpha) * qz + alpha * pz)).ln())
        .sum();
    // rounding can leave a tiny negative value for identical distributions
    kl.max(0.0)
}

/// Mean popularity of one list.
pub fn mean_popularity(items: &[usize], popularity: &[f64]) -> f64 {
    items.iter().map(|&i| popularity[i]).sum::<f64>() / items.len() as f64
}

/// Group average popularity: mean over lists of each list's mean item
/// popularity. Empty lists are skipped; `None` if nothing is left.
pub fn gap<L: AsRef<[usize]>>(lists: &[L], popularity: &[f64]) -> Option<f64> {
    let means: Vec<f64> = lists
        .iter()
        .map(AsRef::as_ref)
        .filter(|l| !l.is_empty())
        .map(|l| mean_popularity(l, popularity))
        .collect();
    if means.is_empty() {
        None
    } else {
        Some(means.iter().sum::<f64>() / means.len() as f64)
    }
}

/// Relative change from profile popularity to recommendation popularity.
pub fn popularity_lift(gap_profile: f64, gap_recommended: f64) -> Result<f64> {
    if !(gap_profile > 0.0) {
        return Err(Error::Numeric(format!("profile GAP {gap_profile} is not positive")));
    }
    Ok((gap_recommended - gap_profile) / gap_profile)
}

/// Mean negative log popularity of a list (natural log); 0 for an empty list.
pub fn novelty(list: &[usize], popularity: &[f64]) -> f64 {
    if list.is_empty() {
        return 0.0;
    }
    list.iter().map(|&i| -popularity[i].ln()).sum::<f64>() / list.len() as f64
}

/// Share of `item_set` recommended to at least one user.
pub fn coverage<L: AsRef<[usize]>>(item_set: &[usize], lists: &[L], num_items: usize) -> f64 {
    if item_set.is_empty() {
        return 0.0;
    }
    let mut seen = vec![false; num_items];
    for l in lists {
        for &i in l.as_ref() {
            seen[i] = true;
        }
    }
    item_set.iter().filter(|&&i| seen[i]).count() as f64 / item_set.len() as f64
}

/// Head coverage minus tail coverage.
pub fn dpf<L: AsRef<[usize]>>(head: &[usize], tail: &[usize], lists: &[L], num_items: usize) -> f64 {
    coverage(head, lists, num_items) - coverage(tail, lists, num_items)
}

/// Everything metric computation needs besides the lists themselves.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    /// Clean training positives: the profile for calibration and GAP.
    pub train: &'a [Vec<usize>],
    pub test: &'a [Vec<usize>],
    pub segments: &'a SegmentMap,
    pub item_categories: &'a [Vec<usize>],
    pub num_categories: usize,
    pub k: usize,
    pub alpha: f64,
    pub weighting: Weighting,
}

/// Top-k lists of one user: the overall list and one list ranked within
/// each item group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLists {
    pub overall: Vec<usize>,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
}

impl UserLists {
    /// Derives every list from one score vector.
    pub fn from_scores(scores: &[f64], k: usize, exclude: &[usize], segments: &SegmentMap) -> Self {
        let overall = top_k_indices(scores, k, exclude);
        // push the other group below everything, then drop it
        let within = |group: ItemGroup| {
            let masked: Vec<f64> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| if segments.group(i) == group { s } else { f64::NEG_INFINITY })
                .collect();
            top_k_indices(&masked, k, exclude)
                .into_iter()
                .filter(|&i| segments.group(i) == group)
                .collect::<Vec<_>>()
        };
        UserLists {
            overall,
            head: within(ItemGroup::I1),
            tail: within(ItemGroup::I2),
        }
    }

    pub fn for_group(&self, group: Option<ItemGroup>) -> &[usize] {
        match group {
            None => &self.overall,
            Some(ItemGroup::I1) => &self.head,
            Some(ItemGroup::I2) => &self.tail,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Metrics over `users`, using the lists restricted to `group` (or the
/// overall lists when `group` is `None`).
fn group_metrics(ctx: &EvalContext<'_>, lists: &[UserLists], users: &[usize], group: Option<ItemGroup>) -> GroupMetrics {
    let seg = ctx.segments;
    let pop = &seg.popularity;
    let in_group = |i: &usize| group.is_none_or(|g| seg.group(*i) == g);

    let mut ndcgs = Vec::new();
    let mut klds = Vec::new();
    let mut novelties = Vec::new();
    let mut profiles: Vec<Vec<usize>> = Vec::new();
    let mut recs: Vec<&[usize]> = Vec::new();
    for &u in users {
        let list = lists[u].for_group(group);
        let relevant: Vec<usize> = ctx.test[u].iter().copied().filter(in_group).collect();
        if !relevant.is_empty() {
            ndcgs.push(ndcg_at_k(list, &relevant, ctx.k));
        }
        if !ctx.train[u].is_empty() && !list.is_empty() {
            klds.push(kld_miscalibration(
                &ctx.train[u],
                list,
                ctx.item_categories,
                ctx.num_categories,
                ctx.alpha,
                ctx.weighting,
            ));
        }
        if !list.is_empty() {
            novelties.push(novelty(list, pop));
        }
        let profile: Vec<usize> = ctx.train[u].iter().copied().filter(in_group).collect();
        if !profile.is_empty() && !list.is_empty() {
            profiles.push(profile);
            recs.push(list);
        }
    }
    let lift = match (gap(&profiles, pop), gap(&recs, pop)) {
        (Some(p), Some(q)) => popularity_lift(p, q).ok(),
        _ => None,
    };
    let all_lists: Vec<&[usize]> = users.iter().map(|&u| lists[u].for_group(group)).collect();
    let num_items = pop.len();
    let item_set: Vec<usize> = match group {
        None => (0..num_items).collect(),
        Some(g) => seg.items_in(g),
    };
    let dpf_value = match group {
        None if !users.is_empty() => Some(dpf(
            &seg.items_in(ItemGroup::I1),
            &seg.items_in(ItemGroup::I2),
            &all_lists,
            num_items,
        )),
        _ => None,
    };
    GroupMetrics {
        users: users.len(),
        ndcg_users: ndcgs.len(),
        ndcg: mean(&ndcgs),
        kld: mean(&klds),
        popularity_lift: lift,
        novelty: mean(&novelties),
        coverage: (!users.is_empty()).then(|| coverage(&item_set, &all_lists, num_items)),
        dpf: dpf_value,
    }
}

/// Assembles a report from precomputed lists.
pub fn report_from_lists(ctx: &EvalContext<'_>, lists: &[UserLists]) -> Result<MetricsReport> {
    if lists.len() != ctx.train.len() || ctx.test.len() != ctx.train.len() {
        return Err(Error::invalid("one list set per user is required"));
    }
    let all_users: Vec<usize> = (0..lists.len()).collect();
    let overall = group_metrics(ctx, lists, &all_users, None);

    let mut by_user_type = BTreeMap::new();
    for t in UserType::ALL {
        let users = ctx.segments.users_of(t);
        by_user_type.insert(t, group_metrics(ctx, lists, &users, None));
    }
    let mut by_item_group = BTreeMap::new();
    for g in ItemGroup::ALL {
        by_item_group.insert(g, group_metrics(ctx, lists, &all_users, Some(g)));
    }
    Ok(MetricsReport {
        k: ctx.k,
        users: overall.users,
        ndcg_users: overall.ndcg_users,
        items: ctx.segments.popularity.len(),
        ndcg: overall.ndcg.unwrap_or(0.0),
        kld: overall.kld.unwrap_or(0.0),
        popularity_lift: overall.popularity_lift.unwrap_or(0.0),
        novelty: overall.novelty.unwrap_or(0.0),
        coverage: overall.coverage.unwrap_or(0.0),
        dpf: overall.dpf.unwrap_or(0.0),
        by_user_type,
        by_item_group,
    })
}

/// Ranks every user and computes all metrics on the test split.
///
/// `history` is what the model sees for each user (the LDP-perturbed rows
/// for LDP runs). Clean training and validation items are never
/// recommended.
pub fn evaluate(
    state: &ModelState,
    split: &SplitDataset,
    segments: &SegmentMap,
    history: &[Vec<usize>],
    item_categories: &[Vec<usize>],
    num_categories: usize,
    k: usize,
) -> Result<MetricsReport> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let lists = (0..split.num_users())
        .into_par_iter()
        .map(|u| {
            let scores = state.score_all(u, &history[u])?;
            let mut exclude: Vec<usize> = split.train[u].iter().chain(&split.valid[u]).copied().collect();
            exclude.sort_unstable();
            exclude.dedup();
            Ok(UserLists::from_scores(&scores, k, &exclude, segments))
        })
        .collect::<Result<Vec<_>>>()?;
    let ctx = EvalContext {
        train: &split.train,
        test: &split.test,
        segments,
        item_categories,
        num_categories,
        k,
        alpha: DEFAULT_ALPHA,
        weighting: Weighting::Uniform,
    };
    report_from_lists(&ctx, &lists)
}
