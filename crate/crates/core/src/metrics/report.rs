use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemGroup, UserType};

/// Metrics for one user type or item group. `None` marks a value that is
/// undefined for the group, e.g. NDCG for a group nobody has test items in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub users: usize,
    /// Users with at least one relevant test item.
    pub ndcg_users: usize,
    pub ndcg: Option<f64>,
    pub kld: Option<f64>,
    pub popularity_lift: Option<f64>,
    pub novelty: Option<f64>,
    pub coverage: Option<f64>,
    /// Only defined for user groups.
    pub dpf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub users: usize,
    pub ndcg_users: usize,
    pub items: usize,
    pub ndcg: f64,
    pub kld: f64,
    pub popularity_lift: f64,
    pub novelty: f64,
    pub coverage: f64,
    pub dpf: f64,
    pub by_user_type: BTreeMap<UserType, GroupMetrics>,
    /// Lists and relevance restricted to the group's items; the ideal DCG
    /// counts only relevant items of the group.
    pub by_item_group: BTreeMap<ItemGroup, GroupMetrics>,
}

const GROUP_FIELDS: [&str; 6] = ["ndcg", "kld", "popularity_lift", "novelty", "coverage", "dpf"];

/// Column names of [`MetricsReport::flat`], in order.
///
/// Overall values use the bare metric name. Group values are prefixed with
/// the group, e.g. `niche.ndcg` or `I2.coverage`.
pub fn flat_columns() -> Vec<String> {
    let mut cols: Vec<String> = ["k", "users", "ndcg_users", "items"]
        .into_iter()
        .chain(GROUP_FIELDS)
        .map(String::from)
        .collect();
    let groups = UserType::ALL
        .iter()
        .map(|t| t.as_str())
        .chain(ItemGroup::ALL.iter().map(|g| g.as_str()));
    for g in groups {
        for f in GROUP_FIELDS {
            cols.push(format!("{g}.{f}"));
        }
    }
    cols
}

impl GroupMetrics {
    fn values(&self) -> [Option<f64>; 6] {
        [
            self.ndcg,
            self.kld,
            self.popularity_lift,
            self.novelty,
            self.coverage,
            self.dpf,
        ]
    }

    /// Value of a named metric.
    pub fn get(&self, metric: &str) -> Option<f64> {
        GROUP_FIELDS
            .iter()
            .position(|&f| f == metric)
            .and_then(|p| self.values()[p])
    }
}

impl MetricsReport {
    /// One flat record matching [`flat_columns`]; undefined group values
    /// are `None`.
    pub fn flat(&self) -> Vec<(String, Option<f64>)> {
        let mut values = vec![
            Some(self.k as f64),
            Some(self.users as f64),
            Some(self.ndcg_users as f64),
            Some(self.items as f64),
            Some(self.ndcg),
            Some(self.kld),
            Some(self.popularity_lift),
            Some(self.novelty),
            Some(self.coverage),
            Some(self.dpf),
        ];
        for t in UserType::ALL {
            values.extend(self.by_user_type.get(&t).map_or([None; 6], GroupMetrics::values));
        }
        for g in ItemGroup::ALL {
            values.extend(self.by_item_group.get(&g).map_or([None; 6], GroupMetrics::values));
        }
        flat_columns().into_iter().zip(values).collect()
    }

    /// Overall value of a named metric.
    pub fn overall(&self, metric: &str) -> Option<f64> {
        match metric {
            "ndcg" => Some(self.ndcg),
            "kld" => Some(self.kld),
            "popularity_lift" => Some(self.popularity_lift),
            "novelty" => Some(self.novelty),
            "coverage" => Some(self.coverage),
            "dpf" => Some(self.dpf),
            _ => None,
        }
    }

    /// Value of `metric` for a group named as in [`flat_columns`], or the
    /// overall value for `"all"`.
    pub fn group_value(&self, group: &str, metric: &str) -> Option<f64> {
        if group == "all" {
            return self.overall(metric);
        }
        if let Some(t) = UserType::ALL.iter().find(|t| t.as_str() == group) {
            return self.by_user_type.get(t)?.get(metric);
        }
        let g = ItemGroup::ALL.iter().find(|g| g.as_str() == group)?;
        self.by_item_group.get(g)?.get(metric)
    }
}

/// Metric names shared by the overall record and the groups.
pub const METRICS: [&str; 6] = GROUP_FIELDS;

/// Group labels in report order, starting with `"all"`.
pub fn group_labels() -> Vec<&'static str> {
    std::iter::once("all")
        .chain(UserType::ALL.iter().map(|t| t.as_str()))
        .chain(ItemGroup::ALL.iter().map(|g| g.as_str()))
        .collect()
}
