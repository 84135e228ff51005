//! Ingestion, preprocessing, per-user splitting and popularity segmentation
//! of rating datasets.

mod cache;
mod movielens;
mod preprocess;
mod segment;
mod split;
pub mod synthetic;
mod yelp;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use cache::{read_cache, write_cache, CACHE_FORMAT, CACHE_VERSION};
pub use movielens::{parse_movielens, parse_movielens_str, MAX_MALFORMED_FRACTION};
pub use preprocess::{preprocess, subsample_users, PreprocessStats, MIN_INTERACTIONS, POSITIVE_THRESHOLD};
pub use segment::{segment, ItemGroup, SegmentMap, UserType, BLOCKBUSTER_FRACTION, HEAD_FRACTION, NICHE_FRACTION};
pub use split::{holdout_counts, split_per_user, SplitDataset, SplitRatios};
pub use yelp::{parse_yelp, parse_yelp_str};

/// One explicit rating as it appears in a raw dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    /// 1..=5
    pub rating: u8,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines: usize,
    pub issues: Vec<ParseIssue>,
}

impl ParseReport {
    pub fn malformed_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.issues.len() as f64 / self.lines as f64
        }
    }

    pub(crate) fn push(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(ParseIssue {
            line,
            message: message.into(),
        });
    }
}

/// Parsed ratings plus the category labels of every item that had any.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub ratings: Vec<RawRating>,
    pub categories: HashMap<String, Vec<String>>,
    pub report: ParseReport,
}

/// Deduplicated positive interactions with contiguous indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionStore {
    /// Per-user sorted item indices.
    pub positives: Vec<Vec<usize>>,
    /// Timestamps aligned with `positives`.
    pub timestamps: Vec<Vec<Option<i64>>>,
    /// Sorted category indices per item, never empty.
    pub item_categories: Vec<Vec<usize>>,
    pub category_names: Vec<String>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl InteractionStore {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.num_interactions() as f64 / (self.num_users() as f64 * self.num_items() as f64)
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == external)
    }

    pub fn item_index(&self, external: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == external)
    }

    /// Re-expands the store into raw ratings (all rated 5) with category
    /// labels, suitable for feeding back into [`preprocess`].
    pub fn to_raw(&self) -> RawDataset {
        let mut ratings = Vec::with_capacity(self.num_interactions());
        for (u, items) in self.positives.iter().enumerate() {
            for (k, &i) in items.iter().enumerate() {
                ratings.push(RawRating {
                    user: self.user_ids[u].clone(),
                    item: self.item_ids[i].clone(),
                    rating: 5,
                    timestamp: self.timestamps[u][k],
                });
            }
        }
        let categories = self
            .item_ids
            .iter()
            .zip(&self.item_categories)
            .map(|(id, cats)| {
                (
                    id.clone(),
                    cats.iter().map(|&c| self.category_names[c].clone()).collect(),
                )
            })
            .collect();
        RawDataset {
            ratings,
            categories,
            report: ParseReport::default(),
        }
    }

    pub fn stats(&self) -> StoreStats {
        let per_item: Vec<usize> = self.item_categories.iter().map(Vec::len).collect();
        StoreStats {
            users: self.num_users(),
            items: self.num_items(),
            interactions: self.num_interactions(),
            density: self.density(),
            categories: self.category_names.len(),
            min_categories_per_item: per_item.iter().copied().min().unwrap_or(0),
            max_categories_per_item: per_item.iter().copied().max().unwrap_or(0),
            mean_categories_per_item: if per_item.is_empty() {
                0.0
            } else {
                per_item.iter().sum::<usize>() as f64 / per_item.len() as f64
            },
        }
    }
}

/// Dataset summary in the layout of the usual item-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub categories: usize,
    pub min_categories_per_item: usize,
    pub max_categories_per_item: usize,
    pub mean_categories_per_item: f64,
}

impl std::fmt::Display for StoreStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<28}{:>12}", "Total items", self.items)?;
        writeln!(f, "{:<28}{:>12}", "Total users", self.users)?;
        writeln!(f, "{:<28}{:>12}", "# of interactions", self.interactions)?;
        writeln!(f, "{:<28}{:>11.2}%", "% of interactions", self.density * 100.0)?;
        writeln!(f, "{:<28}{:>12}", "# of item categories", self.categories)?;
        writeln!(f, "{:<28}{:>12}", "Min categories per item", self.min_categories_per_item)?;
        writeln!(f, "{:<28}{:>12}", "Max categories per item", self.max_categories_per_item)?;
        write!(f, "{:<28}{:>12.2}", "Mean categories per item", self.mean_categories_per_item)
    }
}

/// Orders external ids numerically when both parse as integers, otherwise
/// lexicographically, so MovieLens ids come out in their natural order.
pub(crate) fn external_id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}
