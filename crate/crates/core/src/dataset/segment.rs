use serde::{Deserialize, Serialize};

use super::{InteractionStore, SplitDataset};

/// Share of items, by popularity rank, that form the head group.
pub const HEAD_FRACTION: f64 = 0.2;
/// Users with a head-item share strictly below this are niche.
pub const NICHE_FRACTION: f64 = 0.5;
/// Users with a head-item share strictly above this are blockbuster.
pub const BLOCKBUSTER_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserType {
    Niche,
    Diverse,
    Blockbuster,
}

impl UserType {
    pub const ALL: [UserType; 3] = [UserType::Niche, UserType::Diverse, UserType::Blockbuster];

    pub fn as_str(self) -> &'static str {
        match self {
            UserType::Niche => "niche",
            UserType::Diverse => "diverse",
            UserType::Blockbuster => "blockbuster",
        }
    }

    /// Classifies a profile containing `head` head items out of `total`.
    /// Both thresholds are exclusive.
    pub fn classify(head: usize, total: usize) -> UserType {
        // Integer comparisons so that exactly 50% / 85% land on "diverse".
        if 2 * head < total {
            UserType::Niche
        } else if 20 * head > 17 * total {
            UserType::Blockbuster
        } else {
            UserType::Diverse
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemGroup {
    /// Short head.
    I1,
    /// Long tail.
    I2,
}

impl ItemGroup {
    pub const ALL: [ItemGroup; 2] = [ItemGroup::I1, ItemGroup::I2];

    pub fn as_str(self) -> &'static str {
        match self {
            ItemGroup::I1 => "I1",
            ItemGroup::I2 => "I2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMap {
    /// Fraction of users holding the item among their training positives,
    /// floored at `1 / (num_users + 1)`.
    pub popularity: Vec<f64>,
    pub head: Vec<bool>,
    pub user_type: Vec<UserType>,
    /// Number of head items, i.e. the rank cutoff.
    pub head_threshold_rank: usize,
}

impl SegmentMap {
    pub fn group(&self, item: usize) -> ItemGroup {
        if self.head[item] {
            ItemGroup::I1
        } else {
            ItemGroup::I2
        }
    }

    pub fn items_in(&self, group: ItemGroup) -> Vec<usize> {
        (0..self.head.len()).filter(|&i| self.group(i) == group).collect()
    }

    pub fn users_of(&self, kind: UserType) -> Vec<usize> {
        (0..self.user_type.len()).filter(|&u| self.user_type[u] == kind).collect()
    }
}

pub fn segment(store: &InteractionStore, split: &SplitDataset) -> SegmentMap {
    let n_users = store.num_users();
    let n_items = store.num_items();
    let mut counts = vec![0usize; n_items];
    for items in &split.train {
        for &i in items {
            counts[i] += 1;
        }
    }
    let floor = 1.0 / (n_users as f64 + 1.0);
    let popularity: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                floor
            } else {
                c as f64 / n_users as f64
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..n_items).collect();
    order.sort_by(|&a, &b| popularity[b].total_cmp(&popularity[a]).then(a.cmp(&b)));
    let cutoff = (HEAD_FRACTION * n_items as f64).ceil() as usize;
    let mut head = vec![false; n_items];
    for &i in &order[..cutoff] {
        head[i] = true;
    }

    let user_type = store
        .positives
        .iter()
        .map(|items| {
            let h = items.iter().filter(|&&i| head[i]).count();
            UserType::classify(h, items.len())
        })
        .collect();

    SegmentMap {
        popularity,
        head,
        user_type,
        head_threshold_rank: cutoff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_per_user, SplitRatios};

    #[test]
    fn thresholds_are_exclusive() {
        assert_eq!(UserType::classify(9, 10), UserType::Blockbuster);
        assert_eq!(UserType::classify(4, 10), UserType::Niche);
        assert_eq!(UserType::classify(5, 10), UserType::Diverse);
        assert_eq!(UserType::classify(17, 20), UserType::Diverse);
        assert_eq!(UserType::classify(18, 20), UserType::Blockbuster);
        assert_eq!(UserType::classify(0, 5), UserType::Niche);
        assert_eq!(UserType::classify(5, 5), UserType::Blockbuster);
    }

    fn toy_store() -> InteractionStore {
        // item 0 held by everyone, items 1..=9 by a few users each
        let positives: Vec<Vec<usize>> = (0..10)
            .map(|u| {
                let mut v = vec![0];
                v.extend((1..10).filter(|i| (i + u) % 3 != 0));
                v
            })
            .collect();
        InteractionStore {
            timestamps: positives.iter().map(|p| vec![None; p.len()]).collect(),
            user_ids: (0..10).map(|u| u.to_string()).collect(),
            positives,
            item_categories: vec![vec![0]; 12],
            category_names: vec!["g".into()],
            item_ids: (0..12).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn head_size_and_floor() {
        let store = toy_store();
        let mut split = split_per_user(&store, SplitRatios::default(), 0).unwrap();
        // put item 0 in every training set
        for u in 0..10 {
            split.valid[u].retain(|&i| i != 0);
            split.test[u].retain(|&i| i != 0);
            if !split.train[u].contains(&0) {
                split.train[u].insert(0, 0);
            }
        }
        let seg = segment(&store, &split);
        assert_eq!(seg.popularity[0], 1.0);
        assert!(seg.head[0]);
        assert_eq!(seg.head.iter().filter(|&&h| h).count(), 3); // ceil(0.2 * 12)
        assert_eq!(seg.head_threshold_rank, 3);
        // items 10, 11 are never held
        assert_eq!(seg.popularity[10], 1.0 / 11.0);
        assert_eq!(seg.items_in(ItemGroup::I1).len() + seg.items_in(ItemGroup::I2).len(), 12);
    }

    #[test]
    fn ties_break_by_index() {
        let store = InteractionStore {
            positives: vec![(0..5).collect(); 5],
            timestamps: vec![vec![None; 5]; 5],
            item_categories: vec![vec![0]; 5],
            category_names: vec!["g".into()],
            user_ids: (0..5).map(|u| u.to_string()).collect(),
            item_ids: (0..5).map(|i| i.to_string()).collect(),
        };
        let split = SplitDataset {
            train: vec![(0..5).collect(); 5],
            valid: vec![vec![]; 5],
            test: vec![vec![]; 5],
            seed: 0,
        };
        let seg = segment(&store, &split);
        assert_eq!(seg.head, vec![true, false, false, false, false]);
        assert!(seg.user_type.iter().all(|&t| t == UserType::Niche));
    }
}
