use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::InteractionStore;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// Per-user disjoint train / validation / test item sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    pub fn num_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }
}

/// Returns `(train, valid, test)` sizes for a user with `n` positives.
///
/// Validation and test each get `floor(ratio * n)` items, except that
/// validation always gets at least one because early stopping needs it.
pub fn holdout_counts(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let mut valid = (ratios.valid * n as f64).floor() as usize;
    let test = (ratios.test * n as f64).floor() as usize;
    if valid == 0 && n >= 2 {
        valid = 1;
    }
    (n - valid - test, valid, test)
}

/// Shuffles each user's positives with an RNG keyed by `(seed, user)` and
/// cuts them into train / validation / test.
pub fn split_per_user(store: &InteractionStore, ratios: SplitRatios, seed: u64) -> Result<SplitDataset> {
    let sum = ratios.train + ratios.valid + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.valid < 0.0 || ratios.test < 0.0 || ratios.train <= 0.0 {
        return Err(Error::invalid(format!("split ratios must be nonnegative and sum to 1, got {ratios:?}")));
    }
    let n_users = store.num_users();
    let mut split = SplitDataset {
        train: Vec::with_capacity(n_users),
        valid: Vec::with_capacity(n_users),
        test: Vec::with_capacity(n_users),
        seed,
    };
    for (u, items) in store.positives.iter().enumerate() {
        let (n_train, n_valid, _) = holdout_counts(items.len(), ratios);
        if n_train == 0 {
            return Err(Error::invalid(format!("user {u} has too few positives to split")));
        }
        let mut shuffled = items.clone();
        let mut rng = rng::stream(rng::derive(seed, u as u64), rng::tag::SPLIT);
        shuffled.shuffle(&mut rng);
        let mut train = shuffled[..n_train].to_vec();
        let mut valid = shuffled[n_train..n_train + n_valid].to_vec();
        let mut test = shuffled[n_train + n_valid..].to_vec();
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        split.train.push(train);
        split.valid.push(valid);
        split.test.push(test);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn store_from(profiles: Vec<Vec<usize>>, num_items: usize) -> InteractionStore {
        InteractionStore {
            timestamps: profiles.iter().map(|p| vec![None; p.len()]).collect(),
            user_ids: (0..profiles.len()).map(|u| u.to_string()).collect(),
            positives: profiles,
            item_categories: vec![vec![0]; num_items],
            category_names: vec!["g".into()],
            item_ids: (0..num_items).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn ten_items_split_exactly() {
        assert_eq!(holdout_counts(10, SplitRatios::default()), (8, 1, 1));
    }

    #[test]
    fn small_profiles_keep_one_validation_item() {
        // Hand enumeration of floor(0.1 n) with the one-validation minimum.
        let expected = [
            (5, (4, 1, 0)),
            (6, (5, 1, 0)),
            (7, (6, 1, 0)),
            (8, (7, 1, 0)),
            (9, (8, 1, 0)),
            (10, (8, 1, 1)),
            (11, (9, 1, 1)),
            (15, (13, 1, 1)),
            (19, (17, 1, 1)),
            (20, (16, 2, 2)),
        ];
        for (n, counts) in expected {
            assert_eq!(holdout_counts(n, SplitRatios::default()), counts, "n = {n}");
        }
        for n in 5..=20 {
            let (t, v, s) = holdout_counts(n, SplitRatios::default());
            assert_eq!(t + v + s, n);
            assert_eq!(s, n / 10);
            assert_eq!(v, (n / 10).max(1));
        }
    }

    #[test]
    fn same_seed_same_split() {
        let store = store_from(vec![(0..30).collect(), (5..17).collect()], 30);
        let a = split_per_user(&store, SplitRatios::default(), 11).unwrap();
        let b = split_per_user(&store, SplitRatios::default(), 11).unwrap();
        let c = split_per_user(&store, SplitRatios::default(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    proptest! {
        #[test]
        fn partitions_each_profile(
            profiles in proptest::collection::vec(
                proptest::collection::btree_set(0usize..60, 5..40), 1..20),
            seed in any::<u64>()
        ) {
            let profiles: Vec<Vec<usize>> = profiles.into_iter().map(|s| s.into_iter().collect()).collect();
            let store = store_from(profiles.clone(), 60);
            let split = split_per_user(&store, SplitRatios::default(), seed).unwrap();
            for (u, items) in profiles.iter().enumerate() {
                let train: BTreeSet<_> = split.train[u].iter().copied().collect();
                let valid: BTreeSet<_> = split.valid[u].iter().copied().collect();
                let test: BTreeSet<_> = split.test[u].iter().copied().collect();
                prop_assert!(train.is_disjoint(&valid));
                prop_assert!(train.is_disjoint(&test));
                prop_assert!(valid.is_disjoint(&test));
                let union: Vec<usize> = train.union(&valid).copied().collect::<BTreeSet<_>>()
                    .union(&test).copied().collect();
                prop_assert_eq!(&union, items);
                prop_assert!(!train.is_empty());
                prop_assert!(!valid.is_empty());
            }
        }
    }
}
