//! Synthetic rating data with MovieLens-like structure: clustered tastes,
//! power-law item popularity and a handful of genres. Serves as a built-in
//! fixture for tests, the `verify` command and demos.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RawDataset, RawRating};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub genres: usize,
    pub min_profile: usize,
    pub max_profile: usize,
    /// Zipf exponent of the item popularity weights.
    pub popularity_exponent: f64,
    /// Probability that a user's next item comes from their favourite cluster.
    pub affinity: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn tiny(seed: u64) -> Self {
        Self {
            users: 60,
            items: 80,
            clusters: 4,
            genres: 6,
            min_profile: 10,
            max_profile: 30,
            popularity_exponent: 0.8,
            affinity: 0.8,
            seed,
        }
    }

    /// Roughly the shape of a 1,000-user MovieLens subsample.
    pub fn movielens_like(seed: u64) -> Self {
        Self {
            users: 1000,
            items: 1200,
            clusters: 8,
            genres: 18,
            min_profile: 20,
            max_profile: 200,
            popularity_exponent: 0.9,
            affinity: 0.75,
            seed,
        }
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::movielens_like(0)
    }
}

pub fn generate(spec: &SyntheticSpec) -> RawDataset {
    let mut rng = rng::stream(spec.seed, 0x5EED);
    let n_items = spec.items.max(1);
    let clusters = spec.clusters.clamp(1, n_items);

    let mut ranks: Vec<usize> = (0..n_items).collect();
    ranks.shuffle(&mut rng);
    let weight: Vec<f64> = ranks
        .iter()
        .map(|&r| (r as f64 + 1.0).powf(-spec.popularity_exponent))
        .collect();
    let cluster_of: Vec<usize> = (0..n_items).map(|i| (i * 7919) % clusters).collect();
    let members: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..n_items).filter(|&i| cluster_of[i] == c).collect())
        .collect();
    let cluster_samplers: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| weight[i])).expect("nonempty cluster"))
        .collect();
    let global = WeightedIndex::new(&weight).expect("positive weights");

    let genres = spec.genres.max(1);
    let mut categories = HashMap::new();
    for i in 0..n_items {
        let mut g = vec![format!("Genre{:02}", cluster_of[i] % genres)];
        if genres > 1 && rng.random_bool(0.5) {
            let extra = format!("Genre{:02}", rng.random_range(0..genres));
            if extra != g[0] {
                g.push(extra);
            }
        }
        categories.insert(item_id(i), g);
    }

    let mut ratings = Vec::new();
    for u in 0..spec.users {
        let favourite = rng.random_range(0..clusters);
        let target = rng
            .random_range(spec.min_profile..=spec.max_profile.max(spec.min_profile))
            .min(n_items);
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while seen.len() < target && attempts < target * 50 {
            attempts += 1;
            let in_cluster = rng.random_bool(spec.affinity);
            let item = if in_cluster {
                members[favourite][cluster_samplers[favourite].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            if !seen.insert(item) {
                continue;
            }
            let rating = if cluster_of[item] == favourite {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=5)
            };
            ratings.push(RawRating {
                user: (u + 1).to_string(),
                item: item_id(item),
                rating,
                timestamp: Some(1_000_000_000 + (u * 10_000 + seen.len()) as i64),
            });
        }
    }

    RawDataset {
        ratings,
        categories,
        report: Default::default(),
    }
}

fn item_id(i: usize) -> String {
    (i + 1).to_string()
}

/// Writes `ratings.dat` and `movies.dat` in MovieLens `::` format.
pub fn write_movielens(raw: &RawDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ratings_path = dir.join("ratings.dat");
    let mut ratings = Vec::new();
    for r in &raw.ratings {
        writeln!(
            ratings,
            "{}::{}::{}::{}",
            r.user,
            r.item,
            r.rating,
            r.timestamp.unwrap_or(0)
        )
        .expect("write to vec");
    }
    std::fs::write(&ratings_path, ratings).map_err(|e| Error::io(&ratings_path, e))?;

    let movies_path = dir.join("movies.dat");
    let mut ids: Vec<&String> = raw.categories.keys().collect();
    ids.sort_by(|a, b| super::external_id_cmp(a, b));
    let mut movies = Vec::new();
    for id in ids {
        writeln!(movies, "{id}::Movie {id} (2000)::{}", raw.categories[id].join("|")).expect("write to vec");
    }
    std::fs::write(&movies_path, movies).map_err(|e| Error::io(&movies_path, e))
}
