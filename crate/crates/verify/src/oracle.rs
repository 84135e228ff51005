//! Straight-line reimplementation of the metrics, kept deliberately naive.
//! It shares nothing with `privrec_core::metrics` except the record layout.

use std::collections::HashSet;

use privrec_core::dataset::{ItemGroup, UserType};

/// A small evaluation problem with explicit model scores.
#[derive(Debug, Clone)]
pub struct Instance {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub scores: Vec<Vec<f64>>,
    pub popularity: Vec<f64>,
    pub head: Vec<bool>,
    pub user_type: Vec<UserType>,
    pub categories: Vec<Vec<usize>>,
    pub num_categories: usize,
    pub k: usize,
    pub alpha: f64,
}

impl Instance {
    fn num_items(&self) -> usize {
        self.popularity.len()
    }

    fn in_group(&self, item: usize, group: Option<ItemGroup>) -> bool {
        match group {
            None => true,
            Some(ItemGroup::I1) => self.head[item],
            Some(ItemGroup::I2) => !self.head[item],
        }
    }

    /// Best `k` items for `user` within `group`, never a training item.
    pub fn list(&self, user: usize, group: Option<ItemGroup>) -> Vec<usize> {
        let mut cands: Vec<usize> = (0..self.num_items())
            .filter(|i| !self.train[user].contains(i) && self.in_group(*i, group))
            .collect();
        let s = &self.scores[user];
        cands.sort_by(|&a, &b| {
            if s[a] > s[b] {
                std::cmp::Ordering::Less
            } else if s[a] < s[b] {
                std::cmp::Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        cands.truncate(self.k);
        cands
    }
}

pub fn ndcg(list: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, item) in list.iter().enumerate() {
        if pos < k && relevant.contains(item) {
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / (pos as f64 + 2.0).log2();
    }
    dcg / idcg
}

fn distribution(items: &[usize], cats: &[Vec<usize>], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    let mut count = 0.0;
    for &i in items {
        if cats[i].is_empty() {
            continue;
        }
        count += 1.0;
        for &c in &cats[i] {
            d[c] += 1.0 / cats[i].len() as f64;
        }
    }
    for x in d.iter_mut() {
        if count > 0.0 {
            *x /= count;
        }
    }
    d
}

pub fn kld(history: &[usize], list: &[usize], cats: &[Vec<usize>], n: usize, alpha: f64) -> f64 {
    let p = distribution(history, cats, n);
    let q = distribution(list, cats, n);
    let mut total = 0.0;
    for z in 0..n {
        if p[z] > 0.0 {
            total += p[z] * (p[z] / ((1.0 - alpha) * q[z] + alpha * p[z])).ln();
        }
    }
    total
}

fn avg(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn covered(inst: &Instance, users: &[usize], lists: &[Vec<usize>], group: Option<ItemGroup>) -> f64 {
    let mut seen = HashSet::new();
    for &u in users {
        seen.extend(lists[u].iter().copied());
    }
    let set: Vec<usize> = (0..inst.num_items()).filter(|&i| inst.in_group(i, group)).collect();
    if set.is_empty() {
        return 0.0;
    }
    set.iter().filter(|i| seen.contains(i)).count() as f64 / set.len() as f64
}

struct Group {
    users: usize,
    ndcg_users: usize,
    values: [Option<f64>; 6],
}

fn group(inst: &Instance, users: &[usize], lists: &[Vec<usize>], g: Option<ItemGroup>) -> Group {
    let pop = &inst.popularity;
    let mut nd = Vec::new();
    let mut kl = Vec::new();
    let mut nov = Vec::new();
    let mut prof_means = Vec::new();
    let mut rec_means = Vec::new();
    for &u in users {
        let list = &lists[u];
        let rel: Vec<usize> = inst.test[u].iter().copied().filter(|&i| inst.in_group(i, g)).collect();
        if !rel.is_empty() {
            nd.push(ndcg(list, &rel, inst.k));
        }
        if !inst.train[u].is_empty() && !list.is_empty() {
            kl.push(kld(&inst.train[u], list, &inst.categories, inst.num_categories, inst.alpha));
        }
        if !list.is_empty() {
            let logs: Vec<f64> = list.iter().map(|&i| -pop[i].ln()).collect();
            nov.push(avg(&logs).unwrap());
        }
        let prof: Vec<f64> = inst.train[u]
            .iter()
            .filter(|&&i| inst.in_group(i, g))
            .map(|&i| pop[i])
            .collect();
        if !prof.is_empty() && !list.is_empty() {
            prof_means.push(avg(&prof).unwrap());
            let rec: Vec<f64> = list.iter().map(|&i| pop[i]).collect();
            rec_means.push(avg(&rec).unwrap());
        }
    }
    let lift = match (avg(&prof_means), avg(&rec_means)) {
        (Some(p), Some(q)) if p > 0.0 => Some((q - p) / p),
        _ => None,
    };
    let coverage = if users.is_empty() { None } else { Some(covered(inst, users, lists, g)) };
    let dpf = if g.is_none() && !users.is_empty() {
        Some(covered(inst, users, lists, Some(ItemGroup::I1)) - covered(inst, users, lists, Some(ItemGroup::I2)))
    } else {
        None
    };
    Group {
        users: users.len(),
        ndcg_users: nd.len(),
        values: [avg(&nd), avg(&kl), lift, avg(&nov), coverage, dpf],
    }
}

/// Flat record in the column order of `MetricsReport::flat`.
pub fn flat_report(inst: &Instance) -> Vec<Option<f64>> {
    let n_users = inst.train.len();
    let overall: Vec<Vec<usize>> = (0..n_users).map(|u| inst.list(u, None)).collect();
    let head: Vec<Vec<usize>> = (0..n_users).map(|u| inst.list(u, Some(ItemGroup::I1))).collect();
    let tail: Vec<Vec<usize>> = (0..n_users).map(|u| inst.list(u, Some(ItemGroup::I2))).collect();
    let everyone: Vec<usize> = (0..n_users).collect();

    let all = group(inst, &everyone, &overall, None);
    let mut out = vec![
        Some(inst.k as f64),
        Some(all.users as f64),
        Some(all.ndcg_users as f64),
        Some(inst.num_items() as f64),
    ];
    out.extend(all.values.iter().map(|v| Some(v.unwrap_or(0.0))));
    for t in [UserType::Niche, UserType::Diverse, UserType::Blockbuster] {
        let users: Vec<usize> = everyone.iter().copied().filter(|&u| inst.user_type[u] == t).collect();
        out.extend(group(inst, &users, &overall, None).values);
    }
    out.extend(group(inst, &everyone, &head, Some(ItemGroup::I1)).values);
    out.extend(group(inst, &everyone, &tail, Some(ItemGroup::I2)).values);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert!((ndcg(&[5, 3], &[3], 2) - 1.0 / 3f64.log2()).abs() < 1e-15);
        let cats = vec![vec![0], vec![1]];
        assert!((kld(&[0], &[1], &cats, 2, 0.01) - 100f64.ln()).abs() < 1e-12);
    }
}
