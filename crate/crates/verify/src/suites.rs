use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use privrec_core::dataset::synthetic::{self, SyntheticSpec};
use privrec_core::dataset::{parse_movielens, preprocess, split_per_user, SegmentMap, SplitRatios, UserType};
use privrec_core::dpsgd::{
    default_orders, noise_multiplier_for, rdp_subsampled_gaussian, PrivacyLedger, SparseGradient,
};
use privrec_core::ldp::{flip_probabilities, perturb_user};
use privrec_core::metrics::{report_from_lists, EvalContext, UserLists, Weighting, DEFAULT_ALPHA};
use privrec_core::models::{
    train, LrSchedule, ModelDims, ModelKind, ModelState, PrivacyRegime, TrainConfig, TrainData, TrainExample,
};

use crate::oracle::{self, Instance};
use crate::{SuiteResult, Violation};

pub const GRADIENT_DRAWS: usize = 100;
pub const METRIC_INSTANCES: usize = 10;
/// Randomized-response events per rate and budget.
pub const LDP_EVENTS: usize = 100_000;
/// Allowed distance from the expected count, in binomial standard deviations.
pub const LDP_SIGMAS: f64 = 4.0;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const GRADIENT_TOL_SATURATED: f64 = 1e-3;
pub const METRIC_TOL: f64 = 1e-12;
pub const ACCOUNTANT_TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fail<T>(invariant: &str, detail: impl Into<String>) -> Result<T, Violation> {
    Err(Violation::new(invariant, detail))
}

/// Empirical retention and addition rates of randomized response.
pub fn ldp_rates() -> SuiteResult {
    let items = 2000;
    let positives: Vec<usize> = (0..items).step_by(2).collect();
    let reps = LDP_EVENTS / positives.len();
    let mut worst: f64 = 0.0;
    for eps in [0.5, 1.0, 2.0] {
        let (p_pos, p_neg) = flip_probabilities(eps).map_err(|e| Violation::new("ldp-rates", e.to_string()))?;
        let mut r = rng(eps.to_bits());
        let (mut kept, mut added) = (0usize, 0usize);
        for _ in 0..reps {
            let out = perturb_user(&positives, items, p_pos, p_neg, &mut r);
            let k = out.iter().filter(|&&i| i % 2 == 0).count();
            kept += k;
            added += out.len() - k;
        }
        let n = (reps * positives.len()) as f64;
        for (what, count, p) in [("retention", kept, p_pos), ("addition", added, p_neg)] {
            let z = (count as f64 - n * p).abs() / (n * p * (1.0 - p)).sqrt();
            worst = worst.max(z);
            if z > LDP_SIGMAS {
                return fail(
                    "randomized-response rate",
                    format!("eps {eps}: {what} count {count} of {n} is {z:.2} sd from p = {p:.6}"),
                );
            }
        }
    }
    Ok(format!("eps in {{0.5, 1, 2}}, {LDP_EVENTS} events per rate, worst deviation {worst:.2} sd"))
}

/// A clipping routine under test.
pub type ClipFn = fn(&mut SparseGradient, f64);

pub fn reference_clip(g: &mut SparseGradient, c: f64) {
    g.clip(c).expect("finite gradient");
}

/// Mutation fixture: rescales every gradient to norm `c`, including those
/// already inside the ball. The gradient suite must reject it.
pub fn broken_clip(g: &mut SparseGradient, c: f64) {
    let n = g.norm();
    if n > 0.0 {
        g.divide(n / c);
    }
}

fn check_dims() -> ModelDims {
    ModelDims {
        num_users: 5,
        num_items: 8,
        latent_dim: 3,
        gmf_dim: 3,
        mlp_layers: vec![6, 4, 2],
        dropout: 0.5,
        vae_hidden: 5,
        vae_latent: 3,
        vae_beta: 1.0,
    }
}

fn draw_example(kind: ModelKind, d: &ModelDims, r: &mut ChaCha8Rng) -> TrainExample {
    let user = r.random_range(0..d.num_users);
    match kind {
        ModelKind::Svd | ModelKind::Ncf => TrainExample::Pointwise {
            user,
            item: r.random_range(0..d.num_items),
            label: f64::from(u8::from(r.random_bool(0.5))),
        },
        ModelKind::Bpr => {
            let pos = r.random_range(0..d.num_items);
            let neg = (pos + r.random_range(1..d.num_items)) % d.num_items;
            TrainExample::Triple { user, pos, neg }
        }
        ModelKind::Vae => {
            let mut items: Vec<usize> = (0..d.num_items).filter(|_| r.random_bool(0.35)).collect();
            if items.is_empty() {
                items.push(r.random_range(0..d.num_items));
            }
            TrainExample::Row { user, items }
        }
    }
}

/// Central differences against the analytic gradient, and `clip` against
/// the textbook projection of that gradient.
pub fn gradients(draws: usize, clip: ClipFn) -> SuiteResult {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        let mut r = rng(kind as u64 + 17);
        for d in 0..draws {
            let mut state = ModelState::init(kind, check_dims(), d as u64)
                .map_err(|e| Violation::new("model init", e.to_string()))?;
            // Move off the init point: with zero biases a fully dropped layer
            // puts the next ReLU exactly on its kink, where there is no
            // derivative to compare against.
            let spread = if d % 2 == 1 { 0.5 } else { 0.05 };
            for p in state.params_mut() {
                *p += r.random_range(-spread..spread);
            }
            let ex = draw_example(kind, &state.dims, &mut r);
            let draw = r.random::<u64>();
            let loss_at = |s: &ModelState| s.loss_and_grad(&ex, Some(draw)).map(|(l, _)| l);
            let (_, g) = state
                .loss_and_grad(&ex, Some(draw))
                .map_err(|e| Violation::new("finite loss", e.to_string()))?;
            let n = state.num_params();
            let analytic = g.to_flat(n).0;
            let mut fd = vec![0.0; n];
            for i in 0..n {
                let orig = state.params()[i];
                state.params_mut()[i] = orig + h;
                let up = loss_at(&state).map_err(|e| Violation::new("finite loss", e.to_string()))?;
                state.params_mut()[i] = orig - h;
                let down = loss_at(&state).map_err(|e| Violation::new("finite loss", e.to_string()))?;
                state.params_mut()[i] = orig;
                fd[i] = (up - down) / (2.0 * h);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
            let scale = norm(&fd).max(norm(&analytic));
            let err = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
            // a vanishing gradient means a saturated activation
            let tol = if scale < 1e-6 { GRADIENT_TOL_SATURATED } else { GRADIENT_TOL };
            worst = worst.max(err);
            if err > tol {
                return fail(
                    "finite-difference agreement",
                    format!("{kind} draw {d}: relative error {err:.3e} > {tol:.0e}"),
                );
            }

            // clip at a bound on either side of the gradient norm
            let gn = norm(&analytic);
            let c = gn * r.random_range(0.3..3.0) + 1e-12;
            let mut clipped = g.clone();
            clip(&mut clipped, c);
            let got = clipped.to_flat(n).0;
            let factor = if gn > c { c / gn } else { 1.0 };
            for (i, (&a, &b)) in got.iter().zip(&analytic).enumerate() {
                let want = b * factor;
                if (a - want).abs() > 1e-12 * gn.max(1.0) {
                    return fail(
                        "per-example clipping",
                        format!("{kind} draw {d}, C = {c:.4e}, norm {gn:.4e}: coordinate {i} is {a:e}, want {want:e}"),
                    );
                }
            }
        }
    }
    Ok(format!(
        "{draws} draws per model, worst relative error {worst:.2e}; clipping matches g * min(1, C/|g|)"
    ))
}

pub fn accountant() -> SuiteResult {
    for sigma in [0.5, 1.0, 2.0, 4.844_805_262_605_389] {
        for &alpha in &default_orders() {
            let got = rdp_subsampled_gaussian(1.0, sigma, alpha).map_err(|e| Violation::new("rdp", e.to_string()))?;
            let want = alpha / (2.0 * sigma * sigma);
            if (got - want).abs() > ACCOUNTANT_TOL * want.max(1.0) {
                return fail("full-batch RDP = alpha / (2 sigma^2)", format!("sigma {sigma}, alpha {alpha}: {got} vs {want}"));
            }
        }
    }
    let mut r = rng(4);
    for point in 0..100 {
        let q = r.random_range(0.001..0.2);
        let sigma = r.random_range(0.3..6.0);
        let steps = r.random_range(1..5000u64);
        let delta = 1e-5;
        let eps = |q: f64, s: f64, t: u64| {
            PrivacyLedger::new(q, s)
                .and_then(|l| l.with_steps(t).epsilon(delta))
                .map_err(|e| Violation::new("ledger", e.to_string()))
        };
        let base = eps(q, sigma, steps)?;
        let more_steps = eps(q, sigma, steps + r.random_range(1..1000))?;
        let more_noise = eps(q, sigma * r.random_range(1.01..2.0), steps)?;
        if more_steps < base {
            return fail("epsilon non-decreasing in steps", format!("point {point}: {more_steps} < {base}"));
        }
        if more_noise > base {
            return fail("epsilon non-increasing in sigma", format!("point {point}: {more_noise} > {base}"));
        }
    }
    let sigma = noise_multiplier_for(1.0, 1e-5).map_err(|e| Violation::new("noise multiplier", e.to_string()))?;
    if ((sigma - 4.84) / 4.84).abs() > 0.005 {
        return fail("noise multiplier for (1, 1e-5)", format!("{sigma} not within 0.5% of 4.84"));
    }
    Ok(format!("closed form within {ACCOUNTANT_TOL:e}; monotone on 100 points; sigma(1, 1e-5) = {sigma:.4}"))
}

fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let users = r.random_range(1..=10);
    let items = r.random_range(2..=10);
    let num_categories = 4;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..users {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for i in 0..items {
            match r.random_range(0..4) {
                0 => tr.push(i),
                1 => te.push(i),
                _ => {}
            }
        }
        train.push(tr);
        test.push(te);
    }
    Instance {
        scores: (0..users)
            .map(|_| (0..items).map(|_| (r.random_range(0.0..1.0f64) * 8.0).round() / 8.0).collect())
            .collect(),
        popularity: (0..items).map(|_| r.random_range(0.05..1.0)).collect(),
        head: (0..items).map(|_| r.random_bool(0.3)).collect(),
        user_type: (0..users)
            .map(|_| [UserType::Niche, UserType::Diverse, UserType::Blockbuster][r.random_range(0..3)])
            .collect(),
        categories: (0..items)
            .map(|_| {
                let mut c: Vec<usize> = (0..num_categories).filter(|_| r.random_bool(0.4)).collect();
                if c.is_empty() {
                    c.push(r.random_range(0..num_categories));
                }
                c
            })
            .collect(),
        num_categories,
        k: r.random_range(1..=5),
        alpha: DEFAULT_ALPHA,
        train,
        test,
    }
}

/// The report built by the core crate against the naive reimplementation.
pub fn metric_oracles(instances: usize) -> SuiteResult {
    let names = privrec_core::metrics::flat_columns();
    for seed in 0..instances as u64 {
        let inst = random_instance(seed);
        let segments = SegmentMap {
            popularity: inst.popularity.clone(),
            head: inst.head.clone(),
            user_type: inst.user_type.clone(),
            head_threshold_rank: inst.head.iter().filter(|&&h| h).count(),
        };
        let lists: Vec<UserLists> = (0..inst.train.len())
            .map(|u| UserLists::from_scores(&inst.scores[u], inst.k, &inst.train[u], &segments))
            .collect();
        for (u, l) in lists.iter().enumerate() {
            if l.overall != inst.list(u, None) {
                return fail("top-k ranking", format!("instance {seed}, user {u}: {:?} vs {:?}", l.overall, inst.list(u, None)));
            }
        }
        let ctx = EvalContext {
            train: &inst.train,
            test: &inst.test,
            segments: &segments,
            item_categories: &inst.categories,
            num_categories: inst.num_categories,
            k: inst.k,
            alpha: inst.alpha,
            weighting: Weighting::Uniform,
        };
        let got = report_from_lists(&ctx, &lists).map_err(|e| Violation::new("report", e.to_string()))?.flat();
        let want = oracle::flat_report(&inst);
        for ((name, g), w) in got.iter().zip(&want) {
            let ok = match (g, w) {
                (Some(a), Some(b)) => (a - b).abs() <= METRIC_TOL,
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return fail("metric equals brute force", format!("instance {seed}, {name}: {g:?} vs {w:?}"));
            }
        }
        debug_assert_eq!(names.len(), want.len());
    }
    Ok(format!("{instances} random instances, {} values each, within {METRIC_TOL:e}", names.len()))
}

/// DPSGD with no clipping and no noise must be plain SGD, bit for bit.
pub fn noiseless_equivalence() -> SuiteResult {
    let raw = synthetic::generate(&SyntheticSpec::tiny(2));
    let (store, _) = preprocess(&raw).map_err(|e| Violation::new("fixture", e.to_string()))?;
    let split = split_per_user(&store, SplitRatios::default(), 0).map_err(|e| Violation::new("fixture", e.to_string()))?;
    for kind in ModelKind::ALL {
        let dims = ModelDims {
            vae_hidden: 16,
            vae_latent: 8,
            ..ModelDims::new(store.num_users(), store.num_items())
        };
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 3,
            schedule: LrSchedule::Constant,
            batch_size: 64,
            ..TrainConfig::for_kind(kind, 9)
        };
        let data = TrainData {
            input: &split.train,
            valid: &split.valid,
            exclude: &split.train,
            num_items: store.num_items(),
        };
        let run = |regime| {
            ModelState::init(kind, dims.clone(), 9)
                .and_then(|s| train(s, data, &cfg, regime))
                .map_err(|e| Violation::new("training", e.to_string()))
        };
        let plain = run(PrivacyRegime::NonPrivate)?;
        let dp = run(PrivacyRegime::Dpsgd {
            clip_norm: f64::INFINITY,
            noise_multiplier: 0.0,
            delta: 1e-5,
        })?;
        let bits = |o: &privrec_core::models::TrainOutcome| -> Vec<u64> {
            o.log.iter().map(|l| l.train_loss.to_bits()).collect()
        };
        if bits(&plain) != bits(&dp) || plain.state.params() != dp.state.params() {
            return fail("noiseless DPSGD equals SGD", format!("{kind}: epoch losses or parameters differ"));
        }
    }
    Ok("SVD, BPR, NCF, VAE: 3 epochs, identical losses and parameters".into())
}

/// Writes a synthetic MovieLens fixture to disk and runs it through
/// parsing, filtering and splitting.
pub fn pipeline() -> SuiteResult {
    let dir = tempfile::tempdir().map_err(|e| Violation::new("tempdir", e.to_string()))?;
    let raw = synthetic::generate(&SyntheticSpec::tiny(8));
    synthetic::write_movielens(&raw, dir.path()).map_err(|e| Violation::new("fixture", e.to_string()))?;
    let parsed = parse_movielens(&dir.path().join("ratings.dat"), &dir.path().join("movies.dat"))
        .map_err(|e| Violation::new("parse", e.to_string()))?;
    if parsed.ratings.len() != raw.ratings.len() {
        return fail("lossless round trip", format!("{} ratings read, {} written", parsed.ratings.len(), raw.ratings.len()));
    }
    let (store, _) = preprocess(&parsed).map_err(|e| Violation::new("preprocess", e.to_string()))?;
    let mut item_counts = vec![0usize; store.num_items()];
    for (u, items) in store.positives.iter().enumerate() {
        if items.len() < 5 {
            return fail("every user has at least 5 positives", format!("user {u} has {}", items.len()));
        }
        for &i in items {
            item_counts[i] += 1;
        }
    }
    if let Some((i, c)) = item_counts.iter().enumerate().find(|(_, &c)| c < 5) {
        return fail("every item has at least 5 positives", format!("item {i} has {c}"));
    }
    let split = split_per_user(&store, SplitRatios::default(), 1).map_err(|e| Violation::new("split", e.to_string()))?;
    for u in 0..store.num_users() {
        let mut all: Vec<usize> = split.train[u]
            .iter()
            .chain(&split.valid[u])
            .chain(&split.test[u])
            .copied()
            .collect();
        all.sort_unstable();
        if all != store.positives[u] {
            return fail("split partitions each profile", format!("user {u}"));
        }
    }
    Ok(format!(
        "{} users, {} items, {} interactions after filtering",
        store.num_users(),
        store.num_items(),
        store.num_interactions()
    ))
}
