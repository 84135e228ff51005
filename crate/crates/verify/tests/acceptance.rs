//! Acceptance criteria, one line each. Exits nonzero if any criterion
//! fails. Criteria 1 and 7 need the MovieLens-1M files (see `ml1m_dir`);
//! criterion 8 is optional and only runs with `--ignored` or
//! `PRIVREC_FULL=1`.

use std::time::{Duration, Instant};

use privrec_core::dataset::{parse_movielens, preprocess};
use privrec_core::experiment::{sweep, ExperimentConfig, Regime};
use privrec_core::models::ModelKind;
use privrec_verify::{ml1m_dir, suites, trend, Violation};

const ML1M_USERS: usize = 6038;
const ML1M_ITEMS: usize = 3258;
const ML1M_INTERACTIONS: usize = 835_614;
/// Largest relative deviation from the published counts.
const ML1M_COUNT_TOL: f64 = 0.01;
const PREPROCESS_LIMIT: Duration = Duration::from_secs(120);
const GRADIENT_LIMIT: Duration = Duration::from_secs(300);
const TREND_LIMIT: Duration = Duration::from_secs(2 * 3600);
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const FULL_NDCG_MIN: f64 = 0.55;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn from_suite(r: Result<String, Violation>) -> Outcome {
    match r {
        Ok(s) => Outcome::Pass(s),
        Err(v) => Outcome::Fail(v.to_string()),
    }
}

fn within_time(out: Outcome, took: Duration, limit: Duration) -> Outcome {
    match out {
        Outcome::Pass(s) if took > limit => Outcome::Fail(format!("{s}; took {took:.1?}, limit {limit:?}")),
        o => o,
    }
}

fn no_data() -> Outcome {
    Outcome::Fail("MovieLens-1M not found; set PRIVREC_ML1M_DIR or place ratings.dat and movies.dat in data/ml-1m".into())
}

fn preprocessing() -> Outcome {
    let Some(dir) = ml1m_dir() else { return no_data() };
    let start = Instant::now();
    let result = parse_movielens(&dir.join("ratings.dat"), &dir.join("movies.dat")).and_then(|raw| preprocess(&raw));
    let (store, _) = match result {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let got = [store.num_users(), store.num_items(), store.num_interactions()];
    let want = [ML1M_USERS, ML1M_ITEMS, ML1M_INTERACTIONS];
    let worst = got
        .iter()
        .zip(&want)
        .map(|(&g, &w)| (g as f64 - w as f64).abs() / w as f64)
        .fold(0.0, f64::max);
    let msg = format!("{got:?} vs {want:?}, worst deviation {:.3}%", 100.0 * worst);
    let out = if worst <= ML1M_COUNT_TOL { Outcome::Pass(msg) } else { Outcome::Fail(msg) };
    within_time(out, start.elapsed(), PREPROCESS_LIMIT)
}

fn trend_check() -> Outcome {
    let Some(dir) = ml1m_dir() else { return no_data() };
    let out_dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let start = Instant::now();
    let mut records = Vec::new();
    for kind in [ModelKind::Ncf, ModelKind::Bpr] {
        let mut cfg = ExperimentConfig::mini(kind);
        cfg.dataset.path = dir.clone();
        cfg.privacy.regime = Regime::Dpsgd;
        cfg.privacy.budgets = vec![0.2, 0.4, 0.8, 2.0, 4.0];
        cfg.seeds = TREND_SEEDS.to_vec();
        cfg.output_dir = out_dir.path().to_path_buf();
        match sweep(&cfg) {
            Ok(s) => records.extend(s.records),
            Err(e) => return Outcome::Fail(e.to_string()),
        }
    }
    let v = trend::check_trend(&records);
    let msg = v.lines.join("; ");
    let out = if v.passed { Outcome::Pass(msg) } else { Outcome::Fail(msg) };
    within_time(out, start.elapsed(), TREND_LIMIT)
}

fn full_scale(enabled: bool) -> Outcome {
    if !enabled {
        return Outcome::Skip("optional; run with --ignored or PRIVREC_FULL=1".into());
    }
    let Some(dir) = ml1m_dir() else { return no_data() };
    let out_dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut cfg = ExperimentConfig::default();
    cfg.model.kind = ModelKind::Ncf;
    cfg.dataset.path = dir;
    cfg.privacy.regime = Regime::None;
    cfg.seeds = vec![0];
    cfg.output_dir = out_dir.path().to_path_buf();
    match sweep(&cfg) {
        Ok(s) => {
            let ndcg = s.records[0].metrics.as_ref().map_or(0.0, |m| m.ndcg);
            let msg = format!("NDCG@10 {ndcg:.4}, need >= {FULL_NDCG_MIN}");
            if ndcg >= FULL_NDCG_MIN {
                Outcome::Pass(msg)
            } else {
                Outcome::Fail(msg)
            }
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // cargo's listing pass; nothing to enumerate
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var_os("PRIVREC_FULL").is_some();

    type Check = Box<dyn FnOnce() -> Outcome>;
    let criteria: Vec<(&str, Check)> = vec![
        ("1 preprocessing reproduces MovieLens-1M counts", Box::new(preprocessing)),
        ("2 LDP retention/addition rates", Box::new(|| from_suite(suites::ldp_rates()))),
        (
            "3 finite-difference gradients, all models",
            Box::new(|| {
                let start = Instant::now();
                let out = from_suite(suites::gradients(suites::GRADIENT_DRAWS, suites::reference_clip));
                within_time(out, start.elapsed(), GRADIENT_LIMIT)
            }),
        ),
        ("4 accountant closed form and monotonicity", Box::new(|| from_suite(suites::accountant()))),
        ("5 metric oracles", Box::new(|| from_suite(suites::metric_oracles(suites::METRIC_INSTANCES)))),
        ("6 noiseless DPSGD equals SGD", Box::new(|| from_suite(suites::noiseless_equivalence()))),
        ("7 mini-profile privacy trend (NCF, BPR)", Box::new(trend_check)),
        ("8 full-scale NCF NDCG@10", Box::new(move || full_scale(full))),
    ];

    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {name}: {tag} ({took:.1?}) {detail}");
    }
    println!("acceptance: {failed} criterion/criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
