use std::path::Path;
use std::process::{Command, Output};

use privrec_core::experiment::ExperimentConfig;

fn privrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privrec"))
        .current_dir(dir)
        .env_remove("PRIVREC_OUTPUT_DIR")
        .env_remove("PRIVREC_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "dataset": {"kind": "synthetic", "synthetic": {"users": 60, "items": 80, "clusters": 4, "genres": 6, "min_profile": 10, "max_profile": 30}},
  "model": {"kind": "SVD"},
  "privacy": {"budgets": [0.5, 4.0]},
  "train": {"max_epochs": 3},
  "seeds": [0, 1],
  "output_dir": "out"
}"#;

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

fn records(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir.join("out/records"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn help_lists_every_key_with_its_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = privrec(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for k in ExperimentConfig::keys() {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(k.key))
            .unwrap_or_else(|| panic!("{} missing from help", k.key));
        assert!(line.contains(&k.default), "{line}");
    }
}

#[test]
fn sweep_populates_records_and_reports_and_reruns_identically() {
    let dir = tiny_dir();
    let o = privrec(dir.path(), &["-c", "tiny.json", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 runs (0 reused, 0 failed)"), "{}", stdout(&o));
    let first = records(dir.path());
    assert_eq!(first.len(), 6);
    for m in ["ndcg", "kld", "popularity_lift", "novelty", "coverage", "dpf"] {
        assert!(dir.path().join(format!("out/reports/{m}.csv")).exists());
        assert!(dir.path().join(format!("out/reports/{m}_synthetic_SVD.svg")).exists());
    }
    let csv = std::fs::read(dir.path().join("out/reports/ndcg.csv")).unwrap();

    let o = privrec(dir.path(), &["-c", "tiny.json", "sweep"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("6 runs (6 reused, 0 failed)"));
    assert_eq!(records(dir.path()), first);
    assert_eq!(std::fs::read(dir.path().join("out/reports/ndcg.csv")).unwrap(), csv);

    let o = privrec(dir.path(), &["-c", "tiny.json", "report"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("out/reports/ndcg.csv")).unwrap(), csv);
}

#[test]
fn override_changes_only_that_key() {
    let dir = tiny_dir();
    let o = privrec(
        dir.path(),
        &["-c", "tiny.json", "-o", "model.kind=BPR", "train", "--regime", "none"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(dir.path());
    assert_eq!(recs.len(), 1);
    let rec: serde_json::Value = serde_json::from_str(&recs[0].1).unwrap();
    assert_eq!(rec["model"], "BPR");
    assert_eq!(rec["dataset"], "synthetic");
    assert_eq!(rec["regime"], "none");
    // max_epochs from the file survives the override
    assert!(rec["epochs_trained"].as_u64().unwrap() <= 3);
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tiny_dir();
    let o = privrec(
        dir.path(),
        &["-c", "tiny.json", "train", "--regime", "dpsgd", "--budget", "2", "--seed", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let path = out
        .lines()
        .find_map(|l| l.strip_prefix("checkpoint "))
        .expect("checkpoint path printed");
    let (state, _) = privrec_core::models::load_checkpoint(&dir.path().join(path)).unwrap();
    assert_eq!(state.kind, privrec_core::models::ModelKind::Svd);
    assert!(out.contains("dpsgd budget 2 seed 1"), "{out}");
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tiny_dir();
    let o = Command::new(env!("CARGO_BIN_EXE_privrec"))
        .current_dir(dir.path())
        .env("PRIVREC_OUTPUT_DIR", "elsewhere")
        .args(["-c", "tiny.json", "train", "--regime", "none"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("elsewhere/records").is_dir());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn ingest_prints_statistics_and_writes_the_cache() {
    let dir = tiny_dir();
    let o = privrec(dir.path(), &["-c", "tiny.json", "ingest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for label in ["Total items", "Total users", "# of interactions", "% of interactions", "Mean categories per item"] {
        assert!(out.contains(label), "{out}");
    }
    let store = privrec_core::dataset::read_cache(&dir.path().join("out/cache/synthetic.store")).unwrap();
    assert!(out.contains(&format!("{:<28}{:>12}", "Total users", store.num_users())));
}

#[test]
fn usage_errors_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &str)] = &[
        (&["-c", "missing.json", "sweep"], "missing.json"),
        (&["-o", "dataset.path=nowhere", "ingest"], "nowhere/ratings.dat"),
        (&["-o", "no.such.key=1", "sweep"], "no.such.key"),
        (&["-o", "model.kind=LSTM", "train"], "LSTM"),
        (&["report"], "no run records"),
    ];
    for (args, needle) in cases {
        let o = privrec(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{args:?}: {}", stderr(&o));
        assert!(stdout(&o).is_empty(), "{args:?}");
    }
}

#[test]
fn verify_passes_and_reports_each_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = privrec(dir.path(), &["verify"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for suite in ["ldp-rates", "gradients", "accountant", "metric-oracles", "noiseless-equivalence", "pipeline"] {
        let line = out.lines().find(|l| l.starts_with(suite)).unwrap();
        assert!(line.contains("PASS") && line.contains('s'), "{line}");
    }
}

#[test]
fn verify_names_the_broken_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let o = privrec(dir.path(), &["verify", "--mutation", "broken-clip"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("gradients") && l.contains("FAIL")));
    assert!(stderr(&o).contains("gradients (per-example clipping)"), "{}", stderr(&o));
}
