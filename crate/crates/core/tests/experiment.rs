use privrec_core::dataset::synthetic::SyntheticSpec;
use privrec_core::dpsgd::PrivacyLedger;
use privrec_core::experiment::{
    aggregate, load_records, load_store, report, run_one, sweep, write_reports, BudgetPoint, DatasetKind,
    ExperimentConfig, Regime, RunStatus,
};
use privrec_core::models::ModelKind;

fn tiny_config(dir: &std::path::Path, kind: ModelKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.kind = DatasetKind::Synthetic;
    cfg.dataset.synthetic = SyntheticSpec::tiny(4);
    cfg.model.kind = kind;
    cfg.train.max_epochs = Some(3);
    cfg.train.batch_size = Some(64);
    cfg.privacy.budgets = vec![0.5, 2.0];
    cfg.seeds = vec![0, 1, 2];
    cfg.output_dir = dir.to_path_buf();
    cfg.workers = 2;
    cfg
}

#[test]
fn sweep_counts_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), ModelKind::Bpr);
    cfg.privacy.include_baseline = false;
    let first = sweep(&cfg).unwrap();
    assert_eq!(first.records.len(), 6);
    assert_eq!(first.reused, 0);
    let rows = aggregate(&first.records);
    let ndcg_all: Vec<_> = rows.iter().filter(|r| r.metric == "ndcg" && r.group == "all").collect();
    assert_eq!(ndcg_all.len(), 2);
    assert!(ndcg_all.iter().all(|r| r.n == 3 && r.std.is_some()));

    // lose one record, as if interrupted, and resume
    let victim = dir.path().join("records").join(format!("{}.json", first.records[4].fingerprint));
    std::fs::remove_file(victim).unwrap();
    let second = sweep(&cfg).unwrap();
    assert_eq!(second.reused, 5);
    assert_eq!(load_records(dir.path()).unwrap().len(), 6);
    let a: Vec<_> = first.records.iter().map(|r| r.metrics.clone()).collect();
    let b: Vec<_> = second.records.iter().map(|r| r.metrics.clone()).collect();
    assert_eq!(a, b);
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let cfg = tiny_config(dir.path(), kind);
        let (store, _) = load_store(&cfg.dataset).unwrap();
        let point = BudgetPoint::new(Regime::Dpsgd, 1.0);
        let (a, _) = run_one(&cfg, &store, point, 5).unwrap();
        let (b, _) = run_one(&cfg, &store, point, 5).unwrap();
        assert_eq!(a.status, RunStatus::Ok, "{kind}: {:?}", a.error);
        assert_eq!(a.metrics, b.metrics, "{kind}");
        assert_eq!(
            serde_json::to_string(&a.metrics).unwrap(),
            serde_json::to_string(&b.metrics).unwrap()
        );
        assert_eq!(a.train_log, b.train_log);
    }
}

#[test]
fn baseline_records_infinite_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), ModelKind::Svd);
    let (store, _) = load_store(&cfg.dataset).unwrap();
    let (rec, _) = run_one(&cfg, &store, BudgetPoint::BASELINE, 0).unwrap();
    assert!(!rec.realized_epsilon.is_finite());
    let json = serde_json::to_value(&rec).unwrap();
    assert_eq!(json["realized_epsilon"], "inf");
    let back: privrec_core::experiment::RunRecord = serde_json::from_value(json).unwrap();
    assert_eq!(back, rec);

    let (ldp, _) = run_one(&cfg, &store, BudgetPoint::new(Regime::Ldp, 2.0), 0).unwrap();
    assert_eq!(ldp.realized_epsilon.0, 2.0);
}

#[test]
fn realized_epsilon_decreases_with_noise_at_fixed_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), ModelKind::Bpr);
    cfg.privacy.budgets = vec![0.2, 0.4, 0.8, 2.0, 4.0];
    cfg.seeds = vec![0];
    let recs = sweep(&cfg).unwrap().records;
    let dp: Vec<_> = recs.iter().filter(|r| r.regime == Regime::Dpsgd).collect();
    let steps = dp.iter().map(|r| r.dpsgd_steps.unwrap()).max().unwrap();
    // recompute at a common step count so early stopping does not matter
    let eps: Vec<f64> = dp
        .iter()
        .map(|r| {
            PrivacyLedger::new(0.1, r.budget.unwrap())
                .unwrap()
                .with_steps(steps)
                .epsilon(1e-5)
                .unwrap()
        })
        .collect();
    assert!(eps.windows(2).all(|w| w[0] > w[1]), "{eps:?}");
}

#[test]
fn report_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), ModelKind::Bpr);
    cfg.privacy.budgets = vec![0.2, 0.4, 0.8, 2.0, 4.0];
    cfg.seeds = vec![0];
    let recs = sweep(&cfg).unwrap().records;
    let files = report(&recs).unwrap();
    assert_eq!(files.csv.len(), 6);
    let (_, ndcg) = files.csv.iter().find(|(n, _)| n == "ndcg.csv").unwrap();
    let lines: Vec<&str> = ndcg.lines().collect();
    assert_eq!(lines[0], "dataset,model,regime,budget,realized_epsilon,group,mean,std,n");
    // 6 budget points (baseline + 5) x 6 groups, minus groups nobody falls in
    let expected: usize = 6 * 6;
    assert!(lines.len() - 1 <= expected && lines.len() > 6 * 3);
    // single seed: std blank
    assert!(lines[1..].iter().all(|l| l.split(',').nth(7) == Some("")));
    let (_, svg) = files.svg.iter().find(|(n, _)| n.starts_with("ndcg_")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 5);
    assert_eq!(svg.matches("class=\"baseline\"").count(), 1);
    let written = write_reports(dir.path(), &recs).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    assert!(report(&[]).is_err());
}

#[test]
fn every_metric_group_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), ModelKind::Ncf);
    let (store, _) = load_store(&cfg.dataset).unwrap();
    let (rec, _) = run_one(&cfg, &store, BudgetPoint::BASELINE, 0).unwrap();
    let m = rec.metrics.unwrap();
    assert!((0.0..=1.0).contains(&m.ndcg));
    assert!((0.0..=1.0).contains(&m.coverage));
    assert!((-1.0..=1.0).contains(&m.dpf));
    assert!(m.kld >= 0.0 && m.novelty >= 0.0 && m.popularity_lift >= -1.0);
    assert_eq!(m.by_item_group.len(), 2);
    assert_eq!(m.by_user_type.len(), 3);
}
