use privrec_core::dpsgd::SparseGradient;
use privrec_core::models::{
    build_epoch_examples, load_checkpoint, sample_negative, save_checkpoint, train, LrSchedule, ModelDims,
    ModelKind, ModelState, PrivacyRegime, TrainConfig, TrainData, TrainExample,
};
use privrec_core::rng;
use rand::Rng;

fn small_dims() -> ModelDims {
    ModelDims {
        num_users: 6,
        num_items: 9,
        latent_dim: 3,
        gmf_dim: 3,
        mlp_layers: vec![6, 4, 2],
        dropout: 0.5,
        vae_hidden: 5,
        vae_latent: 3,
        vae_beta: 0.7,
    }
}

fn random_example<R: Rng>(kind: ModelKind, dims: &ModelDims, rng: &mut R) -> TrainExample {
    let user = rng.random_range(0..dims.num_users);
    match kind {
        ModelKind::Svd | ModelKind::Ncf => TrainExample::Pointwise {
            user,
            item: rng.random_range(0..dims.num_items),
            label: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        },
        ModelKind::Bpr => {
            let pos = rng.random_range(0..dims.num_items);
            let neg = (pos + rng.random_range(1..dims.num_items)) % dims.num_items;
            TrainExample::Triple { user, pos, neg }
        }
        ModelKind::Vae => {
            let items: Vec<usize> = (0..dims.num_items).filter(|_| rng.random_bool(0.4)).collect();
            TrainExample::Row {
                user,
                items: if items.is_empty() { vec![0] } else { items },
            }
        }
    }
}

fn dense(g: &SparseGradient, len: usize) -> Vec<f64> {
    g.to_flat(len).0
}

/// Norm-wise relative error between the analytic gradient and central
/// differences, over every parameter.
fn fd_error(state: &mut ModelState, ex: &TrainExample, draw: u64) -> f64 {
    let n = state.num_params();
    let (_, g) = state.loss_and_grad(ex, Some(draw)).unwrap();
    let analytic = dense(&g, n);
    let h = 1e-6;
    let mut diff = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        let orig = state.params()[i];
        state.params_mut()[i] = orig + h;
        let up = state.loss_and_grad(ex, Some(draw)).unwrap().0;
        state.params_mut()[i] = orig - h;
        let down = state.loss_and_grad(ex, Some(draw)).unwrap().0;
        state.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff += (fd - analytic[i]).powi(2);
        scale = scale.max(fd.abs()).max(analytic[i].abs());
    }
    let an: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff.sqrt() / an.max(1e-8)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = rng::stream(7, 0);
    for kind in ModelKind::ALL {
        for d in 0..20u64 {
            let mut state = ModelState::init(kind, small_dims(), d).unwrap();
            // leave the tiny-init regime so every term matters
            for p in state.params_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            let ex = random_example(kind, &state.dims.clone(), &mut rng);
            let err = fd_error(&mut state, &ex, 1000 + d);
            assert!(err <= 1e-4, "{kind} draw {d}: relative error {err:.3e}");
        }
    }
}

#[test]
fn init_is_deterministic_and_shaped() {
    for kind in ModelKind::ALL {
        let a = ModelState::init(kind, small_dims(), 3).unwrap();
        let b = ModelState::init(kind, small_dims(), 3).unwrap();
        let c = ModelState::init(kind, small_dims(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let total: usize = a.layout().iter().map(|t| t.len()).sum();
        assert_eq!(total, a.num_params());
    }
    let svd = ModelState::init(ModelKind::Svd, small_dims(), 0).unwrap();
    assert_eq!(svd.tensor_spec("user_factors").unwrap().shape, vec![6, 3]);
    assert_eq!(svd.tensor_spec("item_factors").unwrap().shape, vec![9, 3]);
}

#[test]
fn bpr_loss_at_zero_is_ln2_and_orders_correctly() {
    let mut state = ModelState::init(ModelKind::Bpr, small_dims(), 0).unwrap();
    state.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let ex = TrainExample::Triple { user: 0, pos: 1, neg: 2 };
    assert!((state.loss(&ex).unwrap() - 2f64.ln()).abs() < 1e-15);

    let state = ModelState::init(ModelKind::Bpr, small_dims(), 5).unwrap();
    let s = state.score(0, &[1, 2], &[]).unwrap();
    let (better, worse) = if s[0] > s[1] { (1, 2) } else { (2, 1) };
    let right = state.loss(&TrainExample::Triple { user: 0, pos: better, neg: worse }).unwrap();
    let wrong = state.loss(&TrainExample::Triple { user: 0, pos: worse, neg: better }).unwrap();
    assert!(right < wrong);
}

#[test]
fn ncf_scores_are_probabilities() {
    let state = ModelState::init(ModelKind::Ncf, small_dims(), 1).unwrap();
    for u in 0..6 {
        for s in state.score_all(u, &[]).unwrap() {
            assert!(s > 0.0 && s < 1.0);
        }
    }
}

#[test]
fn vae_softmax_sums_to_one_and_elbo_decomposes() {
    let state = ModelState::init(ModelKind::Vae, small_dims(), 2).unwrap();
    let p = state.vae_probabilities(&[0, 3, 4]).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for draw in [None, Some(9)] {
        let parts = state.vae_elbo_parts(&[0, 3, 4], draw).unwrap();
        assert!(parts.kl >= 0.0 && parts.reconstruction >= 0.0);
        assert!((parts.total - (parts.reconstruction + 0.7 * parts.kl)).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let state = ModelState::init(kind, small_dims(), 11).unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        save_checkpoint(&state, None, &path).unwrap();
        let (back, ledger) = load_checkpoint(&path).unwrap();
        assert_eq!(back, state);
        assert!(ledger.is_none());
    }
}

#[test]
fn negatives_avoid_positives() {
    let mut rng = rng::stream(1, 2);
    let positives = vec![0, 2, 3, 7, 8];
    let mut seen = [0usize; 10];
    for _ in 0..5000 {
        let n = sample_negative(&positives, 10, &mut rng).unwrap();
        assert!(!positives.contains(&n));
        seen[n] += 1;
    }
    for i in [1, 4, 5, 6, 9] {
        assert!(seen[i] > 800, "item {i} drawn {} times", seen[i]);
    }
    assert_eq!(sample_negative(&[0, 1, 2], 3, &mut rng), None);
}

/// Two blocks of users, each liking one block of items.
fn block_data(users: usize, items: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let half = items / 2;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for u in 0..users {
        let block: Vec<usize> = if u % 2 == 0 { (0..half).collect() } else { (half..items).collect() };
        let held = block[u % block.len()];
        train.push(block.iter().copied().filter(|&i| i != held).collect());
        valid.push(vec![held]);
    }
    (train, valid)
}

fn block_config(kind: ModelKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        learning_rate: if kind == ModelKind::Vae { 0.05 } else { 0.5 },
        embedding_lr_scale: 1.0,
        weight_decay: 0.0,
        max_epochs: epochs,
        patience: epochs,
        schedule: LrSchedule::Constant,
        negatives_per_positive: if kind == ModelKind::Bpr { 1 } else { 2 },
        k: 5,
        seed: 3,
    }
}

#[test]
fn svd_loss_decreases_on_blocks() {
    let (train_sets, valid) = block_data(20, 20);
    let state = ModelState::init(ModelKind::Svd, ModelDims::new(20, 20), 0).unwrap();
    let data = TrainData {
        input: &train_sets,
        valid: &valid,
        exclude: &train_sets,
        num_items: 20,
    };
    let out = train(state, data, &block_config(ModelKind::Svd, 30), PrivacyRegime::NonPrivate).unwrap();
    let first = out.log.first().unwrap().train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert!(last < 0.8 * first, "loss {first} -> {last}");
}

#[test]
fn noiseless_dpsgd_matches_plain_sgd_bitwise() {
    let (train_sets, valid) = block_data(12, 10);
    for kind in ModelKind::ALL {
        let dims = ModelDims {
            vae_hidden: 8,
            vae_latent: 4,
            ..ModelDims::new(12, 10)
        };
        let data = TrainData {
            input: &train_sets,
            valid: &valid,
            exclude: &train_sets,
            num_items: 10,
        };
        let cfg = block_config(kind, 3);
        let plain = train(ModelState::init(kind, dims.clone(), 1).unwrap(), data, &cfg, PrivacyRegime::NonPrivate).unwrap();
        let dp = train(
            ModelState::init(kind, dims, 1).unwrap(),
            data,
            &cfg,
            PrivacyRegime::Dpsgd {
                clip_norm: f64::INFINITY,
                noise_multiplier: 0.0,
                delta: 1e-5,
            },
        )
        .unwrap();
        let a: Vec<u64> = plain.log.iter().map(|l| l.train_loss.to_bits()).collect();
        let b: Vec<u64> = dp.log.iter().map(|l| l.train_loss.to_bits()).collect();
        assert_eq!(a, b, "{kind}");
        assert_eq!(plain.state.params(), dp.state.params(), "{kind}");
    }
}

#[test]
fn early_stopping_restores_best_epoch() {
    let (train_sets, valid) = block_data(10, 10);
    let data = TrainData {
        input: &train_sets,
        valid: &valid,
        exclude: &train_sets,
        num_items: 10,
    };
    let mut cfg = block_config(ModelKind::Bpr, 200);
    cfg.patience = 3;
    let out = train(
        ModelState::init(ModelKind::Bpr, ModelDims::new(10, 10), 0).unwrap(),
        data,
        &cfg,
        PrivacyRegime::NonPrivate,
    )
    .unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.epochs_trained, out.best_epoch + 3);
    let best = out.log[out.best_epoch - 1].valid_ndcg;
    assert!(out.log.iter().all(|l| l.valid_ndcg <= best));
}

#[test]
fn dpsgd_ledger_counts_steps() {
    let (train_sets, valid) = block_data(10, 10);
    let data = TrainData {
        input: &train_sets,
        valid: &valid,
        exclude: &train_sets,
        num_items: 10,
    };
    let cfg = block_config(ModelKind::Bpr, 2);
    let out = train(
        ModelState::init(ModelKind::Bpr, ModelDims::new(10, 10), 0).unwrap(),
        data,
        &cfg,
        PrivacyRegime::Dpsgd {
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            delta: 1e-5,
        },
    )
    .unwrap();
    let ledger = out.ledger.unwrap();
    let steps_per_epoch = (out.examples_per_epoch / cfg.batch_size) as u64;
    assert_eq!(ledger.steps(), 2 * steps_per_epoch);
    let eps: Vec<f64> = out.log.iter().map(|l| l.epsilon.unwrap()).collect();
    assert!(eps[0] < eps[1]);
}

#[test]
fn epoch_examples_have_expected_shape() {
    let input = vec![vec![0, 1], vec![2]];
    let mut rng = rng::stream(0, 0);
    let svd = build_epoch_examples(ModelKind::Svd, &input, 5, 4, &mut rng);
    assert_eq!(svd.len(), 3 * 5);
    let bpr = build_epoch_examples(ModelKind::Bpr, &input, 5, 1, &mut rng);
    assert_eq!(bpr.len(), 3);
    let vae = build_epoch_examples(ModelKind::Vae, &input, 5, 0, &mut rng);
    assert_eq!(vae.len(), 2);
}
