mod common;

use common::fixture_bundle;
use histda::adaptation::{alpha_at, WeightingConfig};
use histda::eval::metrics;
use histda::histogram::{make_targets, HistogramSpec, TargetMode};
use histda::matrix::Matrix;
use histda::nn::{init_model, AdamConfig, AdamState};
use histda::train::{grid_search, run_training, train_step, Checkpoint, Grid, Mode, StepBatch, TrainConfig, Weighting};
use histda::Error;

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 8,
        bins: 10,
        support: [0.0, 100.0],
        hidden: vec![8, 6],
        t1: 2,
        t2: 10,
        mode,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_alpha_steps_match_hl_bitwise() {
    let bundle = fixture_bundle(1, 4, [24, 6, 20, 10]);
    let spec = HistogramSpec::new(0.0, 100.0, 10).unwrap();
    let tm = TargetMode::sqrt_width_gaussian(&spec);
    let xs = &bundle.source_train.x;
    let ps = make_targets(bundle.source_train.labels().unwrap(), &spec, tm).unwrap();
    let xt = &bundle.target_labeled.x;
    let pt = make_targets(bundle.target_labeled.labels().unwrap(), &spec, tm).unwrap();
    let xu = &bundle.target_unlabeled.x;
    let labeled = Matrix::vstack(&[xs, xt]).unwrap();

    let mut hl = init_model(&[4, 8, 6, 10], 9).unwrap();
    let mut wmme = hl.clone();
    let mut adam_hl = AdamState::for_model(&hl, AdamConfig::default());
    let mut adam_wmme = adam_hl.clone();
    let batch = StepBatch { source: (xs, &ps), target_labeled: Some((xt, &pt)), target_unlabeled: Some(xu) };
    for _ in 0..50 {
        let features = wmme.encode(&labeled).unwrap();
        let w = Weighting { labeled_features: &features, config: WeightingConfig::new(1.0).unwrap() };
        train_step(&mut hl, &mut adam_hl, &batch, 0.0, Mode::Hl, None).unwrap();
        train_step(&mut wmme, &mut adam_wmme, &batch, 0.0, Mode::HlWmme, Some(w)).unwrap();
        assert_eq!(hl, wmme);
    }
    assert_eq!(adam_hl.first_moments(), adam_wmme.first_moments());
}

#[test]
fn zero_alpha_training_matches_hl() {
    let bundle = fixture_bundle(2, 4, [40, 6, 30, 12]);
    let hl = run_training(&bundle, &small_config(Mode::Hl)).unwrap();
    let overridden = TrainConfig { alpha_override: Some(0.0), ..small_config(Mode::HlWmme) };
    let late = TrainConfig { t1: 50, t2: 60, ..small_config(Mode::HlWmme) };
    for cfg in [overridden, late] {
        let out = run_training(&bundle, &cfg).unwrap();
        // HL logs the schedule it ignores; everything else must agree.
        let strip = |logs: &[histda::train::EpochLog]| {
            logs.iter().map(|l| histda::train::EpochLog { alpha: 0.0, ..l.clone() }).collect::<Vec<_>>()
        };
        assert_eq!(strip(&out.logs), strip(&hl.logs));
        assert_eq!(out.checkpoint.model, hl.checkpoint.model);
        assert_eq!(out.checkpoint.epoch, hl.checkpoint.epoch);
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let bundle = fixture_bundle(3, 4, [20, 6, 10, 10]);
    let cfg = TrainConfig { epochs: 0, ..small_config(Mode::HlWmme) };
    let out = run_training(&bundle, &cfg).unwrap();
    assert!(out.logs.is_empty());
    assert_eq!(out.checkpoint.epoch, 0);
    assert_eq!(out.checkpoint.model, init_model(&cfg.layer_sizes(4), cfg.seed).unwrap());
    assert!(out.best_val.is_none());
}

#[test]
fn alpha_trace_follows_schedule() {
    let bundle = fixture_bundle(4, 4, [16, 6, 10, 10]);
    let cfg = TrainConfig { epochs: 14, alpha_inf: 0.4, ..small_config(Mode::HlMme) };
    let out = run_training(&bundle, &cfg).unwrap();
    let sched = cfg.schedule().unwrap();
    assert_eq!(out.logs.len(), 14);
    for (i, log) in out.logs.iter().enumerate() {
        assert_eq!(log.epoch, i + 1);
        assert_eq!(log.alpha, alpha_at(i + 1, &sched));
        assert_eq!(log.entropy.is_some(), log.alpha != 0.0);
        assert!(log.source_loss.is_finite());
    }
}

#[test]
fn training_is_deterministic() {
    let bundle = fixture_bundle(5, 4, [30, 6, 20, 10]);
    let cfg = small_config(Mode::HlWmme);
    let a = run_training(&bundle, &cfg).unwrap();
    let b = run_training(&bundle, &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.logs, b.logs);
    let c = run_training(&bundle, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.checkpoint.model, c.checkpoint.model);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let bundle = fixture_bundle(6, 4, [30, 6, 20, 10]);
    let out = run_training(&bundle, &small_config(Mode::HlWme)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    let x = &bundle.target_test.x;
    assert_eq!(back.predict(x).unwrap(), out.checkpoint.predict(x).unwrap());
    let mut bytes = out.checkpoint.to_bytes().unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}

#[test]
fn memorises_small_labeled_set() {
    let mut bundle = fixture_bundle(7, 4, [32, 0, 0, 32]);
    bundle.target_val = bundle.source_train.clone();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 32,
        bins: 50,
        support: [0.0, 100.0],
        hidden: vec![64, 64],
        learning_rate: 3e-3,
        mode: Mode::Hl,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = run_training(&bundle, &cfg).unwrap();
    let train = &bundle.source_train;
    let pred = out.checkpoint.predict(&train.x).unwrap();
    let m = metrics(train.labels().unwrap(), &pred).unwrap();
    assert!(m.mae < 2.0, "training MAE {}", m.mae);
}

#[test]
fn grid_search_selects_best_validation_score() {
    let bundle = fixture_bundle(8, 4, [30, 6, 20, 12]);
    let base = TrainConfig { epochs: 12, ..small_config(Mode::HlWmme) };
    let grid = Grid { bins: vec![10], alpha_inf: vec![0.1, 1.0] };
    let report = grid_search(&bundle, &base, &grid).unwrap();
    assert_eq!(report.entries.len(), 2);
    let scores: Vec<f64> = report.entries.iter().map(|e| e.val_r2_x100.unwrap()).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(scores[report.best_index], max);
    assert_eq!(report.best_config.alpha_inf, grid.alpha_inf[report.best_index]);
    for e in &report.entries {
        let cfg = TrainConfig { alpha_inf: e.alpha_inf, seed: e.seed, ..base.clone() };
        let again = run_training(&bundle, &cfg).unwrap();
        assert_eq!(again.best_val.unwrap().r2_x100, e.val_r2_x100.unwrap());
    }

    let single = Grid { bins: vec![12], alpha_inf: vec![0.5] };
    let report = grid_search(&bundle, &base, &single).unwrap();
    assert_eq!(report.best_index, 0);
    assert_eq!((report.best_config.bins, report.best_config.alpha_inf), (12, 0.5));
    let empty = Grid { bins: vec![], alpha_inf: vec![1.0] };
    assert!(matches!(grid_search(&bundle, &base, &empty), Err(Error::Config(_))));
}

#[test]
fn non_finite_inputs_abort_with_divergence() {
    let mut bundle = fixture_bundle(9, 4, [16, 6, 10, 10]);
    bundle.source_train.x.set(0, 0, f64::NAN);
    let err = run_training(&bundle, &small_config(Mode::Hl)).unwrap_err();
    assert!(matches!(err, Error::Divergence(_)), "{err}");
}
