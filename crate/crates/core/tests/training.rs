mod common;

use common::{small_config, synthetic_setup, synthetic_split};
use diffnet_core::model::ModelConfig;
use diffnet_core::train::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, train, write_log,
    TrainConfig, TrainError,
};

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        batch_size: 16,
        lr: 0.005,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let (train_set, eval_set) = synthetic_split(120, 90, 3, 1.0);
    let run = || {
        let (mut model, tr, ev) = synthetic_setup(small_config(8), &train_set, &eval_set, 5);
        let outcome = train(&mut model, &tr, Some(&ev), &quick(2, 5)).unwrap();
        (outcome, encode_checkpoint(&model, 5, 2))
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let bits = |o: &diffnet_core::train::TrainOutcome| {
        o.epochs
            .iter()
            .map(|e| (e.loss.to_bits(), e.lr.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn different_seeds_differ() {
    let (train_set, _) = synthetic_split(60, 60, 3, 1.0);
    let run = |seed| {
        let (mut model, tr, _) = synthetic_setup(small_config(8), &train_set, &[], 1);
        train(&mut model, &tr, None, &quick(1, seed)).unwrap();
        model.params
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn loss_decreases_on_synthetic_data() {
    let (train_set, _) = synthetic_split(200, 200, 8, 1.0);
    let (mut model, tr, _) = synthetic_setup(small_config(16), &train_set, &[], 8);
    let outcome = train(&mut model, &tr, None, &quick(5, 8)).unwrap();
    assert!(
        outcome.epochs[4].loss < outcome.epochs[0].loss,
        "{:?}",
        outcome.epochs
    );
}

#[test]
fn clipping_and_schedule_hold_per_step() {
    let (train_set, _) = synthetic_split(64, 64, 2, 1.0);
    let (mut model, tr, _) = synthetic_setup(small_config(8), &train_set, &[], 2);
    let cfg = TrainConfig {
        clip_norm: 0.05,
        lr_decay: 0.5,
        ..quick(3, 2)
    };
    let outcome = train(&mut model, &tr, None, &cfg).unwrap();
    assert_eq!(outcome.steps.len(), 3 * 4);
    for s in &outcome.steps {
        assert!(s.clipped_norm <= cfg.clip_norm + 1e-9);
        assert_eq!(s.lr, cfg.lr * 0.5f64.powi(s.epoch as i32));
    }
    assert!(outcome.steps.iter().any(|s| s.grad_norm > cfg.clip_norm));
}

#[test]
fn best_epoch_tracks_highest_eval_accuracy() {
    let (train_set, eval_set) = synthetic_split(160, 120, 4, 1.0);
    let (mut model, tr, ev) = synthetic_setup(small_config(8), &train_set, &eval_set, 4);
    let outcome = train(&mut model, &tr, Some(&ev), &quick(4, 4)).unwrap();
    let best = outcome.best.as_ref().unwrap();
    let accs: Vec<f64> = outcome.epochs.iter().map(|e| e.eval_acc.unwrap()).collect();
    let top = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.snapshot.accuracy, top);
    assert_eq!(best.epoch, accs.iter().position(|&a| a == top).unwrap());
}

#[test]
fn frozen_embeddings_stay_fixed() {
    let (train_set, _) = synthetic_split(40, 40, 6, 1.0);
    let config = ModelConfig {
        train_embeddings: false,
        ..small_config(8)
    };
    let (mut model, tr, _) = synthetic_setup(config, &train_set, &[], 6);
    let before = model.params.clone();
    train(&mut model, &tr, None, &quick(1, 6)).unwrap();
    use diffnet_core::model::ParamId;
    assert_eq!(model.params[ParamId::Embedding], before[ParamId::Embedding]);
    assert_ne!(
        model.params[ParamId::ScoreWeight],
        before[ParamId::ScoreWeight]
    );
}

#[test]
fn checkpoint_file_round_trip() {
    let (train_set, _) = synthetic_split(40, 40, 7, 1.0);
    let (mut model, tr, _) = synthetic_setup(small_config(8), &train_set, &[], 7);
    let outcome = train(&mut model, &tr, None, &quick(1, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, 7, 1).unwrap();
    let ck = load_checkpoint(&path, Some(&model.config)).unwrap();
    assert_eq!(ck.model, model);
    assert_eq!((ck.seed, ck.epoch), (7, 1));
    assert_eq!(
        encode_checkpoint(&ck.model, 7, 1),
        std::fs::read(&path).unwrap()
    );

    let other = ModelConfig {
        hidden: 9,
        ..model.config.clone()
    };
    match load_checkpoint(&path, Some(&other)) {
        Err(TrainError::ConfigMismatch { fields }) => {
            assert!(fields.contains(&"hidden".to_string()))
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(decode_checkpoint(b"DNCK", None).is_err());

    let log = dir.path().join("log.jsonl");
    write_log(&log, &outcome.epochs).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(line["epoch"], 0);
}

#[test]
fn rejects_empty_and_invalid_inputs() {
    let (train_set, _) = synthetic_split(10, 10, 1, 1.0);
    let (mut model, tr, _) = synthetic_setup(small_config(4), &train_set, &[], 1);
    assert!(matches!(
        train(&mut model, &[], None, &quick(1, 1)),
        Err(TrainError::EmptyDataset)
    ));
    let bad = TrainConfig {
        lr: -1.0,
        ..quick(1, 1)
    };
    assert!(matches!(
        train(&mut model, &tr, None, &bad),
        Err(TrainError::Config(_))
    ));
}
