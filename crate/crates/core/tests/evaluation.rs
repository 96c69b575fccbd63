mod common;

use common::{small_config, synthetic_setup, synthetic_split};
use diffnet_core::eval::{
    evaluate, majority_vote, run_ablation, run_quantitative, run_single, summarize, AblationId,
    EvalReport, Experiment,
};
use diffnet_core::tensor::Rng;
use diffnet_core::text::{transform_dataset, transform_instance, TransformMode};
use diffnet_core::train::TrainConfig;
use proptest::prelude::*;

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 16,
        lr: 0.005,
        ..TrainConfig::default()
    }
}

#[test]
fn evaluation_is_deterministic_and_consistent() {
    let (train_set, eval_set) = synthetic_split(80, 40, 9, 1.0);
    let (model, _, ev) = synthetic_setup(small_config(8), &train_set, &eval_set, 9);
    let a = evaluate(&model, &ev).unwrap();
    let b = evaluate(&model, &ev).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n, 40);
    assert_eq!(
        a.correct,
        a.rows.iter().filter(|r| r.predicted == r.gold).count()
    );
    for r in &a.rows {
        assert!((r.p1 + r.p2 - 1.0).abs() < 1e-12);
        assert_eq!(r.predicted, if r.p2 > r.p1 { 2 } else { 1 });
    }
    assert!(evaluate(&model, &[]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    a.save(&json, Some(&csv)).unwrap();
    assert_eq!(EvalReport::load(&json).unwrap(), a);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 41);
}

#[test]
fn ensemble_of_one_and_of_copies() {
    let (train_set, eval_set) = synthetic_split(60, 30, 2, 1.0);
    let (model, _, ev) = synthetic_setup(small_config(8), &train_set, &eval_set, 2);
    let r = evaluate(&model, &ev).unwrap();
    assert_eq!(majority_vote(std::slice::from_ref(&r)).unwrap(), r);
    let three = majority_vote(&[r.clone(), r.clone(), r.clone()]).unwrap();
    assert_eq!(three.accuracy, r.accuracy);
}

#[test]
fn run_single_reports_best_epoch() {
    let (train_set, eval_set) = synthetic_split(80, 60, 3, 1.0);
    let model = small_config(8);
    let tc = quick();
    let exp = Experiment {
        model: &model,
        train: &tc,
        train_data: &train_set,
        eval_data: &eval_set,
        embeddings: None,
        external: None,
    };
    let a = run_single(&exp, &model, &train_set, &eval_set, 4).unwrap();
    let b = run_single(&exp, &model, &train_set, &eval_set, 4).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.seed, Some(4));
    assert_eq!(
        a.report.accuracy,
        a.outcome.best.as_ref().unwrap().snapshot.accuracy
    );
    assert!(run_single(&exp, &model, &[], &eval_set, 4).is_err());
}

#[test]
fn ablation_table_shape_and_order() {
    let (train_set, eval_set) = synthetic_split(40, 24, 5, 1.0);
    let model = small_config(4);
    let tc = quick();
    let exp = Experiment {
        model: &model,
        train: &tc,
        train_data: &train_set,
        eval_data: &eval_set,
        embeddings: None,
        external: None,
    };
    let ids = [AblationId::Full, AblationId::L4, AblationId::F1];
    let serial = run_ablation(&exp, &ids, &[1, 2], 1).unwrap();
    let parallel = run_ablation(&exp, &ids, &[1, 2], 3).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.rows.len(), 3);
    for w in serial.rows.windows(2) {
        assert!(w[0].summary.mean >= w[1].summary.mean);
    }
    for row in &serial.rows {
        assert_eq!(row.accuracies.len(), 2);
        assert_eq!(row.summary, summarize(&row.accuracies).unwrap());
    }
    let text = serial.to_text();
    assert_eq!(text.lines().count(), 2 + 3);
    assert!(text.contains("no match module"));
    assert!(run_ablation(&exp, &[], &[1], 1).is_err());
}

#[test]
fn quantitative_table_baseline_first() {
    let (train_set, eval_set) = synthetic_split(40, 24, 6, 1.0);
    let model = small_config(4);
    let tc = quick();
    let exp = Experiment {
        model: &model,
        train: &tc,
        train_data: &train_set,
        eval_data: &eval_set,
        embeddings: None,
        external: None,
    };
    let modes = [TransformMode::EndingOnly, TransformMode::DropSentence(4)];
    let table = run_quantitative(&exp, &modes, &[1], 2).unwrap();
    let order: Vec<_> = table.rows.iter().map(|r| r.mode).collect();
    assert_eq!(
        order,
        vec![
            TransformMode::Identity,
            TransformMode::EndingOnly,
            TransformMode::DropSentence(4)
        ]
    );
    assert_eq!(table.rows[0].delta, 0.0);
    for r in &table.rows {
        assert!((r.delta - (r.summary.mean - table.rows[0].summary.mean)).abs() < 1e-15);
    }
    assert!(table.to_text().contains("(+0.00)"));
}

#[test]
fn dataset_transforms() {
    let data = synthetic_split(30, 30, 1, 0.5).0;
    let only = transform_dataset(&data, TransformMode::EndingOnly, 0);
    assert!(only.iter().all(|d| d.sentences.is_empty()));
    let twice = transform_dataset(
        &transform_dataset(&data, TransformMode::Reverse, 0),
        TransformMode::Reverse,
        0,
    );
    assert_eq!(twice, data);
    let dropped = transform_dataset(&data, TransformMode::DropSentence(2), 0);
    for (d, o) in dropped.iter().zip(&data) {
        assert_eq!(d.sentences.len(), 3);
        assert_eq!(d.sentences[1], o.sentences[2]);
        assert_eq!(
            (&d.ending1, &d.ending2, d.label),
            (&o.ending1, &o.ending2, o.label)
        );
    }
    assert_eq!(
        transform_dataset(&data, TransformMode::RandomOrder, 3),
        transform_dataset(&data, TransformMode::RandomOrder, 3)
    );
}

proptest! {
    #[test]
    fn random_order_is_a_permutation(seed in any::<u64>(), idx in 0usize..30) {
        let data = synthetic_split(30, 30, 2, 0.5).0;
        let shuffled = transform_instance(&data[idx], TransformMode::RandomOrder, &mut Rng::new(seed));
        let mut a = shuffled.sentences.clone();
        let mut b = data[idx].sentences.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}
