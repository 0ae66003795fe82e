mod common;

use common::{batch_loss, random_case};
use mclnn::config::{LayerConfig, ModelConfig};
use mclnn::datasets::{cross_validate, extract_segments, vote};
use mclnn::features::FeatureClip;
use mclnn::netcore::{model_gradients, write_model};
use mclnn::optim::{adam_step, train, AdamHyper, AdamState, StopReason, TrainData};
use ndarray::{Array1, Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config() -> ModelConfig {
    let mut config = ModelConfig {
        feature_length: 8,
        order: 1,
        layers: vec![LayerConfig::masked(6, 3, 1)],
        extra_frames: 2,
        dense: vec![5],
        classes: vec!["a".into(), "b".into()],
        ..ModelConfig::default()
    };
    config.training.batch_size = 16;
    config.training.max_epochs = 6;
    config.training.patience = 3;
    config
}

/// Two classes told apart by which half of the feature vector is raised.
fn toy_clips(seed: u64, count: usize, fold: usize) -> Vec<FeatureClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let class = i % 2;
            let frames = Array2::from_shape_fn((9, 8), |(_, j)| {
                let raised = (j < 4) == (class == 0);
                f64::from(u8::from(raised)) * 1.5 + rng.random_range(-0.5..0.5)
            });
            FeatureClip::new(format!("f{fold}/{i}"), ["a", "b"][class], fold, frames).unwrap()
        })
        .collect()
}

#[test]
fn same_seed_same_run() {
    let config = toy_config();
    let (tr, va) = (toy_clips(1, 12, 1), toy_clips(2, 6, 2));
    let run = |seed| train(&config, TrainData { train: &tr, validation: &va }, seed).unwrap();
    let (a, b) = (run(7), run(7));
    assert_eq!(a.history_csv(), b.history_csv());
    let bytes = |r: &mclnn::optim::TrainRun| {
        let mut out = Vec::new();
        write_model(&r.best_params, &mut out).unwrap();
        out
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&run(8)));
}

#[test]
fn patience_zero_runs_one_epoch() {
    let mut config = toy_config();
    config.training.patience = 0;
    let (tr, va) = (toy_clips(1, 8, 1), toy_clips(2, 4, 2));
    let run = train(&config, TrainData { train: &tr, validation: &va }, 1).unwrap();
    assert_eq!(run.history.len(), 1);
    assert_eq!(run.best_epoch, 1);
    assert_eq!(run.stop_reason, StopReason::PatienceExhausted);
}

#[test]
fn best_epoch_has_top_validation_accuracy() {
    let mut config = toy_config();
    config.training.max_epochs = 10;
    config.training.patience = 10;
    let (tr, va) = (toy_clips(3, 12, 1), toy_clips(4, 7, 2));
    let run = train(&config, TrainData { train: &tr, validation: &va }, 3).unwrap();
    assert_eq!(run.stop_reason, StopReason::MaxEpochs);
    let best = run.history[run.best_epoch - 1].val_accuracy;
    assert!(run.history.iter().all(|r| r.val_accuracy <= best));
    // Earliest epoch on ties.
    assert!(run.history[..run.best_epoch - 1].iter().all(|r| r.val_accuracy < best));
}

#[test]
fn masked_weights_stay_zero_through_training() {
    let config = toy_config();
    let (tr, va) = (toy_clips(5, 10, 1), toy_clips(6, 4, 2));
    let run = train(&config, TrainData { train: &tr, validation: &va }, 5).unwrap();
    for layer in &run.best_params.conditional {
        let mask = layer.mask().unwrap();
        for w in layer.weights() {
            for ((r, c), &v) in w.indexed_iter() {
                if !mask.get(r, c) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn training_errors() {
    let config = toy_config();
    let tr = toy_clips(1, 4, 1);
    assert!(train(&config, TrainData { train: &tr, validation: &[] }, 1).is_err());
    let mut bad = toy_clips(2, 2, 2);
    bad[0].label = "zebra".into();
    assert!(train(&config, TrainData { train: &tr, validation: &bad }, 1).is_err());
    let wide = vec![FeatureClip::new("w", "a", 1, Array2::zeros((9, 9))).unwrap()];
    assert!(train(&config, TrainData { train: &wide, validation: &tr }, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tiny_adam_step_does_not_raise_batch_loss(seed in 0u64..10_000, masked in any::<bool>()) {
        let case = random_case(seed, masked, 0.0);
        let views: Vec<(ArrayView2<f64>, usize)> = case.batch.iter().map(|(f, l)| (f.view(), *l)).collect();
        let (grads, loss) = model_gradients(&views, &case.params, 0).unwrap();
        let hyper = AdamHyper { learning_rate: 1e-6, ..AdamHyper::default() };
        let mut params = case.params.clone();
        let mut state = AdamState::for_params(&params, hyper);
        adam_step(&mut params, &grads, &mut state).unwrap();
        let after = batch_loss(&case.batch, &params, 0);
        prop_assert!(after <= loss + 1e-12, "loss {} -> {}", loss, after);
    }

    #[test]
    fn vote_ignores_segment_order(probs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..8), rot in 0usize..8) {
        let vectors: Vec<Array1<f64>> = probs.into_iter().map(Array1::from).collect();
        let mut rotated = vectors.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        let (a, ma) = vote(&vectors).unwrap();
        let (b, mb) = vote(&rotated).unwrap();
        prop_assert_eq!(a, b);
        for (x, y) in ma.iter().zip(&mb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn segments_cover_clip() {
    let clip = toy_clips(1, 1, 1).remove(0);
    let segs = extract_segments(&clip, 5, 2);
    assert_eq!(segs.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 2, 4]);
    for s in &segs {
        assert_eq!(s.frames, clip.frames.slice(ndarray::s![s.start..s.start + 5, ..]));
    }
}

#[test]
fn cross_validation_report_is_consistent() {
    let mut config = toy_config();
    config.training.max_epochs = 3;
    let clips: Vec<FeatureClip> = (1..=3).flat_map(|f| toy_clips(10 + f as u64, 6, f)).collect();
    let (report, rotations) = cross_validate(&config, &clips, 3, |_, _| {}).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(rotations.len(), 3);
    let mean = report.folds.iter().map(|f| f.accuracy).sum::<f64>() / 3.0;
    assert!((report.mean_accuracy - mean).abs() < 1e-12);
    let per_class: Vec<usize> = report.confusion.iter().map(|row| row.iter().sum()).collect();
    assert_eq!(per_class, vec![9, 9]);
    for r in &rotations {
        let mut all: Vec<usize> = r.split.train.clone();
        all.extend([r.split.validation, r.split.test]);
        all.sort();
        assert_eq!(all, vec![1, 2, 3]);
    }
    let (again, _) = cross_validate(&config, &clips, 3, |_, _| {}).unwrap();
    assert_eq!(report.to_json(), again.to_json());
}
