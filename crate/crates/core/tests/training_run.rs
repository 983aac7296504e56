//! Desk-scale training-run checks: the objective actually descends over a
//! full schedule, and a reloaded checkpoint evaluates identically.

use vmr_core::data::{generate_pairset, SyntheticSpec, TrainPositives};
use vmr_core::losses::LossConfig;
use vmr_core::model::{EmbeddingKind, ModelDims};
use vmr_core::retrieval::{evaluate, DEFAULT_KS};
use vmr_core::training::{train, Ablation, Checkpoint, TrainConfig};

fn dims_for(spec: &SyntheticSpec) -> ModelDims {
    ModelDims {
        video_content_dim: spec.video_content_dim,
        music_content_dim: spec.music_content_dim,
        video_emotion_dim: spec.video_emotion_dim,
        music_emotion_dim: spec.music_emotion_dim,
        content_code_dim: 32,
        emotion_code_dim: 16,
        content_hidden_dim: 32,
        emotion_hidden_dim: 16,
        fused_dim: 48,
        num_emotion_classes: spec.num_classes,
    }
}

#[test]
fn mean_total_loss_descends_over_one_hundred_epochs() {
    let spec = SyntheticSpec {
        num_pairs: 200,
        noise_sigma: 0.1,
        seed: 21,
        ..SyntheticSpec::default()
    };
    let (data, _) = generate_pairset(&spec).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 16,
        learning_rate: 1e-4,
        beta1: 0.5,
        beta2: 0.999,
        adam_epsilon: 1e-8,
        seed: 21,
        loss: LossConfig::default(),
        dims: dims_for(&spec),
        ablation: Ablation::Interactive,
        positives: TrainPositives::First,
    };
    let outcome = train(&cfg, &data).unwrap();

    let epoch_mean = |epoch: usize| -> f64 {
        let totals: Vec<f64> = outcome
            .log
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.total)
            .collect();
        assert!(!totals.is_empty());
        totals.iter().sum::<f64>() / totals.len() as f64
    };
    let first = epoch_mean(1);
    let last = epoch_mean(100);
    assert!(
        last < first,
        "epoch-mean total loss did not descend: epoch 1 = {first}, epoch 100 = {last}"
    );
}

#[test]
fn reloaded_checkpoint_evaluates_identically() {
    let spec = SyntheticSpec {
        num_pairs: 40,
        noise_sigma: 0.1,
        seed: 8,
        ..SyntheticSpec::default()
    };
    let (all, _) = generate_pairset(&spec).unwrap();
    let (train_split, test_split) = all.split_dataset(8).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 1e-4,
        beta1: 0.5,
        beta2: 0.999,
        adam_epsilon: 1e-8,
        seed: 8,
        loss: LossConfig::default(),
        dims: dims_for(&spec),
        ablation: Ablation::Interactive,
        positives: TrainPositives::First,
    };
    let outcome = train(&cfg, &train_split).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    outcome.checkpoint.save(&path).unwrap();
    let reloaded = Checkpoint::load(&path).unwrap().build_model().unwrap();

    let digest = outcome.checkpoint.config_digest();
    let before = evaluate(
        &outcome.model,
        &test_split,
        EmbeddingKind::Interactive,
        &DEFAULT_KS,
        1,
        digest.clone(),
        8,
    )
    .unwrap();
    let after = evaluate(
        &reloaded,
        &test_split,
        EmbeddingKind::Interactive,
        &DEFAULT_KS,
        1,
        digest,
        8,
    )
    .unwrap();
    assert_eq!(before, after);
    assert_eq!(before.render(), after.render());
}
