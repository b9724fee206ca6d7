mod common;

use common::{synthetic_set, tiny_config};
use fiqa_core::data::{preprocess_rgb, PreprocessedImage};
use fiqa_core::metrics::evaluate;
use fiqa_core::models::{Backbone, ModelSpec, QualityModel};
use fiqa_core::trainer::{
    evaluate_models, run_ablation, train_ensemble, train_model, AblationOptions, Dataset, TrainConfig, TrainError,
    ENSEMBLE_FILE,
};
use fiqa_core::inference::TtaPolicy;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noisy flat images whose label is their mean brightness.
fn brightness_set(n: usize, size: (usize, usize)) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut images = Vec::new();
    let mut mos = Vec::new();
    for i in 0..n {
        let level = 30.0 + 190.0 * i as f64 / (n - 1) as f64;
        let img = RgbImage::from_fn(size.1 as u32, size.0 as u32, |_, _| {
            let v = (level + rng.random_range(-20.0..20.0)).clamp(0.0, 255.0) as u8;
            Rgb([v, v, v])
        });
        let mean = img.pixels().map(|p| p[0] as f64).sum::<f64>() / (size.0 * size.1) as f64;
        images.push(PreprocessedImage {
            pixels: preprocess_rgb(&img, size),
            source_id: format!("b{i}"),
        });
        mos.push(mean / 255.0);
    }
    Dataset {
        images,
        mos,
        indices: (0..n).collect(),
    }
}

/// The same images under manifest rows disjoint from `d`, for use as a
/// validation set.
fn relabelled(d: &Dataset) -> Dataset {
    Dataset {
        images: d.images.clone(),
        mos: d.mos.clone(),
        indices: d.indices.iter().map(|i| i + d.indices.len()).collect(),
    }
}

#[test]
fn overfits_a_small_set() {
    let data = brightness_set(32, (64, 64));
    let cfg = TrainConfig {
        base_lr: 3e-3,
        backbone_lr_multiplier: 1.0,
        lr_step_epochs: 1000,
        ..tiny_config(64, 64, 40)
    };
    let run = train_model(&ModelSpec::new(Backbone::ShufflenetV2, false), &cfg, &data, &relabelled(&data)).unwrap();
    let (records, _) = evaluate_models(&[&run.model], &data, &TtaPolicy::none(), 8).unwrap();
    let pred: Vec<f64> = records.iter().map(|r| r.fused).collect();
    let fit = evaluate(&pred, &data.mos).unwrap();
    assert!(fit.final_score > 0.95, "training-set final {}", fit.final_score);
    assert_eq!(run.log.len(), 40);
    assert_eq!(run.trained_indices.len(), 32);
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let data = brightness_set(16, (32, 32));
    let cfg = TrainConfig {
        base_lr: 1e30,
        backbone_lr_multiplier: 1.0,
        ..tiny_config(32, 32, 3)
    };
    let err = train_model(&ModelSpec::new(Backbone::MobilenetV3Small, false), &cfg, &data, &relabelled(&data)).err();
    assert!(matches!(err, Some(TrainError::DivergedLoss { .. })), "{err:?}");
}

#[test]
fn ensemble_run_writes_artifacts_and_beats_its_weakest_member() {
    let dir = tempfile::tempdir().unwrap();
    let entries = synthetic_set(&dir.path().join("data"), 96, 64, 48, 1);
    let cfg = TrainConfig {
        base_lr: 1e-3,
        backbone_lr_multiplier: 1.0,
        bn_momentum: Some(0.1),
        ..tiny_config(64, 48, 8)
    };
    let out = dir.path().join("run");
    let run = train_ensemble(&cfg, &entries, Some(&out)).unwrap();
    for b in Backbone::ALL {
        assert!(out.join(format!("{}.safetensors", b.id())).is_file());
        assert!(out.join(format!("{}_train_log.csv", b.id())).is_file());
    }
    assert!(out.join(ENSEMBLE_FILE).is_file());

    let members: Vec<f64> = run.runs.iter().map(|r| r.best_val.unwrap().final_score).collect();
    let fused = run.validation.unwrap().final_score;
    let weakest = members.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(fused >= weakest, "ensemble {fused} vs members {members:?}");

    let again = train_ensemble(&cfg, &entries, None).unwrap();
    for (a, b) in run.runs.iter().zip(&again.runs) {
        assert_eq!(a.log, b.log);
    }
}

#[test]
fn ablation_rows_follow_the_controlled_variables() {
    let dir = tempfile::tempdir().unwrap();
    let entries = synthetic_set(dir.path(), 40, 48, 32, 6);
    let cfg = tiny_config(48, 32, 2);
    let report = run_ablation(&cfg, &entries, &AblationOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 5);
    let (corr, tta) = (&report.rows[3], &report.rows[4]);
    assert_eq!((&corr.models, corr.loss, corr.alpha, corr.tta), (&tta.models, tta.loss, tta.alpha, false));
    assert!(tta.tta);
    assert_eq!(report.rows[0].models, vec![Backbone::MobilenetV3Small]);
    assert_eq!(report.rows[1].models, vec![Backbone::ShufflenetV2]);
    assert_eq!(report.rows[2].models, Backbone::ALL.to_vec());
    assert_eq!(report.alpha_sweep[0].alpha, 0.0);
    assert_eq!(report.alpha_sweep[0].metrics, report.rows[2].metrics);
    let table = report.table();
    assert!(table.lines().nth(1).unwrap().starts_with("Baseline A"));
}

#[test]
fn models_from_the_same_seed_are_interchangeable() {
    let data = brightness_set(16, (32, 32));
    let cfg = tiny_config(32, 32, 2);
    let spec = ModelSpec::new(Backbone::MobilenetV3Small, false);
    let a = train_model(&spec, &cfg, &data, &relabelled(&data)).unwrap();
    let b = train_model(&spec, &cfg, &data, &relabelled(&data)).unwrap();
    let tensors = |m: &QualityModel| m.named_tensors().into_iter().map(|(_, t)| t.into_vec()).collect::<Vec<_>>();
    assert_eq!(tensors(&a.model), tensors(&b.model));
}
