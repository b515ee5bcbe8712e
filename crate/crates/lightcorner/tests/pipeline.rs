//! Cross-module pipeline behavior: command plumbing, checkpoint fidelity,
//! context-mode semantics, oracle evaluation, and the generalization gap of
//! an actually trained model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lightcorner::commands::{cmd_eval, cmd_gen_synth, cmd_train, Manifest, MANIFEST_FILE};
use lightcorner::config::ExperimentConfig;
use lightcorner::dataset::synth::{Hue, SynthConfig};
use lightcorner::dataset::Dataset;
use lightcorner::geometry::{
    make_crop_sample, CornerPrediction, CropMode, CropSpec, LightType, Point,
};
use lightcorner::metrics::{masked_corner_loss, EvalExample};
use lightcorner::model::checkpoint;
use lightcorner::model::train::{TrainConfig, INIT_STREAM};
use lightcorner::model::{Backbone, ModelRegistry, RefCnn};
use lightcorner::report::light_metrics;
use lightcorner::seed::derive_seed;

fn small_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data_dir: dir.join("data"),
        run_dir: dir.join("run"),
        crop_size: 32,
        split_fraction: 0.5,
        synth: SynthConfig {
            scene_w: 128,
            scene_h: 96,
            n_scenes: 8,
            vehicles_min: 1,
            vehicles_max: 1,
            light_w_min: 8,
            light_w_max: 12,
            light_h_min: 8,
            light_h_max: 12,
            irregularity: 0.3,
            occlusion_q: 0.1,
            hues: Hue::ALL.to_vec(),
            clutter: 0.3,
            seed: 1234,
        },
        train: TrainConfig { epochs: 2, batch_size: 8, swa_start_epoch: 2, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    }
}

/// An lr = 0 run must leave every checkpoint exactly at its seeded
/// initialization, reproducible from the documented seed stream.
#[test]
fn zero_lr_checkpoints_equal_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.train = TrainConfig { lr: 0.0, epochs: 1, swa_start_epoch: 1, ..cfg.train };
    cmd_gen_synth(&cfg, false).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    assert!(!summary.trained.is_empty());

    let backbone = RefCnn::new(cfg.crop_size).unwrap();
    for t in &summary.trained {
        let path = cfg.run_dir.join(format!("{}.ckpt", t.light.code().to_lowercase()));
        let ckpt = checkpoint::load(&path).unwrap();
        let seed = derive_seed(cfg.train.seed, INIT_STREAM + t.light.index() as u64);
        let init = backbone.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(ckpt.params, init, "{} drifted from initialization", t.light);
    }
}

/// Switching the crop context mode changes pixels only: targets, mask, and
/// visibility are identical for the same annotation and center.
#[test]
fn context_mode_changes_preprocessing_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_gen_synth(&cfg, false).unwrap();
    let dataset = Dataset::load(
        &cfg.data_dir.join("annotations.jsonl"),
        &cfg.data_dir.join("images"),
    )
    .unwrap();

    let scene_spec = CropSpec::new(cfg.crop_size, CropMode::SceneContext).unwrap();
    let vehicle_spec = CropSpec::new(cfg.crop_size, CropMode::VehicleOnly).unwrap();
    let mut pixels_differ = false;
    for ann in dataset.annotations() {
        let scene = dataset.scene_for(ann).unwrap();
        let a = make_crop_sample(scene, ann, ann.center, &scene_spec).unwrap();
        let b = make_crop_sample(scene, ann, ann.center, &vehicle_spec).unwrap();
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.visible_count, b.visible_count);
        assert_eq!(a.crop_center, b.crop_center);
        pixels_differ |= a.pixels.data() != b.pixels.data();
    }
    assert!(pixels_differ, "vehicle-only padding never changed a single crop");
}

/// Feeding the ground truth back as the prediction must score a perfect
/// report: zero loss and ADE, full detection rate at both thresholds.
#[test]
fn perfect_oracle_scores_zero_error_and_full_detection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_gen_synth(&cfg, false).unwrap();
    let dataset = Dataset::load(
        &cfg.data_dir.join("annotations.jsonl"),
        &cfg.data_dir.join("images"),
    )
    .unwrap();
    let spec = cfg.crop_spec().unwrap();

    let mut examples = Vec::new();
    let mut centers = Vec::new();
    for ann in dataset.annotations() {
        let scene = dataset.scene_for(ann).unwrap();
        let sample = make_crop_sample(scene, ann, ann.center, &spec).unwrap();
        let mut oracle = [0.0; 8];
        for j in 0..4 {
            oracle[2 * j] = sample.targets[j][0];
            oracle[2 * j + 1] = sample.targets[j][1];
        }
        examples.push(EvalExample::from_sample(&sample, &CornerPrediction(oracle)));
        centers.push(sample.crop_center);
    }
    let m = light_metrics(&examples, &centers, spec.half_extent()).unwrap();
    assert_eq!(m.ade_px, 0.0);
    assert_eq!(m.loss, 0.0);
    assert_eq!(m.detect_rate_25, 1.0);
    assert_eq!(m.detect_rate_50, 1.0);
    assert_eq!(m.pct_error, Some(0.0));
}

/// A model trained to convergence on a small split must score strictly
/// lower loss on its own training data than on held-out data.
#[test]
fn trained_model_shows_a_generalization_gap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    // Few training scenes and many epochs, so each model memorizes its
    // handful of samples and the held-out loss stays clearly above.
    cfg.synth.n_scenes = 12;
    cfg.train = TrainConfig { epochs: 40, batch_size: 8, swa_start_epoch: 36, ..cfg.train };
    cmd_gen_synth(&cfg, false).unwrap();
    cmd_train(&cfg).unwrap();

    let backbone = RefCnn::new(cfg.crop_size).unwrap();
    let manifest = Manifest::load(&cfg.data_dir.join(MANIFEST_FILE)).unwrap();
    let spec = cfg.crop_spec().unwrap();
    let mut registry = ModelRegistry::new();
    for light in LightType::ALL {
        let path = cfg.run_dir.join(format!("{}.ckpt", light.code().to_lowercase()));
        registry.insert(light, checkpoint::load(&path).unwrap().params);
    }

    let dataset = Dataset::load(
        &cfg.data_dir.join("annotations.jsonl"),
        &cfg.data_dir.join("images"),
    )
    .unwrap();
    let mut ws = backbone.new_workspace();
    let mut split_loss = |indices: &[usize]| -> f64 {
        let examples: Vec<EvalExample> = indices
            .iter()
            .map(|&idx| {
                let ann = dataset.annotation(idx);
                let scene = dataset.scene_for(ann).unwrap();
                let sample = make_crop_sample(scene, ann, ann.center, &spec).unwrap();
                let params = registry.get(ann.light_type).unwrap();
                let pred = backbone.forward(params, &sample.pixels, &mut ws).unwrap();
                EvalExample::from_sample(&sample, &pred)
            })
            .collect();
        masked_corner_loss(&examples).unwrap()
    };
    let train_loss = split_loss(&manifest.train);
    let test_loss = split_loss(&manifest.test);
    assert!(
        train_loss < test_loss,
        "no generalization gap: train {train_loss} vs test {test_loss}"
    );
}

/// The frozen noise offsets recorded in the manifest shift the normalized
/// targets by exactly -offset/h (checked on exactly representable values
/// away from the clamp boundary).
#[test]
fn frozen_noise_shifts_targets_by_minus_epsilon_over_h() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_gen_synth(&cfg, false).unwrap();
    let dataset = Dataset::load(
        &cfg.data_dir.join("annotations.jsonl"),
        &cfg.data_dir.join("images"),
    )
    .unwrap();
    let spec = cfg.crop_spec().unwrap();
    let h = spec.half_extent();

    let ann = dataset.annotation(0);
    let scene = dataset.scene_for(ann).unwrap();
    let clean = make_crop_sample(scene, ann, ann.center, &spec).unwrap();
    // Dyadic offset, so every difference below is exact in f64.
    let eps = Point::new(2.5, -1.25);
    let shifted_center = Point::new(ann.center.x + eps.x, ann.center.y + eps.y);
    let noisy = make_crop_sample(scene, ann, shifted_center, &spec).unwrap();
    for j in 0..4 {
        if !clean.mask[j] || clean.clamped[j] || noisy.clamped[j] {
            continue;
        }
        assert_eq!(noisy.targets[j][0], clean.targets[j][0] - eps.x / h);
        assert_eq!(noisy.targets[j][1], clean.targets[j][1] - eps.y / h);
    }
}

/// Two identical (config, seed) pipeline runs in different directories
/// produce byte-identical JSON reports.
#[test]
fn identical_runs_produce_byte_identical_reports() {
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = small_config(dir.path());
            cmd_gen_synth(&cfg, false).unwrap();
            cmd_train(&cfg).unwrap();
            cmd_eval(&cfg).unwrap();
            std::fs::read(cfg.run_dir.join("report.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}
