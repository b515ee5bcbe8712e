//! Pipeline entry points shared by the CLI and the integration tests:
//! dataset generation, training, evaluation, prediction export, and
//! overlay rendering. Each command reads everything it needs from an
//! [`ExperimentConfig`] and touches only that config's directories.
//!
//! Dataset directory layout (`data.dir`):
//! `images/` holds one PNG per scene, `annotations.jsonl` one record per
//! light, `manifest.json` the split membership plus the frozen evaluation
//! noise offsets. Run directory layout (`run.dir`): `fl.ckpt` .. `rr.ckpt`,
//! `loss_fl.csv` .., `report.json`, `report.txt`, `predictions.jsonl`,
//! `renders/`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::synth::generate_synthetic;
use crate::dataset::{load_annotations, save_annotations, split, Dataset};
use crate::geometry::{
    denormalize_prediction, make_crop_sample, CropSample, LightType, Point,
};
use crate::metrics::EvalExample;
use crate::model::checkpoint::{self, Checkpoint};
use crate::model::train::{train_light_model, TrainedModel};
use crate::model::{Backbone, ModelRegistry, RefCnn};
use crate::noise::sample_noise;
use crate::render::render_overlay;
use crate::report::{light_metrics, EvalBlock, LightMetrics, MetricReport};
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RENDERS_DIR: &str = "renders";

/// Stream id for the frozen evaluation noise, derived from
/// `eval.noise_seed` and independent of the per-light training streams.
const EVAL_NOISE_STREAM: u64 = 400;

/// The frozen evaluation noise: the distribution it was drawn from and one
/// offset per test annotation, in test order. Storing the draws (not just
/// the seed) keeps noisy-set comparisons stable even if the noise code or
/// distribution defaults evolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestNoise {
    pub p_zero: f64,
    pub sigma: f64,
    pub clip: f64,
    pub seed: u64,
    pub offsets: Vec<[f64; 2]>,
}

/// Split membership for one generated dataset. Indices refer to line order
/// in `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub annotations: String,
    pub images_dir: String,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub eval_noise: ManifestNoise,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// What `cmd_gen_synth` wrote, for the summary line.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub n_scenes: usize,
    /// Annotation counts in FL, FR, RL, RR order.
    pub per_type: [usize; 4],
    pub n_train: usize,
    pub n_test: usize,
    pub warnings: Vec<String>,
}

/// Generates a synthetic dataset into `cfg.data_dir`: scene PNGs, the
/// annotation file, and a manifest carrying the stratified split and the
/// frozen evaluation noise. Refuses to overwrite an existing dataset unless
/// `force` is set.
pub fn cmd_gen_synth(cfg: &ExperimentConfig, force: bool) -> Result<GenSummary> {
    cfg.validate()?;
    let out = &cfg.data_dir;
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already holds a dataset; pass --force to overwrite",
            out.display()
        )));
    }
    let images_dir = out.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let output = generate_synthetic(&cfg.synth)?;
    for (name, img) in &output.scenes {
        let path = images_dir.join(name);
        img.save(&path).map_err(|e| Error::image(&path, e))?;
    }
    let annotations = output.annotations;
    save_annotations(&out.join(ANNOTATIONS_FILE), &annotations)?;

    let (train, test, warnings) = if annotations.is_empty() {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        let outcome = split(&annotations, cfg.split_fraction, cfg.split_seed)?;
        (outcome.train, outcome.test, outcome.warnings)
    };

    let eval_noise = cfg.eval_noise();
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(eval_noise.seed, EVAL_NOISE_STREAM));
    let offsets = test
        .iter()
        .map(|_| {
            let (ex, ey) = sample_noise(&eval_noise, &mut rng);
            [ex, ey]
        })
        .collect();

    let manifest = Manifest {
        annotations: ANNOTATIONS_FILE.to_string(),
        images_dir: IMAGES_DIR.to_string(),
        split_fraction: cfg.split_fraction,
        split_seed: cfg.split_seed,
        train,
        test,
        eval_noise: ManifestNoise {
            p_zero: eval_noise.p_zero,
            sigma: eval_noise.sigma,
            clip: eval_noise.clip,
            seed: eval_noise.seed,
            offsets,
        },
        warnings: warnings.clone(),
    };
    manifest.save(&manifest_path)?;

    let mut per_type = [0usize; 4];
    for ann in &annotations {
        per_type[ann.light_type.index()] += 1;
    }
    Ok(GenSummary {
        n_scenes: output.scenes.len(),
        per_type,
        n_train: manifest.train.len(),
        n_test: manifest.test.len(),
        warnings,
    })
}

/// Loads the manifest plus the dataset restricted to the given annotation
/// indices (in the given order); only scenes the subset references are read.
fn load_subset(data_dir: &Path, indices: &[usize]) -> Result<Dataset> {
    let all = load_annotations(&data_dir.join(ANNOTATIONS_FILE))?;
    let mut subset = Vec::with_capacity(indices.len());
    for &idx in indices {
        let ann = all.get(idx).ok_or_else(|| {
            Error::InvalidInput(format!(
                "manifest references annotation {idx} but the file holds {}",
                all.len()
            ))
        })?;
        subset.push(ann.clone());
    }
    let images_dir = data_dir.join(IMAGES_DIR);
    let mut scenes = BTreeMap::new();
    for ann in &subset {
        if !scenes.contains_key(&ann.image_ref) {
            let path = images_dir.join(&ann.image_ref);
            let img = image::open(&path).map_err(|e| Error::image(&path, e))?.into_rgb8();
            scenes.insert(ann.image_ref.clone(), img);
        }
    }
    Dataset::new(scenes, subset)
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<Manifest> {
    Manifest::load(&cfg.data_dir.join(MANIFEST_FILE))
}

fn checkpoint_path(run_dir: &Path, light: LightType) -> PathBuf {
    run_dir.join(format!("{}.ckpt", light.code().to_lowercase()))
}

/// One trained light type in a [`TrainSummary`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLight {
    pub light: LightType,
    pub epochs: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSummary {
    pub trained: Vec<TrainedLight>,
    /// Light types absent from the training split, skipped with a warning.
    pub skipped: Vec<LightType>,
}

/// Trains one model per light type present in the training split and
/// writes a checkpoint plus a per-epoch loss CSV for each. Types without
/// training data are skipped and reported in the summary.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let dataset = load_subset(&cfg.data_dir, &manifest.train)?;
    let spec = cfg.crop_spec()?;
    let backbone = RefCnn::new(cfg.crop_size)?;
    let options = cfg.train_options();
    fs::create_dir_all(&cfg.run_dir).map_err(|e| Error::io(&cfg.run_dir, e))?;

    let mut summary = TrainSummary::default();
    for light in LightType::ALL {
        if dataset.indices_of_type(light).is_empty() {
            summary.skipped.push(light);
            continue;
        }
        let TrainedModel { params, swa, loss_trace, .. } =
            train_light_model(&backbone, &dataset, light, &cfg.train, &spec, &options)?;

        let ckpt = Checkpoint {
            arch_id: backbone.arch_id().to_string(),
            input_size: backbone.input_size(),
            light_type: light,
            params,
            swa,
        };
        checkpoint::save(&ckpt, &checkpoint_path(&cfg.run_dir, light))?;

        let csv_path = cfg.run_dir.join(format!("loss_{}.csv", light.code().to_lowercase()));
        let mut csv = String::from("epoch,loss\n");
        for (epoch, loss) in loss_trace.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss}\n"));
        }
        fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

        summary.trained.push(TrainedLight {
            light,
            epochs: loss_trace.len(),
            first_loss: *loss_trace.first().expect("at least one epoch"),
            final_loss: *loss_trace.last().expect("at least one epoch"),
        });
    }
    Ok(summary)
}

/// Loads the checkpoints for every light type in `lights` into a registry,
/// validating each against `backbone`.
pub fn load_registry(
    run_dir: &Path,
    backbone: &RefCnn,
    lights: &[LightType],
) -> Result<ModelRegistry> {
    let mut registry = ModelRegistry::new();
    for &light in lights {
        let path = checkpoint_path(run_dir, light);
        if !path.exists() {
            return Err(Error::Config(format!(
                "no checkpoint for light type {} at {}; run train first",
                light.code(),
                path.display()
            )));
        }
        let ckpt = checkpoint::load(&path)?;
        ckpt.validate_for(backbone)?;
        if ckpt.light_type != light {
            return Err(Error::Checkpoint(format!(
                "{} stores a {} model, expected {}",
                path.display(),
                ckpt.light_type.code(),
                light.code()
            )));
        }
        registry.insert(light, ckpt.params);
    }
    Ok(registry)
}

/// Light types that actually appear in the dataset, in canonical order.
fn present_types(dataset: &Dataset) -> Vec<LightType> {
    LightType::ALL
        .into_iter()
        .filter(|&t| !dataset.indices_of_type(t).is_empty())
        .collect()
}

/// Evaluates the trained checkpoints on the test split, clean and under the
/// manifest's frozen noise offsets, and writes `report.json` plus
/// `report.txt` into the run directory. Reads but never writes the dataset
/// and checkpoint files.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    if manifest.test.is_empty() {
        return Err(Error::InvalidInput(
            "the manifest's test split is empty; nothing to evaluate".into(),
        ));
    }
    if manifest.eval_noise.offsets.len() != manifest.test.len() {
        return Err(Error::InvalidInput(format!(
            "manifest holds {} noise offsets for {} test annotations",
            manifest.eval_noise.offsets.len(),
            manifest.test.len()
        )));
    }
    let dataset = load_subset(&cfg.data_dir, &manifest.test)?;
    let spec = cfg.crop_spec()?;
    let backbone = RefCnn::new(cfg.crop_size)?;
    let lights = present_types(&dataset);
    let registry = load_registry(&cfg.run_dir, &backbone, &lights)?;
    let mut ws = backbone.new_workspace();
    let h = spec.half_extent();

    let mut clean: [Option<LightMetrics>; 4] = Default::default();
    let mut noisy: [Option<LightMetrics>; 4] = Default::default();
    for &light in &lights {
        let params = registry.get(light)?;
        let mut clean_examples = Vec::new();
        let mut noisy_examples = Vec::new();
        let mut clean_centers = Vec::new();
        let mut noisy_centers = Vec::new();
        for idx in dataset.indices_of_type(light) {
            let ann = dataset.annotation(idx);
            let scene = dataset.scene_for(ann)?;

            let sample = make_crop_sample(scene, ann, ann.center, &spec)?;
            let pred = backbone.forward(params, &sample.pixels, &mut ws)?;
            clean_examples.push(EvalExample::from_sample(&sample, &pred));
            clean_centers.push(sample.crop_center);

            let [ex, ey] = manifest.eval_noise.offsets[idx];
            let center = ann
                .vehicle
                .clamp_point(Point::new(ann.center.x + ex, ann.center.y + ey));
            let sample = make_crop_sample(scene, ann, center, &spec)?;
            let pred = backbone.forward(params, &sample.pixels, &mut ws)?;
            noisy_examples.push(EvalExample::from_sample(&sample, &pred));
            noisy_centers.push(sample.crop_center);
        }
        clean[light.index()] = Some(light_metrics(&clean_examples, &clean_centers, h)?);
        noisy[light.index()] = Some(light_metrics(&noisy_examples, &noisy_centers, h)?);
    }

    let report = MetricReport {
        context: spec.mode.code().to_string(),
        crop_size: cfg.crop_size,
        n_train: manifest.train.len(),
        n_test: manifest.test.len(),
        clean: EvalBlock::build("clean", clean)?,
        noisy: EvalBlock::build("noisy", noisy)?,
    };

    fs::create_dir_all(&cfg.run_dir).map_err(|e| Error::io(&cfg.run_dir, e))?;
    let json_path = cfg.run_dir.join(REPORT_JSON_FILE);
    fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    let text_path = cfg.run_dir.join(REPORT_TEXT_FILE);
    fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
    Ok(report)
}

/// One exported prediction, corners in scene pixels (TL, TR, BR, BL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image: String,
    pub light_type: String,
    pub center: [f64; 2],
    pub corners: [[f64; 2]; 4],
}

/// Runs the trained models over the test split (clean centers) and writes
/// one JSON line per annotation to `predictions.jsonl`, in test order.
pub fn cmd_predict(cfg: &ExperimentConfig) -> Result<usize> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let dataset = load_subset(&cfg.data_dir, &manifest.test)?;
    let spec = cfg.crop_spec()?;
    let backbone = RefCnn::new(cfg.crop_size)?;
    let registry = load_registry(&cfg.run_dir, &backbone, &present_types(&dataset))?;
    let mut ws = backbone.new_workspace();

    fs::create_dir_all(&cfg.run_dir).map_err(|e| Error::io(&cfg.run_dir, e))?;
    let path = cfg.run_dir.join(PREDICTIONS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for ann in dataset.annotations() {
        let scene = dataset.scene_for(ann)?;
        let sample = make_crop_sample(scene, ann, ann.center, &spec)?;
        let pred = crate::model::predict(&backbone, &registry, &sample, &mut ws)?;
        let corners = denormalize_prediction(&pred, sample.crop_center, &spec);
        let record = PredictionRecord {
            image: ann.image_ref.clone(),
            light_type: ann.light_type.code().to_string(),
            center: [ann.center.x, ann.center.y],
            corners: corners.map(|p| [p.x, p.y]),
        };
        let line = serde_json::to_string(&record).expect("prediction serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(dataset.len())
}

/// Renders overlay images for the first `limit` test annotations (all of
/// them when `None`) into `renders/`, returning the file count.
pub fn cmd_render(cfg: &ExperimentConfig, limit: Option<usize>) -> Result<usize> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let dataset = load_subset(&cfg.data_dir, &manifest.test)?;
    let spec = cfg.crop_spec()?;
    let backbone = RefCnn::new(cfg.crop_size)?;
    let registry = load_registry(&cfg.run_dir, &backbone, &present_types(&dataset))?;
    let mut ws = backbone.new_workspace();

    let renders_dir = cfg.run_dir.join(RENDERS_DIR);
    fs::create_dir_all(&renders_dir).map_err(|e| Error::io(&renders_dir, e))?;
    let n = limit.unwrap_or(dataset.len()).min(dataset.len());
    for (i, ann) in dataset.annotations().iter().take(n).enumerate() {
        let scene = dataset.scene_for(ann)?;
        let sample: CropSample = make_crop_sample(scene, ann, ann.center, &spec)?;
        let pred = crate::model::predict(&backbone, &registry, &sample, &mut ws)?;
        let img = render_overlay(&sample, Some(&pred));
        let path = renders_dir.join(format!("{i:05}_{}.png", ann.light_type.code()));
        img.save(&path).map_err(|e| Error::image(&path, e))?;
    }
    Ok(n)
}
