//! Experiment configuration: a flat `key = value` text file covering the
//! crop geometry, split, noise, training schedule, and synthetic generator.
//!
//! Blank lines and `#` comments are skipped. Every key is optional and
//! falls back to its default; unknown and duplicate keys are rejected so a
//! typo cannot silently revert a setting. `parse(serialize(cfg))` returns
//! `cfg` exactly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::dataset::synth::{Hue, SynthConfig};
use crate::geometry::{CropMode, CropSpec};
use crate::model::train::{AugmentRouting, TrainConfig, TrainOptions};
use crate::noise::NoiseConfig;
use crate::{Error, Result};

/// Everything a pipeline run needs, resolved from file plus CLI overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Dataset directory: images/, annotations.jsonl, manifest.json.
    pub data_dir: PathBuf,
    /// Run directory: checkpoints, loss traces, reports, renders.
    pub run_dir: PathBuf,
    pub crop_size: u32,
    pub crop_mode: CropMode,
    /// Train fraction of the stratified split, strictly in (0, 1).
    pub split_fraction: f64,
    pub split_seed: u64,
    /// Center-noise distribution, shared by training noise and the frozen
    /// evaluation noise (which swaps in `eval_noise_seed`).
    pub noise: NoiseConfig,
    pub eval_noise_seed: u64,
    pub train: TrainConfig,
    pub augment: bool,
    pub augment_routing: AugmentRouting,
    /// Draw fresh center noise during training.
    pub train_noise: bool,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            crop_size: CropSpec::DEFAULT_SIZE,
            crop_mode: CropMode::SceneContext,
            split_fraction: 0.8,
            split_seed: 1,
            noise: NoiseConfig::default(),
            eval_noise_seed: 777,
            train: TrainConfig::default(),
            augment: false,
            augment_routing: AugmentRouting::Mirrored,
            train_noise: false,
            synth: SynthConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        CropSpec::new(self.crop_size, self.crop_mode)?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.fraction must be strictly between 0 and 1, got {}",
                self.split_fraction
            )));
        }
        self.noise.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn crop_spec(&self) -> Result<CropSpec> {
        CropSpec::new(self.crop_size, self.crop_mode)
    }

    /// Training toggles derived from the config; the training-noise stream
    /// keeps `noise.seed` while frozen evaluation noise uses
    /// `eval_noise_seed`, so the two never share draws.
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            augment: self.augment,
            routing: Some(self.augment_routing),
            noise: self.train_noise.then_some(self.noise),
        }
    }

    /// The noise distribution evaluated against, reseeded for the frozen
    /// test-set offsets.
    pub fn eval_noise(&self) -> NoiseConfig {
        NoiseConfig { seed: self.eval_noise_seed, ..self.noise }
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected `key = value`, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {lineno}: duplicate key `{key}`")));
            }
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse().map_err(|_| format!("key `{key}`: cannot parse `{value}`"))
        }
        fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("key `{key}`: expected true or false, got `{value}`")),
            }
        }

        match key {
            "data.dir" => self.data_dir = PathBuf::from(value),
            "run.dir" => self.run_dir = PathBuf::from(value),
            "crop.size" => self.crop_size = num(key, value)?,
            "crop.context" => {
                self.crop_mode = CropMode::from_code(value).ok_or_else(|| {
                    format!("key `{key}`: expected scene or vehicle, got `{value}`")
                })?;
            }
            "split.fraction" => self.split_fraction = num(key, value)?,
            "split.seed" => self.split_seed = num(key, value)?,
            "noise.p_zero" => self.noise.p_zero = num(key, value)?,
            "noise.sigma" => self.noise.sigma = num(key, value)?,
            "noise.clip" => self.noise.clip = num(key, value)?,
            "noise.seed" => self.noise.seed = num(key, value)?,
            "eval.noise_seed" => self.eval_noise_seed = num(key, value)?,
            "train.lr" => self.train.lr = num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.swa_start_epoch" => self.train.swa_start_epoch = num(key, value)?,
            "train.swa_lr_decay" => self.train.swa_lr_decay = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.augment" => self.augment = flag(key, value)?,
            "train.augment_routing" => {
                self.augment_routing = AugmentRouting::from_code(value).ok_or_else(|| {
                    format!("key `{key}`: expected mirrored or same, got `{value}`")
                })?;
            }
            "train.noise" => self.train_noise = flag(key, value)?,
            "synth.scene_w" => self.synth.scene_w = num(key, value)?,
            "synth.scene_h" => self.synth.scene_h = num(key, value)?,
            "synth.n_scenes" => self.synth.n_scenes = num(key, value)?,
            "synth.vehicles_min" => self.synth.vehicles_min = num(key, value)?,
            "synth.vehicles_max" => self.synth.vehicles_max = num(key, value)?,
            "synth.light_w_min" => self.synth.light_w_min = num(key, value)?,
            "synth.light_w_max" => self.synth.light_w_max = num(key, value)?,
            "synth.light_h_min" => self.synth.light_h_min = num(key, value)?,
            "synth.light_h_max" => self.synth.light_h_max = num(key, value)?,
            "synth.irregularity" => self.synth.irregularity = num(key, value)?,
            "synth.occlusion_q" => self.synth.occlusion_q = num(key, value)?,
            "synth.hues" => {
                let mut hues = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    let hue = Hue::from_code(part).ok_or_else(|| {
                        format!("key `{key}`: unknown hue `{part}` (red, amber, white)")
                    })?;
                    hues.push(hue);
                }
                self.synth.hues = hues;
            }
            "synth.clutter" => self.synth.clutter = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical text form: every key, grouped, in a fixed order.
    pub fn serialize(&self) -> String {
        let hues: Vec<&str> = self.synth.hues.iter().map(|h| h.code()).collect();
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("data.dir", self.data_dir.display().to_string());
        push("run.dir", self.run_dir.display().to_string());
        push("crop.size", self.crop_size.to_string());
        push("crop.context", self.crop_mode.code().to_string());
        push("split.fraction", self.split_fraction.to_string());
        push("split.seed", self.split_seed.to_string());
        push("noise.p_zero", self.noise.p_zero.to_string());
        push("noise.sigma", self.noise.sigma.to_string());
        push("noise.clip", self.noise.clip.to_string());
        push("noise.seed", self.noise.seed.to_string());
        push("eval.noise_seed", self.eval_noise_seed.to_string());
        push("train.lr", self.train.lr.to_string());
        push("train.weight_decay", self.train.weight_decay.to_string());
        push("train.epochs", self.train.epochs.to_string());
        push("train.batch_size", self.train.batch_size.to_string());
        push("train.swa_start_epoch", self.train.swa_start_epoch.to_string());
        push("train.swa_lr_decay", self.train.swa_lr_decay.to_string());
        push("train.seed", self.train.seed.to_string());
        push("train.augment", self.augment.to_string());
        push("train.augment_routing", self.augment_routing.code().to_string());
        push("train.noise", self.train_noise.to_string());
        push("synth.scene_w", self.synth.scene_w.to_string());
        push("synth.scene_h", self.synth.scene_h.to_string());
        push("synth.n_scenes", self.synth.n_scenes.to_string());
        push("synth.vehicles_min", self.synth.vehicles_min.to_string());
        push("synth.vehicles_max", self.synth.vehicles_max.to_string());
        push("synth.light_w_min", self.synth.light_w_min.to_string());
        push("synth.light_w_max", self.synth.light_w_max.to_string());
        push("synth.light_h_min", self.synth.light_h_min.to_string());
        push("synth.light_h_max", self.synth.light_h_max.to_string());
        push("synth.irregularity", self.synth.irregularity.to_string());
        push("synth.occlusion_q", self.synth.occlusion_q.to_string());
        push("synth.hues", hues.join(","));
        push("synth.clutter", self.synth.clutter.to_string());
        push("synth.seed", self.synth.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_exactly() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse_str(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn modified_config_round_trips_exactly() {
        let cfg = ExperimentConfig {
            data_dir: PathBuf::from("runs/night-set"),
            crop_size: 64,
            crop_mode: CropMode::VehicleOnly,
            split_fraction: 0.65,
            augment: true,
            augment_routing: AugmentRouting::SameType,
            train_noise: true,
            train: TrainConfig { lr: 5e-4, epochs: 3, ..TrainConfig::default() },
            synth: SynthConfig {
                hues: vec![Hue::White, Hue::Red],
                irregularity: 0.15,
                ..SynthConfig::default()
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::parse_str(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn comments_blanks_and_partial_files_are_fine() {
        let cfg = ExperimentConfig::parse_str(
            "# tighter crop\n\ncrop.size = 64\n  train.epochs=2  \n",
        )
        .unwrap();
        assert_eq!(cfg.crop_size, 64);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.split_seed, ExperimentConfig::default().split_seed);
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let err = ExperimentConfig::parse_str("crop.size = 64\ncorp.size = 32\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("corp.size"), "{msg}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = ExperimentConfig::parse_str("crop.size = 64\ncrop.size = 32\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "crop.size = tiny",
            "crop.context = panorama",
            "train.augment = yes",
            "synth.hues = red,violet",
            "split.fraction",
        ] {
            assert!(ExperimentConfig::parse_str(text).is_err(), "{text} should fail");
        }
    }

    #[test]
    fn validate_catches_cross_field_problems() {
        let mut cfg = ExperimentConfig::default();
        cfg.split_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split_fraction = 0.8;
        cfg.crop_size = 33;
        assert!(cfg.validate().is_err());
        cfg.crop_size = 128;
        cfg.validate().unwrap();
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experiment.cfg");
        let cfg = ExperimentConfig { crop_size: 32, ..ExperimentConfig::default() };
        cfg.save(&path).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    }
}
