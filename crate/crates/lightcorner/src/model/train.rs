//! Training configuration and the per-light-type training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::swa::SwaState;
use super::tensor::RegressorParams;
use super::{Backbone, HEAD_OUTPUTS};
use crate::dataset::Dataset;
use crate::geometry::{flip_horizontal, make_crop_sample, CropSpec, LightType, Point};
use crate::metrics::{loss_gradient_wrt_pred, masked_corner_loss, EvalExample};
use crate::noise::{apply_noise, NoiseConfig};
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Optimization schedule shared by all four per-light-type models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero-based epoch index at which averaging begins and the learning
    /// rate is decayed once; `swa_start_epoch == epochs` disables averaging.
    pub swa_start_epoch: usize,
    pub swa_lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 25,
            batch_size: 16,
            swa_start_epoch: 20,
            swa_lr_decay: 0.1,
            seed: 3,
        }
    }
}

impl TrainConfig {
    /// `lr` and `weight_decay` accept zero so that no-op schedules (used to
    /// verify that checkpoints equal their initialization) stay expressible.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.swa_start_epoch < 1 || self.swa_start_epoch > self.epochs {
            return Err(Error::Config(format!(
                "swa_start_epoch must lie in [1, epochs={}], got {}",
                self.epochs, self.swa_start_epoch
            )));
        }
        if !self.swa_lr_decay.is_finite() || self.swa_lr_decay <= 0.0 || self.swa_lr_decay > 1.0 {
            return Err(Error::Config(format!(
                "swa_lr_decay must lie in (0, 1], got {}",
                self.swa_lr_decay
            )));
        }
        Ok(())
    }
}

/// Where horizontally flipped samples come from when augmentation is on.
///
/// `Mirrored` keeps each model single-orientation: the FL model sees FL
/// originals plus flipped FR samples (which look like FL lights), and so
/// on. `SameType` flips a model's own samples, mixing orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentRouting {
    Mirrored,
    SameType,
}

impl AugmentRouting {
    pub fn code(self) -> &'static str {
        match self {
            AugmentRouting::Mirrored => "mirrored",
            AugmentRouting::SameType => "same",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "mirrored" => Some(AugmentRouting::Mirrored),
            "same" => Some(AugmentRouting::SameType),
            _ => None,
        }
    }
}

/// Per-run toggles for one training invocation.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub augment: bool,
    pub routing: Option<AugmentRouting>,
    /// Center noise drawn fresh every epoch when set.
    pub noise: Option<NoiseConfig>,
}

impl TrainOptions {
    pub fn routing(&self) -> AugmentRouting {
        self.routing.unwrap_or(AugmentRouting::Mirrored)
    }
}

/// Independent seed streams per concern, each further offset by the light
/// type index so the four models never share draws. Public because they are
/// part of the reproducibility contract: parameter initialization for light
/// type `t` always comes from `derive_seed(cfg.seed, INIT_STREAM + t.index())`.
pub const INIT_STREAM: u64 = 100;
pub const SHUFFLE_STREAM: u64 = 200;
pub const NOISE_STREAM: u64 = 300;

/// A finished training run for one light type.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Final model: the SWA average when the schedule produced snapshots,
    /// otherwise the last-epoch parameters.
    pub params: RegressorParams,
    /// Raw last-epoch parameters, before averaging.
    pub final_params: RegressorParams,
    pub swa: SwaState,
    /// Mean per-sample training loss, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains one light type's regressor.
///
/// Each epoch walks a recipe pool of (annotation, flipped) pairs: the
/// type's own annotations unflipped, plus (when `options.augment`) flipped
/// copies drawn from the donor type chosen by the routing (mirrored type by
/// default, so every model keeps a single orientation). Noisy crop centers
/// are drawn per recipe in pool order before the epoch shuffle, so the
/// noise stream is independent of batch order. Mini-batches average the
/// per-sample loss gradient, step with Adam, and the learning rate decays
/// once at `swa_start_epoch`, after which each epoch's parameters enter
/// the stochastic weight average.
pub fn train_light_model<B: Backbone>(
    backbone: &B,
    dataset: &Dataset,
    light: LightType,
    cfg: &TrainConfig,
    crop_spec: &CropSpec,
    options: &TrainOptions,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if let Some(noise) = &options.noise {
        noise.validate()?;
    }

    let mut pool: Vec<(usize, bool)> =
        dataset.indices_of_type(light).into_iter().map(|i| (i, false)).collect();
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no annotations for light type {}",
            light.code()
        )));
    }
    if options.augment {
        let donor = match options.routing() {
            AugmentRouting::Mirrored => light.mirrored(),
            AugmentRouting::SameType => light,
        };
        pool.extend(dataset.indices_of_type(donor).into_iter().map(|i| (i, true)));
    }

    let light_idx = light.index() as u64;
    let mut init_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM + light_idx));
    let mut params = backbone.init_params(&mut init_rng);
    let mut ws = backbone.new_workspace();
    let mut adam = AdamState::new(&params);
    let mut swa = SwaState::new();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM + light_idx));
    let mut noise_rng = options
        .noise
        .as_ref()
        .map(|n| ChaCha8Rng::seed_from_u64(derive_seed(n.seed, NOISE_STREAM + light_idx)));

    let mut lr = cfg.lr;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if epoch == cfg.swa_start_epoch {
            lr *= cfg.swa_lr_decay;
        }

        let mut order: Vec<(usize, bool, Point)> = pool
            .iter()
            .map(|&(idx, flipped)| {
                let ann = dataset.annotation(idx);
                let center = match (&options.noise, &mut noise_rng) {
                    (Some(ncfg), Some(rng)) => apply_noise(ann, ncfg, rng),
                    _ => ann.center,
                };
                (idx, flipped, center)
            })
            .collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            params.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &(idx, flipped, center) in chunk {
                let ann = dataset.annotation(idx);
                let scene = dataset.scene_for(ann)?;
                let mut sample = make_crop_sample(scene, ann, center, crop_spec)?;
                if flipped {
                    sample = flip_horizontal(&sample);
                }
                let pred = backbone.forward(&params, &sample.pixels, &mut ws)?;
                let example = EvalExample::from_sample(&sample, &pred);
                epoch_loss += masked_corner_loss(std::slice::from_ref(&example))?;
                let g = loss_gradient_wrt_pred(&example);
                let mut gout = [0.0; HEAD_OUTPUTS];
                for j in 0..4 {
                    gout[2 * j] = g[j][0] * scale;
                    gout[2 * j + 1] = g[j][1] * scale;
                }
                backbone.backward(&mut params, &mut ws, &gout, None)?;
            }
            adam_step(&mut params, &mut adam, lr, cfg.weight_decay);
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step"));
        }
        loss_trace.push(epoch_loss / order.len() as f64);

        if epoch >= cfg.swa_start_epoch {
            swa.observe(&params)?;
        }
    }

    let final_params = params;
    let averaged = swa.averaged(&final_params);
    Ok(TrainedModel { params: averaged, final_params, swa, loss_trace })
}
