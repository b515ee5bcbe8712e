//! Center-point noise injection emulating upstream light-center detector
//! error.
//!
//! The noise is a zero-inflated truncated Gaussian: with probability
//! `p_zero` the center is left untouched, otherwise each component is drawn
//! from N(0, sigma) and redrawn until its magnitude is at most `clip`. The
//! crop is then taken around the noisy center while corner targets are
//! recomputed relative to the same noisy center, so the light sits
//! off-center in the crop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::geometry::{LightAnnotation, Point};
use crate::{Error, Result};

/// Parameters of the center-noise distribution. The distribution shape and
/// the default magnitudes are implementation choices; upstream detectors are
/// merely described as sometimes exact and otherwise a few pixels off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Probability of adding exactly zero noise.
    pub p_zero: f64,
    /// Isotropic spread of the Gaussian component, in pixels.
    pub sigma: f64,
    /// Maximum magnitude per axis, in pixels; enforced by resampling.
    pub clip: f64,
    /// Base seed for the noise stream.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p_zero: 0.3, sigma: 6.0, clip: 16.0, seed: 11 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_zero) || !self.p_zero.is_finite() {
            return Err(Error::Config(format!("noise.p_zero must be in [0,1], got {}", self.p_zero)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise.sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("noise.clip must be >= 0, got {}", self.clip)));
        }
        Ok(())
    }
}

/// Draws one noise offset.
///
/// Draw order is part of the determinism contract: the zero-inflation gate
/// consumes exactly one uniform draw regardless of `p_zero`, then the x and
/// y components (in that order) each consume one or more Gaussian draws
/// until the truncation accepts. `sigma = 0` or `clip = 0` short-circuits a
/// component to zero without consuming draws.
pub fn sample_noise(cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let gate: f64 = rng.random();
    if gate < cfg.p_zero {
        return (0.0, 0.0);
    }
    if cfg.sigma == 0.0 || cfg.clip == 0.0 {
        return (0.0, 0.0);
    }
    let normal = rand_distr::Normal::new(0.0, cfg.sigma).expect("validated sigma");
    let mut draw = || loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= cfg.clip {
            return v;
        }
    };
    let ex = draw();
    let ey = draw();
    (ex, ey)
}

/// Applies one noise draw to an annotation's center. A noisy center pushed
/// outside the vehicle box is clamped back onto the box boundary: an
/// upstream detector would not report a center off the vehicle.
pub fn apply_noise(
    annotation: &LightAnnotation,
    cfg: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Point {
    let (ex, ey) = sample_noise(cfg, rng);
    annotation
        .vehicle
        .clamp_point(Point::new(annotation.center.x + ex, annotation.center.y + ey))
}
