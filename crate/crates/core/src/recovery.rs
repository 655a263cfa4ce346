//! Radiance recovery by inverting the scattering model, and channel-mean
//! colour constancy.

use crate::error::{Error, Result};
use crate::field::{ImageRgb, ScalarField};
use crate::prior::AtmosphericLight;

/// Channels with a mean below this are left unscaled by colour constancy.
pub const MIN_CHANNEL_MEAN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    /// Lower bound on the transmission used as divisor.
    pub epsilon: f64,
    pub clamp_output: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            clamp_output: true,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::InvalidParameter(alloc::format!(
                "epsilon must lie in (0, 0.1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn invert(channel: &ScalarField, t: &ScalarField, light: f64, cfg: &RecoveryConfig) -> Result<ScalarField> {
    let eps = cfg.epsilon;
    let out = channel.zip_map(t, |i, tv| light + (i - light) / tv.max(eps))?;
    Ok(if cfg.clamp_output { out.clamp(0.0, 1.0) } else { out })
}

/// `J = A + (I - A) / max(t, epsilon)` per channel.
pub fn recover_radiance(image: &ImageRgb, t: &ScalarField, airlight: &AtmosphericLight, cfg: &RecoveryConfig) -> Result<ImageRgb> {
    cfg.validate()?;
    let [r, g, b] = [0, 1, 2].map(|c| invert(image.channel(c), t, airlight.0[c], cfg));
    ImageRgb::new(r?, g?, b?)
}

/// Channelwise inversion with per-channel transmission and light.
pub fn recover_radiance_per_channel(
    image: &ImageRgb,
    t: &[ScalarField; 3],
    light: &AtmosphericLight,
    cfg: &RecoveryConfig,
) -> Result<ImageRgb> {
    cfg.validate()?;
    let [r, g, b] = [0, 1, 2].map(|c| invert(image.channel(c), &t[c], light.0[c], cfg));
    ImageRgb::new(r?, g?, b?)
}

/// Gains `m / mean_c` that equalise the channel means to their average `m`.
/// Channels with a near-zero mean get gain 1.
pub fn color_constancy_gains(image: &ImageRgb) -> [f64; 3] {
    let means = image.channel_means();
    let m = (means[0] + means[1] + means[2]) / 3.0;
    means.map(|mc| {
        if mc < MIN_CHANNEL_MEAN {
            log::warn!("channel mean {mc:e} too small for colour constancy; left unscaled");
            1.0
        } else {
            m / mc
        }
    })
}

/// Scales each channel by [`color_constancy_gains`] and clips to `[0, 1]`.
pub fn color_constancy_normalize(image: &ImageRgb) -> ImageRgb {
    let gains = color_constancy_gains(image);
    image.map_channels(|c, ch| ch.map(|v| (v * gains[c]).clamp(0.0, 1.0)))
}
