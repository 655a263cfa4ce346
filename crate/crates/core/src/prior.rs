//! Physics-derived quantities: global airlight, the bounded-radiance
//! transmission prior, the dark-channel baseline and underwater background
//! light.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{ImageRgb, ScalarField};
use crate::filter::min_filter;

/// Lower clamp applied to airlight components before they are divided by.
pub const AIRLIGHT_FLOOR: f64 = 0.05;

/// Denominators with magnitude below this skip their prior candidate.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// Global atmospheric light (or underwater background light), one value per
/// channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmosphericLight(pub [f64; 3]);

impl AtmosphericLight {
    pub fn gray(a: f64) -> Self {
        Self([a; 3])
    }

    /// Each component clamped to `[AIRLIGHT_FLOOR, 1]`.
    pub fn clamped(self) -> Self {
        Self(self.0.map(|v| v.clamp(AIRLIGHT_FLOOR, 1.0)))
    }

    #[inline]
    pub fn channel(&self, c: usize) -> f64 {
        self.0[c]
    }
}

/// Scaling parameters of the radiance bounds and the airlight window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    /// Upper radiance bound scale: `J_c <= alpha_hat * max(I_c)`.
    pub alpha_hat: f64,
    /// Lower radiance bound scale: `J_c >= alpha_check * min(I_c)`. Zero
    /// reproduces the dark-channel form.
    pub alpha_check: f64,
    /// Side of the airlight min-filter window.
    pub window: usize,
}

impl Default for PriorParams {
    fn default() -> Self {
        Self {
            alpha_hat: 1.5,
            alpha_check: 1.5,
            window: 15,
        }
    }
}

impl PriorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_hat >= 0.0 && self.alpha_hat.is_finite()) {
            return Err(Error::InvalidParameter("alpha_hat must be finite and >= 0".into()));
        }
        if !(self.alpha_check >= 0.0 && self.alpha_check.is_finite()) {
            return Err(Error::InvalidParameter("alpha_check must be finite and >= 0".into()));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidOddSize { size: self.window, min: 1 });
        }
        Ok(())
    }
}

/// `A_c = max(minfilter(I_c))`, clamped to `[AIRLIGHT_FLOOR, 1]`.
pub fn estimate_airlight(image: &ImageRgb, window: usize) -> Result<AtmosphericLight> {
    let mut a = [0.0; 3];
    for (c, slot) in a.iter_mut().enumerate() {
        *slot = min_filter(image.channel(c), window)?.max();
    }
    Ok(AtmosphericLight(a).clamped())
}

/// Bounded-radiance transmission prior.
///
/// With `I_hat_c`, `I_check_c` the channel max and min over the image, every
/// pixel takes the maximum over channels of the two lower bounds
/// `(I_c - A_c) / (alpha_hat * I_hat_c - A_c)` and
/// `(I_c - A_c) / (alpha_check * I_check_c - A_c)`, projected to `[0, 1]`.
/// A candidate whose denominator is within [`DENOMINATOR_EPS`] of zero is
/// skipped; a pixel with no candidates left gets 1.
pub fn prior_transmission(image: &ImageRgb, airlight: &AtmosphericLight, params: &PriorParams) -> Result<ScalarField> {
    params.validate()?;
    // (channel, denominator) of every candidate that survives the skip rule.
    let mut used: Vec<(usize, f64)> = Vec::with_capacity(6);
    for c in 0..3 {
        let ch = image.channel(c);
        let a = airlight.channel(c);
        for d in [params.alpha_hat * ch.max() - a, params.alpha_check * ch.min() - a] {
            if d.abs() >= DENOMINATOR_EPS {
                used.push((c, d));
            }
        }
    }
    let (h, w) = image.shape();
    if used.is_empty() {
        return Ok(ScalarField::filled(h, w, 1.0));
    }
    let a = airlight.0;
    let chans = [
        image.channel(0).as_slice(),
        image.channel(1).as_slice(),
        image.channel(2).as_slice(),
    ];
    let data = (0..h * w)
        .map(|i| {
            let t = used
                .iter()
                .map(|&(c, d)| (chans[c][i] - a[c]) / d)
                .fold(f64::NEG_INFINITY, f64::max);
            t.clamp(0.0, 1.0)
        })
        .collect();
    ScalarField::new(h, w, data)
}

/// Dark channel: min over the `patch x patch` window of the min over
/// channels.
pub fn dark_channel(image: &ImageRgb, patch: usize) -> Result<ScalarField> {
    let r = image.channel(0);
    let pointwise = r
        .zip_map(image.channel(1), f64::min)?
        .zip_map(image.channel(2), f64::min)?;
    min_filter(&pointwise, patch)
}

/// Classic dark-channel transmission `1 - omega * dark(I / A)`, used as a
/// comparison baseline.
pub fn dark_channel_transmission(
    image: &ImageRgb,
    airlight: &AtmosphericLight,
    patch: usize,
    omega: f64,
) -> Result<ScalarField> {
    let a = airlight.clamped();
    let normalized = image.map_channels(|c, ch| ch.map(|v| v / a.channel(c)));
    Ok(dark_channel(&normalized, patch)?.map(|d| (1.0 - omega * d).clamp(0.0, 1.0)))
}

/// Underwater background light.
///
/// `Omega` holds the brightest 0.1% of pixels by mean intensity (at least one
/// pixel). Among them the pixel maximising `min(I_g - I_r, I_b - I_r)` wins;
/// ties go to the first in row-major order. The raw pixel value is returned,
/// unclamped; use [`AtmosphericLight::clamped`] before dividing by it.
pub fn underwater_background_light(image: &ImageRgb) -> AtmosphericLight {
    let lum = image.mean_intensity();
    let n = lum.len();
    let count = (n / 1000).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let l = lum.as_slice();
    // Stable sort keeps row-major order among equal intensities.
    order.sort_by(|&a, &b| l[b].total_cmp(&l[a]));
    let mut omega: Vec<usize> = order[..count].to_vec();
    omega.sort_unstable();
    let w = image.width();
    let mut best = omega[0];
    let mut best_score = f64::NEG_INFINITY;
    for &i in &omega {
        let [r, g, b] = image.pixel(i / w, i % w);
        let score = (g - r).min(b - r);
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    AtmosphericLight(image.pixel(best / w, best % w))
}
