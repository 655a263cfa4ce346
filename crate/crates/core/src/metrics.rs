//! Full-reference quality metrics with unit peak value.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{ImageRgb, ScalarField};
use crate::math;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared error over all channels and pixels.
pub fn mse(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mut s = 0.0;
    for c in 0..3 {
        s += a
            .channel(c)
            .as_slice()
            .iter()
            .zip(b.channel(c).as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    let (h, w) = a.shape();
    Ok(s / (3 * h * w) as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    let e = mse(a, b)?;
    if e <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * math::log10(1.0 / e)).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian of odd length `n`.
pub(crate) fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n / 2) as f64;
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - r;
            math::exp(-x * x / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Window side used for a `h x w` input: 11, or the largest odd size that fits.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let m = h.min(w).min(SSIM_WINDOW);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

/// Separable valid-mode filtering: output is `(h - n + 1) x (w - n + 1)`.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| k[t] * data[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel fields.
pub fn ssim_field(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    let n = ssim_window_size(h, w);
    if n == 0 {
        return Err(Error::InvalidDimensions);
    }
    let k = gaussian_window(n, SSIM_SIGMA);
    let (x, y) = (a.as_slice(), b.as_slice());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let sxx = filter_valid(&xx, h, w, &k);
    let syy = filter_valid(&yy, h, w, &k);
    let sxy = filter_valid(&xy, h, w, &k);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Mean SSIM on luma `0.299 R + 0.587 G + 0.114 B`.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    a.ensure_same_shape(b)?;
    ssim_field(&a.luma(), &b.luma())
}
