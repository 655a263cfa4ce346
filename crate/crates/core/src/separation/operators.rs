//! Plug-in prior operators for the half-quadratic auxiliaries and the
//! conjugate-gradient solver they share.
//!
//! All stencils use reflective boundaries. With forward differences that
//! vanish on the last row and column, `grad^T grad` is exactly the negated
//! reflective 5-point Laplacian.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Default conjugate-gradient budget per operator application.
pub const DEFAULT_INNER_ITERS: usize = 30;

/// Default squared-gradient truncation threshold.
pub const DEFAULT_TAU: f64 = 1e-3;

/// CG stops early once the residual norm falls below this fraction of the
/// right-hand side norm.
const CG_RELATIVE_TOL: f64 = 1e-13;

/// A field-to-field map standing in for the proximal step of a layer prior.
///
/// `mu` is the current penalty weight of the coupling term. Implementations
/// act on one channel; the caller projects the result back into the box.
pub trait PriorOperator {
    fn name(&self) -> &str;
    fn apply(&self, field: &ScalarField, mu: f64) -> Result<ScalarField>;
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOperator;

impl PriorOperator for IdentityOperator {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, field: &ScalarField, _mu: f64) -> Result<ScalarField> {
        Ok(field.clone())
    }
}

/// Edge-preserving reconstruction from hard-truncated gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGradient {
    pub tau: f64,
    pub inner_iters: usize,
}

impl Default for TruncatedGradient {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            inner_iters: DEFAULT_INNER_ITERS,
        }
    }
}

impl PriorOperator for TruncatedGradient {
    fn name(&self) -> &str {
        "truncated_gradient"
    }

    fn apply(&self, field: &ScalarField, mu: f64) -> Result<ScalarField> {
        operator_truncated_gradient(field, self.tau, mu, self.inner_iters)
    }
}

/// Quadratic smoothing with a squared-Laplacian penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacianSmooth {
    pub inner_iters: usize,
}

impl Default for LaplacianSmooth {
    fn default() -> Self {
        Self {
            inner_iters: DEFAULT_INNER_ITERS,
        }
    }
}

impl PriorOperator for LaplacianSmooth {
    fn name(&self) -> &str {
        "laplacian_smooth"
    }

    fn apply(&self, field: &ScalarField, mu: f64) -> Result<ScalarField> {
        operator_laplacian_smooth(field, mu, self.inner_iters)
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("penalty weight must be positive and finite, got {mu}")));
    }
    Ok(())
}

/// Forward differences, zero on the last column (`gx`) and last row (`gy`).
pub(crate) fn forward_grad(f: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            gx[k] = if j + 1 < w { f[k + 1] - f[k] } else { 0.0 };
            gy[k] = if i + 1 < h { f[k + w] - f[k] } else { 0.0 };
        }
    }
}

/// Adjoint of [`forward_grad`].
pub(crate) fn grad_adjoint(gx: &[f64], gy: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let mut v = 0.0;
            if j + 1 < w {
                v -= gx[k];
            }
            if j > 0 {
                v += gx[k - 1];
            }
            if i + 1 < h {
                v -= gy[k];
            }
            if i > 0 {
                v += gy[k - w];
            }
            out[k] = v;
        }
    }
}

/// Reflective 5-point Laplacian.
pub(crate) fn laplacian(f: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        let up = if i == 0 { 0 } else { i - 1 };
        let down = if i + 1 == h { i } else { i + 1 };
        for j in 0..w {
            let left = if j == 0 { 0 } else { j - 1 };
            let right = if j + 1 == w { j } else { j + 1 };
            out[i * w + j] = f[up * w + j] + f[down * w + j] + f[i * w + left] + f[i * w + right] - 4.0 * f[i * w + j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients on a symmetric positive definite operator, warm
/// started at `x`. Runs at most `iters` iterations.
pub fn conjugate_gradient(mut apply: impl FnMut(&[f64], &mut [f64]), b: &[f64], mut x: Vec<f64>, iters: usize) -> Vec<f64> {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = CG_RELATIVE_TOL * CG_RELATIVE_TOL * dot(b, b);
    let mut ap = vec![0.0; n];
    for _ in 0..iters {
        if rr <= stop || rr == 0.0 {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    x
}

/// Keeps the gradients with `|g|^2 >= tau` and solves
/// `(mu + 2 grad^T grad) Y = mu L + 2 grad^T g'` by CG from `Y = L`.
pub fn operator_truncated_gradient(l: &ScalarField, tau: f64, mu: f64, inner_iters: usize) -> Result<ScalarField> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("tau must be positive, got {tau}")));
    }
    check_mu(mu)?;
    let (h, w) = l.shape();
    let n = h * w;
    let f = l.as_slice();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    forward_grad(f, h, w, &mut gx, &mut gy);
    for k in 0..n {
        if gx[k] * gx[k] + gy[k] * gy[k] < tau {
            gx[k] = 0.0;
            gy[k] = 0.0;
        }
    }
    let mut rhs = vec![0.0; n];
    grad_adjoint(&gx, &gy, h, w, &mut rhs);
    for k in 0..n {
        rhs[k] = mu * f[k] + 2.0 * rhs[k];
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        laplacian(x, h, w, out);
        for k in 0..x.len() {
            out[k] = mu * x[k] - 2.0 * out[k];
        }
    };
    let y = conjugate_gradient(apply, &rhs, f.to_vec(), inner_iters);
    ScalarField::new(h, w, y)
}

/// Solves `(mu + 2 Lap^T Lap) Y = mu P` by CG from `Y = P`.
pub fn operator_laplacian_smooth(p: &ScalarField, mu: f64, inner_iters: usize) -> Result<ScalarField> {
    check_mu(mu)?;
    let (h, w) = p.shape();
    let f = p.as_slice();
    let rhs: Vec<f64> = f.iter().map(|v| mu * v).collect();
    let mut tmp = vec![0.0; h * w];
    let apply = |x: &[f64], out: &mut [f64]| {
        laplacian(x, h, w, &mut tmp);
        laplacian(&tmp, h, w, out);
        for k in 0..x.len() {
            out[k] = mu * x[k] + 2.0 * out[k];
        }
    };
    let y = conjugate_gradient(apply, &rhs, f.to_vec(), inner_iters);
    ScalarField::new(h, w, y)
}
