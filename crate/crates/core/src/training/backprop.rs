//! Quadratic loss and hand-derived reverse pass through the unrolled network.
//!
//! With `t_{l+1} = t_l - D_l(t_l) + s * lambda_l * P` the adjoint state obeys
//! `g_l = g_{l+1} - (dD_l/dt)^T g_{l+1}`; the identity term is the skip path.
//! Per filter, with `y = inner (*) t_l`, `z = phi(y)`:
//!
//! ```text
//! e'       = outer^T g_{l+1}          (exact padded adjoint)
//! dJ/douter = -G(z, g_{l+1})          (G = kernel_gradient)
//! dJ/dq_i  = -sum e' * hat_i(y)
//! e        = phi'(y) * e'
//! dJ/dinner = -G(t_l, e)
//! g_l     -= inner^T e
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{conv2d_adjoint, conv2d_same, kernel_gradient};
use crate::dct::dct_atoms;
use crate::error::{Error, Result};
use crate::field::{ImageRgb, Kernel, ScalarField};
use crate::network::{stage_step, NetworkParams, StageKernels};
use crate::prior::{estimate_airlight, prior_transmission, PriorParams};

/// A hazy observation with its ground-truth transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub observation: ImageRgb,
    pub target: ScalarField,
}

impl TrainingPair {
    pub fn new(observation: ImageRgb, target: ScalarField) -> Result<Self> {
        if observation.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                expected: observation.shape(),
                found: target.shape(),
            });
        }
        if target.min() < 0.0 || target.max() > 1.0 {
            return Err(Error::InvalidParameter("target transmission must lie in [0, 1]".into()));
        }
        Ok(Self { observation, target })
    }
}

/// A pair reduced to what the network sees: the state entering the first
/// trained stage, the prior map and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub start: ScalarField,
    pub prior_map: ScalarField,
    pub target: ScalarField,
}

impl PreparedPair {
    /// Computes airlight and prior map once; the state starts at the prior.
    pub fn from_pair(pair: &TrainingPair, prior: &PriorParams) -> Result<Self> {
        let airlight = estimate_airlight(&pair.observation, prior.window)?;
        let prior_map = prior_transmission(&pair.observation, &airlight, prior)?;
        Ok(Self {
            start: prior_map.clone(),
            prior_map,
            target: pair.target.clone(),
        })
    }
}

pub fn prepare_pairs(pairs: &[TrainingPair], prior: &PriorParams) -> Result<Vec<PreparedPair>> {
    pairs.iter().map(|p| PreparedPair::from_pair(p, prior)).collect()
}

/// `J = 1/2 ||t_L - t*||^2`, unnormalized.
pub fn loss(t_final: &ScalarField, target: &ScalarField) -> Result<f64> {
    t_final.ensure_same_shape(target)?;
    Ok(0.5
        * t_final
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

fn forward_trace(pair: &PreparedPair, params: &NetworkParams, kernels: &[StageKernels]) -> Result<Vec<ScalarField>> {
    let mut trace = Vec::with_capacity(kernels.len() + 1);
    trace.push(pair.start.clone());
    for (stage, k) in params.stages().iter().zip(kernels) {
        let next = stage_step(trace.last().expect("non-empty"), &pair.prior_map, k, stage, params.convention())?;
        trace.push(next);
    }
    Ok(trace)
}

/// Loss of one prepared pair without gradient.
pub fn pair_loss(pair: &PreparedPair, params: &NetworkParams) -> Result<f64> {
    let basis = dct_atoms(params.shape().kernel_size)?;
    let kernels: Vec<StageKernels> = params.stages().iter().map(|s| s.realize_with(&basis)).collect();
    let trace = forward_trace(pair, params, &kernels)?;
    loss(trace.last().expect("non-empty"), &pair.target)
}

/// Loss and its gradient, accumulated into `grad` (layout of
/// [`NetworkParams::to_vec`]).
pub fn accumulate_gradient(pair: &PreparedPair, params: &NetworkParams, grad: &mut [f64]) -> Result<f64> {
    let shape = params.shape();
    if grad.len() != shape.param_count() {
        return Err(Error::InvalidParameter("gradient buffer has the wrong length".into()));
    }
    pair.start.ensure_same_shape(&pair.prior_map)?;
    let n = shape.kernel_size;
    let basis = dct_atoms(n)?;
    let kernels: Vec<StageKernels> = params.stages().iter().map(|s| s.realize_with(&basis)).collect();
    let trace = forward_trace(pair, params, &kernels)?;
    let out = trace.last().expect("non-empty");
    let value = loss(out, &pair.target)?;

    let layout = shape.layout();
    let sign = shape.convention.prior_sign();
    let atoms = shape.atoms();
    let (h, w) = out.shape();
    let mut g = out.zip_map(&pair.target, |a, b| a - b)?;
    let mut z = vec![0.0; h * w];
    let mut e = vec![0.0; h * w];

    for l in (0..shape.stages).rev() {
        let stage = params.stage(l);
        let ks = &kernels[l];
        let t = &trace[l];
        let gs = &mut grad[params.stage_range(l)];
        gs[layout.lambda] += sign * g.dot(&pair.prior_map);

        let mut g_prev = g.clone();
        for (k, phi) in stage.activations.iter().enumerate() {
            let m = phi.control_points();
            let y = conv2d_same(t, &ks.inner[k])?;
            let ep = conv2d_adjoint(&g, &ks.outer[k])?;
            let dq = &mut gs[layout.activations.start + k * m..][..m];
            for (idx, (&yv, &epv)) in y.as_slice().iter().zip(ep.as_slice()).enumerate() {
                let seg = phi.locate(yv);
                let (val, slope) = phi.eval_with_slope(yv);
                z[idx] = val;
                e[idx] = epv * slope;
                dq[seg.index] -= epv * (1.0 - seg.weight);
                dq[seg.index + 1] -= epv * seg.weight;
            }
            let zf = ScalarField::new(h, w, z.clone())?;
            let ef = ScalarField::new(h, w, e.clone())?;

            let mut d_outer = Kernel::zeros(n);
            d_outer.add_scaled(&kernel_gradient(&zf, &g, n)?, -1.0);
            let mut d_inner = Kernel::zeros(n);
            d_inner.add_scaled(&kernel_gradient(t, &ef, n)?, -1.0);
            g_prev.add_scaled(&conv2d_adjoint(&ef, &ks.inner[k])?, -1.0);

            match &layout.inner {
                None => {
                    // inner = rot180(outer): chain through the rotation.
                    d_outer.add_scaled(&d_inner.rot180(), 1.0);
                }
                Some(range) => {
                    let dst = &mut gs[range.start + k * atoms..][..atoms];
                    for (d, c) in dst.iter_mut().zip(basis.analyze(&d_inner)) {
                        *d += c;
                    }
                }
            }
            let dst = &mut gs[layout.outer.start + k * atoms..][..atoms];
            for (d, c) in dst.iter_mut().zip(basis.analyze(&d_outer)) {
                *d += c;
            }
        }
        g = g_prev;
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(value)
}

/// Loss and gradient of one prepared pair.
pub fn backprop_prepared(pair: &PreparedPair, params: &NetworkParams) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.param_count()];
    let value = accumulate_gradient(pair, params, &mut grad)?;
    Ok((value, grad))
}

/// Loss and gradient for a raw pair; the prior map is computed from the
/// observation.
pub fn backprop(pair: &TrainingPair, params: &NetworkParams, prior: &PriorParams) -> Result<(f64, Vec<f64>)> {
    backprop_prepared(&PreparedPair::from_pair(pair, prior)?, params)
}

/// Summed loss and gradient over a set of pairs.
pub fn total_loss_and_gradient(pairs: &[PreparedPair], params: &NetworkParams) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.param_count()];
    let mut total = 0.0;
    for p in pairs {
        total += accumulate_gradient(p, params, &mut grad)?;
    }
    Ok((total, grad))
}

pub fn total_loss(pairs: &[PreparedPair], params: &NetworkParams) -> Result<f64> {
    pairs.iter().map(|p| pair_loss(p, params)).sum()
}

/// Relative tolerance of [`gradient_check`].
pub const GRADIENT_RELATIVE_TOLERANCE: f64 = 1e-4;
/// Absolute floor of [`gradient_check`]: coordinates whose analytic and
/// numeric values differ by less than this always pass.
pub const GRADIENT_ABSOLUTE_FLOOR: f64 = 1e-6;

/// Coordinate-wise comparison of [`backprop_prepared`] against central
/// finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub coordinates: usize,
    /// Coordinates outside `max(rel * max(|a|, |b|), abs_floor)`.
    pub failures: usize,
    /// Largest `|a - b| / max(|a|, |b|)` among coordinates above the floor.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

impl GradientCheck {
    #[inline]
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks every parameter coordinate of the analytic gradient with a central
/// difference of the given step.
pub fn gradient_check(pair: &PreparedPair, params: &NetworkParams, step: f64) -> Result<GradientCheck> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let (_, grad) = backprop_prepared(pair, params)?;
    let x0 = params.to_vec();
    let mut scratch = params.clone();
    let mut x = x0.clone();
    let mut out = GradientCheck {
        coordinates: x0.len(),
        failures: 0,
        max_relative_error: 0.0,
        max_abs_error: 0.0,
    };
    for i in 0..x0.len() {
        x[i] = x0[i] + step;
        scratch.set_from_slice(&x)?;
        let fp = pair_loss(pair, &scratch)?;
        x[i] = x0[i] - step;
        scratch.set_from_slice(&x)?;
        let fm = pair_loss(pair, &scratch)?;
        x[i] = x0[i];
        let fd = (fp - fm) / (2.0 * step);
        let abs = (grad[i] - fd).abs();
        out.max_abs_error = out.max_abs_error.max(abs);
        if abs <= GRADIENT_ABSOLUTE_FLOOR {
            continue;
        }
        let rel = abs / grad[i].abs().max(fd.abs());
        out.max_relative_error = out.max_relative_error.max(rel);
        if rel > GRADIENT_RELATIVE_TOLERANCE {
            out.failures += 1;
        }
    }
    Ok(out)
}
