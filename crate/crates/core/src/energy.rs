//! Gibbs energy of the data term and its finite-difference audit.
//!
//! For a rotation-tied stage the data submodule is the negative gradient of
//!
//! ```text
//! E(t) = sum_k sum_x rho_k((inner_k (*) t)(x)),   rho_k' = -phi_k
//! ```
//!
//! since the adjoint of convolving with `inner_k` is convolving with
//! `rot180(inner_k) = outer_k` away from the border. The audit compares the
//! two sides at sampled interior pixels.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::conv2d_same;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::network::{data_term, StageParams};

/// Pass threshold on the scaled error of the audit.
pub const AUDIT_TOLERANCE: f64 = 1e-4;
/// Magnitude below which errors are measured absolutely.
pub const AUDIT_SCALE_FLOOR: f64 = 1e-2;

/// `E(t)` for a tied stage.
pub fn energy_eval(t: &ScalarField, stage: &StageParams) -> Result<f64> {
    if !stage.is_tied() {
        return Err(Error::AuditUnavailable);
    }
    let kernels = stage.realize()?;
    let mut total = 0.0;
    for (inner, rho) in kernels.inner.iter().zip(&stage.activations) {
        let y = conv2d_same(t, inner)?;
        total += y.as_slice().iter().map(|&v| rho.antiderivative(v)).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            step: 1e-6,
            seed: 0,
        }
    }
}

/// Outcome of [`energy_grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    /// Sampled `(row, col)` positions.
    pub pixels: Vec<(usize, usize)>,
    /// `max |a - b| / max(|a|, |b|, floor)` over samples.
    pub max_scaled_error: f64,
    pub max_abs_error: f64,
}

impl EnergyAudit {
    #[inline]
    pub fn passed(&self) -> bool {
        self.max_scaled_error < AUDIT_TOLERANCE
    }
}

/// Scaled discrepancy used by every gradient audit.
#[inline]
pub fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(AUDIT_SCALE_FLOOR)
}

/// Compares `D(t)` with the central-difference gradient of [`energy_eval`]
/// at randomly sampled interior pixels.
///
/// Only the responses within one kernel radius of the perturbed pixel
/// change, so each difference is accumulated over that window alone.
pub fn energy_grad_check(t: &ScalarField, stage: &StageParams, opts: &AuditOptions) -> Result<EnergyAudit> {
    if !stage.is_tied() {
        return Err(Error::AuditUnavailable);
    }
    if opts.samples == 0 || !(opts.step > 0.0) {
        return Err(Error::InvalidParameter("audit needs samples > 0 and step > 0".into()));
    }
    let (h, w) = t.shape();
    let r = stage.kernel_size / 2;
    let margin = 2 * r;
    if h <= 2 * margin || w <= 2 * margin {
        return Err(Error::KernelTooLarge {
            kernel: stage.kernel_size,
            height: h,
            width: w,
        });
    }
    let kernels = stage.realize()?;
    let d = data_term(t, &kernels, &stage.activations)?;
    let responses: Vec<ScalarField> = kernels
        .inner
        .iter()
        .map(|k| conv2d_same(t, k))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pixels = Vec::with_capacity(opts.samples);
    let mut max_scaled_error: f64 = 0.0;
    let mut max_abs_error: f64 = 0.0;
    let ri = r as isize;
    for _ in 0..opts.samples {
        let x = rng.random_range(margin..h - margin);
        let y = rng.random_range(margin..w - margin);
        let mut diff = 0.0;
        for ((inner, rho), resp) in kernels.inner.iter().zip(&stage.activations).zip(&responses) {
            // Interior: d resp(i, j) / d t(x, y) = inner[r + i - x][r + j - y].
            for u in -ri..=ri {
                for v in -ri..=ri {
                    let c = inner.get((ri + u) as usize, (ri + v) as usize);
                    if c == 0.0 {
                        continue;
                    }
                    let base = resp.get((x as isize + u) as usize, (y as isize + v) as usize);
                    diff += rho.antiderivative(base + opts.step * c) - rho.antiderivative(base - opts.step * c);
                }
            }
        }
        let fd = -diff / (2.0 * opts.step);
        let an = d.get(x, y);
        max_scaled_error = max_scaled_error.max(scaled_error(an, fd));
        max_abs_error = max_abs_error.max((an - fd).abs());
        pixels.push((x, y));
    }
    Ok(EnergyAudit {
        pixels,
        max_scaled_error,
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::PiecewiseActivation;
    use crate::dct::dct_atoms;
    use crate::network::{FilterSpec, NetworkShape, SignConvention};

    fn shape(filters: usize) -> NetworkShape {
        NetworkShape {
            stages: 1,
            filters,
            kernel_size: 5,
            control_points: 31,
            tied: true,
            convention: SignConvention::PriorAdded,
        }
    }

    fn random_stage(rng: &mut ChaCha8Rng, k: usize) -> StageParams {
        StageParams {
            kernel_size: 5,
            filters: (0..k)
                .map(|_| FilterSpec {
                    coeffs: (0..24).map(|_| rng.random_range(-0.6..0.6)).collect(),
                })
                .collect(),
            inner: None,
            activations: (0..k)
                .map(|_| PiecewiseActivation::new((0..31).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
                .collect(),
            lambda_p: 0.1,
        }
    }

    fn field(rng: &mut ChaCha8Rng, n: usize) -> ScalarField {
        ScalarField::from_fn(n, n, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_activations_have_zero_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stage = StageParams::initial(&shape(3), &dct_atoms(5).unwrap()).unwrap();
        let mut stage = stage;
        stage.activations = (0..3).map(|_| PiecewiseActivation::zero(31).unwrap()).collect();
        assert_eq!(energy_eval(&field(&mut rng, 16), &stage).unwrap(), 0.0);
    }

    #[test]
    fn linear_single_atom_energy_is_negative_half_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = dct_atoms(5).unwrap();
        let stage = StageParams {
            kernel_size: 5,
            filters: alloc::vec![FilterSpec::atom(24, 5)],
            inner: None,
            activations: alloc::vec![PiecewiseActivation::identity(31).unwrap()],
            lambda_p: 0.0,
        };
        // Keep responses inside [-1, 1] where phi(z) = z is exact.
        let t = field(&mut rng, 16).map(|v| 0.3 * v);
        let resp = conv2d_same(&t, &basis.atom(5).rot180()).unwrap();
        let want = -0.5 * resp.norm_sq();
        let got = energy_eval(&t, &stage).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn energy_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stage = random_stage(&mut rng, 4);
        let t = field(&mut rng, 20);
        let a = energy_eval(&t, &stage).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), energy_eval(&t, &stage).unwrap().to_bits());
    }

    #[test]
    fn energy_is_minus_log_of_gibbs_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stage = random_stage(&mut rng, 2);
        let t = field(&mut rng, 12);
        let kernels = stage.realize().unwrap();
        let mut neg_log = 0.0;
        for (inner, rho) in kernels.inner.iter().zip(&stage.activations) {
            let resp = conv2d_same(&t, inner).unwrap();
            for &v in resp.as_slice() {
                neg_log -= libm::log(libm::exp(-rho.antiderivative(v)));
            }
        }
        let e = energy_eval(&t, &stage).unwrap();
        assert!((e - neg_log).abs() < 1e-10 * e.abs().max(1.0));
    }

    #[test]
    fn untied_stage_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut stage = random_stage(&mut rng, 2);
        stage.inner = Some(stage.filters.clone());
        let t = field(&mut rng, 16);
        assert_eq!(energy_eval(&t, &stage), Err(Error::AuditUnavailable));
        assert!(matches!(
            energy_grad_check(&t, &stage, &AuditOptions::default()),
            Err(Error::AuditUnavailable)
        ));
    }

    #[test]
    fn linear_activations_pass_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut stage = random_stage(&mut rng, 3);
        stage.activations = (0..3).map(|_| PiecewiseActivation::identity(31).unwrap()).collect();
        let t = field(&mut rng, 24);
        let audit = energy_grad_check(&t, &stage, &AuditOptions::default()).unwrap();
        assert_eq!(audit.pixels.len(), 100);
        assert!(audit.max_scaled_error < 1e-6, "{}", audit.max_scaled_error);
    }

    #[test]
    fn zero_stage_is_identically_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stage = StageParams::zeros(&shape(2)).unwrap();
        let audit = energy_grad_check(&field(&mut rng, 16), &stage, &AuditOptions::default()).unwrap();
        assert_eq!(audit.max_abs_error, 0.0);
    }

    #[test]
    fn random_stage_identity_holds_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stage = random_stage(&mut rng, 8);
        let t = field(&mut rng, 32);
        let audit = energy_grad_check(&t, &stage, &AuditOptions { seed: 3, ..Default::default() }).unwrap();
        assert!(audit.passed(), "{}", audit.max_scaled_error);
        for &(x, y) in &audit.pixels {
            assert!((4..28).contains(&x) && (4..28).contains(&y));
        }
    }

    #[test]
    fn too_small_field_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stage = random_stage(&mut rng, 1);
        assert!(energy_grad_check(&field(&mut rng, 8), &stage, &AuditOptions::default()).is_err());
    }
}
