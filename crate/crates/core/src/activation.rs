//! Learnable piecewise-linear influence functions.
//!
//! Control positions are `M` (odd) uniformly spaced nodes on `[-1, 1]`,
//! shared by every activation; only the node values are learned. Between
//! nodes the function is the hat-function interpolant of the values, and
//! beyond `[-1, 1]` it continues along the end segments.
//!
//! [`PiecewiseActivation::antiderivative`] returns `rho(z) = -int_0^z phi`,
//! piecewise quadratic and exact, so `rho' = -phi`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Values `q_i` of an activation at the shared nodes `p_i = -1 + 2i/(M-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseActivation {
    values: Vec<f64>,
    /// `int_{0}^{p_i} phi` at every node, cached for the antiderivative.
    node_integrals: Vec<f64>,
}

/// Position of `z` relative to the node grid: segment index and local
/// coordinate `w` (in `[0, 1]` inside the grid, outside when extrapolating).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub weight: f64,
}

/// Node positions of an `m`-point grid.
pub fn control_positions(m: usize) -> Vec<f64> {
    (0..m).map(|i| node(m, i)).collect()
}

#[inline]
fn node(m: usize, i: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (m - 1) as f64
}

#[inline]
fn spacing(m: usize) -> f64 {
    2.0 / (m - 1) as f64
}

/// Locates `z` on an `m`-point grid.
#[inline]
pub fn locate(m: usize, z: f64) -> Segment {
    let s = (z + 1.0) / spacing(m);
    let index = (math::floor(s).max(0.0) as usize).min(m - 2);
    Segment {
        index,
        weight: s - index as f64,
    }
}

impl PiecewiseActivation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        if m < 3 || m.is_multiple_of(2) {
            return Err(Error::InvalidOddSize { size: m, min: 3 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let node_integrals = Self::integrate_nodes(&values);
        Ok(Self { values, node_integrals })
    }

    /// Samples of the influence function `2z / (1 + z^2)`.
    pub fn influence(m: usize) -> Result<Self> {
        Self::from_fn(m, |z| 2.0 * z / (1.0 + z * z))
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::from_fn(m, |z| z)
    }

    pub fn zero(m: usize) -> Result<Self> {
        Self::from_fn(m, |_| 0.0)
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if m < 3 || m.is_multiple_of(2) {
            return Err(Error::InvalidOddSize { size: m, min: 3 });
        }
        Self::new((0..m).map(|i| f(node(m, i))).collect())
    }

    fn integrate_nodes(values: &[f64]) -> Vec<f64> {
        let m = values.len();
        let h = spacing(m);
        let center = m / 2;
        let mut out = alloc::vec![0.0; m];
        for j in center + 1..m {
            out[j] = out[j - 1] + 0.5 * h * (values[j - 1] + values[j]);
        }
        for j in (0..center).rev() {
            out[j] = out[j + 1] - 0.5 * h * (values[j] + values[j + 1]);
        }
        out
    }

    #[inline]
    pub fn control_points(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set_values(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.values.len());
        self.values.copy_from_slice(values);
        self.node_integrals = Self::integrate_nodes(&self.values);
    }

    #[inline]
    pub fn locate(&self, z: f64) -> Segment {
        locate(self.values.len(), z)
    }

    /// `phi(z)`.
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        let Segment { index, weight } = self.locate(z);
        self.values[index] + weight * (self.values[index + 1] - self.values[index])
    }

    /// `phi'(z)`: the slope of the segment containing `z`.
    #[inline]
    pub fn slope(&self, z: f64) -> f64 {
        let i = self.locate(z).index;
        (self.values[i + 1] - self.values[i]) / spacing(self.values.len())
    }

    /// `(phi(z), phi'(z))` with a single lookup.
    #[inline]
    pub fn eval_with_slope(&self, z: f64) -> (f64, f64) {
        let Segment { index, weight } = self.locate(z);
        let dq = self.values[index + 1] - self.values[index];
        (self.values[index] + weight * dq, dq / spacing(self.values.len()))
    }

    /// `rho(z) = -int_0^z phi(s) ds`.
    pub fn antiderivative(&self, z: f64) -> f64 {
        let Segment { index, weight } = self.locate(z);
        let h = spacing(self.values.len());
        let q0 = self.values[index];
        let dq = self.values[index + 1] - q0;
        let partial = h * (q0 * weight + 0.5 * dq * weight * weight);
        -(self.node_integrals[index] + partial)
    }
}
