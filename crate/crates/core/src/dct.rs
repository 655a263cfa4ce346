//! Mean-free 2-D DCT-II filter basis.
//!
//! Atoms are separable products of the orthonormal 1-D type-II cosine basis
//! with the constant (DC) atom dropped, so they span exactly the zero-mean
//! kernels. Ordering is JPEG zig-zag by frequency, which fixes the meaning
//! of filter coefficient `i` across model files.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::Kernel;
use crate::math;

/// `n*n - 1` orthonormal zero-mean atoms of side `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    size: usize,
    atoms: Vec<Kernel>,
    /// `(row frequency, column frequency)` of each atom.
    frequencies: Vec<(usize, usize)>,
}

impl DctBasis {
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    #[inline]
    pub fn atoms(&self) -> &[Kernel] {
        &self.atoms
    }

    #[inline]
    pub fn atom(&self, i: usize) -> &Kernel {
        &self.atoms[i]
    }

    pub fn frequencies(&self) -> &[(usize, usize)] {
        &self.frequencies
    }

    /// `sum_i coeffs[i] * atom_i`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Kernel {
        debug_assert_eq!(coeffs.len(), self.atoms.len());
        let mut k = Kernel::zeros(self.size);
        for (c, atom) in coeffs.iter().zip(&self.atoms) {
            if *c != 0.0 {
                k.add_scaled(atom, *c);
            }
        }
        k
    }

    /// Coordinates of `kernel` on the atoms (its projection onto the
    /// zero-mean subspace).
    pub fn analyze(&self, kernel: &Kernel) -> Vec<f64> {
        self.atoms.iter().map(|a| a.dot(kernel)).collect()
    }

    /// Coordinates of a row-major `n*n` vector on the atoms.
    pub fn analyze_slice(&self, values: &[f64]) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|a| a.taps().iter().zip(values).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// JPEG zig-zag order of all `(row, col)` frequency pairs of an `n x n` block.
fn zigzag(n: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..=2 * (n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 1 {
            order.extend((lo..=hi).map(|u| (u, s - u)));
        } else {
            order.extend((lo..=hi).rev().map(|u| (u, s - u)));
        }
    }
    order
}

fn cosine(n: usize, freq: usize, x: usize) -> f64 {
    let scale = if freq == 0 {
        math::sqrt(1.0 / n as f64)
    } else {
        math::sqrt(2.0 / n as f64)
    };
    scale * math::cos(PI * (2 * x + 1) as f64 * freq as f64 / (2 * n) as f64)
}

/// Builds the DC-free DCT basis for odd `n >= 3`.
pub fn dct_atoms(n: usize) -> Result<DctBasis> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::InvalidOddSize { size: n, min: 3 });
    }
    let frequencies: Vec<(usize, usize)> = zigzag(n).into_iter().skip(1).collect();
    let atoms = frequencies
        .iter()
        .map(|&(u, v)| {
            let mut taps = Vec::with_capacity(n * n);
            for x in 0..n {
                for y in 0..n {
                    taps.push(cosine(n, u, x) * cosine(n, v, y));
                }
            }
            Kernel::new(n, taps).expect("cosines are finite")
        })
        .collect();
    Ok(DctBasis {
        size: n,
        atoms,
        frequencies,
    })
}
