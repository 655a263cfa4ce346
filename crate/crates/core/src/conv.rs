//! Same-size 2-D convolution with symmetric (half-sample) reflective padding,
//! its exact transpose, and the gradient with respect to the kernel taps.
//!
//! Convolution here is true convolution (the kernel is flipped):
//!
//! ```text
//! out(i, j) = sum_{u,v in [-r, r]} k[r+u][r+v] * f(i-u, j-v)
//! ```
//!
//! with out-of-range indices mirrored as `-1 -> 0`, `n -> n-1`. With this
//! convention [`Kernel::rot180`] gives the adjoint on interior pixels, and
//! [`conv2d_adjoint`] gives the exact transpose of the padded operator
//! everywhere (reflected contributions are folded back).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{Kernel, ScalarField};

/// Mirrors an index into `0..n` (symmetric padding). Valid for `-n <= i < 2n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    j as usize
}

fn check_fit(field: &ScalarField, kernel: &Kernel) -> Result<()> {
    if kernel.size() > field.height() || kernel.size() > field.width() {
        return Err(Error::KernelTooLarge {
            kernel: kernel.size(),
            height: field.height(),
            width: field.width(),
        });
    }
    Ok(())
}

/// Field padded by `pad` on every side with symmetric reflection.
struct Padded {
    width: usize,
    data: Vec<f64>,
}

impl Padded {
    fn new(field: &ScalarField, pad: usize) -> Self {
        let (h, w) = field.shape();
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let src = field.as_slice();
        let cols: Vec<usize> = (0..pw).map(|c| reflect(c as isize - pad as isize, w)).collect();
        let mut data = Vec::with_capacity(ph * pw);
        for r in 0..ph {
            let sr = reflect(r as isize - pad as isize, h);
            let row = &src[sr * w..(sr + 1) * w];
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Padded { width: pw, data }
    }
}

/// Same-size convolution with reflective padding.
pub fn conv2d_same(field: &ScalarField, kernel: &Kernel) -> Result<ScalarField> {
    check_fit(field, kernel)?;
    let (h, w) = field.shape();
    let n = kernel.size();
    let r = kernel.radius();
    let pad = Padded::new(field, r);
    let mut out = vec![0.0; h * w];
    // Padded by r: out(i,j) = sum_{a,b} k[a][b] * pad[i + 2r - a][j + 2r - b]
    for a in 0..n {
        for b in 0..n {
            let kv = kernel.get(a, b);
            if kv == 0.0 {
                continue;
            }
            for i in 0..h {
                let src = &pad.data[(i + 2 * r - a) * pad.width + 2 * r - b..][..w];
                let dst = &mut out[i * w..(i + 1) * w];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += kv * s;
                }
            }
        }
    }
    Ok(ScalarField::new(h, w, out).expect("finite inputs give finite outputs"))
}

/// Exact transpose of `f -> conv2d_same(f, kernel)`, reflective padding
/// included: `<conv2d_same(f, k), g> == <f, conv2d_adjoint(g, k)>` for all f, g.
pub fn conv2d_adjoint(grad: &ScalarField, kernel: &Kernel) -> Result<ScalarField> {
    check_fit(grad, kernel)?;
    let (h, w) = grad.shape();
    let n = kernel.size();
    let r = kernel.radius();
    let pad = r;
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let g = grad.as_slice();
    let mut acc = vec![0.0; ph * pw];
    for a in 0..n {
        for b in 0..n {
            let kv = kernel.get(a, b);
            if kv == 0.0 {
                continue;
            }
            for i in 0..h {
                let dst = &mut acc[(i + 2 * r - a) * pw + 2 * r - b..][..w];
                for (d, s) in dst.iter_mut().zip(&g[i * w..(i + 1) * w]) {
                    *d += kv * s;
                }
            }
        }
    }
    // Fold the padded accumulator back onto the mirrored source pixels.
    let cols: Vec<usize> = (0..pw).map(|c| reflect(c as isize - pad as isize, w)).collect();
    let mut out = vec![0.0; h * w];
    for pr in 0..ph {
        let sr = reflect(pr as isize - pad as isize, h);
        let row = &acc[pr * pw..(pr + 1) * pw];
        let dst = &mut out[sr * w..(sr + 1) * w];
        for (pc, &v) in row.iter().enumerate() {
            dst[cols[pc]] += v;
        }
    }
    Ok(ScalarField::new(h, w, out).expect("finite inputs give finite outputs"))
}

/// Gradient of `<grad, conv2d_same(field, k)>` with respect to the taps of `k`.
pub fn kernel_gradient(field: &ScalarField, grad: &ScalarField, size: usize) -> Result<Kernel> {
    field.ensure_same_shape(grad)?;
    if size.is_multiple_of(2) {
        return Err(Error::InvalidOddSize { size, min: 1 });
    }
    if size > field.height() || size > field.width() {
        return Err(Error::KernelTooLarge {
            kernel: size,
            height: field.height(),
            width: field.width(),
        });
    }
    let (h, w) = field.shape();
    let r = size / 2;
    let pad = Padded::new(field, r);
    let g = grad.as_slice();
    let mut taps = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let mut s = 0.0;
            for i in 0..h {
                let src = &pad.data[(i + 2 * r - a) * pad.width + 2 * r - b..][..w];
                s += src.iter().zip(&g[i * w..(i + 1) * w]).map(|(x, y)| x * y).sum::<f64>();
            }
            taps[a * size + b] = s;
        }
    }
    Kernel::new(size, taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ScalarField {
        ScalarField::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, n: usize) -> Kernel {
        Kernel::new(n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Nested-loop convolution with explicit mirrored indexing.
    fn brute_conv(f: &ScalarField, k: &Kernel) -> ScalarField {
        let (h, w) = f.shape();
        let r = k.radius() as isize;
        ScalarField::from_fn(h, w, |i, j| {
            let mut s = 0.0;
            for u in -r..=r {
                for v in -r..=r {
                    let si = reflect(i as isize - u, h);
                    let sj = reflect(j as isize - v, w);
                    s += k.get((r + u) as usize, (r + v) as usize) * f.get(si, sj);
                }
            }
            s
        })
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&mut rng, 7, 9);
        assert_eq!(conv2d_same(&f, &Kernel::delta(5)).unwrap(), f);
    }

    #[test]
    fn zero_sum_kernel_annihilates_constants() {
        let f = ScalarField::filled(8, 8, 0.37);
        let k = Kernel::new(3, vec![1.0, -2.0, 1.0, 0.5, 0.0, -0.5, 1.0, -2.0, 1.0]).unwrap();
        let out = conv2d_same(&f, &k).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&mut rng, 8, 8);
        let k = random_kernel(&mut rng, 5);
        let fast = conv2d_same(&f, &k).unwrap();
        let slow = brute_conv(&f, &k);
        let diff = fast
            .as_slice()
            .iter()
            .zip(slow.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn kernel_larger_than_field_is_rejected() {
        let f = ScalarField::zeros(4, 8);
        assert!(matches!(
            conv2d_same(&f, &Kernel::delta(5)),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&mut rng, 9, 7);
        let g = random_field(&mut rng, 9, 7);
        let k = random_kernel(&mut rng, 5);
        let lhs = conv2d_same(&f, &k).unwrap().dot(&g);
        let rhs = f.dot(&conv2d_adjoint(&g, &k).unwrap());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn rot180_is_adjoint_on_interior() {
        // f and g supported away from the border: no reflected contribution.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w) = (16, 16);
        let mask = |i: usize, j: usize| i >= 4 && i < h - 4 && j >= 4 && j < w - 4;
        let f = ScalarField::from_fn(h, w, |i, j| if mask(i, j) { rng.random_range(-1.0..1.0) } else { 0.0 });
        let g = ScalarField::from_fn(h, w, |i, j| if mask(i, j) { rng.random_range(-1.0..1.0) } else { 0.0 });
        let k = random_kernel(&mut rng, 5);
        let lhs = conv2d_same(&f, &k).unwrap().dot(&g);
        let rhs = f.dot(&conv2d_same(&g, &k.rot180()).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn kernel_gradient_matches_directional_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(&mut rng, 10, 8);
        let g = random_field(&mut rng, 10, 8);
        let grad = kernel_gradient(&f, &g, 3).unwrap();
        // <g, conv(f, k)> is linear in k, so the gradient is exact per tap.
        for idx in 0..9 {
            let mut e = Kernel::zeros(3);
            e.taps_mut()[idx] = 1.0;
            let direct = conv2d_same(&f, &e).unwrap().dot(&g);
            assert!((direct - grad.taps()[idx]).abs() < 1e-12);
        }
    }
}
