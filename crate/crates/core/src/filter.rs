//! Sliding-window order-statistic filters with replicate padding.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::ScalarField;

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidOddSize { size: window, min: 1 });
    }
    Ok(())
}

/// One separable pass; `along_rows` filters each row horizontally.
fn pass(field: &ScalarField, window: usize, along_rows: bool, pick: fn(f64, f64) -> f64) -> ScalarField {
    let (h, w) = field.shape();
    let r = (window / 2) as isize;
    let src = field.as_slice();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut acc = src[i * w + j];
            for d in -r..=r {
                let v = if along_rows {
                    let c = (j as isize + d).clamp(0, w as isize - 1) as usize;
                    src[i * w + c]
                } else {
                    let rr = (i as isize + d).clamp(0, h as isize - 1) as usize;
                    src[rr * w + j]
                };
                acc = pick(acc, v);
            }
            out.push(acc);
        }
    }
    ScalarField::new(h, w, out).expect("window filter preserves finiteness")
}

/// Minimum over the `window x window` neighbourhood of every pixel.
pub fn min_filter(field: &ScalarField, window: usize) -> Result<ScalarField> {
    check_window(window)?;
    if window == 1 {
        return Ok(field.clone());
    }
    // Replicate padding clamps rows and columns independently, so the
    // rectangular minimum factors into two 1-D passes.
    let rows = pass(field, window, true, f64::min);
    Ok(pass(&rows, window, false, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_one_is_identity() {
        let f = ScalarField::from_fn(3, 4, |r, c| (r * 7 + c * 3) as f64 % 5.0);
        assert_eq!(min_filter(&f, 1).unwrap(), f);
    }

    #[test]
    fn constant_field_is_fixed() {
        let f = ScalarField::filled(6, 5, 0.25);
        assert_eq!(min_filter(&f, 3).unwrap(), f);
    }

    #[test]
    fn even_window_is_rejected() {
        assert!(min_filter(&ScalarField::zeros(3, 3), 2).is_err());
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = ScalarField::from_fn(10, 10, |_, _| rng.random_range(0.0..1.0));
        let out = min_filter(&f, 3).unwrap();
        for i in 0..10isize {
            for j in 0..10isize {
                let mut m = f64::INFINITY;
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let r = (i + di).clamp(0, 9) as usize;
                        let c = (j + dj).clamp(0, 9) as usize;
                        m = m.min(f.get(r, c));
                    }
                }
                assert_eq!(out.get(i as usize, j as usize), m);
            }
        }
    }

    #[test]
    fn whole_field_window_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = ScalarField::from_fn(5, 6, |_, _| rng.random_range(0.0..1.0));
        let once = min_filter(&f, 13).unwrap();
        assert_eq!(min_filter(&once, 13).unwrap(), once);
        assert!(once.as_slice().iter().all(|&v| v == f.min()));
    }
}
