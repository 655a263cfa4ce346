use dpatn_core::activation::{control_positions, PiecewiseActivation};
use dpatn_core::conv::{conv2d_adjoint, conv2d_same};
use dpatn_core::dct::dct_atoms;
use dpatn_core::filter::min_filter;
use dpatn_core::metrics::{psnr, ssim};
use dpatn_core::network::{propagate_prior, NetworkParams, NetworkShape};
use dpatn_core::prior::{estimate_airlight, prior_transmission, AtmosphericLight, PriorParams};
use dpatn_core::recovery::{recover_radiance, RecoveryConfig};
use dpatn_core::separation::{penalty, run_separation_observed, LaplacianSmooth, SeparationOptions, TruncatedGradient};
use dpatn_core::{ImageRgb, Kernel, ScalarField};
use proptest::prelude::*;

fn field(h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(lo..hi, h * w).prop_map(move |v| ScalarField::new(h, w, v).unwrap())
}

fn sized_field(lo: f64, hi: f64) -> impl Strategy<Value = ScalarField> {
    (3usize..14, 3usize..14).prop_flat_map(move |(h, w)| field(h, w, lo, hi))
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop::sample::select(vec![1usize, 3, 5])
        .prop_flat_map(|n| prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |t| Kernel::new(n, t).unwrap()))
}

fn image(h: usize, w: usize) -> impl Strategy<Value = ImageRgb> {
    (field(h, w, 0.0, 1.0), field(h, w, 0.0, 1.0), field(h, w, 0.0, 1.0))
        .prop_map(|(r, g, b)| ImageRgb::new(r, g, b).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear((x, y) in (3usize..12, 3usize..12).prop_flat_map(|(h, w)| (field(h, w, -1.0, 1.0), field(h, w, -1.0, 1.0))),
                      k in kernel(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        prop_assume!(k.size() <= x.height().min(x.width()));
        let mut mix = x.map(|v| a * v);
        mix.add_scaled(&y, b);
        let lhs = conv2d_same(&mix, &k).unwrap();
        let mut rhs = conv2d_same(&x, &k).unwrap().map(|v| a * v);
        rhs.add_scaled(&conv2d_same(&y, &k).unwrap(), b);
        for (p, q) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!(close(*p, *q, 1e-12));
        }
    }

    #[test]
    fn conv_adjoint_identity((x, y) in (5usize..14, 5usize..14).prop_flat_map(|(h, w)| (field(h, w, -1.0, 1.0), field(h, w, -1.0, 1.0))),
                             k in kernel()) {
        let lhs = conv2d_same(&x, &k).unwrap().dot(&y);
        let rhs = x.dot(&conv2d_adjoint(&y, &k).unwrap());
        prop_assert!(close(lhs, rhs, 1e-11), "{lhs} vs {rhs}");
    }

    #[test]
    fn dct_analysis_inverts_synthesis(n in prop::sample::select(vec![3usize, 5, 7]), seed in any::<u64>()) {
        let basis = dct_atoms(n).unwrap();
        let coeffs: Vec<f64> = (0..basis.len()).map(|i| ((seed % 1000) as f64 + i as f64 * 1.7).sin()).collect();
        let k = basis.synthesize(&coeffs);
        prop_assert!(k.sum().abs() < 1e-12);
        for (a, b) in basis.analyze(&k).iter().zip(&coeffs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn min_filter_matches_brute_force(f in sized_field(0.0, 1.0), window in prop::sample::select(vec![1usize, 3, 5])) {
        let out = min_filter(&f, window).unwrap();
        let (h, w) = f.shape();
        let r = (window / 2) as isize;
        for i in 0..h {
            for j in 0..w {
                let mut m = f64::INFINITY;
                for di in -r..=r {
                    for dj in -r..=r {
                        let (y, x) = (i as isize + di, j as isize + dj);
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            m = m.min(f.get(y as usize, x as usize));
                        }
                    }
                }
                prop_assert_eq!(out.get(i, j), m);
            }
        }
    }

    #[test]
    fn prior_lies_in_unit_interval(img in image(9, 11), a in 0.05f64..1.0, alpha in 0.0f64..3.0) {
        let params = PriorParams { alpha_hat: alpha, alpha_check: alpha, window: 3 };
        let t = prior_transmission(&img, &AtmosphericLight([a; 3]), &params).unwrap();
        prop_assert!(t.min() >= 0.0 && t.max() <= 1.0 && t.is_finite());
    }

    #[test]
    fn prior_commutes_with_channel_permutation(img in image(8, 8), light in prop::array::uniform3(0.05f64..1.0)) {
        let params = PriorParams::default();
        let t = prior_transmission(&img, &AtmosphericLight(light), &params).unwrap();
        let [r, g, b] = img.channels().clone();
        let swapped = ImageRgb::new(b, r, g).unwrap();
        let t2 = prior_transmission(&swapped, &AtmosphericLight([light[2], light[0], light[1]]), &params).unwrap();
        prop_assert_eq!(t, t2);
    }

    #[test]
    fn prior_commutes_with_pixel_permutation(img in image(6, 7), shift in 1usize..41) {
        let params = PriorParams::default();
        let light = AtmosphericLight([0.8, 0.85, 0.9]);
        let t = prior_transmission(&img, &light, &params).unwrap();
        let n = 42;
        let roll = |f: &ScalarField| {
            let v = f.as_slice();
            ScalarField::new(6, 7, (0..n).map(|i| v[(i + shift) % n]).collect()).unwrap()
        };
        let rolled = ImageRgb::new(roll(img.channel(0)), roll(img.channel(1)), roll(img.channel(2))).unwrap();
        let t2 = prior_transmission(&rolled, &light, &params).unwrap();
        prop_assert_eq!(roll(&t), t2);
    }

    #[test]
    fn airlight_is_monotone(img in image(10, 10), lift in 0.0f64..0.5) {
        let brighter = img.map(|v| (v + lift).min(1.0));
        let a = estimate_airlight(&img, 3).unwrap();
        let b = estimate_airlight(&brighter, 3).unwrap();
        for c in 0..3 {
            prop_assert!(b.0[c] >= a.0[c]);
            prop_assert!((0.05..=1.0).contains(&a.0[c]));
        }
    }

    #[test]
    fn recovery_inverts_the_scattering_model(j in image(6, 6), t in field(6, 6, 0.01, 1.0), a in 0.05f64..1.0) {
        let hazy = j.map_channels(|_, ch| ch.zip_map(&t, |jv, tv| jv * tv + a * (1.0 - tv)).unwrap());
        let cfg = RecoveryConfig { epsilon: 0.01, clamp_output: false };
        let back = recover_radiance(&hazy, &t, &AtmosphericLight([a; 3]), &cfg).unwrap();
        for c in 0..3 {
            for (p, q) in back.channel(c).as_slice().iter().zip(j.channel(c).as_slice()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn activation_interpolates_and_integrates(values in prop::collection::vec(-2.0f64..2.0, 7), z in -1.5f64..1.5) {
        let act = PiecewiseActivation::new(values.clone()).unwrap();
        for (p, v) in control_positions(7).iter().zip(&values) {
            prop_assert!((act.eval(*p) - v).abs() < 1e-12);
        }
        let h = 1e-6;
        let fd = (act.antiderivative(z + h) - act.antiderivative(z - h)) / (2.0 * h);
        prop_assert!((fd + act.eval(z)).abs() < 1e-5);
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(a in image(12, 12), b in image(12, 12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn separation_iterates_stay_in_the_box(img in image(12, 12), eta in 1.0f64..1.2) {
        let opts = SeparationOptions { eta, max_iter: 25, settle: false, ..SeparationOptions::default() };
        let mut feasible = true;
        let mut ks = Vec::new();
        let (_, _, rep) = run_separation_observed(
            &img,
            &TruncatedGradient::default(),
            &LaplacianSmooth::default(),
            &opts,
            |s| {
                feasible &= s.is_feasible(&img, 1e-12);
                ks.push((s.k, s.mu_l, s.mu_p));
            },
        )
        .unwrap();
        prop_assert!(feasible);
        for (k, mu_l, mu_p) in ks {
            prop_assert_eq!(mu_l, penalty(opts.mu_l0, eta, k));
            prop_assert_eq!(mu_p, penalty(opts.mu_p0, eta, k));
        }
        for (k, mu) in rep.mu_l.iter().enumerate() {
            prop_assert!(close(*mu, opts.mu_l0 * eta.powi(k as i32), 1e-12));
        }
    }
}

#[test]
fn propagation_is_deterministic_and_bounded() {
    let shape = NetworkShape { stages: 3, filters: 4, ..NetworkShape::default() };
    let params = NetworkParams::initial(shape).unwrap();
    let p = ScalarField::from_fn(20, 20, |r, c| 0.2 + 0.03 * ((r * 7 + c * 3) % 20) as f64);
    let (a, trace_a) = propagate_prior(&p, &params, 0.01).unwrap();
    let (b, trace_b) = propagate_prior(&p, &params, 0.01).unwrap();
    assert_eq!(a, b);
    assert_eq!(trace_a, trace_b);
    assert!(a.min() >= 0.01 && a.max() <= 1.0);
    assert_eq!(trace_a.len(), 4);
}
