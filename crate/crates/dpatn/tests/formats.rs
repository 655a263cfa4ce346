use std::path::{Path, PathBuf};

use dpatn::gmm_file::{gmm_from_str, gmm_to_string};
use dpatn::io::{load_field, load_image, save_field, save_image};
use dpatn::manifest::{manifest_to_string, parse_manifest, ManifestEntry};
use dpatn::model_file::{load_model, model_from_str, model_to_string, save_model};
use dpatn::Error;
use dpatn_core::network::{NetworkParams, NetworkShape, SignConvention};
use dpatn_core::separation::GmmModel;
use dpatn_core::{ImageRgb, ScalarField};
use proptest::prelude::*;
use tempfile::TempDir;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn shapes() -> impl Strategy<Value = NetworkShape> {
    (1usize..4, 1usize..5, prop::sample::select(vec![3usize, 5]), prop::sample::select(vec![3usize, 7, 31]), any::<bool>(), any::<bool>())
        .prop_map(|(stages, filters, kernel_size, control_points, tied, added)| NetworkShape {
            stages,
            filters,
            kernel_size,
            control_points,
            tied,
            convention: if added {
                SignConvention::PriorAdded
            } else {
                SignConvention::PriorSubtracted
            },
        })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -10.0f64..10.0,
        (-1.0f64..1.0, -300i32..300).prop_map(|(m, e)| m * 10f64.powi(e)),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
    ]
}

fn models() -> impl Strategy<Value = NetworkParams> {
    shapes().prop_flat_map(|shape| {
        prop::collection::vec(finite(), shape.param_count())
            .prop_map(move |values| NetworkParams::from_vec(shape, &values).unwrap())
    })
}

fn path_segment() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_][a-zA-Z0-9_. -]{0,10}[a-zA-Z0-9_]"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_text_round_trip_is_bit_exact(params in models()) {
        let text = model_to_string(&params).unwrap();
        let back = model_from_str(&text, Path::new("m.json")).unwrap();
        prop_assert_eq!(back.shape(), params.shape());
        prop_assert_eq!(bits(&back.to_vec()), bits(&params.to_vec()));
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec((path_segment(), path_segment(), prop::option::of(path_segment())), 1..6)) {
        let entries: Vec<ManifestEntry> = rows
            .iter()
            .map(|(o, t, c)| ManifestEntry {
                observation: PathBuf::from(o),
                target: PathBuf::from(t),
                clean: c.as_ref().map(PathBuf::from),
            })
            .collect();
        let text = manifest_to_string(&entries);
        let back = parse_manifest(&text, Path::new(""), Path::new("manifest.tsv")).unwrap();
        prop_assert_eq!(back, entries);
    }

    #[test]
    fn gmm_round_trip(weights in prop::collection::vec(0.1f64..1.0, 1..4), scale in 1e-3f64..10.0, seed in any::<u64>()) {
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let dim = 8;
        let k = weights.len();
        let means: Vec<Vec<f64>> = (0..k)
            .map(|j| (0..dim).map(|i| ((seed as f64 + (i * 7 + j) as f64) * 0.37).sin()).collect())
            .collect();
        let covariances: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let mut m = vec![0.0; dim * dim];
                for i in 0..dim {
                    m[i * dim + i] = scale * (1.0 + (i + j) as f64);
                }
                m
            })
            .collect();
        let Ok(model) = GmmModel::new(3, weights, means, covariances) else {
            return Err(TestCaseError::reject("weights rounding"));
        };
        let back = gmm_from_str(&gmm_to_string(&model), Path::new("g.json")).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn model_file_on_disk_round_trips() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("nested").join("model.json");
    let params = NetworkParams::initial(NetworkShape::default()).unwrap();
    save_model(&path, &params).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(bits(&back.to_vec()), bits(&params.to_vec()));
    assert_eq!(back.param_count(), 6605);
}

#[test]
fn images_on_the_quantization_grid_reload_exactly() {
    let dir = TempDir::new().unwrap();
    let q = |v: u32| v as f64 / 65535.0;
    let img = ImageRgb::from_fn(7, 9, |r, c| [q((r * 9 + c) as u32 * 701), q(65535 - c as u32), q(r as u32 * 3)]);
    let field = ScalarField::from_fn(7, 9, |r, c| q((r * 1000 + c * 17) as u32));
    for ext in ["png", "ppm"] {
        let p = dir.path().join(format!("img.{ext}"));
        save_image(&p, &img).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
    let p = dir.path().join("t.png");
    save_field(&p, &field).unwrap();
    assert_eq!(load_field(&p).unwrap(), field);
}

#[test]
fn bad_model_documents_are_parse_errors() {
    for text in ["", "[]", "{\"format\": \"other\"}", "{\"format\": \"dpatn-model\", \"version\": 1"] {
        assert!(matches!(model_from_str(text, Path::new("m.json")), Err(Error::Parse { .. })), "{text}");
    }
}
