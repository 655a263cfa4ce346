//! Human-diffable JSON container for [`NetworkParams`].
//!
//! Coefficients are written with the shortest decimal that parses back to
//! the same `f64`, so `load(save(m)) == m` bit for bit.

use std::fs;
use std::path::Path;

use dpatn_core::activation::PiecewiseActivation;
use dpatn_core::network::{FilterSpec, NetworkParams, NetworkShape, SignConvention, StageParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "dpatn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeDoc {
    stages: usize,
    filters: usize,
    kernel_size: usize,
    control_points: usize,
    tied: bool,
    convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    lambda_p: f64,
    /// DCT coefficients of each outer filter.
    filters: Vec<Vec<f64>>,
    /// Inner filters of untied stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inner: Option<Vec<Vec<f64>>>,
    /// Control values of each activation.
    activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    shape: ShapeDoc,
    stages: Vec<StageDoc>,
}

fn to_doc(params: &NetworkParams) -> ModelDoc {
    let s = params.shape();
    let coeffs = |fs: &[FilterSpec]| fs.iter().map(|f| f.coeffs.clone()).collect::<Vec<_>>();
    ModelDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        shape: ShapeDoc {
            stages: s.stages,
            filters: s.filters,
            kernel_size: s.kernel_size,
            control_points: s.control_points,
            tied: s.tied,
            convention: s.convention.as_str().into(),
        },
        stages: params
            .stages()
            .iter()
            .map(|st| StageDoc {
                lambda_p: st.lambda_p,
                filters: coeffs(&st.filters),
                inner: st.inner.as_deref().map(coeffs),
                activations: st.activations.iter().map(|a| a.values().to_vec()).collect(),
            })
            .collect(),
    }
}

fn from_doc(doc: ModelDoc) -> dpatn_core::Result<NetworkParams> {
    use dpatn_core::Error as CoreError;
    if doc.format != MODEL_FORMAT {
        return Err(CoreError::InvalidModel(format!("not a model file (format `{}`)", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(CoreError::InvalidModel(format!("unsupported model version {}", doc.version)));
    }
    let shape = NetworkShape {
        stages: doc.shape.stages,
        filters: doc.shape.filters,
        kernel_size: doc.shape.kernel_size,
        control_points: doc.shape.control_points,
        tied: doc.shape.tied,
        convention: SignConvention::parse(&doc.shape.convention)?,
    };
    let filters = |v: Vec<Vec<f64>>| v.into_iter().map(|coeffs| FilterSpec { coeffs }).collect::<Vec<_>>();
    let stages = doc
        .stages
        .into_iter()
        .map(|st| {
            Ok(StageParams {
                kernel_size: shape.kernel_size,
                filters: filters(st.filters),
                inner: st.inner.map(filters),
                activations: st.activations.into_iter().map(PiecewiseActivation::new).collect::<dpatn_core::Result<_>>()?,
                lambda_p: st.lambda_p,
            })
        })
        .collect::<dpatn_core::Result<Vec<_>>>()?;
    NetworkParams::new(shape, stages)
}

pub fn model_to_string(params: &NetworkParams) -> Result<String> {
    if params.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::Core(dpatn_core::Error::NonFinite));
    }
    Ok(serde_json::to_string_pretty(&to_doc(params)).expect("model document serializes"))
}

/// Parses a model document; `path` only labels errors.
pub fn model_from_str(text: &str, path: &Path) -> Result<NetworkParams> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::parse(path, format!("invalid model file: {e}")))?;
    from_doc(doc).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn save_model(path: &Path, params: &NetworkParams) -> Result<()> {
    let text = model_to_string(params)?;
    crate::write_text(path, &text)
}

pub fn load_model(path: &Path) -> Result<NetworkParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(shape: NetworkShape, seed: u64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Awkward magnitudes and signs stress the decimal round trip.
        let v: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300)))
            .collect();
        NetworkParams::from_vec(shape, &v).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let shapes = [
            NetworkShape::default(),
            NetworkShape {
                stages: 2,
                filters: 3,
                kernel_size: 3,
                control_points: 5,
                tied: false,
                convention: SignConvention::PriorSubtracted,
            },
        ];
        for (i, shape) in shapes.into_iter().enumerate() {
            let m = random_params(shape, i as u64);
            let back = model_from_str(&model_to_string(&m).unwrap(), Path::new("m.json")).unwrap();
            assert_eq!(back, m);
            let bits = |p: &NetworkParams| p.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&m));
        }
    }

    #[test]
    fn default_model_saves_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        let m = NetworkParams::initial(NetworkShape::default()).unwrap();
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn rejects_bad_documents() {
        let m = NetworkParams::initial(NetworkShape::default()).unwrap();
        let good = model_to_string(&m).unwrap();
        let p = Path::new("m.json");
        for bad in [
            good.replace("\"dpatn-model\"", "\"other\""),
            good.replace("\"version\": 1", "\"version\": 9"),
            good.replace("\"prior_added\"", "\"sideways\""),
            good.replace("\"tied\": true", "\"tied\": true, \"extra\": 1"),
            good[..good.len() / 2].to_string(),
            String::from("{}"),
        ] {
            assert!(matches!(model_from_str(&bad, p), Err(Error::Parse { .. })), "{bad:.80}");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_model(Path::new("/nonexistent/model.json")), Err(Error::Io { .. })));
    }
}
