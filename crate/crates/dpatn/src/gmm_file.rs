//! Versioned JSON container for patch mixture models.

use std::fs;
use std::path::Path;

use dpatn_core::separation::GmmModel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GMM_FORMAT: &str = "dpatn-gmm";
pub const GMM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmDoc {
    format: String,
    version: u32,
    patch: usize,
    weights: Vec<f64>,
    /// Component means in the mean-free patch coordinates.
    means: Vec<Vec<f64>>,
    /// Row-major covariances.
    covariances: Vec<Vec<f64>>,
}

pub fn gmm_to_string(model: &GmmModel) -> String {
    let doc = GmmDoc {
        format: GMM_FORMAT.into(),
        version: GMM_VERSION,
        patch: model.patch(),
        weights: model.weights().to_vec(),
        means: model.means().to_vec(),
        covariances: model.covariances().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("gmm document serializes")
}

pub fn gmm_from_str(text: &str, path: &Path) -> Result<GmmModel> {
    let doc: GmmDoc = serde_json::from_str(text).map_err(|e| Error::parse(path, format!("invalid GMM file: {e}")))?;
    if doc.format != GMM_FORMAT {
        return Err(Error::parse(path, format!("not a GMM file (format `{}`)", doc.format)));
    }
    if doc.version != GMM_VERSION {
        return Err(Error::parse(path, format!("unsupported GMM version {}", doc.version)));
    }
    GmmModel::new(doc.patch, doc.weights, doc.means, doc.covariances).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn save_gmm(path: &Path, model: &GmmModel) -> Result<()> {
    crate::write_text(path, &gmm_to_string(model))
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    gmm_from_str(&text, path)
}
