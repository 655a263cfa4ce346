//! Optional TOML run configuration. Every key is optional; command-line
//! flags override file values and built-in defaults fill the rest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub prior: PriorSection,
    pub recovery: RecoverySection,
    pub synth: SynthSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub separation: SeparationSection,
    pub gmm: GmmSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub alpha_hat: Option<f64>,
    pub alpha_check: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverySection {
    pub epsilon: Option<f64>,
    pub clamp_output: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub kind: Option<String>,
    pub pairs: Option<usize>,
    pub crop: Option<usize>,
    pub sources: Option<usize>,
    pub source_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub stages: Option<usize>,
    pub filters: Option<usize>,
    pub kernel_size: Option<usize>,
    pub control_points: Option<usize>,
    pub tied: Option<bool>,
    pub convention: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: Option<String>,
    pub max_iter: Option<usize>,
    pub greedy_max_iter: Option<usize>,
    pub memory: Option<usize>,
    pub grad_tol: Option<f64>,
    pub nonneg_lambda: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationSection {
    pub mu_l0: Option<f64>,
    pub mu_p0: Option<f64>,
    pub eta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub certificate_window: Option<usize>,
    pub growth_limit: Option<f64>,
    pub settle: Option<bool>,
    pub tau: Option<f64>,
    pub inner_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub patch: Option<usize>,
    pub components: Option<usize>,
    pub em_iters: Option<usize>,
    pub stride: Option<usize>,
    pub max_patches: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }
}
