//! JSON reports written next to command outputs.

use std::path::Path;

use dpatn_core::separation::ConvergenceReport;
use dpatn_core::training::{FitReport, Termination};
use serde::Serialize;

use crate::error::Result;

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    crate::write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub name: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_grad_norm: f64,
    pub grad_norm: f64,
    pub termination: &'static str,
    pub losses: Vec<f64>,
}

impl PhaseReport {
    pub fn new(name: &str, r: &FitReport) -> Self {
        Self {
            name: name.into(),
            iterations: r.iterations,
            evaluations: r.evaluations,
            initial_loss: r.initial_loss(),
            final_loss: r.final_loss(),
            initial_grad_norm: r.initial_grad_norm,
            grad_norm: r.grad_norm,
            termination: match r.termination {
                Termination::GradientTolerance => "gradient_tolerance",
                Termination::MaxIterations => "max_iterations",
                Termination::LineSearchFailed => "line_search_failed",
            },
            losses: r.losses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub mode: String,
    pub pairs: usize,
    pub param_count: usize,
    pub wall_clock_seconds: f64,
    pub phases: Vec<PhaseReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationSummary {
    pub iterations: usize,
    pub converged: bool,
    pub certificate_passed: bool,
    pub growth_ratio: f64,
    pub decay_rate: f64,
    pub scaled_bound: f64,
    pub final_diff_l: f64,
    pub final_diff_p: f64,
    pub final_mu_l: f64,
    pub final_mu_p: f64,
}

impl From<&ConvergenceReport> for SeparationSummary {
    fn from(r: &ConvergenceReport) -> Self {
        let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
        Self {
            iterations: r.iterations(),
            converged: r.converged,
            certificate_passed: r.certificate_passed,
            growth_ratio: r.growth_ratio,
            decay_rate: r.decay_rate,
            scaled_bound: r.scaled_bound,
            final_diff_l: last(&r.diff_l),
            final_diff_p: last(&r.diff_p),
            final_mu_l: last(&r.mu_l),
            final_mu_p: last(&r.mu_p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub observation: String,
    pub hazy: Metrics,
    pub model: Metrics,
    pub prior_only: Metrics,
    pub dark_channel: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub images: usize,
    pub mean_hazy: Metrics,
    pub mean_model: Metrics,
    pub mean_prior_only: Metrics,
    pub mean_dark_channel: Metrics,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageAudit {
    pub stage: usize,
    /// `passed`, `failed` or `skipped` (untied stages have no energy).
    pub status: &'static str,
    pub max_scaled_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientAudit {
    pub coordinates: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub energy: Vec<StageAudit>,
    pub gradient: GradientAudit,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmSummary {
    pub patch: usize,
    pub components: usize,
    pub samples: usize,
    pub log_likelihood: Vec<f64>,
}
