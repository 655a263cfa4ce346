//! Command-line surface. Flags override values from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dpatn", version, about = "Prior-guided transmission propagation for dehazing, underwater enhancement and rain removal")]
pub struct Cli {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out", global = true, env = "DPATN_OUT_DIR", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize hazy (or underwater) pairs and a manifest.
    Synth(SynthArgs),
    /// Fit a network to a manifest of pairs.
    Train(TrainArgs),
    /// Dehaze one image.
    Dehaze(DehazeArgs),
    /// Enhance one underwater image.
    Underwater(UnderwaterArgs),
    /// Remove rain streaks, then haze, from one image.
    Derain(DerainArgs),
    /// Fit a patch mixture model for the rain layer.
    FitGmm(FitGmmArgs),
    /// Compare a model with the prior-only network and the dark-channel
    /// baseline on a manifest with clean images.
    Eval(EvalArgs),
    /// Gradient and energy self-checks of a model.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Haze,
    Underwater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Joint,
    GreedyThenJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Convention {
    PriorAdded,
    PriorSubtracted,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PriorArgs {
    /// Upper radiance bound scale.
    #[arg(long)]
    pub alpha_hat: Option<f64>,
    /// Lower radiance bound scale (0 gives the dark-channel form).
    #[arg(long)]
    pub alpha_check: Option<f64>,
    /// Airlight min-filter window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Lower clamp of the transmission in radiance recovery.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SeparationArgs {
    #[arg(long)]
    pub mu_l0: Option<f64>,
    #[arg(long)]
    pub mu_p0: Option<f64>,
    /// Penalty growth ratio.
    #[arg(long)]
    pub eta: Option<f64>,
    /// RMS stopping tolerance of successive differences.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "sep-max-iter")]
    pub max_iter: Option<usize>,
    /// Stop at the tolerance without waiting for the scaled differences to
    /// settle.
    #[arg(long)]
    pub no_settle: bool,
    /// Gradient truncation threshold of the latent-layer prior.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Conjugate-gradient iterations of each operator solve.
    #[arg(long)]
    pub inner_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Number of pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Side of the square crop.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<SynthKind>,
    /// Number of procedural source scenes.
    #[arg(long)]
    pub sources: Option<usize>,
    /// Side of the procedural source scenes.
    #[arg(long)]
    pub source_size: Option<usize>,
    /// Clean images to use instead of procedural scenes: one path per line,
    /// optionally followed by a tab and a grayscale depth map.
    #[arg(long, value_name = "FILE")]
    pub source_list: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub control_points: Option<usize>,
    /// Learn inner filters separately instead of tying them by rotation.
    #[arg(long)]
    pub untied: bool,
    #[arg(long, value_enum)]
    pub convention: Option<Convention>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Model path; defaults to `model.json` in the output directory.
    #[arg(long, value_name = "FILE")]
    pub model_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// L-BFGS iterations of the joint fit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// L-BFGS iterations of each greedy stage fit.
    #[arg(long)]
    pub greedy_max_iter: Option<usize>,
    #[arg(long)]
    pub memory: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Keep prior weights nonnegative.
    #[arg(long)]
    pub nonneg_lambda: bool,
    /// Use only the first N manifest pairs.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DehazeArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Ground truth; prints PSNR and SSIM when given.
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub prior: PriorArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct UnderwaterArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Skip layer separation and colour constancy.
    #[arg(long)]
    pub no_separation: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub separation: SeparationArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DerainArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gmm: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Patch stride of the mixture prior.
    #[arg(long)]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub separation: SeparationArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitGmmArgs {
    /// Training images (rain layers or rainy crops).
    #[arg(required = true, value_name = "IMAGE")]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub em_iters: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub max_patches: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub prior: PriorArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AuditArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Pixels sampled by the energy check of each stage.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Finite-difference step of the parameter gradient check.
    #[arg(long)]
    pub step: Option<f64>,
}
