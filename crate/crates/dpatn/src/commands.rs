//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dpatn_core::energy::{energy_grad_check, AuditOptions};
use dpatn_core::metrics::{psnr, ssim};
use dpatn_core::network::{propagate, NetworkParams, NetworkShape, SignConvention};
use dpatn_core::pipeline::{
    pipeline_dark_channel, pipeline_dehaze, pipeline_derain, pipeline_underwater, PipelineConfig, UnderwaterSeparation,
};
use dpatn_core::prior::PriorParams;
use dpatn_core::recovery::RecoveryConfig;
use dpatn_core::separation::{
    fit_gmm_patches, GmmFitOptions, LaplacianSmooth, PatchGmm, SeparationOptions, TruncatedGradient, DEFAULT_INNER_ITERS,
    DEFAULT_TAU,
};
use dpatn_core::synth::{
    build_samples, build_underwater_samples, procedural_depth, procedural_sources, synth_hazy, DepthKind, HazeRecipe,
    DEFAULT_CROP, DEFAULT_PAIRS, DEPTH_MAX, DEPTH_MIN,
};
use dpatn_core::training::{
    gradient_check, prepare_pairs, train_schedule, FitOptions, LbfgsOptions, PreparedPair, ScheduleMode, TrainOptions,
    TrainingPair,
};
use dpatn_core::{ImageRgb, ScalarField};
use log::{info, warn};
use serde::Serialize;

use crate::cli::{
    AuditArgs, Cli, Command, Convention, DehazeArgs, DerainArgs, EvalArgs, FitGmmArgs, Mode, NetworkArgs, PriorArgs,
    SeparationArgs, SynthArgs, SynthKind, TrainArgs, UnderwaterArgs,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gmm_file::{load_gmm, save_gmm};
use crate::io::{load_field, load_image, save_field, save_image};
use crate::lock::OutputLock;
use crate::manifest::{load_entry, manifest_to_string, read_manifest, ManifestEntry};
use crate::model_file::{load_model, save_model};
use crate::report::{
    save_json, AuditSummary, EvalRow, EvalSummary, GmmSummary, GradientAudit, Metrics, PhaseReport, SeparationSummary,
    StageAudit, TrainSummary,
};

pub const DEFAULT_OUT_DIR: &str = "dpatn-out";
/// Procedural scenes drawn by `synth` when no source list is given.
pub const DEFAULT_SOURCES: usize = 10;
/// Truncation threshold of `derain`. It must exceed the squared contrast of
/// the streaks, which the generic operator default is far below.
pub const DERAIN_TAU: f64 = 0.1;
/// Side of the generated audit instance.
pub const AUDIT_SIZE: usize = 16;
pub const AUDIT_STEP: f64 = 1e-5;
const MANIFEST_NAME: &str = "manifest.tsv";

/// Resolved state shared by every command.
struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

#[inline]
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        seed: pick(cli.seed, cfg.seed, 0),
        out: pick(cli.out, cfg.out_dir.clone(), PathBuf::from(DEFAULT_OUT_DIR)),
        cfg,
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, &a),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Dehaze(a) => cmd_dehaze(&ctx, &a),
        Command::Underwater(a) => cmd_underwater(&ctx, &a),
        Command::Derain(a) => cmd_derain(&ctx, &a),
        Command::FitGmm(a) => cmd_fit_gmm(&ctx, &a),
        Command::Eval(a) => cmd_eval(&ctx, &a),
        Command::Audit(a) => cmd_audit(&ctx, &a),
    }
}

fn pipeline_config(ctx: &Ctx, a: &PriorArgs) -> Result<PipelineConfig> {
    let p = &ctx.cfg.prior;
    let d = PriorParams::default();
    let prior = PriorParams {
        alpha_hat: pick(a.alpha_hat, p.alpha_hat, d.alpha_hat),
        alpha_check: pick(a.alpha_check, p.alpha_check, d.alpha_check),
        window: pick(a.window, p.window, d.window),
    };
    prior.validate()?;
    let r = &ctx.cfg.recovery;
    let dr = RecoveryConfig::default();
    let recovery = RecoveryConfig {
        epsilon: pick(a.epsilon, r.epsilon, dr.epsilon),
        clamp_output: r.clamp_output.unwrap_or(dr.clamp_output),
    };
    recovery.validate()?;
    Ok(PipelineConfig { prior, recovery })
}

fn separation_setup(ctx: &Ctx, a: &SeparationArgs, default_tau: f64) -> Result<(SeparationOptions, TruncatedGradient, LaplacianSmooth)> {
    let s = &ctx.cfg.separation;
    let d = SeparationOptions::default();
    let opts = SeparationOptions {
        mu_l0: pick(a.mu_l0, s.mu_l0, d.mu_l0),
        mu_p0: pick(a.mu_p0, s.mu_p0, d.mu_p0),
        eta: pick(a.eta, s.eta, d.eta),
        tol: pick(a.tol, s.tol, d.tol),
        max_iter: pick(a.max_iter, s.max_iter, d.max_iter),
        certificate_window: s.certificate_window.unwrap_or(d.certificate_window),
        growth_limit: s.growth_limit.unwrap_or(d.growth_limit),
        settle: if a.no_settle { false } else { s.settle.unwrap_or(d.settle) },
    };
    opts.validate()?;
    let inner_iters = pick(a.inner_iters, s.inner_iters, DEFAULT_INNER_ITERS);
    let tau = pick(a.tau, s.tau, default_tau);
    if !(tau >= 0.0 && tau.is_finite()) || inner_iters == 0 {
        return Err(usage("--tau must be finite and >= 0, --inner-iters positive"));
    }
    Ok((opts, TruncatedGradient { tau, inner_iters }, LaplacianSmooth { inner_iters }))
}

fn network_shape(ctx: &Ctx, a: &NetworkArgs) -> Result<NetworkShape> {
    let n = &ctx.cfg.network;
    let d = NetworkShape::default();
    let convention = match a.convention {
        Some(Convention::PriorAdded) => SignConvention::PriorAdded,
        Some(Convention::PriorSubtracted) => SignConvention::PriorSubtracted,
        None => match &n.convention {
            Some(s) => SignConvention::parse(s)?,
            None => d.convention,
        },
    };
    let shape = NetworkShape {
        stages: pick(a.stages, n.stages, d.stages),
        filters: pick(a.filters, n.filters, d.filters),
        kernel_size: pick(a.kernel_size, n.kernel_size, d.kernel_size),
        control_points: pick(a.control_points, n.control_points, d.control_points),
        tied: if a.untied { false } else { n.tied.unwrap_or(d.tied) },
        convention,
    };
    shape.validate()?;
    Ok(shape)
}

fn metrics(restored: &ImageRgb, gt: &ImageRgb) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(restored, gt)?,
        ssim: ssim(restored, gt)?,
    })
}

fn ground_truth_metrics(out: &Path, restored: &ImageRgb, gt: Option<&Path>) -> Result<()> {
    let Some(gt) = gt else { return Ok(()) };
    let gt = load_image(gt)?;
    if gt.shape() != restored.shape() {
        return Err(usage("ground truth and input differ in size"));
    }
    let m = metrics(restored, &gt)?;
    println!("psnr: {:.4} dB", m.psnr);
    println!("ssim: {:.4}", m.ssim);
    save_json(&out.join("metrics.json"), &m)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- synth

fn read_sources(list: &Path, seed: u64) -> Result<Vec<(ImageRgb, ScalarField)>> {
    let text = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
    let base = list.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut cols = line.split('\t').map(str::trim);
        let clean = load_image(&base.join(cols.next().unwrap_or_default()))?;
        let (h, w) = clean.shape();
        let depth = match cols.next() {
            Some(d) => {
                let raw = load_field(&base.join(d))?;
                if raw.shape() != (h, w) {
                    return Err(Error::parse(&base.join(d), "depth map size differs from its image"));
                }
                raw.map(|v| DEPTH_MIN + v * (DEPTH_MAX - DEPTH_MIN))
            }
            None => {
                let kind = DepthKind::ALL[out.len() % DepthKind::ALL.len()];
                procedural_depth(kind, h, w, seed.wrapping_add(out.len() as u64))?
            }
        };
        out.push((clean, depth));
    }
    if out.is_empty() {
        return Err(Error::parse(list, "source list names no images"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct HazeRecipeDoc {
    index: usize,
    a: f64,
    beta: f64,
    crop: usize,
    seed: u64,
}

#[derive(Serialize)]
struct UnderwaterRecipeDoc {
    index: usize,
    background: [f64; 3],
    beta: [f64; 3],
    crop: usize,
    seed: u64,
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let s = &ctx.cfg.synth;
    let pairs = pick(a.pairs, s.pairs, DEFAULT_PAIRS);
    if pairs == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    let crop = pick(a.crop, s.crop, DEFAULT_CROP);
    if crop < 8 {
        return Err(usage("--crop must be at least 8"));
    }
    let kind = match (a.kind, s.kind.as_deref()) {
        (Some(k), _) => k,
        (None, None | Some("haze")) => SynthKind::Haze,
        (None, Some("underwater")) => SynthKind::Underwater,
        (None, Some(other)) => return Err(usage(format!("unknown synth kind `{other}`"))),
    };
    let sources = match &a.source_list {
        Some(list) => read_sources(list, ctx.seed)?,
        None => {
            let count = pick(a.sources, s.sources, DEFAULT_SOURCES);
            let size = pick(a.source_size, s.source_size, crop + crop / 8);
            if count == 0 || size < crop {
                return Err(usage("--sources must be positive and --source-size at least the crop"));
            }
            procedural_sources(count, size, ctx.seed)?
        }
    };
    let _lock = OutputLock::acquire(&ctx.out)?;
    let mut entries = Vec::with_capacity(pairs);
    let name = |prefix: &str, i: usize| PathBuf::from(format!("{prefix}_{i:04}.png"));
    match kind {
        SynthKind::Haze => {
            let samples = build_samples(&sources, pairs, crop, ctx.seed)?;
            let mut recipes = Vec::with_capacity(pairs);
            for (i, smp) in samples.iter().enumerate() {
                let e = ManifestEntry {
                    observation: name("hazy", i),
                    target: name("trans", i),
                    clean: Some(name("clean", i)),
                };
                save_image(&ctx.out.join(&e.observation), &smp.pair.observation)?;
                save_field(&ctx.out.join(&e.target), &smp.pair.target)?;
                save_image(&ctx.out.join(e.clean.as_ref().unwrap()), &smp.clean)?;
                let r = smp.recipe;
                recipes.push(HazeRecipeDoc {
                    index: i,
                    a: r.a,
                    beta: r.beta,
                    crop: r.crop,
                    seed: r.seed,
                });
                entries.push(e);
            }
            save_json(&ctx.out.join("recipes.json"), &recipes)?;
        }
        SynthKind::Underwater => {
            let samples = build_underwater_samples(&sources, pairs, crop, ctx.seed)?;
            let mut recipes = Vec::with_capacity(pairs);
            for (i, smp) in samples.iter().enumerate() {
                // The target is the per-channel transmission as an RGB image.
                let e = ManifestEntry {
                    observation: name("underwater", i),
                    target: name("trans", i),
                    clean: Some(name("clean", i)),
                };
                save_image(&ctx.out.join(&e.observation), &smp.observation)?;
                save_image(&ctx.out.join(&e.target), &ImageRgb::from_channels(smp.transmission.clone())?)?;
                save_image(&ctx.out.join(e.clean.as_ref().unwrap()), &smp.clean)?;
                let r = smp.recipe;
                recipes.push(UnderwaterRecipeDoc {
                    index: i,
                    background: r.background,
                    beta: r.beta,
                    crop: r.crop,
                    seed: r.seed,
                });
                entries.push(e);
            }
            save_json(&ctx.out.join("recipes.json"), &recipes)?;
        }
    }
    crate::write_text(&ctx.out.join(MANIFEST_NAME), &manifest_to_string(&entries))?;
    println!("wrote {pairs} pairs to {}", ctx.out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

fn load_pairs(manifest: &Path, limit: Option<usize>) -> Result<Vec<(ManifestEntry, crate::manifest::LoadedPair)>> {
    let mut entries = read_manifest(manifest)?;
    if let Some(n) = limit {
        if n == 0 {
            return Err(usage("--limit must be positive"));
        }
        entries.truncate(n);
    }
    entries
        .into_iter()
        .map(|e| {
            let p = load_entry(&e)?;
            Ok((e, p))
        })
        .collect()
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, &a.prior)?;
    let shape = network_shape(ctx, &a.network)?;
    let t = &ctx.cfg.train;
    let mode = match (a.mode, t.mode.as_deref()) {
        (Some(Mode::Greedy), _) => ScheduleMode::Greedy,
        (Some(Mode::Joint), _) => ScheduleMode::Joint,
        (Some(Mode::GreedyThenJoint), _) => ScheduleMode::GreedyThenJoint,
        (None, Some(s)) => ScheduleMode::parse(s)?,
        (None, None) => ScheduleMode::default(),
    };
    let d = LbfgsOptions::default();
    let max_iter = pick(a.max_iter, t.max_iter, d.max_iter);
    let lbfgs = LbfgsOptions {
        memory: pick(a.memory, t.memory, d.memory),
        max_iter,
        grad_tol: pick(a.grad_tol, t.grad_tol, d.grad_tol),
        ..d
    };
    lbfgs.validate()?;
    let nonneg_lambda = a.nonneg_lambda || t.nonneg_lambda.unwrap_or(false);
    let opts = TrainOptions {
        mode,
        greedy: FitOptions {
            lbfgs: LbfgsOptions {
                max_iter: pick(a.greedy_max_iter, t.greedy_max_iter, max_iter),
                ..lbfgs.clone()
            },
            nonneg_lambda,
        },
        joint: FitOptions { lbfgs, nonneg_lambda },
    };
    let model_out = a.model_out.clone().unwrap_or_else(|| ctx.out.join("model.json"));
    let pairs: Vec<TrainingPair> = load_pairs(&a.manifest, a.limit)?.into_iter().map(|(_, p)| p.pair).collect();
    let _lock = OutputLock::acquire(&ctx.out)?;
    info!("training {} on {} pairs", shape_label(&shape), pairs.len());
    let start = Instant::now();
    let prepared = prepare_pairs(&pairs, &cfg.prior)?;
    let (model, report) = train_schedule(&prepared, shape, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    save_model(&model_out, &model)?;
    let summary = TrainSummary {
        mode: mode.as_str().into(),
        pairs: pairs.len(),
        param_count: model.param_count(),
        wall_clock_seconds: seconds,
        phases: report.phases.iter().map(|(n, r)| PhaseReport::new(n, r)).collect(),
    };
    save_json(&ctx.out.join("train_report.json"), &summary)?;
    for p in &summary.phases {
        if p.termination == "line_search_failed" {
            warn!("phase {} ended on a failed line search; best point kept", p.name);
        }
    }
    let first = summary.phases.first().map_or(f64::NAN, |p| p.initial_loss);
    let last = report.final_loss().unwrap_or(f64::NAN);
    println!("trained {} parameters on {} pairs in {seconds:.2} s", summary.param_count, summary.pairs);
    println!("loss: {first:.6e} -> {last:.6e}");
    println!("model: {}", model_out.display());
    Ok(())
}

fn shape_label(s: &NetworkShape) -> String {
    format!("L={} K={} n={} M={}", s.stages, s.filters, s.kernel_size, s.control_points)
}

// ---------------------------------------------------------------- restore

fn cmd_dehaze(ctx: &Ctx, a: &DehazeArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, &a.prior)?;
    let model = load_model(&a.model)?;
    let image = load_image(&a.input)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    let out = pipeline_dehaze(&image, &model, &cfg)?;
    save_image(&ctx.out.join("radiance.png"), &out.radiance)?;
    save_field(&ctx.out.join("transmission.png"), &out.transmission)?;
    println!("airlight: {:?}", out.airlight.0);
    ground_truth_metrics(&ctx.out, &out.radiance, a.gt.as_deref())
}

fn cmd_underwater(ctx: &Ctx, a: &UnderwaterArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, &a.prior)?;
    let (options, latent, shift) = separation_setup(ctx, &a.separation, DEFAULT_TAU)?;
    let model = load_model(&a.model)?;
    let image = load_image(&a.input)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    let sep = UnderwaterSeparation { options, latent, shift };
    let out = pipeline_underwater(&image, &model, &cfg, (!a.no_separation).then_some(&sep))?;
    save_image(&ctx.out.join("radiance.png"), &out.radiance)?;
    save_image(&ctx.out.join("latent.png"), &out.latent)?;
    for (c, name) in ["r", "g", "b"].iter().enumerate() {
        save_field(&ctx.out.join(format!("transmission_{name}.png")), &out.transmission[c])?;
    }
    println!("background light: {:?}", out.background.0);
    if let Some(rep) = &out.report {
        report_separation(&ctx.out, rep)?;
    }
    ground_truth_metrics(&ctx.out, &out.radiance, a.gt.as_deref())
}

fn report_separation(out: &Path, rep: &dpatn_core::separation::ConvergenceReport) -> Result<()> {
    let s = SeparationSummary::from(rep);
    println!(
        "separation: {} iterations, converged {}, certificate {} (growth {:.3})",
        s.iterations,
        s.converged,
        if s.certificate_passed { "passed" } else { "failed" },
        s.growth_ratio
    );
    if !s.certificate_passed {
        warn!("separation certificate failed; see separation.json");
    }
    save_json(&out.join("separation.json"), &s)
}

fn cmd_derain(ctx: &Ctx, a: &DerainArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, &a.prior)?;
    let (options, latent, _) = separation_setup(ctx, &a.separation, DERAIN_TAU)?;
    let model = load_model(&a.model)?;
    let gmm = PatchGmm::new(load_gmm(&a.gmm)?, pick(a.stride, ctx.cfg.gmm.stride, 1))?;
    let image = load_image(&a.input)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    let out = pipeline_derain(&image, &model, &cfg, &gmm, &latent, &options)?;
    save_image(&ctx.out.join("radiance.png"), &out.radiance)?;
    save_image(&ctx.out.join("rain.png"), &out.rain)?;
    save_image(&ctx.out.join("latent.png"), &out.latent)?;
    save_field(&ctx.out.join("transmission.png"), &out.transmission)?;
    report_separation(&ctx.out, &out.report)?;
    ground_truth_metrics(&ctx.out, &out.radiance, a.gt.as_deref())
}

// ---------------------------------------------------------------- fit-gmm

fn cmd_fit_gmm(ctx: &Ctx, a: &FitGmmArgs) -> Result<()> {
    let g = &ctx.cfg.gmm;
    let d = GmmFitOptions::default();
    let opts = GmmFitOptions {
        patch: pick(a.patch, g.patch, d.patch),
        components: pick(a.components, g.components, d.components),
        em_iters: pick(a.em_iters, g.em_iters, d.em_iters),
        seed: ctx.seed,
        stride: pick(a.stride, g.stride, d.stride),
        max_patches: pick(a.max_patches, g.max_patches, d.max_patches),
    };
    let mut samples = Vec::with_capacity(3 * a.images.len());
    for p in &a.images {
        samples.extend(load_image(p)?.into_channels());
    }
    let _lock = OutputLock::acquire(&ctx.out)?;
    let fit = fit_gmm_patches(&samples, &opts)?;
    save_gmm(&ctx.out.join("gmm.json"), &fit.model)?;
    let summary = GmmSummary {
        patch: fit.model.patch(),
        components: fit.model.components(),
        samples: samples.len(),
        log_likelihood: fit.log_likelihood.clone(),
    };
    save_json(&ctx.out.join("gmm_report.json"), &summary)?;
    println!(
        "fitted {} components on {}x{} patches; mean log-likelihood {:.4}",
        summary.components,
        summary.patch,
        summary.patch,
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

fn mean_metrics(rows: &[Metrics]) -> Metrics {
    let n = rows.len().max(1) as f64;
    Metrics {
        psnr: rows.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|m| m.ssim).sum::<f64>() / n,
    }
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, &a.prior)?;
    let model = load_model(&a.model)?;
    let prior_only = NetworkParams::zeros(*model.shape())?;
    let pairs = load_pairs(&a.manifest, a.limit)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    let mut rows = Vec::new();
    for (entry, p) in &pairs {
        let Some(clean) = &p.clean else {
            warn!("{}: no clean image listed, skipped", entry.observation.display());
            continue;
        };
        let hazy = &p.pair.observation;
        rows.push(EvalRow {
            observation: file_name(&entry.observation),
            hazy: metrics(hazy, clean)?,
            model: metrics(&pipeline_dehaze(hazy, &model, &cfg)?.radiance, clean)?,
            prior_only: metrics(&pipeline_dehaze(hazy, &prior_only, &cfg)?.radiance, clean)?,
            dark_channel: metrics(&pipeline_dark_channel(hazy, &cfg)?.radiance, clean)?,
        });
    }
    if rows.is_empty() {
        return Err(usage("manifest has no entries with a clean image column"));
    }
    let col = |f: fn(&EvalRow) -> Metrics| mean_metrics(&rows.iter().map(f).collect::<Vec<_>>());
    let summary = EvalSummary {
        images: rows.len(),
        mean_hazy: col(|r| r.hazy),
        mean_model: col(|r| r.model),
        mean_prior_only: col(|r| r.prior_only),
        mean_dark_channel: col(|r| r.dark_channel),
        rows,
    };
    save_json(&ctx.out.join("eval.json"), &summary)?;
    println!("images: {}", summary.images);
    for (name, m) in [
        ("hazy", summary.mean_hazy),
        ("model", summary.mean_model),
        ("prior_only", summary.mean_prior_only),
        ("dark_channel", summary.mean_dark_channel),
    ] {
        println!("{name:<13} psnr {:.4} dB  ssim {:.4}", m.psnr, m.ssim);
    }
    Ok(())
}

// ---------------------------------------------------------------- audit

/// Seeded hazy 16x16 instance with its true transmission.
fn audit_instance(seed: u64, prior: &PriorParams) -> Result<PreparedPair> {
    let scene = dpatn_core::synth::procedural_scene(AUDIT_SIZE, AUDIT_SIZE, seed);
    let depth = procedural_depth(DepthKind::Radial, AUDIT_SIZE, AUDIT_SIZE, seed)?;
    let recipe = HazeRecipe::new(0.85, 1.0, AUDIT_SIZE, seed)?;
    let (hazy, t) = synth_hazy(&scene, &depth, &recipe)?;
    Ok(PreparedPair::from_pair(&TrainingPair::new(hazy, t)?, prior)?)
}

fn cmd_audit(ctx: &Ctx, a: &AuditArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let samples = a.samples.unwrap_or(AuditOptions::default().samples);
    let step = a.step.unwrap_or(AUDIT_STEP);
    if samples == 0 || !(step > 0.0 && step.is_finite()) {
        return Err(usage("--samples must be positive and --step a positive number"));
    }
    let pair = audit_instance(ctx.seed, &PriorParams::default())?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    let trace = propagate(&pair.prior_map, &model)?;
    let mut energy = Vec::with_capacity(model.stages().len());
    for (l, stage) in model.stages().iter().enumerate() {
        let entry = if stage.is_tied() {
            let opts = AuditOptions {
                samples,
                seed: ctx.seed.wrapping_add(l as u64),
                ..AuditOptions::default()
            };
            let audit = energy_grad_check(&trace[l], stage, &opts)?;
            StageAudit {
                stage: l,
                status: if audit.passed() { "passed" } else { "failed" },
                max_scaled_error: Some(audit.max_scaled_error),
            }
        } else {
            StageAudit {
                stage: l,
                status: "skipped",
                max_scaled_error: None,
            }
        };
        println!(
            "energy stage {l}: {}{}",
            entry.status,
            entry.max_scaled_error.map(|e| format!(" (max error {e:.3e})")).unwrap_or_default()
        );
        energy.push(entry);
    }
    let g = gradient_check(&pair, &model, step)?;
    let gradient = GradientAudit {
        coordinates: g.coordinates,
        failures: g.failures,
        max_relative_error: g.max_relative_error,
        max_abs_error: g.max_abs_error,
        passed: g.passed(),
    };
    println!(
        "gradient: {} ({} of {} coordinates outside tolerance, max relative error {:.3e})",
        if gradient.passed { "passed" } else { "failed" },
        gradient.failures,
        gradient.coordinates,
        gradient.max_relative_error
    );
    let passed = gradient.passed && energy.iter().all(|e| e.status != "failed");
    save_json(&ctx.out.join("audit.json"), &AuditSummary { energy, gradient, passed })?;
    if passed {
        Ok(())
    } else {
        Err(Error::CheckFailed("audit found gradient or energy mismatches; see audit.json".into()))
    }
}
