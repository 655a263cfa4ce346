//! Network fitting: L-BFGS over (a subset of) the flat parameter vector and
//! the greedy / joint stage schedules.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::{stage_step, NetworkParams, NetworkShape, StageParams};
use crate::dct::dct_atoms;
use crate::training::backprop::{total_loss_and_gradient, PreparedPair};
use crate::training::lbfgs::{minimize, FitReport, LbfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// Fit stage 0 alone, freeze it, append stage 1, and so on.
    Greedy,
    /// Fit every stage at once from the default initialization.
    Joint,
    /// A greedy pass followed by joint refinement.
    #[default]
    GreedyThenJoint,
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Greedy => "greedy",
            ScheduleMode::Joint => "joint",
            ScheduleMode::GreedyThenJoint => "greedy_then_joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(ScheduleMode::Greedy),
            "joint" => Ok(ScheduleMode::Joint),
            "greedy_then_joint" | "greedy-then-joint" => Ok(ScheduleMode::GreedyThenJoint),
            other => Err(Error::InvalidParameter(alloc::format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub lbfgs: LbfgsOptions,
    /// Keep every prior weight nonnegative.
    pub nonneg_lambda: bool,
}

/// Minimizes the summed loss over `free` coordinates of `params0`; every
/// other coordinate is held fixed.
pub fn lbfgs_fit_subset(
    pairs: &[PreparedPair],
    params0: &NetworkParams,
    free: &[usize],
    opts: &FitOptions,
) -> Result<(NetworkParams, FitReport)> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let full0 = params0.to_vec();
    if free.iter().any(|&i| i >= full0.len()) {
        return Err(Error::InvalidParameter("free coordinate out of range".into()));
    }
    let shape = *params0.shape();
    let mut lbfgs = opts.lbfgs.clone();
    if opts.nonneg_lambda {
        let lam = shape.layout().lambda;
        let n = shape.stage_param_count();
        for (j, &i) in free.iter().enumerate() {
            if i % n == lam {
                lbfgs.lower_bounds.push((j, 0.0));
            }
        }
    }
    let mut scratch = params0.clone();
    let mut full = full0.clone();
    let mut objective = |x: &[f64], grad: &mut [f64]| -> Result<f64> {
        for (&i, &v) in free.iter().zip(x) {
            full[i] = v;
        }
        scratch.set_from_slice(&full)?;
        let (f, g) = total_loss_and_gradient(pairs, &scratch)?;
        for (gj, &i) in grad.iter_mut().zip(free) {
            *gj = g[i];
        }
        Ok(f)
    };
    let x0: Vec<f64> = free.iter().map(|&i| full0[i]).collect();
    let (x, report) = minimize(&mut objective, &x0, &lbfgs)?;
    let mut out = full0;
    for (&i, v) in free.iter().zip(x) {
        out[i] = v;
    }
    Ok((NetworkParams::from_vec(shape, &out)?, report))
}

/// Minimizes the summed loss over every learnable scalar.
pub fn lbfgs_fit(pairs: &[PreparedPair], params0: &NetworkParams, opts: &FitOptions) -> Result<(NetworkParams, FitReport)> {
    let free: Vec<usize> = (0..params0.param_count()).collect();
    lbfgs_fit_subset(pairs, params0, &free, opts)
}

/// Coordinates of every stage's prior weight.
pub fn lambda_coordinates(shape: &NetworkShape) -> Vec<usize> {
    let lam = shape.layout().lambda;
    (0..shape.stages).map(|l| l * shape.stage_param_count() + lam).collect()
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct TrainOptions {
    pub mode: ScheduleMode,
    /// Options of each greedy stage fit.
    pub greedy: FitOptions,
    /// Options of the joint fit.
    pub joint: FitOptions,
}


#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(phase label, report)` in execution order.
    pub phases: Vec<(String, FitReport)>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.phases.last().map(|(_, r)| r.final_loss())
    }
}

fn greedy_pass(pairs: &[PreparedPair], shape: NetworkShape, opts: &FitOptions, report: &mut TrainReport) -> Result<NetworkParams> {
    let basis = dct_atoms(shape.kernel_size)?;
    let single = NetworkShape { stages: 1, ..shape };
    let mut working: Vec<PreparedPair> = pairs.to_vec();
    let mut stages: Vec<StageParams> = Vec::with_capacity(shape.stages);
    for l in 0..shape.stages {
        let init = NetworkParams::new(single, alloc::vec![StageParams::initial(&single, &basis)?])?;
        let (fitted, r) = lbfgs_fit(&working, &init, opts)?;
        log::info!("greedy stage {l}: loss {:.6e} -> {:.6e}", r.initial_loss(), r.final_loss());
        report.phases.push((alloc::format!("greedy stage {l}"), r));
        let stage = fitted.stage(0).clone();
        if l + 1 < shape.stages {
            let kernels = stage.realize_with(&basis);
            for p in &mut working {
                p.start = stage_step(&p.start, &p.prior_map, &kernels, &stage, shape.convention)?;
            }
        }
        stages.push(stage);
    }
    NetworkParams::new(shape, stages)
}

/// Trains a network of `shape` on prepared pairs according to `opts.mode`.
pub fn train_schedule(pairs: &[PreparedPair], shape: NetworkShape, opts: &TrainOptions) -> Result<(NetworkParams, TrainReport)> {
    shape.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let mut report = TrainReport { phases: Vec::new() };
    let params = match opts.mode {
        ScheduleMode::Greedy => greedy_pass(pairs, shape, &opts.greedy, &mut report)?,
        ScheduleMode::Joint => {
            let (p, r) = lbfgs_fit(pairs, &NetworkParams::initial(shape)?, &opts.joint)?;
            report.phases.push(("joint".into(), r));
            p
        }
        ScheduleMode::GreedyThenJoint => {
            let g = greedy_pass(pairs, shape, &opts.greedy, &mut report)?;
            let (p, r) = lbfgs_fit(pairs, &g, &opts.joint)?;
            log::info!("joint refinement: loss {:.6e} -> {:.6e}", r.initial_loss(), r.final_loss());
            report.phases.push(("joint refinement".into(), r));
            p
        }
    };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use crate::network::SignConvention;
    use crate::training::backprop::total_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(stages: usize) -> NetworkShape {
        NetworkShape {
            stages,
            filters: 2,
            kernel_size: 3,
            control_points: 31,
            tied: true,
            convention: SignConvention::PriorAdded,
        }
    }

    fn pairs(seed: u64, count: usize, n: usize) -> Vec<PreparedPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let target = ScalarField::from_fn(n, n, |i, j| 0.3 + 0.4 * ((i + j) as f64 / (2 * n) as f64) + rng.random_range(-0.02..0.02));
                let prior_map = target.map(|v| (0.8 * v + 0.05 * (v * 17.0).sin()).clamp(0.0, 1.0));
                PreparedPair {
                    start: prior_map.clone(),
                    prior_map,
                    target,
                }
            })
            .collect()
    }

    fn quick(max_iter: usize) -> FitOptions {
        FitOptions {
            lbfgs: LbfgsOptions {
                max_iter,
                ..Default::default()
            },
            nonneg_lambda: false,
        }
    }

    #[test]
    fn lambda_only_fit_reaches_closed_form() {
        let data = pairs(1, 3, 12);
        let s = shape(1);
        let params = NetworkParams::zeros(s).unwrap();
        // t1 = P (1 + lambda): least squares in lambda.
        let (mut pt, mut pp) = (0.0, 0.0);
        for p in &data {
            pt += p.prior_map.dot(&p.target);
            pp += p.prior_map.norm_sq();
        }
        let want = pt / pp - 1.0;
        let opts = FitOptions {
            lbfgs: LbfgsOptions {
                grad_tol: 1e-12,
                ..Default::default()
            },
            nonneg_lambda: false,
        };
        let (fit, _) = lbfgs_fit_subset(&data, &params, &lambda_coordinates(&s), &opts).unwrap();
        assert!((fit.stage(0).lambda_p - want).abs() < 1e-8, "{} vs {want}", fit.stage(0).lambda_p);
    }

    #[test]
    fn nonnegative_lambda_is_enforced() {
        // Targets below the prior push lambda negative; the bound stops it at 0.
        let mut data = pairs(2, 2, 10);
        for p in &mut data {
            p.target = p.prior_map.map(|v| 0.5 * v);
        }
        let s = shape(1);
        let opts = FitOptions {
            nonneg_lambda: true,
            ..quick(50)
        };
        let (fit, _) = lbfgs_fit_subset(&data, &NetworkParams::zeros(s).unwrap(), &lambda_coordinates(&s), &opts).unwrap();
        assert_eq!(fit.stage(0).lambda_p, 0.0);
    }

    #[test]
    fn optimal_start_returns_immediately() {
        let mut data = pairs(3, 2, 10);
        for p in &mut data {
            p.target = p.prior_map.clone();
        }
        let (_, report) = lbfgs_fit(&data, &NetworkParams::zeros(shape(1)).unwrap(), &quick(10)).unwrap();
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn single_stage_greedy_equals_joint() {
        let data = pairs(4, 2, 10);
        let mut opts = TrainOptions {
            mode: ScheduleMode::Greedy,
            greedy: quick(15),
            joint: quick(15),
        };
        let (g, _) = train_schedule(&data, shape(1), &opts).unwrap();
        opts.mode = ScheduleMode::Joint;
        let (j, _) = train_schedule(&data, shape(1), &opts).unwrap();
        assert_eq!(g, j);
    }

    #[test]
    fn refinement_never_loses_to_greedy() {
        let data = pairs(5, 3, 10);
        let mut opts = TrainOptions {
            mode: ScheduleMode::Greedy,
            greedy: quick(10),
            joint: quick(10),
        };
        let (g, _) = train_schedule(&data, shape(2), &opts).unwrap();
        opts.mode = ScheduleMode::GreedyThenJoint;
        let (gj, report) = train_schedule(&data, shape(2), &opts).unwrap();
        assert_eq!(report.phases.len(), 3);
        let lg = total_loss(&data, &g).unwrap();
        let lgj = total_loss(&data, &gj).unwrap();
        assert!(lgj <= lg, "{lgj} > {lg}");
        assert_eq!(report.phases[2].1.initial_loss().to_bits(), lg.to_bits());
    }

    #[test]
    fn fitting_halves_the_loss() {
        let data = pairs(6, 10, 12);
        let init = NetworkParams::initial(shape(2)).unwrap();
        let before = total_loss(&data, &init).unwrap();
        let (fit, report) = lbfgs_fit(&data, &init, &quick(200)).unwrap();
        let after = total_loss(&data, &fit).unwrap();
        assert!(after < 0.5 * before, "{after} vs {before}");
        assert!((report.final_loss() - after).abs() < 1e-9 * before);
    }

    #[test]
    fn schedule_names_round_trip() {
        for m in [ScheduleMode::Greedy, ScheduleMode::Joint, ScheduleMode::GreedyThenJoint] {
            assert_eq!(ScheduleMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(ScheduleMode::parse("sideways").is_err());
    }
}
