//! Unrolled residual propagation of transmission maps.
//!
//! Each stage updates `t+ = t - D(t) -/+ lambda * P` where
//! `D(t) = sum_k outer_k (*) phi_k(inner_k (*) t)` is the data submodule and
//! `P` the physics prior map. Filters are stored as coordinates on the
//! mean-free DCT basis; in tied mode `inner_k = rot180(outer_k)` is derived and
//! never stored.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use crate::activation::PiecewiseActivation;
use crate::conv::conv2d_same;
use crate::dct::{dct_atoms, DctBasis};
use crate::error::{Error, Result};
use crate::field::{ImageRgb, Kernel, ScalarField};
use crate::prior::{estimate_airlight, prior_transmission, AtmosphericLight, PriorParams};

/// Initial prior weight of every stage.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// How the weighted prior enters the stage update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// `t+ = t - D(t) - lambda * P`.
    PriorSubtracted,
    /// `t+ = t - D(t) + lambda * P`.
    #[default]
    PriorAdded,
}

impl SignConvention {
    /// Coefficient `s` in `t+ = t - D(t) + s * lambda * P`.
    #[inline]
    pub fn prior_sign(self) -> f64 {
        match self {
            SignConvention::PriorSubtracted => -1.0,
            SignConvention::PriorAdded => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignConvention::PriorSubtracted => "prior_subtracted",
            SignConvention::PriorAdded => "prior_added",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "prior_subtracted" => Ok(SignConvention::PriorSubtracted),
            "prior_added" => Ok(SignConvention::PriorAdded),
            other => Err(Error::InvalidParameter(alloc::format!("unknown sign convention `{other}`"))),
        }
    }
}

/// Architecture hyperparameters shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub stages: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub control_points: usize,
    pub tied: bool,
    pub convention: SignConvention,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            stages: 5,
            filters: 24,
            kernel_size: 5,
            control_points: 31,
            tied: true,
            convention: SignConvention::default(),
        }
    }
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidParameter("at least one stage is required".to_string()));
        }
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidOddSize {
                size: self.kernel_size,
                min: 3,
            });
        }
        if self.control_points < 3 || self.control_points.is_multiple_of(2) {
            return Err(Error::InvalidOddSize {
                size: self.control_points,
                min: 3,
            });
        }
        let atoms = self.atoms();
        if self.filters == 0 || self.filters > atoms {
            return Err(Error::InvalidParameter(alloc::format!(
                "filter count must be in 1..={atoms} for kernel size {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Number of DCT coefficients per filter, `n^2 - 1`.
    #[inline]
    pub fn atoms(&self) -> usize {
        self.kernel_size * self.kernel_size - 1
    }

    pub fn layout(&self) -> StageLayout {
        let f = self.filters * self.atoms();
        let outer = 0..f;
        let inner = (!self.tied).then(|| f..2 * f);
        let a0 = if self.tied { f } else { 2 * f };
        let activations = a0..a0 + self.filters * self.control_points;
        let lambda = activations.end;
        StageLayout {
            outer,
            inner,
            activations,
            lambda,
            len: lambda + 1,
        }
    }

    #[inline]
    pub fn stage_param_count(&self) -> usize {
        self.layout().len
    }

    /// Total learnable scalars: `L * (K(n^2-1) [x2 untied] + K*M + 1)`.
    #[inline]
    pub fn param_count(&self) -> usize {
        self.stages * self.stage_param_count()
    }
}

/// Offsets of one stage's parameters inside its slice of the flat vector.
///
/// Within a stage: outer filter coefficients (filter-major), inner filter
/// coefficients when untied, activation values (activation-major), then the
/// prior weight. Stages are concatenated in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLayout {
    pub outer: Range<usize>,
    pub inner: Option<Range<usize>>,
    pub activations: Range<usize>,
    pub lambda: usize,
    pub len: usize,
}

/// Coordinates of one filter on the DCT basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub coeffs: Vec<f64>,
}

impl FilterSpec {
    pub fn zeros(atoms: usize) -> Self {
        Self {
            coeffs: alloc::vec![0.0; atoms],
        }
    }

    /// The unit vector selecting atom `i`.
    pub fn atom(atoms: usize, i: usize) -> Self {
        let mut f = Self::zeros(atoms);
        f.coeffs[i] = 1.0;
        f
    }

    /// Coordinates of the 180-degree rotated filter. Atom `(u, v)` is even or
    /// odd under rotation according to the parity of `u + v`.
    pub fn rotated(&self, basis: &DctBasis) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .zip(basis.frequencies())
            .map(|(c, &(u, v))| if (u + v) % 2 == 0 { *c } else { -*c })
            .collect();
        Self { coeffs }
    }
}

/// Learnable state of one residual stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub kernel_size: usize,
    /// Filters applied after the activation.
    pub filters: Vec<FilterSpec>,
    /// Filters applied before the activation; `None` means tied by rotation.
    pub inner: Option<Vec<FilterSpec>>,
    pub activations: Vec<PiecewiseActivation>,
    pub lambda_p: f64,
}

/// Realized spatial kernels of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageKernels {
    pub outer: Vec<Kernel>,
    pub inner: Vec<Kernel>,
}

impl StageParams {
    /// Default initialization: filter `k` is DCT atom `k`, activations sample
    /// the influence function, prior weight [`DEFAULT_LAMBDA`].
    pub fn initial(shape: &NetworkShape, basis: &DctBasis) -> Result<Self> {
        let atoms = shape.atoms();
        let filters: Vec<FilterSpec> = (0..shape.filters).map(|k| FilterSpec::atom(atoms, k)).collect();
        let inner = (!shape.tied).then(|| filters.iter().map(|f| f.rotated(basis)).collect());
        let activations = (0..shape.filters)
            .map(|_| PiecewiseActivation::influence(shape.control_points))
            .collect::<Result<_>>()?;
        Ok(Self {
            kernel_size: shape.kernel_size,
            filters,
            inner,
            activations,
            lambda_p: DEFAULT_LAMBDA,
        })
    }

    /// All filters, activation values and the prior weight set to zero.
    pub fn zeros(shape: &NetworkShape) -> Result<Self> {
        let atoms = shape.atoms();
        let filters: Vec<FilterSpec> = (0..shape.filters).map(|_| FilterSpec::zeros(atoms)).collect();
        let inner = (!shape.tied).then(|| filters.clone());
        let activations = (0..shape.filters)
            .map(|_| PiecewiseActivation::zero(shape.control_points))
            .collect::<Result<_>>()?;
        Ok(Self {
            kernel_size: shape.kernel_size,
            filters,
            inner,
            activations,
            lambda_p: 0.0,
        })
    }

    #[inline]
    pub fn is_tied(&self) -> bool {
        self.inner.is_none()
    }

    pub fn realize(&self) -> Result<StageKernels> {
        let basis = dct_atoms(self.kernel_size)?;
        Ok(self.realize_with(&basis))
    }

    pub fn realize_with(&self, basis: &DctBasis) -> StageKernels {
        let outer: Vec<Kernel> = self.filters.iter().map(|f| basis.synthesize(&f.coeffs)).collect();
        let inner = match &self.inner {
            None => outer.iter().map(Kernel::rot180).collect(),
            Some(inner) => inner.iter().map(|f| basis.synthesize(&f.coeffs)).collect(),
        };
        StageKernels { outer, inner }
    }

    fn check(&self, shape: &NetworkShape) -> Result<()> {
        let atoms = shape.atoms();
        let bad = |what: &str| Err(Error::InvalidModel(what.to_string()));
        if self.kernel_size != shape.kernel_size {
            return bad("stage kernel size differs from the network shape");
        }
        if self.filters.len() != shape.filters || self.activations.len() != shape.filters {
            return bad("stage filter or activation count differs from the network shape");
        }
        if self.filters.iter().any(|f| f.coeffs.len() != atoms) {
            return bad("filter coefficient count differs from the basis size");
        }
        match (&self.inner, shape.tied) {
            (None, true) => {}
            (Some(inner), false) => {
                if inner.len() != shape.filters || inner.iter().any(|f| f.coeffs.len() != atoms) {
                    return bad("inner filter bank has the wrong shape");
                }
            }
            _ => return bad("stage tying differs from the network shape"),
        }
        if self.activations.iter().any(|a| a.control_points() != shape.control_points) {
            return bad("activation control-point count differs from the network shape");
        }
        let finite = self.lambda_p.is_finite()
            && self.filters.iter().chain(self.inner.iter().flatten()).all(|f| f.coeffs.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn write_into(&self, layout: &StageLayout, out: &mut [f64]) {
        let atoms = self.kernel_size * self.kernel_size - 1;
        for (k, f) in self.filters.iter().enumerate() {
            out[layout.outer.start + k * atoms..][..atoms].copy_from_slice(&f.coeffs);
        }
        if let (Some(range), Some(inner)) = (&layout.inner, &self.inner) {
            for (k, f) in inner.iter().enumerate() {
                out[range.start + k * atoms..][..atoms].copy_from_slice(&f.coeffs);
            }
        }
        for (k, a) in self.activations.iter().enumerate() {
            let m = a.control_points();
            out[layout.activations.start + k * m..][..m].copy_from_slice(a.values());
        }
        out[layout.lambda] = self.lambda_p;
    }

    fn read_from(&mut self, layout: &StageLayout, src: &[f64]) {
        let atoms = self.kernel_size * self.kernel_size - 1;
        for (k, f) in self.filters.iter_mut().enumerate() {
            f.coeffs.copy_from_slice(&src[layout.outer.start + k * atoms..][..atoms]);
        }
        if let (Some(range), Some(inner)) = (&layout.inner, &mut self.inner) {
            for (k, f) in inner.iter_mut().enumerate() {
                f.coeffs.copy_from_slice(&src[range.start + k * atoms..][..atoms]);
            }
        }
        for (k, a) in self.activations.iter_mut().enumerate() {
            let m = a.control_points();
            a.set_values(&src[layout.activations.start + k * m..][..m]);
        }
        self.lambda_p = src[layout.lambda];
    }
}

/// The full learnable state of an `L`-stage network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shape: NetworkShape,
    stages: Vec<StageParams>,
}

impl NetworkParams {
    pub fn new(shape: NetworkShape, stages: Vec<StageParams>) -> Result<Self> {
        shape.validate()?;
        if stages.len() != shape.stages {
            return Err(Error::InvalidModel(alloc::format!(
                "expected {} stages, found {}",
                shape.stages,
                stages.len()
            )));
        }
        for s in &stages {
            s.check(&shape)?;
        }
        Ok(Self { shape, stages })
    }

    /// Every stage at [`StageParams::initial`].
    pub fn initial(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        let basis = dct_atoms(shape.kernel_size)?;
        let stage = StageParams::initial(&shape, &basis)?;
        Self::new(shape, alloc::vec![stage; shape.stages])
    }

    /// Every stage at [`StageParams::zeros`]: the network reduces to the prior.
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        let stage = StageParams::zeros(&shape)?;
        Self::new(shape, alloc::vec![stage; shape.stages])
    }

    /// Rebuilds parameters of `shape` from a flat vector in layout order.
    pub fn from_vec(shape: NetworkShape, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        p.set_from_slice(values)?;
        Ok(p)
    }

    #[inline]
    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    #[inline]
    pub fn stages(&self) -> &[StageParams] {
        &self.stages
    }

    #[inline]
    pub fn stage(&self, l: usize) -> &StageParams {
        &self.stages[l]
    }

    #[inline]
    pub fn convention(&self) -> SignConvention {
        self.shape.convention
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.shape.param_count()
    }

    /// Range of stage `l` inside the flat vector.
    pub fn stage_range(&self, l: usize) -> Range<usize> {
        let n = self.shape.stage_param_count();
        l * n..(l + 1) * n
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let layout = self.shape.layout();
        let mut out = alloc::vec![0.0; self.param_count()];
        for (l, s) in self.stages.iter().enumerate() {
            let r = self.stage_range(l);
            s.write_into(&layout, &mut out[r]);
        }
        out
    }

    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::InvalidModel(alloc::format!(
                "expected {} parameters, found {}",
                self.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let layout = self.shape.layout();
        for l in 0..self.stages.len() {
            let r = self.stage_range(l);
            self.stages[l].read_from(&layout, &values[r]);
        }
        Ok(())
    }

    /// Copy keeping only the first `stages` stages.
    pub fn truncated(&self, stages: usize) -> Result<Self> {
        let mut shape = self.shape;
        shape.stages = stages;
        Self::new(shape, self.stages.iter().take(stages).cloned().collect())
    }

    /// Short human-readable summary of the shape.
    pub fn describe(&self) -> String {
        let s = &self.shape;
        alloc::format!(
            "L={} K={} n={} M={} {} {} ({} parameters)",
            s.stages,
            s.filters,
            s.kernel_size,
            s.control_points,
            if s.tied { "tied" } else { "untied" },
            s.convention.as_str(),
            self.param_count()
        )
    }
}

/// `D(t)` from realized kernels.
pub(crate) fn data_term(t: &ScalarField, kernels: &StageKernels, activations: &[PiecewiseActivation]) -> Result<ScalarField> {
    let (h, w) = t.shape();
    let mut out = ScalarField::zeros(h, w);
    for ((outer, inner), phi) in kernels.outer.iter().zip(&kernels.inner).zip(activations) {
        let y = conv2d_same(t, inner)?;
        let z = y.map(|v| phi.eval(v));
        out.add_scaled(&conv2d_same(&z, outer)?, 1.0);
    }
    Ok(out)
}

/// Data submodule `D(t) = sum_k outer_k (*) phi_k(inner_k (*) t)`.
pub fn data_submodule(t: &ScalarField, stage: &StageParams) -> Result<ScalarField> {
    data_term(t, &stage.realize()?, &stage.activations)
}

pub(crate) fn stage_step(
    t: &ScalarField,
    prior_map: &ScalarField,
    kernels: &StageKernels,
    stage: &StageParams,
    convention: SignConvention,
) -> Result<ScalarField> {
    t.ensure_same_shape(prior_map)?;
    let mut next = t.clone();
    next.add_scaled(&data_term(t, kernels, &stage.activations)?, -1.0);
    next.add_scaled(prior_map, convention.prior_sign() * stage.lambda_p);
    if !next.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(next)
}

/// One residual update. No clamping is applied.
pub fn stage_forward(
    t: &ScalarField,
    prior_map: &ScalarField,
    stage: &StageParams,
    convention: SignConvention,
) -> Result<ScalarField> {
    stage_step(t, prior_map, &stage.realize()?, stage, convention)
}

/// Runs every stage from `t0 = prior_map`; returns the unclamped trace
/// `[t0, t1, ..., tL]`.
pub fn propagate(prior_map: &ScalarField, params: &NetworkParams) -> Result<Vec<ScalarField>> {
    let basis = dct_atoms(params.shape.kernel_size)?;
    let mut trace = Vec::with_capacity(params.stages.len() + 1);
    trace.push(prior_map.clone());
    for stage in &params.stages {
        let kernels = stage.realize_with(&basis);
        let next = stage_step(trace.last().expect("trace starts non-empty"), prior_map, &kernels, stage, params.convention())?;
        trace.push(next);
    }
    Ok(trace)
}

/// Result of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// Final map clamped to `[epsilon, 1]`.
    pub output: ScalarField,
    /// Unclamped stage states, `L + 1` entries.
    pub trace: Vec<ScalarField>,
    pub prior: ScalarField,
    pub airlight: AtmosphericLight,
}

/// Clamps a final map to `[epsilon, 1]`.
pub fn finalize(t: &ScalarField, epsilon: f64) -> ScalarField {
    t.clamp(epsilon, 1.0)
}

/// Propagation from a precomputed prior map.
pub fn propagate_prior(prior_map: &ScalarField, params: &NetworkParams, epsilon: f64) -> Result<(ScalarField, Vec<ScalarField>)> {
    check_epsilon(epsilon)?;
    let trace = propagate(prior_map, params)?;
    let output = finalize(trace.last().expect("trace has L + 1 entries"), epsilon);
    Ok((output, trace))
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Airlight, prior map and propagation for a hazy image.
pub fn network_forward(image: &ImageRgb, params: &NetworkParams, prior: &PriorParams, epsilon: f64) -> Result<Propagation> {
    let airlight = estimate_airlight(image, prior.window)?;
    let prior_map = prior_transmission(image, &airlight, prior)?;
    let (output, trace) = propagate_prior(&prior_map, params, epsilon)?;
    Ok(Propagation {
        output,
        trace,
        prior: prior_map,
        airlight,
    })
}
