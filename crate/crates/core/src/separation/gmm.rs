//! Gaussian mixture prior on mean-removed patches and its approximate MAP
//! operator.
//!
//! A `p x p` patch is represented by its `p*p - 1` coordinates on the
//! DC-free DCT atoms. The basis is orthonormal, so these coordinates are an
//! isometric image of the mean-removed patch.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::operators::PriorOperator;
use crate::dct::{dct_atoms, DctBasis};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::math;

/// Eigenvalue floor applied to every fitted covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture of full-covariance Gaussians over patch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    patch: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `dim x dim` matrices.
    covariances: Vec<Vec<f64>>,
}

impl GmmModel {
    /// Validates shapes, that the weights form a distribution and that every
    /// covariance is symmetric positive definite.
    pub fn new(patch: usize, weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        if patch < 3 || patch.is_multiple_of(2) {
            return Err(Error::InvalidOddSize { size: patch, min: 3 });
        }
        let dim = patch * patch - 1;
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::InvalidModel("component counts disagree".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidModel("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidModel(alloc::format!("weights sum to {total}, not 1")));
        }
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != dim || c.len() != dim * dim {
                return Err(Error::InvalidModel(alloc::format!("component dimension must be {dim}")));
            }
            if m.iter().chain(c).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let mat = DMatrix::from_row_slice(dim, dim, c);
            if (&mat - mat.transpose()).amax() > 1e-9 * mat.amax().max(1.0) {
                return Err(Error::InvalidModel("covariance is not symmetric".into()));
            }
            if mat.cholesky().is_none() {
                return Err(Error::InvalidModel("covariance is not positive definite".into()));
            }
        }
        Ok(Self {
            patch,
            weights,
            means,
            covariances,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Coordinate dimension `patch^2 - 1`.
    pub fn dim(&self) -> usize {
        self.patch * self.patch - 1
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covariances
    }

    fn covariance(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariances[k])
    }

    /// Mean log-density of the given coordinate vectors.
    pub fn mean_log_likelihood(&self, coords: &[Vec<f64>]) -> Result<f64> {
        if coords.is_empty() {
            return Err(Error::Empty("coordinates"));
        }
        let comps = Gaussians::new(
            &self.weights,
            &self.means.iter().map(|m| DVector::from_column_slice(m)).collect::<Vec<_>>(),
            &(0..self.components()).map(|k| self.covariance(k)).collect::<Vec<_>>(),
        )?;
        let mut ll = 0.0;
        let mut scores = vec![0.0; self.components()];
        for c in coords {
            let x = DVector::from_column_slice(c);
            comps.log_joint(&x, &mut scores);
            ll += log_sum_exp(&scores);
        }
        Ok(ll / coords.len() as f64)
    }
}

/// Cholesky factors and log-normalizers of a set of weighted Gaussians.
struct Gaussians {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
    log_norms: Vec<f64>,
}

impl Gaussians {
    fn new(weights: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Result<Self> {
        let mut factors = Vec::with_capacity(covs.len());
        let mut log_norms = Vec::with_capacity(covs.len());
        for cov in covs {
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidModel("covariance is not positive definite".into()))?;
            let l = chol.unpack();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| math::ln(*v)).sum::<f64>();
            log_norms.push(-0.5 * (log_det + cov.nrows() as f64 * LN_2PI));
            factors.push(l);
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| if *w > 0.0 { math::ln(*w) } else { f64::NEG_INFINITY }).collect(),
            means: means.to_vec(),
            factors,
            log_norms,
        })
    }

    /// `log w_k + log N(x; m_k, S_k)` for every component.
    fn log_joint(&self, x: &DVector<f64>, out: &mut [f64]) {
        for k in 0..self.means.len() {
            let diff = x - &self.means[k];
            let z = self.factors[k].solve_lower_triangular(&diff).expect("factor has positive diagonal");
            out[k] = self.log_weights[k] + self.log_norms[k] - 0.5 * z.norm_squared();
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + math::ln(v.iter().map(|x| math::exp(x - m)).sum::<f64>())
}

/// Clamps eigenvalues of a symmetric matrix to at least `floor`.
fn floor_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let v = eig.eigenvectors;
    let out = &v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Top-left corners of `patch`-sized windows with the given stride, always
/// including the last row and column positions so every pixel is covered.
pub(crate) fn patch_positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut pos: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *pos.last().expect("at least one position") != last {
        pos.push(last);
    }
    pos
}

fn extract(field: &ScalarField, r: usize, c: usize, patch: usize, buf: &mut [f64]) {
    for i in 0..patch {
        for j in 0..patch {
            buf[i * patch + j] = field.get(r + i, c + j);
        }
    }
}

/// Coordinates of every strided patch of `field`.
pub fn patch_coordinates(field: &ScalarField, basis: &DctBasis, stride: usize) -> Result<Vec<Vec<f64>>> {
    let p = basis.size();
    let (h, w) = field.shape();
    if h < p || w < p {
        return Err(Error::SourceTooSmall { height: h, width: w, crop: p });
    }
    let mut buf = vec![0.0; p * p];
    let mut out = Vec::new();
    for &r in &patch_positions(h, p, stride) {
        for &c in &patch_positions(w, p, stride) {
            extract(field, r, c, p, &mut buf);
            out.push(basis.analyze_slice(&buf));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmFitOptions {
    pub patch: usize,
    pub components: usize,
    pub em_iters: usize,
    pub seed: u64,
    /// Patch sampling stride within each sample field.
    pub stride: usize,
    /// Upper bound on patches used; a seeded subset is drawn above it.
    pub max_patches: usize,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            patch: 5,
            components: 5,
            em_iters: 50,
            seed: 0,
            stride: 1,
            max_patches: 20_000,
        }
    }
}

/// Fitted model together with the mean log-likelihood after every EM pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn weighted_moments(data: &[DVector<f64>], resp: impl Fn(usize) -> f64, dim: usize) -> (f64, DVector<f64>, DMatrix<f64>) {
    let mut nk = 0.0;
    let mut mean = DVector::zeros(dim);
    for (i, x) in data.iter().enumerate() {
        let r = resp(i);
        nk += r;
        mean.axpy(r, x, 1.0);
    }
    if nk > 0.0 {
        mean /= nk;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (i, x) in data.iter().enumerate() {
        let r = resp(i);
        if r > 0.0 {
            let d = x - &mean;
            cov.ger(r, &d, &d, 1.0);
        }
    }
    if nk > 0.0 {
        cov /= nk;
    }
    (nk, mean, cov)
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen centre.
fn kmeans_pp(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[next]));
        }
    }
    centers
}

/// EM fit of a full-covariance mixture on mean-removed patches of `samples`.
///
/// Falls back to a single floored component when the patches carry no
/// variance at all.
pub fn fit_gmm_patches(samples: &[ScalarField], opts: &GmmFitOptions) -> Result<GmmFit> {
    if opts.components == 0 {
        return Err(Error::InvalidParameter("component count must be at least 1".into()));
    }
    let basis = dct_atoms(opts.patch)?;
    let dim = basis.len();
    let mut coords = Vec::new();
    for s in samples {
        coords.extend(patch_coordinates(s, &basis, opts.stride)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if coords.len() > opts.max_patches {
        // Partial Fisher-Yates keeps a seeded uniform subset.
        for i in 0..opts.max_patches {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(opts.max_patches);
    }
    let n = coords.len();
    if n < 10 * opts.components {
        return Err(Error::InvalidParameter(alloc::format!(
            "{n} patches available, need at least {}",
            10 * opts.components
        )));
    }
    let data: Vec<DVector<f64>> = coords.iter().map(|c| DVector::from_column_slice(c)).collect();
    let (_, global_mean, global_cov) = weighted_moments(&data, |_| 1.0, dim);
    if global_cov.trace() < 1e-12 {
        log::warn!("patches carry no variance; fitting a single floored component");
        let model = GmmModel::new(
            opts.patch,
            vec![1.0],
            vec![global_mean.as_slice().to_vec()],
            vec![DMatrix::<f64>::identity(dim, dim).scale(COVARIANCE_FLOOR).transpose().as_slice().to_vec()],
        )?;
        return Ok(GmmFit {
            model,
            log_likelihood: Vec::new(),
        });
    }
    let global_cov = floor_eigenvalues(global_cov, COVARIANCE_FLOOR);

    // Hard assignment to the seeded centres gives the starting parameters.
    let k = opts.components;
    let centers = kmeans_pp(&data, k, &mut rng);
    let labels: Vec<usize> = data
        .iter()
        .map(|x| {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, &ci) in centers.iter().enumerate() {
                let d = sq_dist(x, &data[ci]);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            best
        })
        .collect();
    let mut weights = vec![0.0; k];
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let (nk, m, cov) = weighted_moments(&data, |i| if labels[i] == c { 1.0 } else { 0.0 }, dim);
        weights[c] = nk / n as f64;
        if nk >= 2.0 {
            means.push(m);
            covs.push(floor_eigenvalues(cov, COVARIANCE_FLOOR));
        } else {
            means.push(data[centers[c]].clone());
            covs.push(global_cov.clone());
        }
    }

    let mut history = Vec::with_capacity(opts.em_iters);
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..opts.em_iters {
        let g = Gaussians::new(&weights, &means, &covs)?;
        let mut ll = 0.0;
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            g.log_joint(x, r);
            let lse = log_sum_exp(r);
            ll += lse;
            r.iter_mut().for_each(|v| *v = math::exp(*v - lse));
        }
        history.push(ll / n as f64);
        for c in 0..k {
            let (nk, m, cov) = weighted_moments(&data, |i| resp[i][c], dim);
            weights[c] = nk / n as f64;
            // A starved component keeps its previous shape.
            if nk > 1e-8 {
                means[c] = m;
                covs[c] = floor_eigenvalues(cov, COVARIANCE_FLOOR);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    let model = GmmModel::new(
        opts.patch,
        weights,
        means.iter().map(|m| m.as_slice().to_vec()).collect(),
        covs.iter().map(|c| c.transpose().as_slice().to_vec()).collect(),
    )?;
    history.push(model.mean_log_likelihood(&coords)?);
    Ok(GmmFit {
        model,
        log_likelihood: history,
    })
}

/// Approximate MAP under the patch mixture: per patch, the most responsible
/// component (evaluated with the noise-inflated covariance `S + I/mu`) gives
/// a Wiener estimate; overlapping estimates are averaged.
#[derive(Debug, Clone)]
pub struct PatchGmm {
    model: GmmModel,
    basis: DctBasis,
    stride: usize,
}

impl PatchGmm {
    pub fn new(model: GmmModel, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("patch stride must be at least 1".into()));
        }
        let basis = dct_atoms(model.patch())?;
        Ok(Self { model, basis, stride })
    }

    pub fn model(&self) -> &GmmModel {
        &self.model
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

impl PriorOperator for PatchGmm {
    fn name(&self) -> &str {
        "patch_gmm"
    }

    fn apply(&self, field: &ScalarField, mu: f64) -> Result<ScalarField> {
        operator_patch_gmm(field, &self.model, &self.basis, self.stride, mu)
    }
}

/// Free-function form of [`PatchGmm`].
pub fn operator_patch_gmm(field: &ScalarField, model: &GmmModel, basis: &DctBasis, stride: usize, mu: f64) -> Result<ScalarField> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("penalty weight must be positive and finite, got {mu}")));
    }
    let p = model.patch();
    if basis.size() != p {
        return Err(Error::InvalidModel("basis size differs from model patch size".into()));
    }
    let (h, w) = field.shape();
    if h < p || w < p {
        return Err(Error::SourceTooSmall { height: h, width: w, crop: p });
    }
    let dim = model.dim();
    let noise = 1.0 / mu;
    let means: Vec<DVector<f64>> = model.means().iter().map(|m| DVector::from_column_slice(m)).collect();
    let mut inflated = Vec::with_capacity(model.components());
    let mut wiener = Vec::with_capacity(model.components());
    for k in 0..model.components() {
        let cov = model.covariance(k);
        let s = &cov + DMatrix::<f64>::identity(dim, dim).scale(noise);
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("inflated covariance is not positive definite".into()))?;
        // W = C S^{-1} = (S^{-1} C)^T since both are symmetric.
        wiener.push(chol.solve(&cov).transpose());
        inflated.push(s);
    }
    let g = Gaussians::new(model.weights(), &means, &inflated)?;

    let mut acc = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    let mut buf = vec![0.0; p * p];
    let mut scores = vec![0.0; model.components()];
    let rows = patch_positions(h, p, stride);
    let cols = patch_positions(w, p, stride);
    for &r in &rows {
        for &c in &cols {
            extract(field, r, c, p, &mut buf);
            let dc = buf.iter().sum::<f64>() / (p * p) as f64;
            let x = DVector::from_vec(basis.analyze_slice(&buf));
            g.log_joint(&x, &mut scores);
            let mut best = 0;
            for (k, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = k;
                }
            }
            let est = &means[best] + &wiener[best] * (&x - &means[best]);
            let patch = basis.synthesize(est.as_slice());
            for i in 0..p {
                for j in 0..p {
                    let idx = (r + i) * w + c + j;
                    acc[idx] += dc + patch.get(i, j);
                    count[idx] += 1;
                }
            }
        }
    }
    let out = acc.iter().zip(&count).map(|(a, n)| a / *n as f64).collect();
    ScalarField::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn isotropic(patch: usize, var: f64) -> GmmModel {
        let d = patch * patch - 1;
        let cov = DMatrix::<f64>::identity(d, d).scale(var);
        GmmModel::new(patch, vec![1.0], vec![vec![0.0; d]], vec![cov.as_slice().to_vec()]).unwrap()
    }

    fn random_field(seed: u64, h: usize, w: usize) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn positions_cover_the_edge() {
        assert_eq!(patch_positions(10, 5, 1), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(patch_positions(10, 5, 5), vec![0, 5]);
        assert_eq!(patch_positions(11, 5, 5), vec![0, 5, 6]);
        assert_eq!(patch_positions(5, 5, 3), vec![0]);
    }

    #[test]
    fn isotropic_component_scales_tiles_exactly() {
        let (var, mu) = (0.02, 10.0);
        let model = isotropic(5, var);
        let f = random_field(1, 10, 15);
        let op = PatchGmm::new(model, 5).unwrap();
        let out = op.apply(&f, mu).unwrap();
        let s = var / (var + 1.0 / mu);
        for tr in 0..2 {
            for tc in 0..3 {
                let mut dc = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        dc += f.get(5 * tr + i, 5 * tc + j);
                    }
                }
                dc /= 25.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let (r, c) = (5 * tr + i, 5 * tc + j);
                        let expect = dc + s * (f.get(r, c) - dc);
                        assert!((out.get(r, c) - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn isotropic_component_with_overlap_matches_closed_form() {
        let (var, mu) = (0.05, 3.0);
        let s = var / (var + 1.0 / mu);
        let f = random_field(2, 9, 8);
        let out = PatchGmm::new(isotropic(3, var), 1).unwrap().apply(&f, mu).unwrap();
        // Each pixel averages dc + s (f - dc) over its covering windows.
        for r in 0..9usize {
            for c in 0..8usize {
                let mut sum = 0.0;
                let mut n = 0.0;
                for pr in r.saturating_sub(2)..=r.min(6) {
                    for pc in c.saturating_sub(2)..=c.min(5) {
                        let mut dc = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                dc += f.get(pr + i, pc + j);
                            }
                        }
                        dc /= 9.0;
                        sum += dc + s * (f.get(r, c) - dc);
                        n += 1.0;
                    }
                }
                assert!((out.get(r, c) - sum / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_mu_returns_input() {
        let f = random_field(3, 12, 12);
        let out = PatchGmm::new(isotropic(5, 0.01), 1).unwrap().apply(&f, 1e10).unwrap();
        for (a, b) in out.as_slice().iter().zip(f.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Gauss-Jordan inverse, independent of the Cholesky path.
    fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            let d = a[c][c];
            a[c].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    let pivot_row = a[c].clone();
                    a[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        a.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn det(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        let mut a = m.to_vec();
        let mut d = 1.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if piv != c {
                a.swap(c, piv);
                d = -d;
            }
            d *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        d
    }

    #[test]
    fn striped_patches_follow_per_patch_oracle() {
        let p = 3;
        let d = 8;
        let basis = dct_atoms(p).unwrap();
        // Component 1 concentrates its variance on vertical stripes.
        let stripe = basis.analyze_slice(&[1.0, -2.0, 1.0, 1.0, -2.0, 1.0, 1.0, -2.0, 1.0]);
        let norm: f64 = stripe.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = stripe.iter().map(|v| v / norm).collect();
        let mut c1 = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c1[i * d + j] = 0.5 * u[i] * u[j] + if i == j { 1e-3 } else { 0.0 };
            }
        }
        let mut c0 = vec![0.0; d * d];
        for i in 0..d {
            c0[i * d + i] = 0.01;
        }
        let model = GmmModel::new(p, vec![0.6, 0.4], vec![vec![0.0; d], vec![0.0; d]], vec![c0.clone(), c1.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = ScalarField::from_fn(9, 12, |_, j| 0.5 + if j % 3 == 1 { -0.3 } else { 0.15 } + rng.random_range(-0.05..0.05));
        let mu = 20.0;
        let out = PatchGmm::new(model, p).unwrap().apply(&field, mu).unwrap();

        let covs = [c0, c1];
        let weights = [0.6, 0.4];
        let mut stripe_energy_in = 0.0;
        let mut stripe_energy_out = 0.0;
        let mut other_in = 0.0;
        let mut other_out = 0.0;
        for r in (0..9).step_by(3) {
            for c in (0..12).step_by(3) {
                let vals: Vec<f64> = (0..9).map(|k| field.get(r + k / 3, c + k % 3)).collect();
                let dc = vals.iter().sum::<f64>() / 9.0;
                let x = basis.analyze_slice(&vals);
                let mut best = (f64::NEG_INFINITY, 0);
                let mut wieners = Vec::new();
                for k in 0..2 {
                    let cm: Vec<Vec<f64>> = (0..d).map(|i| covs[k][i * d..(i + 1) * d].to_vec()).collect();
                    let s: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| cm[i][j] + if i == j { 1.0 / mu } else { 0.0 }).collect()).collect();
                    let si = invert(&s);
                    let quad: f64 = (0..d).map(|i| (0..d).map(|j| x[i] * si[i][j] * x[j]).sum::<f64>()).sum();
                    let score = f64::ln(weights[k]) - 0.5 * (quad + det(&s).ln() + d as f64 * (2.0 * core::f64::consts::PI).ln());
                    if score > best.0 {
                        best = (score, k);
                    }
                    let wm: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| (0..d).map(|l| cm[i][l] * si[l][j]).sum()).collect()).collect();
                    wieners.push(wm);
                }
                let wm = &wieners[best.1];
                let est: Vec<f64> = (0..d).map(|i| (0..d).map(|j| wm[i][j] * x[j]).sum()).collect();
                let rec = basis.synthesize(&est);
                for k in 0..9 {
                    let (i, j) = (k / 3, k % 3);
                    assert!((out.get(r + i, c + j) - (dc + rec.get(i, j))).abs() < 1e-10);
                }
                let y = basis.analyze_slice(&(0..9).map(|k| out.get(r + k / 3, c + k % 3)).collect::<Vec<_>>());
                let along_in: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
                let along_out: f64 = y.iter().zip(&u).map(|(a, b)| a * b).sum();
                stripe_energy_in += along_in * along_in;
                stripe_energy_out += along_out * along_out;
                other_in += x.iter().map(|v| v * v).sum::<f64>() - along_in * along_in;
                other_out += y.iter().map(|v| v * v).sum::<f64>() - along_out * along_out;
            }
        }
        // Along the stripe atom (an eigenvector of the stripe covariance,
        // eigenvalue 0.501) the gain is 0.501 / (0.501 + 1/mu); every other
        // direction shrinks far harder.
        let gain = 0.501 / (0.501 + 1.0 / mu);
        assert!((stripe_energy_out / stripe_energy_in - gain * gain).abs() < 1e-9);
        assert!(other_out < 0.05 * other_in, "{other_out} vs {other_in}");
    }

    #[test]
    fn single_gaussian_is_recovered() {
        let p = 3;
        let d = 8;
        let basis = dct_atoms(p).unwrap();
        // Decaying spectrum in a random rotation.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let q = a.qr().q();
        let spectrum = DVector::from_fn(d, |i, _| 0.02 / ((i + 1) * (i + 1)) as f64);
        let sigma = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
        let root = &q * DMatrix::from_diagonal(&spectrum.map(f64::sqrt));
        let samples: Vec<ScalarField> = (0..500)
            .map(|_| {
                let z: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let c = &root * z;
                let k = basis.synthesize(c.as_slice());
                let dc = rng.random_range(0.2..0.8);
                ScalarField::new(p, p, k.taps().iter().map(|v| v + dc).collect()).unwrap()
            })
            .collect();
        let opts = GmmFitOptions {
            patch: p,
            components: 1,
            em_iters: 5,
            ..GmmFitOptions::default()
        };
        let fit = fit_gmm_patches(&samples, &opts).unwrap();
        let m = DVector::from_column_slice(&fit.model.means()[0]);
        let s = DMatrix::from_row_slice(d, d, &fit.model.covariances()[0]);
        assert!(m.norm() < 0.1 * spectrum[0].sqrt(), "mean {}", m.norm());
        let rel = (&s - &sigma).norm() / sigma.norm();
        assert!(rel < 0.1, "covariance error {rel}");

        // One component is the sample mean and covariance exactly.
        let coords: Vec<Vec<f64>> = samples.iter().map(|f| basis.analyze_slice(f.as_slice())).collect();
        let n = coords.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| coords.iter().map(|c| c[i]).sum::<f64>() / n).collect();
        for i in 0..d {
            assert!((mean[i] - m[i]).abs() < 1e-12);
            for j in 0..d {
                let cij = coords.iter().map(|c| (c[i] - mean[i]) * (c[j] - mean[j])).sum::<f64>() / n;
                assert!((cij - s[(i, j)]).abs() < 1e-6 + 1e-9);
            }
        }
    }

    #[test]
    fn em_log_likelihood_never_drops() {
        let samples: Vec<ScalarField> = (0..6).map(|s| random_field(20 + s, 14, 14)).collect();
        let opts = GmmFitOptions {
            patch: 3,
            components: 3,
            em_iters: 25,
            ..GmmFitOptions::default()
        };
        let fit = fit_gmm_patches(&samples, &opts).unwrap();
        assert_eq!(fit.log_likelihood.len(), 26);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let samples: Vec<ScalarField> = (0..3).map(|s| random_field(30 + s, 12, 12)).collect();
        let opts = GmmFitOptions {
            patch: 3,
            components: 2,
            em_iters: 8,
            seed: 9,
            ..GmmFitOptions::default()
        };
        let a = fit_gmm_patches(&samples, &opts).unwrap();
        let b = fit_gmm_patches(&samples, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_patches_fall_back_to_one_component() {
        let samples = vec![ScalarField::filled(10, 10, 0.3); 2];
        let opts = GmmFitOptions {
            patch: 3,
            components: 3,
            ..GmmFitOptions::default()
        };
        let fit = fit_gmm_patches(&samples, &opts).unwrap();
        assert_eq!(fit.model.components(), 1);
    }

    #[test]
    fn too_few_patches_is_an_error() {
        let samples = vec![random_field(1, 4, 4)];
        let opts = GmmFitOptions {
            patch: 3,
            components: 2,
            ..GmmFitOptions::default()
        };
        assert!(fit_gmm_patches(&samples, &opts).is_err());
    }

    #[test]
    fn invalid_models_are_rejected() {
        let d = 8;
        let eye: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        assert!(GmmModel::new(3, vec![], vec![], vec![]).is_err());
        assert!(GmmModel::new(3, vec![0.5], vec![vec![0.0; d]], vec![eye.clone()]).is_err());
        assert!(GmmModel::new(3, vec![1.0], vec![vec![0.0; d]], vec![vec![0.0; d * d]]).is_err());
        assert!(GmmModel::new(4, vec![1.0], vec![vec![0.0; 15]], vec![vec![0.0; 225]]).is_err());
        assert!(GmmModel::new(3, vec![1.0], vec![vec![0.0; d]], vec![eye]).is_ok());
    }
}
