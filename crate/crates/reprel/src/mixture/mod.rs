//! Gaussian and von Mises–Fisher mixtures fitted by EM, and the
//! log-likelihood (LL) reliability baseline.
//!
//! Gaussians use diagonal covariances: at embedding widths of hundreds to
//! thousands of dimensions with a few thousand reference points, full
//! covariances are ill-conditioned. vMF concentrations are estimated with the
//! Banerjee et al. closed-form approximation, guarded so an update never
//! lowers the EM objective.

mod bessel;

pub use bessel::{ln_gamma, log_bessel_i};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::baselines::{Polarity, ScoreVector};
use crate::embedding::{euclidean_sq, norm2, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Variance floor for Gaussian components.
pub const VAR_FLOOR: f64 = 1e-6;
/// Concentration ceiling for vMF components.
pub const KAPPA_MAX: f64 = 1e4;
/// Row-norm tolerance for "unit-norm" checks on vMF inputs.
const UNIT_TOL: f64 = 1e-6;

/// EM fitting options.
#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { components: 10, seed: 0, max_iter: 200, tol: 1e-6 }
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone)]
pub struct EmTrace {
    /// Total log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `(iteration, component)` pairs where an emptied component was reseeded
    /// from the farthest data point.
    pub reseeds: Vec<(usize, usize)>,
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,     // components x dim, row-major
    variances: Vec<f64>, // components x dim, row-major
}

impl GaussianMixture {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let c = weights.len();
        if c == 0 || dim == 0 {
            return Err(Error::InvalidInput("empty mixture".into()));
        }
        if means.len() != c * dim || variances.len() != c * dim {
            return Err(Error::Shape("means/variances must be components x dim".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidData("negative mixture weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!("weights sum to {total}, not 1")));
        }
        if variances.iter().any(|&v| v < VAR_FLOOR * (1.0 - 1e-12)) {
            return Err(Error::InvalidData("variance below floor".into()));
        }
        Ok(Self { dim, weights, means, variances })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.dim..(c + 1) * self.dim]
    }

    fn log_component_density(&self, c: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xv, &mu), &var) in x.iter().zip(self.mean(c)).zip(self.variance(c)) {
            let d = xv - mu;
            acc += (2.0 * std::f64::consts::PI * var).ln() + d * d / var;
        }
        -0.5 * acc
    }

    /// `log Σ_c w_c N(x; μ_c, diag σ_c²)` via log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "point dim {} != mixture dim {}",
                x.len(),
                self.dim
            )));
        }
        let logs: Vec<f64> = (0..self.num_components())
            .map(|c| self.weights[c].ln() + self.log_component_density(c, x))
            .collect();
        Ok(logsumexp(&logs))
    }
}

/// von Mises–Fisher mixture on the unit hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixture {
    dim: usize,
    weights: Vec<f64>,
    directions: Vec<f64>, // components x dim, unit rows
    concentrations: Vec<f64>,
    log_norms: Vec<f64>, // cached log C_p(κ_c)
}

impl VmfMixture {
    pub fn new(
        dim: usize,
        weights: Vec<f64>,
        directions: Vec<f64>,
        concentrations: Vec<f64>,
    ) -> Result<Self> {
        let c = weights.len();
        if c == 0 || dim < 2 {
            return Err(Error::InvalidInput("vMF mixture needs dim >= 2 and >= 1 component".into()));
        }
        if directions.len() != c * dim || concentrations.len() != c {
            return Err(Error::Shape("directions must be components x dim".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData("weights must be a simplex vector".into()));
        }
        for k in 0..c {
            let dir = &directions[k * dim..(k + 1) * dim];
            if (norm2(dir) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidData(format!("direction {k} is not unit-norm")));
            }
            if !(0.0..=KAPPA_MAX).contains(&concentrations[k]) {
                return Err(Error::InvalidData(format!(
                    "concentration {k} = {} outside [0, {KAPPA_MAX}]",
                    concentrations[k]
                )));
            }
        }
        let log_norms = concentrations
            .iter()
            .map(|&k| log_vmf_norm_const(dim, k))
            .collect();
        Ok(Self { dim, weights, directions, concentrations, log_norms })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn direction(&self, c: usize) -> &[f64] {
        &self.directions[c * self.dim..(c + 1) * self.dim]
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    /// `log Σ_c w_c C_p(κ_c) exp(κ_c μ_cᵀ x)` for unit-norm `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "point dim {} != mixture dim {}",
                x.len(),
                self.dim
            )));
        }
        if (norm2(x) - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput(format!(
                "vMF density requires unit-norm input, got norm {}",
                norm2(x)
            )));
        }
        let logs: Vec<f64> = (0..self.num_components())
            .map(|c| {
                self.weights[c].ln()
                    + self.log_norms[c]
                    + self.concentrations[c] * crate::embedding::dot(self.direction(c), x)
            })
            .collect();
        Ok(logsumexp(&logs))
    }
}

/// Either mixture family, as persisted and scored by the LL baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureModel {
    Gaussian(GaussianMixture),
    Vmf(VmfMixture),
}

impl MixtureModel {
    pub fn dim(&self) -> usize {
        match self {
            MixtureModel::Gaussian(g) => g.dim(),
            MixtureModel::Vmf(v) => v.dim(),
        }
    }
}

/// `log C_p(κ) = (p/2 − 1) log κ − (p/2) log 2π − log I_{p/2−1}(κ)`, with the
/// uniform-density limit at κ = 0.
pub fn log_vmf_norm_const(dim: usize, kappa: f64) -> f64 {
    let p = dim as f64;
    if kappa == 0.0 {
        // Uniform density on S^{p-1}: Γ(p/2) / (2 π^{p/2})
        return ln_gamma(p / 2.0) - std::f64::consts::LN_2 - (p / 2.0) * std::f64::consts::PI.ln();
    }
    (p / 2.0 - 1.0) * kappa.ln()
        - (p / 2.0) * (2.0 * std::f64::consts::PI).ln()
        - log_bessel_i(p / 2.0 - 1.0, kappa)
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}

/// k-means++-style seeding: first index uniform, the rest proportional to the
/// squared distance to the closest already-picked row.
fn kmeanspp_indices<R: Rng>(rng: &mut R, refs: &EmbeddingMatrix, c: usize) -> Vec<usize> {
    let n = refs.rows();
    let mut picked = Vec::with_capacity(c);
    picked.push(rng.random_range(0..n));
    let mut min_sq: Vec<f64> = (0..n)
        .map(|i| euclidean_sq(refs.row(i), refs.row(picked[0])))
        .collect();
    while picked.len() < c {
        let total: f64 = min_sq.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center; pick uniformly.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_sq.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        picked.push(next);
        for i in 0..n {
            let d = euclidean_sq(refs.row(i), refs.row(next));
            if d < min_sq[i] {
                min_sq[i] = d;
            }
        }
    }
    picked
}

/// Index of the row farthest (min squared distance) from all given centers.
fn farthest_row(refs: &EmbeddingMatrix, centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..refs.rows() {
        let d = centers
            .iter()
            .map(|c| euclidean_sq(refs.row(i), c))
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fits a diagonal-covariance Gaussian mixture by EM.
pub fn fit_gmm(refs: &EmbeddingMatrix, cfg: &EmConfig) -> Result<(GaussianMixture, EmTrace)> {
    let n = refs.rows();
    let d = refs.dim();
    let c = cfg.components;
    if c == 0 || n < c {
        return Err(Error::Parameter(format!(
            "need at least as many points as components: n={n}, components={c}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Global per-dimension variance (MLE) for initialization and reseeding.
    let mut global_mean = vec![0.0; d];
    for row in refs.iter_rows() {
        for (m, &x) in global_mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let mut global_var = vec![0.0; d];
    for row in refs.iter_rows() {
        for ((v, &x), &mu) in global_var.iter_mut().zip(row).zip(&global_mean) {
            *v += (x - mu) * (x - mu) / n as f64;
        }
    }
    for v in &mut global_var {
        *v = v.max(VAR_FLOOR);
    }

    let seeds = kmeanspp_indices(&mut rng, refs, c);
    let mut weights = vec![1.0 / c as f64; c];
    let mut means: Vec<f64> = seeds.iter().flat_map(|&i| refs.row(i).to_vec()).collect();
    let mut variances: Vec<f64> = (0..c).flat_map(|_| global_var.clone()).collect();

    let mut trace = EmTrace {
        log_likelihood: Vec::new(),
        converged: false,
        iterations: 0,
        reseeds: Vec::new(),
    };
    let mut resp = vec![0.0; n * c];

    for iter in 0..cfg.max_iter {
        // E-step + total log-likelihood under the current parameters.
        let model = GaussianMixture {
            dim: d,
            weights: weights.clone(),
            means: means.clone(),
            variances: variances.clone(),
        };
        let mut total_ll = 0.0;
        for (i, row) in refs.iter_rows().enumerate() {
            let logs: Vec<f64> = (0..c)
                .map(|k| weights[k].ln() + model.log_component_density(k, row))
                .collect();
            let lse = logsumexp(&logs);
            total_ll += lse;
            for k in 0..c {
                resp[i * c + k] = (logs[k] - lse).exp();
            }
        }
        trace.log_likelihood.push(total_ll);
        trace.iterations = iter + 1;
        if iter > 0 {
            let prev = trace.log_likelihood[iter - 1];
            if (total_ll - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
                trace.converged = true;
                break;
            }
        }

        // M-step.
        for k in 0..c {
            let nk: f64 = (0..n).map(|i| resp[i * c + k]).sum();
            if nk < 1e-10 {
                let centers: Vec<Vec<f64>> =
                    (0..c).map(|j| means[j * d..(j + 1) * d].to_vec()).collect();
                let far = farthest_row(refs, &centers);
                means[k * d..(k + 1) * d].copy_from_slice(refs.row(far));
                variances[k * d..(k + 1) * d].copy_from_slice(&global_var);
                weights[k] = 1.0 / n as f64;
                trace.reseeds.push((iter, k));
                continue;
            }
            weights[k] = nk / n as f64;
            let mean_k = &mut means[k * d..(k + 1) * d];
            mean_k.iter_mut().for_each(|m| *m = 0.0);
            for (i, row) in refs.iter_rows().enumerate() {
                let r = resp[i * c + k];
                for (m, &x) in mean_k.iter_mut().zip(row) {
                    *m += r * x;
                }
            }
            mean_k.iter_mut().for_each(|m| *m /= nk);
        }
        // Second pass for variances against the updated means: avoids the
        // cancellation of the E[x²] − μ² form.
        for k in 0..c {
            if trace.reseeds.iter().any(|&(it, kk)| it == iter && kk == k) {
                continue;
            }
            let nk: f64 = (0..n).map(|i| resp[i * c + k]).sum();
            let mean_k: Vec<f64> = means[k * d..(k + 1) * d].to_vec();
            let var_k = &mut variances[k * d..(k + 1) * d];
            var_k.iter_mut().for_each(|v| *v = 0.0);
            for (i, row) in refs.iter_rows().enumerate() {
                let r = resp[i * c + k];
                for ((v, &x), &mu) in var_k.iter_mut().zip(row).zip(&mean_k) {
                    let dx = x - mu;
                    *v += r * dx * dx;
                }
            }
            for v in var_k.iter_mut() {
                *v = (*v / nk).max(VAR_FLOOR);
            }
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }

    Ok((GaussianMixture { dim: d, weights, means, variances }, trace))
}

/// Banerjee et al. closed-form concentration estimate from the mean
/// resultant length.
fn banerjee_kappa(dim: usize, r_bar: f64) -> f64 {
    if r_bar >= 1.0 - 1e-9 {
        return KAPPA_MAX;
    }
    let p = dim as f64;
    (r_bar * (p - r_bar * r_bar) / (1.0 - r_bar * r_bar)).clamp(0.0, KAPPA_MAX)
}

/// Fits a von Mises–Fisher mixture by EM on unit-norm rows.
pub fn fit_vmf_mixture(refs: &EmbeddingMatrix, cfg: &EmConfig) -> Result<(VmfMixture, EmTrace)> {
    let n = refs.rows();
    let d = refs.dim();
    let c = cfg.components;
    if d < 2 {
        return Err(Error::InvalidInput("vMF requires dim >= 2".into()));
    }
    if c == 0 || n < c {
        return Err(Error::Parameter(format!(
            "need at least as many points as components: n={n}, components={c}"
        )));
    }
    for (i, row) in refs.iter_rows().enumerate() {
        if (norm2(row) - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput(format!(
                "row {i} is not unit-norm (norm {}); normalize before fitting",
                norm2(row)
            )));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let seeds = kmeanspp_indices(&mut rng, refs, c);
    let mut weights = vec![1.0 / c as f64; c];
    let mut directions: Vec<f64> = seeds.iter().flat_map(|&i| refs.row(i).to_vec()).collect();
    let mut kappas = vec![1.0; c];
    let mut log_norms: Vec<f64> = kappas.iter().map(|&k| log_vmf_norm_const(d, k)).collect();

    let mut trace = EmTrace {
        log_likelihood: Vec::new(),
        converged: false,
        iterations: 0,
        reseeds: Vec::new(),
    };
    let mut resp = vec![0.0; n * c];

    for iter in 0..cfg.max_iter {
        let mut total_ll = 0.0;
        for (i, row) in refs.iter_rows().enumerate() {
            let logs: Vec<f64> = (0..c)
                .map(|k| {
                    weights[k].ln()
                        + log_norms[k]
                        + kappas[k] * crate::embedding::dot(&directions[k * d..(k + 1) * d], row)
                })
                .collect();
            let lse = logsumexp(&logs);
            total_ll += lse;
            for k in 0..c {
                resp[i * c + k] = (logs[k] - lse).exp();
            }
        }
        trace.log_likelihood.push(total_ll);
        trace.iterations = iter + 1;
        if iter > 0 {
            let prev = trace.log_likelihood[iter - 1];
            if (total_ll - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
                trace.converged = true;
                break;
            }
        }

        for k in 0..c {
            let nk: f64 = (0..n).map(|i| resp[i * c + k]).sum();
            let mut rho = vec![0.0; d];
            for (i, row) in refs.iter_rows().enumerate() {
                let r = resp[i * c + k];
                for (acc, &x) in rho.iter_mut().zip(row) {
                    *acc += r * x;
                }
            }
            let rho_norm = norm2(&rho);
            if nk < 1e-10 {
                let centers: Vec<Vec<f64>> =
                    (0..c).map(|j| directions[j * d..(j + 1) * d].to_vec()).collect();
                let far = farthest_row(refs, &centers);
                directions[k * d..(k + 1) * d].copy_from_slice(refs.row(far));
                kappas[k] = 1.0;
                log_norms[k] = log_vmf_norm_const(d, 1.0);
                weights[k] = 1.0 / n as f64;
                trace.reseeds.push((iter, k));
                continue;
            }
            weights[k] = nk / n as f64;
            // A vanishing resultant with healthy mass means the component is
            // isotropic: keep the previous direction, the concentration goes
            // to zero anyway.
            if rho_norm > crate::embedding::EPS_ZERO {
                for (dir, &r) in directions[k * d..(k + 1) * d].iter_mut().zip(&rho) {
                    *dir = r / rho_norm;
                }
            }
            let r_bar = (rho_norm / nk).min(1.0);
            let candidate = banerjee_kappa(d, r_bar);
            // Generalized-EM guard: the closed-form estimate is approximate,
            // so only accept it when it does not lower the expected
            // complete-data objective Q(κ) = n_k log C_p(κ) + κ ‖ρ_k‖.
            let q = |kappa: f64| nk * log_vmf_norm_const(d, kappa) + kappa * rho_norm;
            if q(candidate) >= q(kappas[k]) {
                kappas[k] = candidate;
            }
            log_norms[k] = log_vmf_norm_const(d, kappas[k]);
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }

    let model = VmfMixture {
        dim: d,
        weights,
        directions,
        concentrations: kappas,
        log_norms,
    };
    Ok((model, trace))
}

/// Mixture log-density of a single point (free-function form).
pub fn gmm_log_density(model: &GaussianMixture, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

/// vMF mixture log-density of a single unit-norm point.
pub fn vmf_log_density(model: &VmfMixture, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

/// LL baseline for one test row. Higher is more reliable.
pub fn ll_score(model: &MixtureModel, test: &EmbeddingMatrix, test_row: usize) -> Result<f64> {
    match model {
        MixtureModel::Gaussian(g) => g.log_density(test.row(test_row)),
        MixtureModel::Vmf(v) => v.log_density(test.row(test_row)),
    }
}

/// LL baseline for every test row of one member.
pub fn ll_scores(model: &MixtureModel, tests: &EmbeddingMatrix) -> Result<ScoreVector> {
    let values = (0..tests.rows())
        .map(|row| ll_score(model, tests, row))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(values, Polarity::HigherIsReliable)
}
