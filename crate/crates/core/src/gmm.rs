//! Gaussian mixture models fitted by expectation-maximization.
//!
//! Each model is the class-conditional density of PCA-reduced explanation
//! embeddings under one hypothesis. Densities are evaluated in log space
//! through cached Cholesky factors; mixture sums use log-sum-exp.
//!
//! EM is initialized from k-means++ centers (seeded ChaCha8 stream)
//! followed by one hard-assignment M-step. Every M-step adds `reg` to the
//! covariance diagonal. Iteration stops when the relative change of the
//! total log-likelihood drops to `tol` or after `max_iter` M-steps.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{log_sum_exp, LN_2PI};

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} points for {components} components in {dim} dimensions, got {found}")]
    TooFewPoints {
        needed: usize,
        found: usize,
        components: usize,
        dim: usize,
    },
    #[error("point {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("component {component} collapsed at iteration {iteration}: covariance is not positive definite even with regularization")]
    ComponentCollapsed { component: usize, iteration: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("vector has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("log-likelihood became non-finite at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },
}

/// Which class-conditional density a model represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Genuine pairs.
    H0,
    /// Impostor pairs.
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

impl CovarianceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceKind::Full => "full",
            CovarianceKind::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(CovarianceKind::Full),
            "diagonal" | "diag" => Ok(CovarianceKind::Diagonal),
            other => Err(format!("unknown covariance kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOptions {
    pub components: usize,
    pub covariance_kind: CovarianceKind,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 4,
            covariance_kind: CovarianceKind::Full,
            seed: 0,
            tol: 1e-6,
            max_iter: 200,
            reg: 1e-6,
        }
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFitReport {
    /// M-steps performed after initialization.
    pub iterations: usize,
    pub final_log_likelihood: f64,
    /// Total log-likelihood of the initial model and after every M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl EmFitReport {
    /// Largest drop between consecutive trace entries (0 if none).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_decrease() <= slack
    }
}

/// A Gaussian mixture with cached Cholesky factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GmmWire", into = "GmmWire")]
pub struct GmmModel {
    hypothesis: Hypothesis,
    covariance_kind: CovarianceKind,
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    cholesky_lower: Vec<DMatrix<f64>>,
    log_dets: Vec<f64>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.hypothesis == other.hypothesis
            && self.covariance_kind == other.covariance_kind
            && self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
    }
}

fn factor(cov: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = Cholesky::<f64, Dyn>::new(cov.clone())?;
    let l = chol.unpack();
    let mut log_det = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        log_det += d.ln();
    }
    Some((l, 2.0 * log_det))
}

impl GmmModel {
    /// Builds a model from explicit parameters, validating weights and
    /// factoring every covariance.
    pub fn new(
        hypothesis: Hypothesis,
        covariance_kind: CovarianceKind,
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self, GmmError> {
        let j = weights.len();
        if j == 0 {
            return Err(GmmError::InvalidModel("a mixture needs at least one component".into()));
        }
        if means.len() != j || covariances.len() != j {
            return Err(GmmError::InvalidModel(format!(
                "{j} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GmmError::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}, expected 1")));
        }
        let k = means[0].len();
        if k == 0 {
            return Err(GmmError::InvalidModel("zero-dimensional mixture".into()));
        }
        let mut cholesky_lower = Vec::with_capacity(j);
        let mut log_dets = Vec::with_capacity(j);
        for (c, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != k || cov.shape() != (k, k) {
                return Err(GmmError::InvalidModel(format!("component {c} has inconsistent dimensions")));
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(GmmError::InvalidModel(format!("component {c} has non-finite parameters")));
            }
            let scale = cov.amax().max(f64::MIN_POSITIVE);
            for a in 0..k {
                for b in 0..a {
                    if (cov[(a, b)] - cov[(b, a)]).abs() > 1e-12 * scale {
                        return Err(GmmError::InvalidModel(format!("covariance {c} is not symmetric")));
                    }
                    if covariance_kind == CovarianceKind::Diagonal && cov[(a, b)] != 0.0 {
                        return Err(GmmError::InvalidModel(format!(
                            "covariance {c} has off-diagonal entries but the model is diagonal"
                        )));
                    }
                }
            }
            let (l, log_det) = factor(cov).ok_or_else(|| {
                GmmError::InvalidModel(format!("covariance {c} is not positive definite"))
            })?;
            cholesky_lower.push(l);
            log_dets.push(log_det);
        }
        Ok(Self {
            hypothesis,
            covariance_kind,
            weights,
            means,
            covariances,
            cholesky_lower,
            log_dets,
        })
    }

    pub fn hypothesis(&self) -> Hypothesis {
        self.hypothesis
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        self.covariance_kind
    }

    /// Number of components `J`.
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Dimension `k` of the modeled space.
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn log_determinants(&self) -> &[f64] {
        &self.log_dets
    }

    /// Relabels the model (used when swapping roles in tests and tools).
    pub fn with_hypothesis(mut self, hypothesis: Hypothesis) -> Self {
        self.hypothesis = hypothesis;
        self
    }

    /// `log Σ_j π_j N(z | μ_j, Σ_j)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64, GmmError> {
        let k = self.dim();
        if z.len() != k {
            return Err(GmmError::DimensionMismatch {
                expected: k,
                found: z.len(),
            });
        }
        let mut terms = Vec::with_capacity(self.n_components());
        for c in 0..self.n_components() {
            let diff = DVector::from_fn(k, |i, _| z[i] - self.means[c][i]);
            let y = self.cholesky_lower[c]
                .solve_lower_triangular(&diff)
                .expect("Cholesky factor has a positive diagonal");
            let maha = y.norm_squared();
            terms.push(self.weights[c].ln() - 0.5 * (k as f64 * LN_2PI + self.log_dets[c] + maha));
        }
        Ok(log_sum_exp(&terms))
    }

    /// Weighted per-component log densities `ln π_j + ln N(x_i | θ_j)` for
    /// every row of `points` (n×k → n×J).
    fn weighted_log_probs(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = points.shape();
        let j = self.n_components();
        let mut out = DMatrix::zeros(n, j);
        for c in 0..j {
            let mut diff_t = points.transpose();
            for mut col in diff_t.column_iter_mut() {
                col -= &self.means[c];
            }
            let y = self.cholesky_lower[c]
                .solve_lower_triangular(&diff_t)
                .expect("Cholesky factor has a positive diagonal");
            let base = self.weights[c].ln() - 0.5 * (k as f64 * LN_2PI + self.log_dets[c]);
            for i in 0..n {
                out[(i, c)] = base - 0.5 * y.column(i).norm_squared();
            }
        }
        out
    }

    /// Log densities of every row of `points`.
    pub fn log_density_rows(&self, points: &DMatrix<f64>) -> Result<Vec<f64>, GmmError> {
        if points.ncols() != self.dim() {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim(),
                found: points.ncols(),
            });
        }
        let lp = self.weighted_log_probs(points);
        Ok(lp
            .row_iter()
            .map(|r| log_sum_exp(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }
}

fn validate_points(points: &DMatrix<f64>, opts: &GmmOptions) -> Result<(), GmmError> {
    if opts.components == 0 {
        return Err(GmmError::InvalidOptions("components must be at least 1".into()));
    }
    if !(opts.tol >= 0.0) || !opts.tol.is_finite() {
        return Err(GmmError::InvalidOptions(format!("tol {} must be finite and >= 0", opts.tol)));
    }
    if !(opts.reg >= 0.0) || !opts.reg.is_finite() {
        return Err(GmmError::InvalidOptions(format!("reg {} must be finite and >= 0", opts.reg)));
    }
    let (n, k) = points.shape();
    if k == 0 {
        return Err(GmmError::InvalidOptions("points have zero dimension".into()));
    }
    let needed = opts.components * (k + 1);
    if n < needed {
        return Err(GmmError::TooFewPoints {
            needed,
            found: n,
            components: opts.components,
            dim: k,
        });
    }
    for i in 0..n {
        if points.row(i).iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite { index: i });
        }
    }
    Ok(())
}

fn squared_distance(points: &DMatrix<f64>, i: usize, center: &DVector<f64>) -> f64 {
    points
        .row(i)
        .iter()
        .zip(center.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// k-means++ seeding: returns `j` row indices.
fn kmeans_pp_centers(points: &DMatrix<f64>, j: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.nrows();
    let row = |i: usize| points.row(i).transpose();
    let first = rng.random_range(0..n);
    let mut centers = vec![row(first)];
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(points, i, &centers[0])).collect();
    while centers.len() < j {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(points, i, &c));
        }
        centers.push(c);
    }
    centers
}

fn add_reg(mut cov: DMatrix<f64>, kind: CovarianceKind, reg: f64) -> DMatrix<f64> {
    if kind == CovarianceKind::Diagonal {
        let d = cov.diagonal();
        cov = DMatrix::from_diagonal(&d);
    } else {
        let t = cov.transpose();
        cov = (cov + t) * 0.5;
    }
    for i in 0..cov.nrows() {
        cov[(i, i)] += reg;
    }
    cov
}

/// Weighted mean and scatter/N of `points` under weights `w`.
fn weighted_moments(points: &DMatrix<f64>, w: &[f64], total: f64) -> (DVector<f64>, DMatrix<f64>) {
    let (n, k) = points.shape();
    let mut mean = DVector::zeros(k);
    for i in 0..n {
        if w[i] != 0.0 {
            mean.axpy(w[i], &points.row(i).transpose(), 1.0);
        }
    }
    mean /= total;
    let mut scaled = DMatrix::zeros(n, k);
    for i in 0..n {
        let s = w[i].sqrt();
        for c in 0..k {
            scaled[(i, c)] = s * (points[(i, c)] - mean[c]);
        }
    }
    let scatter = scaled.transpose() * &scaled / total;
    (mean, scatter)
}

fn initial_model(
    points: &DMatrix<f64>,
    hypothesis: Hypothesis,
    opts: &GmmOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GmmModel, GmmError> {
    let (n, k) = points.shape();
    let j = opts.components;
    let centers = kmeans_pp_centers(points, j, rng);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); j];
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = squared_distance(points, i, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        members[best].push(i);
    }

    let all = vec![1.0; n];
    let (_, global_cov) = weighted_moments(points, &all, n as f64);
    let min_members = match opts.covariance_kind {
        CovarianceKind::Full => k + 1,
        CovarianceKind::Diagonal => 2,
    };

    let mut weights = Vec::with_capacity(j);
    let mut means = Vec::with_capacity(j);
    let mut covs = Vec::with_capacity(j);
    for (c, m) in members.iter().enumerate() {
        if m.len() >= min_members {
            let mut w = vec![0.0; n];
            for &i in m {
                w[i] = 1.0;
            }
            let (mean, scatter) = weighted_moments(points, &w, m.len() as f64);
            means.push(mean);
            covs.push(add_reg(scatter, opts.covariance_kind, opts.reg));
        } else {
            means.push(centers[c].clone());
            covs.push(add_reg(global_cov.clone(), opts.covariance_kind, opts.reg));
        }
        weights.push(m.len().max(1) as f64);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    build_fitted(hypothesis, opts.covariance_kind, weights, means, covs, 0)
}

fn build_fitted(
    hypothesis: Hypothesis,
    kind: CovarianceKind,
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    iteration: usize,
) -> Result<GmmModel, GmmError> {
    for (c, cov) in covs.iter().enumerate() {
        if factor(cov).is_none() {
            return Err(GmmError::ComponentCollapsed {
                component: c,
                iteration,
            });
        }
    }
    GmmModel::new(hypothesis, kind, weights, means, covs)
}

/// E-step: total log-likelihood and responsibilities (n×J).
fn expectation(model: &GmmModel, points: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let mut lp = model.weighted_log_probs(points);
    let mut total = 0.0;
    let mut row_buf = vec![0.0; lp.ncols()];
    for i in 0..lp.nrows() {
        for (c, slot) in row_buf.iter_mut().enumerate() {
            *slot = lp[(i, c)];
        }
        let norm = log_sum_exp(&row_buf);
        total += norm;
        for c in 0..lp.ncols() {
            lp[(i, c)] = (lp[(i, c)] - norm).exp();
        }
    }
    (total, lp)
}

fn maximization(
    points: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    hypothesis: Hypothesis,
    opts: &GmmOptions,
    iteration: usize,
) -> Result<GmmModel, GmmError> {
    let j = resp.ncols();
    let counts: Vec<f64> = (0..j)
        .map(|c| resp.column(c).sum() + 10.0 * f64::EPSILON)
        .collect();
    let total: f64 = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let mut means = Vec::with_capacity(j);
    let mut covs = Vec::with_capacity(j);
    for (c, &count) in counts.iter().enumerate() {
        let w: Vec<f64> = resp.column(c).iter().copied().collect();
        let (mean, scatter) = weighted_moments(points, &w, count);
        means.push(mean);
        covs.push(add_reg(scatter, opts.covariance_kind, opts.reg));
    }
    build_fitted(hypothesis, opts.covariance_kind, weights, means, covs, iteration)
}

/// Fits a mixture to the rows of `points` (n×k).
pub fn fit_gmm(
    points: &DMatrix<f64>,
    hypothesis: Hypothesis,
    opts: &GmmOptions,
) -> Result<(GmmModel, EmFitReport), GmmError> {
    validate_points(points, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = initial_model(points, hypothesis, opts, &mut rng)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (ll, resp) = expectation(&model, points);
        if !ll.is_finite() {
            return Err(GmmError::NonFiniteLikelihood {
                iteration: iterations,
            });
        }
        if let Some(&prev) = trace.last() {
            let change: f64 = ll - prev;
            if change.abs() <= opts.tol * ll.abs() {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        model = maximization(points, &resp, hypothesis, opts, iterations)?;
    }

    let report = EmFitReport {
        iterations,
        final_log_likelihood: *trace.last().expect("at least one E-step"),
        log_likelihood_trace: trace,
        converged,
        seed: opts.seed,
    };
    Ok((model, report))
}

/// Convenience wrapper taking one slice per point.
pub fn fit_gmm_rows<R: AsRef<[f64]>>(
    rows: &[R],
    hypothesis: Hypothesis,
    opts: &GmmOptions,
) -> Result<(GmmModel, EmFitReport), GmmError> {
    let k = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != k) {
        return Err(GmmError::DimensionMismatch {
            expected: k,
            found: rows[bad].as_ref().len(),
        });
    }
    let points = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].as_ref()[j]);
    fit_gmm(&points, hypothesis, opts)
}

#[derive(Serialize, Deserialize)]
struct GmmWire {
    hypothesis: Hypothesis,
    covariance_kind: CovarianceKind,
    n_components: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major k×k per component.
    covariances: Vec<Vec<Vec<f64>>>,
}

impl From<GmmModel> for GmmWire {
    fn from(m: GmmModel) -> Self {
        GmmWire {
            hypothesis: m.hypothesis,
            covariance_kind: m.covariance_kind,
            n_components: m.n_components(),
            dim: m.dim(),
            weights: m.weights.clone(),
            means: m.means.iter().map(|v| v.iter().copied().collect()).collect(),
            covariances: m
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<GmmWire> for GmmModel {
    type Error = GmmError;

    fn try_from(w: GmmWire) -> Result<Self, GmmError> {
        if w.weights.len() != w.n_components {
            return Err(GmmError::InvalidModel(format!(
                "declared {} components but found {} weights",
                w.n_components,
                w.weights.len()
            )));
        }
        let k = w.dim;
        let mut covs = Vec::with_capacity(w.covariances.len());
        for (c, rows) in w.covariances.iter().enumerate() {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(GmmError::InvalidModel(format!("covariance {c} is not {k}x{k}")));
            }
            covs.push(DMatrix::from_fn(k, k, |i, j| rows[i][j]));
        }
        if let Some(c) = w.means.iter().position(|m| m.len() != k) {
            return Err(GmmError::InvalidModel(format!("mean {c} does not have dimension {k}")));
        }
        let means = w.means.into_iter().map(DVector::from_vec).collect();
        GmmModel::new(w.hypothesis, w.covariance_kind, w.weights, means, covs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn std_normal_2d() -> GmmModel {
        GmmModel::new(
            Hypothesis::H0,
            CovarianceKind::Full,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap()
    }

    fn two_bumps() -> GmmModel {
        GmmModel::new(
            Hypothesis::H0,
            CovarianceKind::Full,
            vec![0.5, 0.5],
            vec![DVector::from_element(1, -2.0), DVector::from_element(1, 2.0)],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap()
    }

    fn sample_points(seed: u64, n: usize, k: usize, clusters: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..clusters)
            .map(|_| (0..k).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        DMatrix::from_fn(n, k, |i, j| {
            let c = &centers[i % clusters];
            let e: f64 = StandardNormal.sample(&mut rng);
            c[j] + e
        })
    }

    #[test]
    fn standard_normal_normalizer() {
        let v = std_normal_2d().log_density(&[0.0, 0.0]).unwrap();
        assert!((v - -(2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((v - -1.837_877).abs() < 1e-6);
    }

    #[test]
    fn two_component_mixture_at_zero() {
        // 0.5 φ(-2) + 0.5 φ(2) = φ(2)
        let phi2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = two_bumps().log_density(&[0.0]).unwrap();
        assert!((v - phi2.ln()).abs() < 1e-12);
        assert!((v - -2.918_939).abs() < 1e-6);
    }

    #[test]
    fn translation_equivariance() {
        let m = two_bumps();
        let shift = 3.7;
        let shifted = GmmModel::new(
            Hypothesis::H0,
            CovarianceKind::Full,
            m.weights().to_vec(),
            m.means().iter().map(|v| v.add_scalar(shift)).collect(),
            m.covariances().to_vec(),
        )
        .unwrap();
        for z in [-3.0, 0.0, 0.4, 5.0] {
            let a = m.log_density(&[z]).unwrap();
            let b = shifted.log_density(&[z + shift]).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert_eq!(
            std_normal_2d().log_density(&[0.0]),
            Err(GmmError::DimensionMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn far_points_stay_finite() {
        let v = two_bumps().log_density(&[1e6]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn invalid_models_rejected() {
        let bad_weights = GmmModel::new(
            Hypothesis::H0,
            CovarianceKind::Full,
            vec![0.5, 0.6],
            vec![DVector::zeros(1), DVector::zeros(1)],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        );
        assert!(matches!(bad_weights, Err(GmmError::InvalidModel(_))));
        let not_pd = GmmModel::new(
            Hypothesis::H0,
            CovarianceKind::Full,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])],
        );
        assert!(matches!(not_pd, Err(GmmError::InvalidModel(_))));
    }

    #[test]
    fn single_component_is_closed_form() {
        let pts = sample_points(1, 300, 3, 2);
        let opts = GmmOptions {
            components: 1,
            ..Default::default()
        };
        let (m, rep) = fit_gmm(&pts, Hypothesis::H0, &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2);
        let n = pts.nrows() as f64;
        let mean = pts.row_mean().transpose();
        let mut cov = DMatrix::zeros(3, 3);
        for r in pts.row_iter() {
            let d = r.transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= n;
        for i in 0..3 {
            cov[(i, i)] += 1e-6;
        }
        assert!((&m.means()[0] - &mean).amax() < 1e-10);
        assert!((&m.covariances()[0] - &cov).amax() < 1e-10);
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn recovers_well_separated_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = DMatrix::from_fn(4000, 1, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            if i % 2 == 0 { -2.0 + e } else { 2.0 + e }
        });
        let opts = GmmOptions {
            components: 2,
            seed: 9,
            ..Default::default()
        };
        let (m, rep) = fit_gmm(&pts, Hypothesis::H1, &opts).unwrap();
        assert!(rep.is_monotone(1e-8));
        let mut mu: Vec<f64> = m.means().iter().map(|v| v[0]).collect();
        mu.sort_by(f64::total_cmp);
        assert!((mu[0] + 2.0).abs() < 0.1 && (mu[1] - 2.0).abs() < 0.1, "{mu:?}");
        assert_eq!(m.hypothesis(), Hypothesis::H1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let pts = sample_points(5, 400, 2, 3);
        let opts = GmmOptions {
            components: 3,
            seed: 17,
            ..Default::default()
        };
        let (a, ra) = fit_gmm(&pts, Hypothesis::H0, &opts).unwrap();
        let (b, rb) = fit_gmm(&pts, Hypothesis::H0, &opts).unwrap();
        assert_eq!(
            crate::json::to_line(&a).unwrap(),
            crate::json::to_line(&b).unwrap()
        );
        assert_eq!(ra, rb);
    }

    #[test]
    fn diagonal_kind_keeps_off_diagonals_zero() {
        let pts = sample_points(8, 500, 3, 2);
        let opts = GmmOptions {
            components: 2,
            covariance_kind: CovarianceKind::Diagonal,
            ..Default::default()
        };
        let (m, rep) = fit_gmm(&pts, Hypothesis::H0, &opts).unwrap();
        assert!(rep.is_monotone(1e-8));
        for c in m.covariances() {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert_eq!(c[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn precondition_errors() {
        let pts = sample_points(1, 9, 2, 1);
        assert!(matches!(
            fit_gmm(&pts, Hypothesis::H0, &GmmOptions::default()),
            Err(GmmError::TooFewPoints { needed: 12, found: 9, .. })
        ));
        let mut pts = sample_points(1, 40, 2, 1);
        pts[(3, 1)] = f64::NAN;
        assert_eq!(
            fit_gmm(&pts, Hypothesis::H0, &GmmOptions::default()).unwrap_err(),
            GmmError::NonFinite { index: 3 }
        );
    }

    #[test]
    fn collapsed_component_is_reported() {
        // all points identical and no regularization: covariance is zero
        let pts = DMatrix::from_element(10, 2, 1.5);
        let opts = GmmOptions {
            components: 1,
            reg: 0.0,
            ..Default::default()
        };
        assert_eq!(
            fit_gmm(&pts, Hypothesis::H0, &opts).unwrap_err(),
            GmmError::ComponentCollapsed { component: 0, iteration: 0 }
        );
    }

    #[test]
    fn serde_round_trip_preserves_density() {
        let pts = sample_points(3, 300, 2, 2);
        let (m, _) = fit_gmm(&pts, Hypothesis::H0, &GmmOptions { components: 2, ..Default::default() }).unwrap();
        let text = crate::json::to_pretty(&m).unwrap();
        let back: GmmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        for z in [[0.0, 0.0], [1.0, -3.0], [4.0, 2.0]] {
            assert_eq!(m.log_density(&z).unwrap(), back.log_density(&z).unwrap());
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn em_trace_is_monotone(seed in 0u64..10_000, k in 1usize..4, j in 1usize..4) {
            let pts = sample_points(seed, 60 * j * (k + 1), k, j + 1);
            let opts = GmmOptions { components: j, seed, ..Default::default() };
            let (_, rep) = fit_gmm(&pts, Hypothesis::H0, &opts).unwrap();
            proptest::prop_assert!(rep.is_monotone(1e-8), "max decrease {}", rep.max_decrease());
        }

        #[test]
        fn component_order_is_irrelevant(z in -6.0f64..6.0, w in 0.05f64..0.95) {
            let a = GmmModel::new(
                Hypothesis::H0, CovarianceKind::Full, vec![w, 1.0 - w],
                vec![DVector::from_element(1, -1.0), DVector::from_element(1, 2.5)],
                vec![DMatrix::from_element(1, 1, 0.7), DMatrix::from_element(1, 1, 2.0)],
            ).unwrap();
            let b = GmmModel::new(
                Hypothesis::H0, CovarianceKind::Full, vec![1.0 - w, w],
                vec![DVector::from_element(1, 2.5), DVector::from_element(1, -1.0)],
                vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 0.7)],
            ).unwrap();
            let da = a.log_density(&[z]).unwrap();
            let db = b.log_density(&[z]).unwrap();
            proptest::prop_assert!((da - db).abs() <= 1e-12 * da.abs().max(1.0));
        }
    }
}
