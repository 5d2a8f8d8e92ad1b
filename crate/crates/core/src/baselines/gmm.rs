//! Full-covariance Gaussian mixture fitted by expectation-maximization.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pca::{data_matrix, mean_covariance};
use super::BaselineError;

pub(crate) const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Relative covariance regularization: ε = REG · trace(Σ_data) / d.
pub const COVARIANCE_REG: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// -½ (d log 2π + log det Σ)
    log_norm: f64,
}

fn factor(cov: &DMatrix<f64>) -> Option<Factor> {
    let chol = Cholesky::new(cov.clone())?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    let d = cov.nrows() as f64;
    Some(Factor { chol, log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det) })
}

impl Factor {
    fn mahalanobis_sq(&self, diff: &DVector<f64>) -> f64 {
        let mut y = diff.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y.norm_squared()
    }

    fn log_density(&self, diff: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(diff)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawGmm", into = "RawGmm")]
pub struct GaussianMixtureModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    fit_log: Vec<f64>,
    factors: Vec<Factor>,
}

impl PartialEq for GaussianMixtureModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
            && self.fit_log == other.fit_log
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    fit_log: Vec<f64>,
}

impl From<GaussianMixtureModel> for RawGmm {
    fn from(m: GaussianMixtureModel) -> Self {
        RawGmm {
            weights: m.weights,
            means: m.means.iter().map(|v| v.iter().copied().collect()).collect(),
            covariances: m
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            fit_log: m.fit_log,
        }
    }
}

impl TryFrom<RawGmm> for GaussianMixtureModel {
    type Error = BaselineError;

    fn try_from(raw: RawGmm) -> Result<Self, Self::Error> {
        let d = raw.means.first().map_or(0, Vec::len);
        let mut covariances = Vec::with_capacity(raw.covariances.len());
        for rows in raw.covariances {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(BaselineError::InvalidModel(format!("covariance is not {d}x{d}")));
            }
            covariances.push(DMatrix::from_row_iterator(d, d, rows.into_iter().flatten()));
        }
        let means = raw.means.into_iter().map(DVector::from_vec).collect();
        let mut model = GaussianMixtureModel::new(raw.weights, means, covariances)?;
        model.fit_log = raw.fit_log;
        Ok(model)
    }
}

impl GaussianMixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self, BaselineError> {
        let k = weights.len();
        if k == 0 {
            return Err(BaselineError::InvalidModel("mixture has no components".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(BaselineError::InvalidModel(format!(
                "{k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let d = means[0].len();
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != d {
                return Err(BaselineError::DimensionMismatch { expected: d, got: m.len() });
            }
            if c.nrows() != d || c.ncols() != d {
                return Err(BaselineError::InvalidModel(format!("covariance is not {d}x{d}")));
            }
        }
        let values = weights.iter().chain(means.iter().flat_map(|m| m.iter())).chain(covariances.iter().flat_map(|c| c.iter()));
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite);
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(BaselineError::InvalidModel("weights must be nonnegative and sum to 1".into()));
        }
        let mut factors = Vec::with_capacity(k);
        for (component, c) in covariances.iter().enumerate() {
            let asym = (c - c.transpose()).abs().max();
            if asym > 1e-9 * c.abs().max().max(1.0) {
                return Err(BaselineError::InvalidModel(format!("covariance {component} is not symmetric")));
            }
            factors.push(factor(c).ok_or(BaselineError::NotPositiveDefinite { component })?);
        }
        Ok(Self { weights, means, covariances, fit_log: Vec::new(), factors })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

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

    /// Total training log-likelihood before each M-step, in order.
    pub fn fit_log(&self) -> &[f64] {
        &self.fit_log
    }

    fn check(&self, x: &[f64]) -> Result<DVector<f64>, BaselineError> {
        if x.len() != self.dim() {
            return Err(BaselineError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(DVector::from_column_slice(x))
    }

    fn log_joint(&self, x: &DVector<f64>, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = if self.weights[j] > 0.0 {
                self.weights[j].ln() + self.factors[j].log_density(&(x - &self.means[j]))
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64, BaselineError> {
        let x = self.check(x)?;
        let mut joint = vec![0.0; self.n_components()];
        self.log_joint(&x, &mut joint);
        Ok(log_sum_exp(&joint))
    }

    /// Negative log-likelihood under the mixture; higher is more anomalous.
    pub fn score_nll(&self, x: &[f64]) -> Result<f64, BaselineError> {
        Ok(-self.log_likelihood(x)?)
    }

    /// Smallest Mahalanobis distance to any component.
    pub fn score_mahalanobis_min(&self, x: &[f64]) -> Result<f64, BaselineError> {
        let x = self.check(x)?;
        Ok(self
            .factors
            .iter()
            .zip(&self.means)
            .map(|(f, m)| f.mahalanobis_sq(&(&x - m)).sqrt())
            .fold(f64::INFINITY, f64::min))
    }

    pub fn mean_log_likelihood(&self, vectors: &[Vec<f64>]) -> Result<f64, BaselineError> {
        let mut total = 0.0;
        for v in vectors {
            total += self.log_likelihood(v)?;
        }
        Ok(total / vectors.len().max(1) as f64)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmFitOptions {
    pub max_iter: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, seed: 0 }
    }
}

/// Expected complete-data log-likelihood of one component's Gaussian term
/// with covariance `cov`, given responsibility mass `mass` and weighted
/// scatter `scatter` about the component mean.
fn gaussian_q(mass: f64, scatter: &DMatrix<f64>, f: &Factor) -> f64 {
    let trace = f.chol.solve(scatter).trace();
    mass * f.log_norm - 0.5 * trace
}

/// k-means++ style seeding: the first mean uniformly, each further mean
/// with probability proportional to squared distance from the chosen ones.
fn seed_means(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = x.nrows();
    let row = |i: usize| x.row(i).transpose();
    let mut means = vec![row(rng.gen_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| (row(i) - &means[0]).norm_squared()).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            d2.iter().position(|&w| {
                u -= w;
                u < 0.0
            })
            .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        means.push(row(pick));
        let last = means.last().unwrap();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min((row(i) - last).norm_squared());
        }
    }
    means
}

/// Fit a K-component mixture. Every covariance carries εI; an M-step
/// covariance update is kept only when it does not lower the expected
/// complete-data log-likelihood, which keeps the trace non-decreasing.
pub fn fit_gmm(vectors: &[Vec<f64>], k: usize, options: GmmFitOptions) -> Result<GaussianMixtureModel, BaselineError> {
    let n = vectors.len();
    if k == 0 {
        return Err(BaselineError::ComponentsOutOfRange { k, max: n });
    }
    if n < k {
        return Err(BaselineError::InsufficientData { got: n, need: k });
    }
    let x = data_matrix(vectors)?;
    let d = x.ncols();
    if d == 0 {
        return Err(BaselineError::Degenerate);
    }
    let (_, global_cov) = mean_covariance(&x);
    let scale = global_cov.trace() / d as f64;
    let eps = COVARIANCE_REG * if scale > 0.0 { scale } else { 1.0 };
    let reg = DMatrix::<f64>::identity(d, d) * eps;
    let base_cov = &global_cov + &reg;
    let base_factor = factor(&base_cov).ok_or(BaselineError::NotPositiveDefinite { component: 0 })?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut means = seed_means(&x, k, &mut rng);
    let mut covariances = vec![base_cov.clone(); k];
    let mut factors = vec![base_factor.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut fit_log = Vec::new();
    let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
    let mut resp = DMatrix::<f64>::zeros(n, k);

    for iter in 0..=options.max_iter {
        // E-step.
        let mut ll = 0.0;
        let mut joint = vec![0.0; k];
        for (i, xi) in rows.iter().enumerate() {
            for j in 0..k {
                joint[j] = if weights[j] > 0.0 {
                    weights[j].ln() + factors[j].log_density(&(xi - &means[j]))
                } else {
                    f64::NEG_INFINITY
                };
            }
            let lse = log_sum_exp(&joint);
            ll += lse;
            for j in 0..k {
                resp[(i, j)] = (joint[j] - lse).exp();
            }
        }
        let converged = fit_log.last().is_some_and(|prev: &f64| ll - prev < options.tol);
        fit_log.push(ll);
        if converged || iter == options.max_iter {
            break;
        }

        // M-step.
        for j in 0..k {
            let mass: f64 = resp.column(j).sum();
            if mass <= 1e-10 * n as f64 {
                let pick = rng.gen_range(0..n);
                tracing::warn!(component = j, point = pick, "empty mixture component reinitialized");
                means[j] = rows[pick].clone();
                covariances[j] = base_cov.clone();
                factors[j] = base_factor.clone();
                weights[j] = 1.0 / n as f64;
                continue;
            }
            weights[j] = mass / n as f64;
            let mut mean = DVector::zeros(d);
            for (i, xi) in rows.iter().enumerate() {
                mean.axpy(resp[(i, j)], xi, 1.0);
            }
            mean /= mass;
            let mut scatter = DMatrix::zeros(d, d);
            for (i, xi) in rows.iter().enumerate() {
                let diff = xi - &mean;
                scatter.ger(resp[(i, j)], &diff, &diff, 1.0);
            }
            let candidate = &scatter / mass + &reg;
            let candidate = (&candidate + candidate.transpose()) * 0.5;
            if let Some(f) = factor(&candidate) {
                if gaussian_q(mass, &scatter, &f) >= gaussian_q(mass, &scatter, &factors[j]) {
                    covariances[j] = candidate;
                    factors[j] = f;
                }
            }
            means[j] = mean;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }

    let mut model = GaussianMixtureModel::new(weights, means, covariances)?;
    model.fit_log = fit_log;
    Ok(model)
}

/// Held-out mean log-likelihood for each candidate K (skipping K larger
/// than the training set); returns the best K and every evaluated score.
pub fn select_components(
    train: &[Vec<f64>],
    heldout: &[Vec<f64>],
    candidates: &[usize],
    options: GmmFitOptions,
) -> Result<(usize, Vec<(usize, f64)>), BaselineError> {
    let mut scores = Vec::new();
    for &k in candidates {
        if k == 0 || k > train.len() {
            continue;
        }
        let model = fit_gmm(train, k, options)?;
        scores.push((k, model.mean_log_likelihood(heldout)?));
    }
    let best = scores
        .iter()
        .copied()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .ok_or(BaselineError::InsufficientData { got: train.len(), need: 1 })?;
    Ok((best.0, scores))
}
