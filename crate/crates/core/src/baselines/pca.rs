//! Principal component analysis over frame embeddings.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::BaselineError;

/// Rank-k linear subspace model. Rows of `components` are orthonormal
/// principal directions sorted by descending explained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPca", into = "RawPca")]
pub struct PcaModel {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    explained_variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPca {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variances: Vec<f64>,
}

impl From<PcaModel> for RawPca {
    fn from(m: PcaModel) -> Self {
        RawPca {
            mean: m.mean.iter().copied().collect(),
            components: m.components.row_iter().map(|r| r.iter().copied().collect()).collect(),
            explained_variances: m.explained_variances,
        }
    }
}

impl TryFrom<RawPca> for PcaModel {
    type Error = BaselineError;

    fn try_from(raw: RawPca) -> Result<Self, Self::Error> {
        let d = raw.mean.len();
        let k = raw.components.len();
        if raw.explained_variances.len() != k {
            return Err(BaselineError::InvalidModel(format!(
                "{k} components but {} explained variances",
                raw.explained_variances.len()
            )));
        }
        if let Some(row) = raw.components.iter().find(|r| r.len() != d) {
            return Err(BaselineError::DimensionMismatch { expected: d, got: row.len() });
        }
        let components = DMatrix::from_row_iterator(k, d, raw.components.into_iter().flatten());
        PcaModel::new(DVector::from_vec(raw.mean), components, raw.explained_variances)
    }
}

pub(crate) const ORTHONORMAL_TOL: f64 = 1e-8;

impl PcaModel {
    pub fn new(mean: DVector<f64>, components: DMatrix<f64>, explained_variances: Vec<f64>) -> Result<Self, BaselineError> {
        if components.ncols() != mean.len() {
            return Err(BaselineError::DimensionMismatch { expected: mean.len(), got: components.ncols() });
        }
        if mean.iter().chain(components.iter()).chain(&explained_variances).any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite);
        }
        if explained_variances.iter().any(|&v| v < 0.0) || explained_variances.windows(2).any(|w| w[0] < w[1]) {
            return Err(BaselineError::InvalidModel("explained variances must be nonnegative and descending".into()));
        }
        let gram = &components * components.transpose();
        let off = (gram - DMatrix::identity(components.nrows(), components.nrows())).abs().max();
        if components.nrows() > 0 && off > ORTHONORMAL_TOL {
            return Err(BaselineError::InvalidModel(format!("components not orthonormal (max deviation {off:e})")));
        }
        Ok(Self { mean, components, explained_variances })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variances(&self) -> &[f64] {
        &self.explained_variances
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    fn check(&self, x: &[f64]) -> Result<(), BaselineError> {
        if x.len() != self.input_dim() {
            return Err(BaselineError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>, BaselineError> {
        self.check(x)?;
        Ok(&self.components * (DVector::from_column_slice(x) - &self.mean))
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> Result<DVector<f64>, BaselineError> {
        if z.len() != self.output_dim() {
            return Err(BaselineError::DimensionMismatch { expected: self.output_dim(), got: z.len() });
        }
        Ok(&self.mean + self.components.transpose() * z)
    }

    /// Squared distance between `x` and its rank-k reconstruction.
    pub fn recon_error(&self, x: &[f64]) -> Result<f64, BaselineError> {
        let reconstructed = self.reconstruct(&self.project(x)?)?;
        Ok((DVector::from_column_slice(x) - reconstructed).norm_squared())
    }
}

/// Rows as a matrix, rejecting ragged or non-finite input.
pub(crate) fn data_matrix(vectors: &[Vec<f64>]) -> Result<DMatrix<f64>, BaselineError> {
    let d = vectors.first().map_or(0, Vec::len);
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(BaselineError::DimensionMismatch { expected: d, got: v.len() });
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    Ok(DMatrix::from_row_iterator(vectors.len(), d, vectors.iter().flatten().copied()))
}

/// Mean and population (1/n) covariance of the rows of `x`.
pub(crate) fn mean_covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n;
    (mean, cov)
}

/// Top-k principal directions of the population covariance. With this
/// normalization the mean training reconstruction error equals the sum of
/// the discarded eigenvalues.
pub fn fit_pca(vectors: &[Vec<f64>], k: usize) -> Result<PcaModel, BaselineError> {
    let n = vectors.len();
    if n < 2 {
        return Err(BaselineError::InsufficientData { got: n, need: 2 });
    }
    let x = data_matrix(vectors)?;
    let d = x.ncols();
    let max = (n - 1).min(d);
    if k == 0 || k > max {
        return Err(BaselineError::ComponentsOutOfRange { k, max });
    }
    let (mean, cov) = mean_covariance(&x);
    if cov.trace() <= 0.0 {
        return Err(BaselineError::Degenerate);
    }
    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let mut components = DMatrix::zeros(k, d);
    let mut variances = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        components.set_row(row, &eigen.eigenvectors.column(idx).transpose());
        variances.push(eigen.eigenvalues[idx].max(0.0));
    }
    PcaModel::new(mean, components, variances)
}
