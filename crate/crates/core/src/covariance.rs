//! Small dense covariance matrices and the Mahalanobis-type quadratic form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative ridge, as a fraction of the trace, used before inversion.
pub const RIDGE_FRACTION: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("covariance is singular even after ridge regularization")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{0} values do not form a square matrix")]
    NotSquare(usize),
    #[error("covariance matrix is not symmetric")]
    NotSymmetric,
    #[error("non-finite covariance entry")]
    NonFinite,
}

/// Symmetric `k x k` matrix stored row-major. Serializes as the flat
/// row-major value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Covariance {
    dim: usize,
    values: Vec<f64>,
}

impl Covariance {
    pub fn from_row_major(dim: usize, values: Vec<f64>) -> Result<Self, CovarianceError> {
        if values.len() != dim * dim || dim == 0 {
            return Err(CovarianceError::NotSquare(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CovarianceError::NonFinite);
        }
        for i in 0..dim {
            for j in 0..i {
                if values[i * dim + j] != values[j * dim + i] {
                    return Err(CovarianceError::NotSymmetric);
                }
            }
        }
        Ok(Self { dim, values })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self, CovarianceError> {
        let dim = entries.len();
        let mut values = vec![0.0; dim * dim];
        for (i, v) in entries.iter().enumerate() {
            values[i * dim + i] = *v;
        }
        Self::from_row_major(dim, values)
    }

    /// Sample covariance with divisor `n - 1`, exactly symmetric.
    pub fn sample(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let dim = points.first().map_or(0, Vec::len);
        assert!(n >= 2 && dim >= 1, "sample covariance needs two points");
        let mean: Vec<f64> = (0..dim)
            .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let s: f64 = points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum();
                let c = s / (n - 1) as f64;
                values[i * dim + j] = c;
                values[j * dim + i] = c;
            }
        }
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.values)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_matrix())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// True when the ridge rule would modify this matrix.
    pub fn needs_ridge(&self) -> bool {
        self.min_eigenvalue() < RIDGE_FRACTION * self.trace()
    }

    /// Adds `RIDGE_FRACTION * trace` to the diagonal when the smallest
    /// eigenvalue falls below that amount. Returns the flag alongside.
    pub fn regularized(&self) -> (Covariance, bool) {
        if !self.needs_ridge() {
            return (self.clone(), false);
        }
        let ridge = RIDGE_FRACTION * self.trace();
        let mut out = self.clone();
        for i in 0..self.dim {
            out.values[i * self.dim + i] += ridge;
        }
        (out, true)
    }

    /// Inverse of the regularized matrix.
    pub fn inverse(&self) -> Result<Covariance, CovarianceError> {
        let (reg, _) = self.regularized();
        let chol = reg.to_matrix().cholesky().ok_or(CovarianceError::Singular)?;
        let inv = chol.inverse();
        let dim = self.dim;
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                values[i * dim + j] = v;
                values[j * dim + i] = v;
            }
        }
        Covariance::from_row_major(dim, values)
    }

    /// `d' S^-1 d` for the regularized matrix, computed as `|L^-1 d|^2`.
    pub fn quadratic_form(&self, d: &[f64]) -> Result<f64, CovarianceError> {
        if d.len() != self.dim {
            return Err(CovarianceError::Dimension {
                expected: self.dim,
                found: d.len(),
            });
        }
        let (reg, _) = self.regularized();
        let chol = reg.to_matrix().cholesky().ok_or(CovarianceError::Singular)?;
        let z = chol
            .l()
            .solve_lower_triangular(&DVector::from_column_slice(d))
            .ok_or(CovarianceError::Singular)?;
        Ok(z.norm_squared())
    }
}

impl TryFrom<Vec<f64>> for Covariance {
    type Error = CovarianceError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        let dim = (values.len() as f64).sqrt().round() as usize;
        Self::from_row_major(dim, values)
    }
}

impl From<Covariance> for Vec<f64> {
    fn from(c: Covariance) -> Self {
        c.values
    }
}

/// `(point - center)' S^-1 (point - center)`.
pub fn q_statistic(center: &[f64], point: &[f64], covariance: &Covariance) -> Result<f64, CovarianceError> {
    if center.len() != point.len() {
        return Err(CovarianceError::Dimension {
            expected: center.len(),
            found: point.len(),
        });
    }
    let d: Vec<f64> = point.iter().zip(center).map(|(p, c)| p - c).collect();
    covariance.quadratic_form(&d)
}
