//! Correlation alignment: re-color the source features so their covariance
//! matches the target's.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;

fn to_matrix(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Column means and sample covariance (n - 1 denominator).
pub fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let m = to_matrix(rows, d);
    let n = rows.len() as f64;
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n);
    let mut centered = m;
    for j in 0..d {
        let mu = mean[j];
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    let cov = centered.transpose() * &centered / (n - 1.0).max(1.0);
    (mean, cov)
}

/// `C^p` for a symmetric positive definite `C` through its eigenbasis.
fn spd_power(c: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InsufficientData(
            "covariance is not positive definite; use a positive regularization".into(),
        ));
    }
    let powered = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.powf(p)));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&powered) * eig.eigenvectors.transpose())
}

/// Linear map taking source rows onto the target's second-order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CoralTransform {
    pub source_mean: DVector<f64>,
    pub target_mean: DVector<f64>,
    /// `C_s^{-1/2} C_t^{1/2}` with both covariances regularized.
    pub matrix: DMatrix<f64>,
}

impl CoralTransform {
    pub fn fit(source: &[Vec<f64>], target: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParams(format!("CORAL regularization must be >= 0, got {lambda}")));
        }
        let d = source.first().map_or(0, Vec::len);
        if target.first().map_or(0, Vec::len) != d || source.len() < 2 || target.len() < 2 {
            return Err(Error::Schema("CORAL needs two samples of at least 2 rows with equal widths".into()));
        }
        let (ms, cs) = mean_cov(source);
        let (mt, ct) = mean_cov(target);
        if cs.iter().chain(ct.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance".into()));
        }
        let eye = DMatrix::<f64>::identity(d, d) * lambda;
        let matrix = spd_power(&(cs + &eye), -0.5)? * spd_power(&(ct + eye), 0.5)?;
        Ok(CoralTransform {
            source_mean: ms,
            target_mean: mt,
            matrix,
        })
    }

    /// `(x - mean_s) A + mean_t` for each row.
    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.source_mean.len();
        rows.iter()
            .map(|r| {
                let centered = DVector::from_fn(d, |j, _| r[j] - self.source_mean[j]);
                let out = self.matrix.transpose() * centered + &self.target_mean;
                out.iter().copied().collect()
            })
            .collect()
    }
}

pub fn coral_align(source: &[Vec<f64>], target: &[Vec<f64>], lambda: f64) -> Result<Vec<Vec<f64>>> {
    Ok(CoralTransform::fit(source, target, lambda)?.apply(source))
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
