//! Dense symmetric-matrix utilities: PSD classification, whitening factors,
//! eigenvalue extrema, traces. The numerical substrate for everything else.

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Dense symmetric matrix. The lower triangle is authoritative on
/// construction and is mirrored, so `m[(i, j)] == m[(j, i)]` holds exactly
/// afterwards and products that are symmetric in exact arithmetic can be
/// re-symmetrized without drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Build from nested rows. The lower triangle wins; the upper triangle
    /// of the input is ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::ShapeError {
                what: "symmetric matrix".into(),
                expected: "dim >= 1".into(),
                got: "0 rows".into(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ShapeError {
                    what: format!("symmetric matrix row {i}"),
                    expected: format!("{dim} entries"),
                    got: format!("{}", row.len()),
                });
            }
        }
        let mut data = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                data[(i, j)] = rows[i][j];
                data[(j, i)] = rows[i][j];
            }
        }
        Ok(Self { data })
    }

    /// Mirror the lower triangle of a square matrix.
    pub fn from_lower(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::ShapeError {
                what: "symmetric matrix".into(),
                expected: "square, dim >= 1".into(),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        let dim = m.nrows();
        let mut data = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                data[(i, j)] = m[(i, j)];
                data[(j, i)] = m[(i, j)];
            }
        }
        Ok(Self { data })
    }

    /// `(m + m^T) / 2`, for products that are symmetric in exact arithmetic
    /// but carry roundoff asymmetry.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::ShapeError {
                what: "symmetric matrix".into(),
                expected: "square, dim >= 1".into(),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        let sym = (m + m.transpose()).scale(0.5);
        Self::from_lower(&sym)
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dim must be >= 1");
        Self {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dim must be >= 1");
        Self {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "dim must be >= 1");
        Self {
            data: DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.scale(factor),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.data[(i, j)]).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `v^T M v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::ShapeError {
                what: "quadratic form vector".into(),
                expected: format!("{}", self.dim()),
                got: format!("{}", v.len()),
            });
        }
        Ok((v.transpose() * &self.data * v)[(0, 0)])
    }

    /// `Tr[M N]` for symmetric `M`, `N`; reduces to the entrywise product sum.
    pub fn trace_product(&self, other: &SymMatrix) -> Result<f64> {
        if other.dim() != self.dim() {
            return Err(Error::ShapeError {
                what: "trace product".into(),
                expected: format!("{}", self.dim()),
                got: format!("{}", other.dim()),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidMatrix { what: what.into() })
        }
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.data[idx]
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = self.to_rows();
        let mut seq = serializer.serialize_seq(Some(rows.len()))?;
        for row in &rows {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

/// PSD test: `lambda_min >= -rel_tol * max(1, |lambda_max|)`. The band keeps
/// rank-structured completions sitting numerically at the PSD boundary from
/// flipping to "not PSD" on roundoff.
pub fn is_psd(m: &SymMatrix, rel_tol: f64) -> Result<bool> {
    m.ensure_finite("matrix for PSD test")?;
    let (lambda_min, lambda_max) = eigen_extrema(m)?;
    Ok(lambda_min >= -rel_tol * lambda_max.abs().max(1.0))
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_extrema(m: &SymMatrix) -> Result<(f64, f64)> {
    m.ensure_finite("matrix for eigenvalue extrema")?;
    let eigs = m.as_matrix().clone().symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eigs.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    Ok((lo, hi))
}

/// Whitening factor `W` with `W sigma W^T = I`, canonicalized as the inverse
/// of the lower-triangular Cholesky factor. Requires strict positive
/// definiteness: `lambda_min > rel_tol * lambda_max`.
pub fn whitening_factor(sigma: &SymMatrix, rel_tol: f64) -> Result<DMatrix<f64>> {
    let lower = cholesky_lower(sigma, rel_tol, "whitening input")?;
    let dim = sigma.dim();
    let inv = lower
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "whitening input".into(),
            lambda_min: 0.0,
        })?;
    Ok(inv)
}

/// Lower-triangular Cholesky factor `L` with `L L^T = sigma`, gated by the
/// same strictness condition as [`whitening_factor`].
pub(crate) fn cholesky_lower(sigma: &SymMatrix, rel_tol: f64, what: &str) -> Result<DMatrix<f64>> {
    sigma.ensure_finite(what)?;
    let (lambda_min, lambda_max) = eigen_extrema(sigma)?;
    if lambda_min <= rel_tol * lambda_max {
        return Err(Error::NotPositiveDefinite {
            what: what.into(),
            lambda_min,
        });
    }
    match nalgebra::Cholesky::new(sigma.as_matrix().clone()) {
        Some(chol) => Ok(chol.unpack()),
        None => Err(Error::NotPositiveDefinite {
            what: what.into(),
            lambda_min,
        }),
    }
}

#[cfg(test)]
pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
