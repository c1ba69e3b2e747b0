//! Small dense linear-algebra helpers shared by the solvers and simulators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Mismatch between the dimension an operation expected and the one it got.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dimension mismatch in {what}: expected {expected}, found {found}")]
pub struct DimensionMismatch {
    pub what: &'static str,
    pub expected: usize,
    pub found: usize,
}

impl DimensionMismatch {
    pub fn check(what: &'static str, expected: usize, found: usize) -> Result<(), Self> {
        if expected == found {
            Ok(())
        } else {
            Err(Self {
                what,
                expected,
                found,
            })
        }
    }
}

/// Relative pivot threshold used when deciding positive definiteness.
pub const PD_PIVOT_REL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry (the entrywise infinity norm).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Smallest and largest-magnitude eigenvalue of a symmetric matrix.
pub fn symmetric_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    (min, max_abs)
}

/// PSD test with tolerance `1e-9 * (1 + max |eigenvalue|)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let (min, max_abs) = symmetric_eig_bounds(m);
    min >= -1e-9 * (1.0 + max_abs)
}

/// Cholesky factor of a symmetric matrix, accepted only if every pivot
/// `L_ii^2` exceeds `PD_PIVOT_REL * |trace|`.
pub fn spd_factor(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.trace().abs().max(f64::MIN_POSITIVE);
    let chol = Cholesky::new(symmetrize(m))?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|i| {
        let pivot = l[(i, i)] * l[(i, i)];
        pivot.is_finite() && pivot > PD_PIVOT_REL * scale
    });
    ok.then_some(chol)
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    spd_factor(m).is_some()
}

/// Symmetric PSD square root; eigenvalues below `1e-9 * (1 + max|λ|)` are clipped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let eps = 1e-9 * (1.0 + max_abs);
    let roots = eig
        .eigenvalues
        .map(|l| if l > eps { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Numerical rank using singular values above `rel_tol * σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Spectral radius of a general square matrix via its complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Square factor `L` with `L Lᵀ = cov`. Lower-triangular Cholesky when the
/// covariance is positive definite, eigendecomposition otherwise.
pub fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(cov);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        let l = chol.l();
        if l.iter().all(|v| v.is_finite()) {
            return l;
        }
    }
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Horizontal concatenation `[left right]`.
pub fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

/// Block diagonal `blkdiag(a, b)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * b).trace()
}

/// Serde adapters storing matrices as row-major nested arrays.
pub mod serde_matrix {
    use nalgebra::{DMatrix, DVector};
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".to_string());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod seq {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            all.iter()
                .map(|rows| from_rows(rows).map_err(D::Error::custom))
                .collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DMatrix<f64>>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                Some(rows) => from_rows(&rows).map(Some).map_err(D::Error::custom),
                None => Ok(None),
            }
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_factor_rejects_zero_and_indefinite() {
        assert!(spd_factor(&DMatrix::zeros(2, 2)).is_none());
        assert!(spd_factor(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
        assert!(spd_factor(&DMatrix::from_row_slice(2, 2, &[6.0, 1.0, 1.0, 6.0])).is_some());
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m);
        assert!(max_abs(&(&r * &r - &m)) < 1e-12);
    }

    #[test]
    fn factor_handles_singular_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = covariance_factor(&cov);
        assert!(max_abs(&(&l * l.transpose() - &cov)) < 1e-12);
        assert_eq!(covariance_factor(&DMatrix::zeros(1, 1))[(0, 0)], 0.0);
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot) - 1.0).abs() < 1e-12);
    }
}
