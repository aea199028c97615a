//! Symmetric eigen-decomposition and the handful of spectral helpers used
//! throughout the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// (column `k` of `vectors` pairs with `values[k]`).
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigen-decomposition of `m` (symmetrized first).
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEig> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence);
    }
    let s = symmetrize(m);
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000).ok_or(Error::NonConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

pub fn lambda_max(m: &DMatrix<f64>) -> Result<f64> {
    let e = sym_eig(m)?;
    Ok(e.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn lambda_min(m: &DMatrix<f64>) -> Result<f64> {
    let e = sym_eig(m)?;
    Ok(e.values.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = sym_eig(m)?;
    let scale = e.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if e.values.iter().any(|&v| v < -1e-12 * scale) {
        return Err(Error::Validation("square root of an indefinite matrix".into()));
    }
    let d = DMatrix::from_diagonal(&e.values.map(|v| v.max(0.0).sqrt()));
    Ok(symmetrize(&(&e.vectors * d * e.vectors.transpose())))
}

/// Positive definiteness by Cholesky.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalBreakdown("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_ok(m: &DMatrix<f64>) {
        let e = sym_eig(m).unwrap();
        let norm = spectral_norm(m).max(1.0);
        for k in 0..m.nrows() {
            let v = e.vectors.column(k);
            let r = m * v - v * e.values[k];
            assert!(r.norm() <= 1e-9 * norm, "residual {}", r.norm());
        }
        for k in 1..m.nrows() {
            assert!(e.values[k - 1] <= e.values[k]);
        }
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
        let e = sym_eig(&m).unwrap();
        // trace 3, det 7/4 -> (3 -+ sqrt(2)) / 2
        let disc = (3.0f64 * 3.0 - 4.0 * 1.75).sqrt();
        assert!((e.values[0] - (3.0 - disc) / 2.0).abs() < 1e-14);
        assert!((e.values[1] - (3.0 + disc) / 2.0).abs() < 1e-14);
        assert!((disc - 2f64.sqrt()).abs() < 1e-15);
        residual_ok(&m);
    }

    #[test]
    fn diagonal_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 10.0]));
        let e = sym_eig(&m).unwrap();
        assert_eq!(e.values.as_slice(), &[10.0, 100.0]);
        residual_ok(&m);
    }

    #[test]
    fn random_symmetric_residuals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..9 {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0));
            residual_ok(&symmetrize(&a));
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrt_psd(&m).unwrap();
        assert!((&r * &r - &m).norm() < 1e-12);
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(sym_eig(&m), Err(Error::NonConvergence)));
    }
}
