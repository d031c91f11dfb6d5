//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetrises `a` in place as `(a + aᵀ) / 2`.
pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

pub fn is_symmetric<T: Real>(a: &DMatrix<T>, tol: T) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(T::one());
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<T: Real>(a: &DMatrix<T>) -> Vec<T> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut values: Vec<T> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    values
}

pub fn lambda_max<T: Real>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a).last().copied().unwrap_or_else(T::zero)
}

pub fn lambda_min<T: Real>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a).first().copied().unwrap_or_else(T::zero)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a)
        .into_iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_matrix_function<T: Real>(a: &DMatrix<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&mapped) * v.transpose()
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    if lambda_min(a) <= T::zero() {
        return Err(Error::NotPositiveDefinite("symmetric square root"));
    }
    Ok(sym_matrix_function(a, |x| x.sqrt()))
}

/// Symmetric inverse square root of an SPD matrix.
pub fn sym_inv_sqrt<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    if lambda_min(a) <= T::zero() {
        return Err(Error::NotPositiveDefinite("symmetric inverse square root"));
    }
    Ok(sym_matrix_function(a, |x| T::one() / x.sqrt()))
}

/// Fails unless `a` is symmetric with eigenvalues `>= -tol`.
pub fn check_psd<T: Real>(what: &'static str, a: &DMatrix<T>, tol: T) -> Result<()> {
    if !is_symmetric(a, T::lit(1e-10)) {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue: f64::NAN,
        });
    }
    let min = lambda_min(a);
    if min < -tol {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(())
}

/// Block-diagonal matrix with `count` copies of `block`.
pub fn block_diag<T: Real>(block: &DMatrix<T>, count: usize) -> DMatrix<T> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

pub fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Largest singular value squared, via the symmetric eigenproblem of `aᵀa`.
pub fn spectral_norm_sq<T: Real>(a: &DMatrix<T>) -> T {
    if a.nrows() == 0 || a.ncols() == 0 {
        return T::zero();
    }
    lambda_max(&(a.transpose() * a)).max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_sqrt(&a).unwrap();
        assert_relative_eq!(&s * &s, a, epsilon = 1e-12);
        let si = sym_inv_sqrt(&a).unwrap();
        assert_relative_eq!(&si * &a * &si, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn psd_check_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(check_psd("a", &a, 1e-10).is_err());
        assert!(check_psd("a", &DMatrix::<f64>::identity(3, 3), 1e-10).is_ok());
    }

    #[test]
    fn block_diag_layout() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let d = block_diag(&b, 2);
        assert_eq!(d.shape(), (2, 4));
        assert_eq!(d[(1, 3)], 2.0);
        assert_eq!(d[(0, 3)], 0.0);
    }
}
