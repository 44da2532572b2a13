use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

/// Cholesky factorization of a Hermitian positive definite matrix.
///
/// Returns the lower-triangular factor `L` with `A = L L^H`, or `None` if a
/// pivot is not strictly positive (the matrix is singular or indefinite).
pub(crate) fn cholesky(a: ArrayView2<'_, Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l: Array2<Complex64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]].conj();
            }
            if i == j {
                let diag = sum.re;
                if !(diag > 0.0) || !diag.is_finite() {
                    return None;
                }
                l[[i, i]] = Complex64::new(diag.sqrt(), 0.0);
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^H x = b` given the lower-triangular Cholesky factor.
pub(crate) fn cholesky_solve(
    l: &Array2<Complex64>,
    b: ArrayView1<'_, Complex64>,
) -> Array1<Complex64> {
    let n = l.nrows();
    // Forward substitution: L y = b.
    let mut y: Array1<Complex64> = Array1::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    // Back substitution: L^H x = y.
    let mut x: Array1<Complex64> = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]].conj() * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub(crate) fn solve_hermitian(
    a: ArrayView2<'_, Complex64>,
    b: ArrayView1<'_, Complex64>,
) -> Option<Array1<Complex64>> {
    let l = cholesky(a)?;
    Some(cholesky_solve(&l, b))
}

/// Hermitian inner product `a^H b`.
pub(crate) fn hermitian_dot(
    a: ArrayView1<'_, Complex64>,
    b: ArrayView1<'_, Complex64>,
) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}
