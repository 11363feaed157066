//! Small dense symmetric-positive-definite helpers.
//!
//! The matrices handled here are tiny (Gaussian-process kernels of at most a
//! few hundred points, Newton systems with a handful of coefficients), so a
//! plain Cholesky factorisation is all that is needed. The factor supports
//! one-row extension, which the surrogate model uses to stay exactly
//! consistent with a batch refit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails when a pivot is not strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput("cholesky: matrix not square".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Solver(format!(
                        "cholesky: non-positive pivot {s:.3e} at index {i}"
                    )));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Extend a Cholesky factor by one row.
///
/// Given `l` with `L Lᵀ = K`, a cross-covariance column `k` and the new
/// diagonal entry `k_diag`, returns the factor of the `(n+1)×(n+1)` matrix
/// `[[K, k], [kᵀ, k_diag]]`.
pub fn cholesky_extend(l: &Array2<f64>, k: ArrayView1<f64>, k_diag: f64) -> Result<Array2<f64>> {
    let n = l.nrows();
    if k.len() != n {
        return Err(Error::InvalidInput("cholesky_extend: length mismatch".into()));
    }
    let row = forward_sub(l.view(), k);
    let pivot = k_diag - row.dot(&row);
    if pivot <= 0.0 || !pivot.is_finite() {
        return Err(Error::Solver(format!(
            "cholesky_extend: non-positive pivot {pivot:.3e}"
        )));
    }
    let mut out = Array2::<f64>::zeros((n + 1, n + 1));
    out.slice_mut(ndarray::s![..n, ..n]).assign(l);
    for j in 0..n {
        out[[n, j]] = row[j];
    }
    out[[n, n]] = pivot.sqrt();
    Ok(out)
}

/// Solve `L x = b` with `L` lower-triangular.
pub fn forward_sub(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[[i, j]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `Lᵀ x = b` with `L` lower-triangular.
pub fn back_sub(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[[j, i]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `(L Lᵀ) x = b` given the Cholesky factor.
pub fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    back_sub(l, forward_sub(l, b).view())
}

/// Solve the SPD system `A x = b`, adding escalating jitter to the diagonal
/// when the bare factorisation fails (up to `max_jitter` times the mean
/// diagonal entry).
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>, max_jitter: f64) -> Result<Array1<f64>> {
    match cholesky(a) {
        Ok(l) => Ok(cholesky_solve(l.view(), b)),
        Err(_) => {
            let n = a.nrows();
            let scale = a.diag().iter().map(|d| d.abs()).sum::<f64>().max(1e-300) / n as f64;
            let mut jitter = 1e-12;
            while jitter <= max_jitter {
                let mut aj = a.to_owned();
                for i in 0..n {
                    aj[[i, i]] += jitter * scale;
                }
                if let Ok(l) = cholesky(aj.view()) {
                    return Ok(cholesky_solve(l.view(), b));
                }
                jitter *= 100.0;
            }
            Err(Error::Solver("solve_spd: matrix not positive definite".into()))
        }
    }
}

/// `log |K|` from a Cholesky factor of `K`.
pub fn log_det_from_cholesky(l: ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn factor_roundtrip() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_matches_direct() {
        let a = array![[4.0, 2.0], [2.0, 5.0]];
        let b = array![1.0, 2.0];
        let x = solve_spd(a.view(), b.view(), 1e-6).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn extend_matches_full_factor() {
        let a = array![
            [4.0, 2.0, 0.6, 0.1],
            [2.0, 5.0, 1.0, 0.2],
            [0.6, 1.0, 3.0, 0.3],
            [0.1, 0.2, 0.3, 2.0]
        ];
        let l3 = cholesky(a.slice(ndarray::s![..3, ..3])).unwrap();
        let l4 = cholesky_extend(&l3, a.slice(ndarray::s![3, ..3]), a[[3, 3]]).unwrap();
        let full = cholesky(a.view()).unwrap();
        for (x, y) in l4.iter().zip(full.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_pd_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }
}
