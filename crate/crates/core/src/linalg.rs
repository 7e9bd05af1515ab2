//! Small dense linear algebra on row-major `f64` slices.
//!
//! Matrices here are at most a few dozen rows, so everything is written
//! directly instead of going through a BLAS.

use crate::error::{Error, Result};

/// Dense row-major matrix, used for reporting covariance blocks.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn determinant(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        determinant(&self.data, self.rows)
    }
}

/// Convergence threshold on the off-diagonal Frobenius norm, relative to the
/// Frobenius norm of the input.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
///
/// `a` is overwritten (it ends up numerically diagonal). Sweeps stop when the
/// off-diagonal norm falls below [`JACOBI_TOL`] times the input norm.
pub fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1 && scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(a, n) <= JACOBI_TOL * scale {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs())).unwrap();
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let d = m[col * n + col];
        det *= d;
        for i in col + 1..n {
            let f = m[i * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[i * n + k] -= f * m[col * n + k];
                }
            }
        }
    }
    det
}

/// Solves `a x = b` for a small square system (LU, partial pivoting).
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs())).unwrap();
        if m[piv * n + col] == 0.0 {
            return Err(Error::Singular("linear system has a zero pivot".into()));
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        let d = m[col * n + col];
        for i in col + 1..n {
            let f = m[i * n + col] / d;
            for k in col..n {
                m[i * n + k] -= f * m[col * n + k];
            }
            x[i] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= m[i * n + k] * x[k];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Lower-triangular-up-to-permutation factor `l` (row-major n×n) with
/// `l lᵀ = a` for a symmetric positive semidefinite `a`.
///
/// Pivoted Cholesky; diagonal remainders in `[-clip·max_diag, clip·max_diag]`
/// are treated as zero (rank deficiency), anything more negative is an error.
pub fn psd_factor(a: &[f64], n: usize, clip: f64) -> Result<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
    let floor = clip * max_diag.max(f64::MIN_POSITIVE);
    let mut work = a.to_vec();
    let mut l = vec![0.0; n * n];
    let mut done = vec![false; n];
    for _ in 0..n {
        let (piv, dmax) =
            (0..n).filter(|&i| !done[i]).map(|i| (i, work[i * n + i])).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        if dmax < -floor {
            return Err(Error::NotPsd(format!("pivot {dmax:e} below -{floor:e}")));
        }
        done[piv] = true;
        if dmax <= floor {
            // remaining block is numerically zero
            let rest_ok = (0..n).filter(|&i| !done[i]).all(|i| work[i * n + i] >= -floor);
            if !rest_ok {
                return Err(Error::NotPsd("negative remainder after rank deficiency".into()));
            }
            break;
        }
        let d = dmax.sqrt();
        let col: Vec<f64> = (0..n).map(|i| if done[i] && i != piv { 0.0 } else { work[i * n + piv] / d }).collect();
        // column `piv` of l holds this rank-one update
        for i in 0..n {
            l[i * n + piv] = col[i];
        }
        for i in 0..n {
            for j in 0..n {
                work[i * n + j] -= col[i] * col[j];
            }
        }
    }
    Ok(l)
}

/// y = l z for a row-major n×n `l`.
#[inline]
pub fn mat_vec(l: &[f64], z: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..(i + 1) * n];
        out[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
    }
}
