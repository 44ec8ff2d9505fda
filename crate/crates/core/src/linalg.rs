//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition,
//! Cholesky factorization, and solves built on them. Dimensions here are the
//! predictor count (tens, occasionally a few hundred), so O(d^3) with a good
//! constant is plenty.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

/// Eigendecomposition of a symmetric matrix: `a = v diag(values) v^T`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Array1<T>,
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Array2<T>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn min_value(&self) -> T {
        self.values[0]
    }

    pub fn max_abs_value(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Solve `a x = b` through the spectral factorization. All eigenvalues
    /// must exceed `min_pivot` in absolute value.
    pub fn solve(&self, b: &Array1<T>, min_pivot: T) -> Result<Array1<T>> {
        let d = self.values.len();
        if b.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.len(),
            });
        }
        let mut coeffs = Array1::zeros(d);
        for k in 0..d {
            if self.values[k].abs() <= min_pivot {
                return Err(Error::NotPositiveDefinite {
                    min_eig: self.values[k].to_f64_lossy(),
                });
            }
            let mut dot = T::zero();
            for i in 0..d {
                dot += self.vectors[(i, k)] * b[i];
            }
            coeffs[k] = dot / self.values[k];
        }
        let mut x = Array1::zeros(d);
        for i in 0..d {
            let mut acc = T::zero();
            for k in 0..d {
                acc += self.vectors[(i, k)] * coeffs[k];
            }
            x[i] = acc;
        }
        Ok(x)
    }
}

/// Cyclic Jacobi eigendecomposition for a symmetric matrix.
pub fn sym_eigen<T: Scalar>(a: &Array2<T>) -> SymEigen<T> {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "square matrix required");
    let mut m = a.clone();
    let mut v = Array2::eye(d);
    if d <= 1 {
        return SymEigen {
            values: m.diag().to_owned(),
            vectors: v,
        };
    }

    let eps = s::<T>(f64::EPSILON);
    let norm = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = eps * norm.max(T::one());

    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..d {
            for q in (p + 1)..d {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[(p, q)];
                if apq.abs() <= eps * tol {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (s::<T>(2.0) * apq);
                let t = if theta >= T::zero() {
                    T::one() / (theta + (theta * theta + T::one()).sqrt())
                } else {
                    -T::one() / (-theta + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;

                for k in 0..d {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - sn * mkq;
                    m[(k, q)] = sn * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - sn * mqk;
                    m[(q, k)] = sn * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .expect("eigenvalues are finite")
    });
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vectors = Array2::zeros((d, d));
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..d {
            vectors[(r, new_col)] = v[(r, old_col)];
        }
    }
    SymEigen { values, vectors }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Pivots are compared against a threshold relative to the largest diagonal
/// entry, so exactly rank-deficient inputs fail instead of producing noise
/// factors.
pub fn cholesky<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    let d = a.nrows();
    assert_eq!(d, a.ncols());
    let max_diag = (0..d).fold(T::zero(), |acc, i| acc.max(a[(i, i)].abs()));
    let pivot_floor = T::epsilon() * max_diag * s::<T>(d as f64);
    let mut l: Array2<T> = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= pivot_floor {
                    return Err(Error::SingularDesign);
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve `a x = b` given the lower Cholesky factor of `a`.
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: &Array1<T>) -> Array1<T> {
    let d = l.nrows();
    let mut y = Array1::zeros(d);
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    let mut x = Array1::zeros(d);
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in (i + 1)..d {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    let d = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::zeros((d, d));
    for j in 0..d {
        let mut e = Array1::zeros(d);
        e[j] = T::one();
        let col = cholesky_solve(&l, &e);
        for i in 0..d {
            inv[(i, j)] = col[i];
        }
    }
    // enforce exact symmetry against rounding
    for i in 0..d {
        for j in 0..i {
            let m = (inv[(i, j)] + inv[(j, i)]) / s::<T>(2.0);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    Ok(inv)
}

/// Largest entrywise absolute value.
pub fn max_abs<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// `a x` for symmetric or general square `a`.
pub fn mat_vec<T: Scalar>(a: &Array2<T>, x: &Array1<T>) -> Array1<T> {
    let d = a.nrows();
    let mut out = Array1::zeros(d);
    for i in 0..d {
        let mut acc = T::zero();
        for j in 0..a.ncols() {
            acc += a[(i, j)] * x[j];
        }
        out[i] = acc;
    }
    out
}
