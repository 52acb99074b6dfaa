//! Small dense linear-algebra helpers: a symmetric eigendecomposition
//! wrapper and an unpivoted Cholesky solve for the low-dimensional systems
//! that show up in the Newton iterations and factor regressions.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors, SelfAdjointEvdParams};
use faer::{Mat, Par, Spec};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("eigendecomposition did not converge")]
    EigenFailed,
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues in
/// non-increasing order, eigenvectors as the columns of the returned
/// matrix. Runs sequentially so results do not depend on thread count.
pub fn sym_eigen_desc(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let m = Mat::from_fn(n, n, |i, j| a[[i, j]]);
    let par = Par::Seq;
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut u = Mat::<f64>::zeros(n, n);
    let mut mem = MemBuffer::new(evd::self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        par,
        Spec::<SelfAdjointEvdParams, f64>::default(),
    ));
    evd::self_adjoint_evd(
        m.as_ref(),
        s.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        Spec::<SelfAdjointEvdParams, f64>::default(),
    )
    .map_err(|_| LinalgError::EigenFailed)?;

    // faer returns eigenvalues in non-decreasing order; flip to descending.
    let eigenvalues: Vec<f64> = (0..n).map(|i| s[n - 1 - i]).collect();
    let eigenvectors = Array2::from_shape_fn((n, n), |(i, j)| u[(i, n - 1 - j)]);
    Ok((eigenvalues, eigenvectors))
}

/// Unpivoted Cholesky factorization of a symmetric positive-definite
/// matrix, kept around to solve many right-hand sides.
pub struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    /// Factor `a`. Returns `None` when a pivot is non-positive or
    /// non-finite (matrix not numerically positive definite).
    pub fn new(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(a.ncols(), n);
        let mut l = vec![0.0_f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[[i, j]];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Cholesky { l, n })
    }

    /// Solve `a x = b` in place.
    pub fn solve_into(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * b[k];
            }
            b[i] = sum / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * b[k];
            }
            b[i] = sum / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_into(&mut x);
        x
    }
}

/// One-shot solve of `a x = b` for symmetric positive-definite `a`.
pub fn chol_solve(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    Cholesky::new(a).map(|c| c.solve(b))
}

/// Maximum absolute deviation from symmetry, `max |a_ij - a_ji|`.
pub fn asymmetry(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}
