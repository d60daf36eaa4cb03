//! Tiny dense symmetric-positive-definite helpers for the GMRF precision
//! windows. Matrices here are at most a few tens of rows, so a plain
//! Cholesky factorization is all that is needed.

use crate::Real;

/// Dense symmetric matrix in row-major storage.
#[derive(Debug, Clone)]
pub struct SymMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Real> SymMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![S::zero(); n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] += v;
        if i != j {
            self.data[j * self.n + i] += v;
        }
    }

    /// log-determinant via Cholesky. The GMRF windows are diagonally dominant
    /// with a strictly positive diagonal, so factorization cannot fail; a
    /// non-positive pivot signals a bug upstream.
    pub fn log_det_spd(&self) -> S {
        let n = self.n;
        if n == 0 {
            return S::zero();
        }
        let mut chol = vec![S::zero(); n * n];
        let mut log_det = S::zero();
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= chol[i * n + k] * chol[j * n + k];
                }
                if i == j {
                    assert!(sum > S::zero(), "matrix is not positive definite");
                    let pivot = sum.sqrt();
                    chol[i * n + i] = pivot;
                    log_det += S::of(2.0) * pivot.ln();
                } else {
                    chol[i * n + j] = sum / chol[j * n + j];
                }
            }
        }
        log_det
    }
}
