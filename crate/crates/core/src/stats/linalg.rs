//! Small dense symmetric solves for the model fits. Matrices are row-major.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    l: Vec<f64>,
    p: usize,
}

impl Cholesky {
    /// Fails (returns None) when a pivot falls below a relative tolerance —
    /// the matrix is singular to working precision.
    pub fn decompose(a: &[f64], p: usize) -> Option<Cholesky> {
        debug_assert_eq!(a.len(), p * p);
        let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0f64, f64::max).max(1e-300);
        let tol = 1e-12 * max_diag;
        let mut l = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let mut sum = a[i * p + j];
                for k in 0..j {
                    sum -= l[i * p + k] * l[j * p + k];
                }
                if i == j {
                    if sum <= tol {
                        return None;
                    }
                    l[i * p + i] = sum.sqrt();
                } else {
                    l[i * p + j] = sum / l[j * p + j];
                }
            }
        }
        Some(Cholesky { l, p })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut x = b.to_vec();
        for i in 0..p {
            for k in 0..i {
                x[i] -= self.l[i * p + k] * x[k];
            }
            x[i] /= self.l[i * p + i];
        }
        for i in (0..p).rev() {
            for k in i + 1..p {
                x[i] -= self.l[k * p + i] * x[k];
            }
            x[i] /= self.l[i * p + i];
        }
        x
    }

    /// Inverse of the factored matrix (symmetric).
    pub fn inverse(&self) -> Vec<f64> {
        let p = self.p;
        let mut inv = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for j in 0..p {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..p {
                inv[i * p + j] = col[i];
            }
        }
        // enforce exact symmetry against rounding drift
        for i in 0..p {
            for j in 0..i {
                let s = 0.5 * (inv[i * p + j] + inv[j * p + i]);
                inv[i * p + j] = s;
                inv[j * p + i] = s;
            }
        }
        inv
    }
}
