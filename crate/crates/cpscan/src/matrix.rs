//! Small dense symmetric-matrix routines used by the covariance and
//! integration modules. Dimensions here are the scan window size (tens at
//! most), so plain O(m^3) algorithms are the right tool.

use crate::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SquareMat {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(dim: usize) -> Self {
        SquareMat { dim, data: vec![0.0; dim * dim] }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        SquareMat { dim, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Lower-triangular Cholesky factor of a symmetric positive definite
    /// matrix. Fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<SquareMat> {
        let m = self.dim;
        let mut l = SquareMat::zeros(m);
        for i in 0..m {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Domain(format!(
                            "matrix not positive definite (pivot {s:.3e} at {i})"
                        )));
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Ok(l)
    }

    /// Inverse of a symmetric positive definite matrix via its Cholesky
    /// factor.
    pub fn inverse_spd(&self) -> Result<SquareMat> {
        let m = self.dim;
        let l = self.cholesky()?;
        let mut inv = SquareMat::zeros(m);
        // Solve L L^T x = e_j column by column.
        let mut col = vec![0.0; m];
        for j in 0..m {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            // Forward substitution.
            for i in 0..m {
                let mut s = col[i];
                for k in 0..i {
                    s -= l.get(i, k) * col[k];
                }
                col[i] = s / l.get(i, i);
            }
            // Back substitution.
            for i in (0..m).rev() {
                let mut s = col[i];
                for k in (i + 1)..m {
                    s -= l.get(k, i) * col[k];
                }
                col[i] = s / l.get(i, i);
            }
            for i in 0..m {
                inv.set(i, j, col[i]);
            }
        }
        Ok(inv)
    }

    /// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
    /// rotations. Returns `(values, vectors)` with `vectors` holding
    /// eigenvectors as columns; `A = V diag(values) V^T`.
    pub fn jacobi_eigen(&self) -> (Vec<f64>, SquareMat) {
        let m = self.dim;
        let mut a = self.clone();
        let mut v = SquareMat::zeros(m);
        for i in 0..m {
            v.set(i, i, 1.0);
        }
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    off += a.get(i, j).powi(2);
                }
            }
            if off.sqrt() < 1e-14 * (1.0 + frobenius(&a)) {
                break;
            }
            for p in 0..m {
                for q in (p + 1)..m {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a.get(p, p);
                    let aqq = a.get(q, q);
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..m {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..m {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..m {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        let values = (0..m).map(|i| a.get(i, i)).collect();
        (values, v)
    }
}

fn frobenius(a: &SquareMat) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}
