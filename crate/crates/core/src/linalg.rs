//! Dense symmetric linear algebra: cyclic Jacobi eigendecomposition and the
//! PSD matrix square root built on it.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is indefinite (eigenvalue {min_eigenvalue:e})")]
    IndefiniteBeyondTolerance { min_eigenvalue: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const NEGATIVE_EIGENVALUE_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(LinalgError::NotSquare { rows: n, cols: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_dim(other)?;
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_dim(other)?;
        Ok(Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_dim(other)?;
        Ok(Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    fn check_dim(&self, other: &Matrix) -> Result<(), LinalgError> {
        if self.n != other.n {
            return Err(LinalgError::DimensionMismatch { left: self.n, right: other.n });
        }
        Ok(())
    }

    /// Errors unless symmetric within `SYMMETRY_TOLERANCE`, relative to the
    /// largest entry (absolute below magnitude 1).
    pub fn check_symmetric(&self) -> Result<(), LinalgError> {
        let scale = self.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_TOLERANCE * scale || !asym.is_finite() {
            return Err(LinalgError::NotSymmetric { max_asymmetry: asym });
        }
        Ok(())
    }
}

/// `S = Q diag(values) Q^T` with eigenvectors in the columns of `Q`;
/// eigenvalues sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Matrix {
        reconstruct_with(&self.vectors, &self.values)
    }
}

/// `Q diag(d) Q^T`, symmetrized.
fn reconstruct_with(q: &Matrix, d: &[f64]) -> Matrix {
    let n = q.dim();
    let mut out = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..n).map(|k| q.get(i, k) * d[k] * q.get(j, k)).sum();
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    s.check_symmetric()?;
    let n = s.dim();
    let mut a = s.symmetrized();
    let mut v = Matrix::identity(n);
    let norm = a.frobenius();
    let off = |a: &Matrix| -> f64 {
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += a.get(i, j) * a.get(i, j);
            }
        }
        (2.0 * sum).sqrt()
    };

    let mut converged = n < 2 || norm == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
        }
        sweep += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a.get(p, p), a.get(q, q));
                // negligible against both diagonal entries: drop it
                if sweep > 3
                    && (100.0 * apq).abs() <= f64::EPSILON * app.abs()
                    && (100.0 * apq).abs() <= f64::EPSILON * aqq.abs()
                {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
        converged = off(&a) <= 1e-15 * norm;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, |r, c| v.get(r, order[c]));
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues of a PSD matrix with small negatives clamped to 0.
fn psd_eigen(s: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    let mut e = symmetric_eigen(s)?;
    let scale = e.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in &mut e.values {
        if *v < -NEGATIVE_EIGENVALUE_TOLERANCE * scale {
            return Err(LinalgError::IndefiniteBeyondTolerance { min_eigenvalue: *v });
        }
        *v = v.max(0.0);
    }
    Ok(e)
}

/// Symmetric PSD square root `R` with `R R = S`.
pub fn sqrt_psd(s: &Matrix) -> Result<Matrix, LinalgError> {
    let e = psd_eigen(s)?;
    let roots: Vec<f64> = e.values.iter().map(|v| v.sqrt()).collect();
    Ok(reconstruct_with(&e.vectors, &roots))
}

/// `Tr(S^{1/2})` from the eigenvalues alone.
pub fn trace_sqrt_psd(s: &Matrix) -> Result<f64, LinalgError> {
    Ok(psd_eigen(s)?.values.iter().map(|v| v.sqrt()).sum())
}
