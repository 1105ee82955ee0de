//! Sparse symmetric matrices, Jacobi-preconditioned CG, and dense
//! factorization fallbacks.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Below this size SPD systems are solved by dense Cholesky.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

/// Square sparse matrix in CSR form. Built once from triplets, immutable
/// afterwards.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut sorted: Vec<_> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        for row in 0..n {
            row_ptr[row] = col_idx.len();
            while i < sorted.len() && sorted[i].0 == row {
                let (_, c, v) = sorted[i];
                if let Some(&last) = col_idx.last() {
                    if last == c && col_idx.len() > row_ptr[row] {
                        *values.last_mut().unwrap() += v;
                        i += 1;
                        continue;
                    }
                }
                col_idx.push(c);
                values.push(v);
                i += 1;
            }
        }
        row_ptr[n] = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for row in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[row] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                if self.col_idx[k] == row {
                    d[row] = self.values[k];
                }
            }
        }
        d
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        for k in self.row_ptr[row]..self.row_ptr[row + 1] {
            if self.col_idx[k] == col {
                return self.values[k];
            }
        }
        0.0
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(col, row)).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
/// Returns (solution, iterations).
pub fn pcg_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::LinearSolve("non-positive diagonal entry".into()));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for iter in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolve(format!(
                "matrix not positive definite (p'Ap = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * b_norm {
            return Ok((x, iter));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve(format!(
        "CG did not reach tolerance {rel_tol:e} in {max_iter} iterations"
    )))
}

/// SPD solve: dense Cholesky below DENSE_SOLVE_LIMIT unknowns, otherwise
/// Jacobi-PCG to relative residual 1e-12. Returns (solution, iterations);
/// iterations = 0 for the dense path.
pub fn solve_spd(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, usize)> {
    if a.n < DENSE_SOLVE_LIMIT {
        let dense = a.to_dense();
        let chol = dense
            .cholesky()
            .ok_or_else(|| Error::LinearSolve("Cholesky factorization failed".into()))?;
        let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
        Ok((x.as_slice().to_vec(), 0))
    } else {
        pcg_jacobi(a, b, 1e-12, 10 * a.n)
    }
}

/// Dense SPD check via Cholesky.
pub fn is_spd(a: &CsrMatrix) -> bool {
    a.to_dense().cholesky().is_some()
}
