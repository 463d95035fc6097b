//! Sparse storage and the direct/iterative solvers the forward problems need.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from rows of `(column, value)` pairs. Columns within a row
    /// are sorted and duplicates summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows.into_iter() {
            row.sort_by_key(|(c, _)| *c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of range");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows: indptr.len() - 1, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.indptr[i]..self.indptr[i + 1]].iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `Aᵀ y`
    pub fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, yi) in y.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                rows[c].push((i, v));
            }
        }
        CsrMatrix::from_rows(self.nrows, rows)
    }
}

/// Cholesky factor of a symmetric positive-definite band matrix, stored by
/// rows: `band[i * (bw + 1) + k]` holds `L[i, i - bw + k]`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// Factor the lower band of `a` (entries above the band are ignored and
    /// must be symmetric with those below).
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let mut bw = 0;
        for i in 0..n {
            for (c, _) in a.row(i) {
                if c < i {
                    bw = bw.max(i - c);
                }
            }
        }
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (c, v) in a.row(i) {
                if c <= i {
                    band[i * w + (c + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // L[i,j] = (A[i,j] - sum_k L[i,k] L[j,k]) / L[j,j]
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!("matrix not positive definite at row {i} (pivot {s:e})")));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.band[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        y
    }
}

/// Outcome of a conjugate-gradient run.
#[derive(Clone, Debug)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients on `apply(x) = b` for a symmetric positive
/// (semi-)definite operator, starting from zero.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], rtol: f64, max_iter: usize) -> CgResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return CgResult { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iter && rr.sqrt() > rtol * b_norm {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        it += 1;
    }
    CgResult { x, iterations: it, relative_residual: rr.sqrt() / b_norm }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
