//! Truncated SVD of the weight Jacobian `J = ∂m/∂w`.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedInput;
use crate::error::{invalid, Error, Result};
use crate::neural_field::Mlp;

/// How the decomposition is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SvdMode {
    /// Full dense SVD.
    Exact,
    /// Symmetric eigendecomposition of the Gram matrix on the smaller side.
    /// Deterministic and much cheaper for wide Jacobians; singular values
    /// below `sqrt(ε)·λ₁` lose relative accuracy.
    Gram,
    /// Halko-Martinsson-Tropp range finder.
    Randomized { oversampling: usize, power_iterations: usize, seed: u64 },
}

impl SvdMode {
    pub fn randomized(seed: u64) -> Self {
        SvdMode::Randomized { oversampling: 10, power_iterations: 2, seed }
    }
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    /// Left vectors as columns (n_rows × k).
    pub u: DMatrix<f64>,
    /// Right vectors as columns (n_cols × k), when requested.
    pub v: Option<DMatrix<f64>>,
    pub mode: SvdMode,
}

impl SvdResult {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// `λ_i / λ_j` with one-based indices.
    pub fn decay_ratio(&self, i: usize, j: usize) -> Option<f64> {
        let a = *self.singular_values.get(i.checked_sub(1)?)?;
        let b = *self.singular_values.get(j.checked_sub(1)?)?;
        Some(a / b)
    }

    /// `max |UᵀU − I|`
    pub fn orthonormality_error(&self) -> f64 {
        gram_deviation(&self.u)
    }
}

fn gram_deviation(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// A linear operator given by its products.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn matvec(&self, v: &[f64]) -> Vec<f64>;
    fn rmatvec(&self, u: &[f64]) -> Vec<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(v)).as_slice().to_vec()
    }
    fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        (self.tr_mul(&DVector::from_column_slice(u))).as_slice().to_vec()
    }
}

impl LinearOperator for crate::neural_field::JacobianOperator<'_> {
    fn nrows(&self) -> usize {
        crate::neural_field::JacobianOperator::nrows(self)
    }
    fn ncols(&self) -> usize {
        crate::neural_field::JacobianOperator::ncols(self)
    }
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        crate::neural_field::JacobianOperator::matvec(self, v)
    }
    fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        crate::neural_field::JacobianOperator::rmatvec(self, u)
    }
}

fn check_k(k: usize, m: usize, n: usize) -> Result<()> {
    if k == 0 || k > m.min(n) {
        return Err(invalid(format!("k = {k} must lie in 1..={} for a {m}x{n} matrix", m.min(n))));
    }
    Ok(())
}

/// Top-`k` singular triplets of a dense matrix.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize, mode: SvdMode, keep_v: bool) -> Result<SvdResult> {
    let (m, n) = a.shape();
    check_k(k, m, n)?;
    let (s, u, v) = match mode {
        SvdMode::Exact => {
            let svd = a.clone().svd(true, keep_v);
            let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
            let s = svd.singular_values;
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
            order.truncate(k);
            let sv: Vec<f64> = order.iter().map(|&i| s[i]).collect();
            let uk = DMatrix::from_fn(m, k, |r, c| u[(r, order[c])]);
            let vk = svd.v_t.map(|vt| DMatrix::from_fn(n, k, |r, c| vt[(order[c], r)]));
            (sv, uk, vk)
        }
        SvdMode::Gram => gram_svd(a, k, keep_v)?,
        SvdMode::Randomized { .. } => return randomized_svd(a, k, mode, keep_v),
    };
    Ok(finish(s, u, v, mode))
}

fn gram_svd(a: &DMatrix<f64>, k: usize, keep_v: bool) -> Result<(Vec<f64>, DMatrix<f64>, Option<DMatrix<f64>>)> {
    let (m, n) = a.shape();
    let wide = m <= n;
    let g = if wide { a * a.transpose() } else { a.transpose() * a };
    let side_dim = g.nrows();
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    order.truncate(k);
    let s: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let side = DMatrix::from_fn(side_dim, k, |r, c| eig.eigenvectors[(r, order[c])]);
    // the other side follows from A v = λ u (or Aᵀ u = λ v)
    let other = |x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut y = if wide { a.transpose() * x } else { a * x };
        for (c, sc) in s.iter().enumerate() {
            if *sc <= 0.0 {
                return Err(Error::Numerical("zero singular value inside the requested rank".into()));
            }
            y.column_mut(c).scale_mut(1.0 / sc);
        }
        Ok(y)
    };
    if wide {
        let v = if keep_v { Some(other(&side)?) } else { None };
        Ok((s, side, v))
    } else {
        let u = other(&side)?;
        Ok((s, u, if keep_v { Some(side) } else { None }))
    }
}

fn qr_q(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

fn columns_apply(op: &dyn LinearOperator, x: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
    let out_rows = if transpose { op.ncols() } else { op.nrows() };
    let mut y = DMatrix::zeros(out_rows, x.ncols());
    for c in 0..x.ncols() {
        let col: Vec<f64> = x.column(c).iter().copied().collect();
        let r = if transpose { op.rmatvec(&col) } else { op.matvec(&col) };
        y.column_mut(c).copy_from_slice(&r);
    }
    y
}

/// Randomized truncated SVD from matrix-vector products only.
pub fn randomized_svd(op: &dyn LinearOperator, k: usize, mode: SvdMode, keep_v: bool) -> Result<SvdResult> {
    let (m, n) = (op.nrows(), op.ncols());
    check_k(k, m, n)?;
    let SvdMode::Randomized { oversampling, power_iterations, seed } = mode else {
        return Err(invalid("randomized_svd needs SvdMode::Randomized"));
    };
    let l = (k + oversampling).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = qr_q(columns_apply(op, &omega, false));
    for it in 0..power_iterations {
        let w = qr_q(columns_apply(op, &q, true));
        q = qr_q(columns_apply(op, &w, false));
        debug!("randomized SVD: power iteration {} of {power_iterations}", it + 1);
    }
    // B = Qᵀ A, formed as (Aᵀ Q)ᵀ
    let b = columns_apply(op, &q, true).transpose();
    let svd = b.svd(true, keep_v);
    let ub = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    order.truncate(k);
    let sv: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let ubk = DMatrix::from_fn(ub.nrows(), k, |r, c| ub[(r, order[c])]);
    let u = q * ubk;
    let v = svd.v_t.map(|vt| DMatrix::from_fn(n, k, |r, c| vt[(order[c], r)]));
    Ok(finish(sv, u, v, mode))
}

/// Flip each pair so the largest-magnitude entry of the U column is positive.
fn finish(s: Vec<f64>, mut u: DMatrix<f64>, mut v: Option<DMatrix<f64>>, mode: SvdMode) -> SvdResult {
    for c in 0..u.ncols() {
        let mut best = 0.0f64;
        for r in 0..u.nrows() {
            if u[(r, c)].abs() > best.abs() {
                best = u[(r, c)];
            }
        }
        if best < 0.0 {
            u.column_mut(c).neg_mut();
            if let Some(v) = v.as_mut() {
                v.column_mut(c).neg_mut();
            }
        }
    }
    SvdResult { singular_values: s, u, v, mode }
}

/// SVD of `∂m/∂w` for a network evaluated on `z`. Dense modes build the
/// Jacobian explicitly and fail if it would exceed `budget_bytes`.
pub fn analyze_trained_network(
    mlp: &Mlp,
    z: &EncodedInput,
    k: usize,
    mode: SvdMode,
    budget_bytes: usize,
) -> Result<SvdResult> {
    match mode {
        SvdMode::Randomized { .. } => {
            let op = mlp.jacobian_operator(z)?;
            randomized_svd(&op, k, mode, false)
        }
        _ => {
            let j = mlp.weight_jacobian(z, budget_bytes)?;
            truncated_svd(&j, k, mode, false)
        }
    }
}

/// Column `c` of U as a grid in core ordering.
pub fn u_column(result: &SvdResult, c: usize) -> Vec<f64> {
    result.u.column(c).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
    }

    /// `U diag(s) Vᵀ` with random orthonormal factors.
    fn with_spectrum(m: usize, n: usize, s: &[f64], seed: u64) -> DMatrix<f64> {
        let u = random(m, s.len(), seed).qr().q();
        let v = random(n, s.len(), seed + 1).qr().q();
        &u * DMatrix::from_diagonal(&DVector::from_column_slice(s)) * v.transpose()
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        for mode in [SvdMode::Exact, SvdMode::Gram, SvdMode::randomized(1)] {
            let r = truncated_svd(&a, 2, mode, true).unwrap();
            assert_relative_eq!(r.singular_values[0], 3.0, max_relative = 1e-12);
            assert_relative_eq!(r.singular_values[1], 2.0, max_relative = 1e-12);
            assert_relative_eq!(r.u[(0, 0)], 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.u[(1, 1)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one() {
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]);
        let a = &u * v.transpose();
        let r = truncated_svd(&a, 2, SvdMode::Exact, false).unwrap();
        assert_relative_eq!(r.singular_values[0], 15.0, max_relative = 1e-12);
        assert!(r.singular_values[1] < 1e-12);
    }

    #[test]
    fn k_out_of_range() {
        let a = random(4, 6, 0);
        assert!(truncated_svd(&a, 5, SvdMode::Exact, false).is_err());
        assert!(truncated_svd(&a, 0, SvdMode::Gram, false).is_err());
        assert!(randomized_svd(&a, 7, SvdMode::randomized(0), false).is_err());
    }

    #[test]
    fn modes_agree_on_decaying_spectrum() {
        let s: Vec<f64> = (0..40).map(|i| 0.8f64.powi(i)).collect();
        let a = with_spectrum(60, 90, &s, 5);
        let exact = truncated_svd(&a, 10, SvdMode::Exact, true).unwrap();
        let gram = truncated_svd(&a, 10, SvdMode::Gram, true).unwrap();
        let rand = truncated_svd(&a, 10, SvdMode::randomized(9), true).unwrap();
        for i in 0..10 {
            assert_relative_eq!(exact.singular_values[i], s[i], max_relative = 1e-10);
            assert_relative_eq!(gram.singular_values[i], s[i], max_relative = 1e-8);
            assert_relative_eq!(rand.singular_values[i], s[i], max_relative = 1e-3);
        }
        // same sign convention, same vectors
        for r in [&gram, &rand] {
            for c in 0..5 {
                let d = (r.u.column(c) - exact.u.column(c)).amax();
                assert!(d < 1e-3, "column {c} differs by {d}");
            }
        }
        for r in [&exact, &gram, &rand] {
            assert!(r.orthonormality_error() < 1e-6);
            assert!(gram_deviation(r.v.as_ref().unwrap()) < 1e-6);
        }
    }

    #[test]
    fn randomized_is_seed_deterministic() {
        let a = random(30, 50, 3);
        let r1 = truncated_svd(&a, 5, SvdMode::randomized(4), false).unwrap();
        let r2 = truncated_svd(&a, 5, SvdMode::randomized(4), false).unwrap();
        assert_eq!(r1.singular_values, r2.singular_values);
        assert_eq!(r1.u, r2.u);
    }

    #[test]
    fn reconstruction_within_tail_energy() {
        let a = random(20, 30, 11);
        let full = truncated_svd(&a, 20, SvdMode::Exact, true).unwrap();
        let k = 6;
        let r = truncated_svd(&a, k, SvdMode::Exact, true).unwrap();
        let approx = &r.u * DMatrix::from_diagonal(&DVector::from_column_slice(&r.singular_values)) * r.v.unwrap().transpose();
        let err = (&a - approx).norm() / a.norm();
        let tail: f64 = full.singular_values[k..].iter().map(|x| x * x).sum::<f64>().sqrt() / a.norm();
        assert!(err <= tail * (1.0 + 1e-10));
    }

    #[test]
    fn sign_convention() {
        let a = random(15, 12, 21);
        let r = truncated_svd(&a, 4, SvdMode::Exact, false).unwrap();
        for c in 0..4 {
            let col = r.u.column(c);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }
}
