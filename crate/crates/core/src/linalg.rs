//! Linear algebra backends: dense Cholesky (with incremental growth and
//! deletion), envelope Cholesky under reverse Cuthill–McKee ordering, and
//! Jacobi-preconditioned conjugate gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::operator::{CsrMatrix, MatrixFreeBilaplacian};
use crate::scalar::Real;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Anything that can compute `y = A x` for a symmetric positive definite `A`.
pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        self.mul_vec_into(x, y)
    }
}

impl<T: Real> LinearOperator<T> for MatrixFreeBilaplacian<'_> {
    fn dim(&self) -> usize {
        self.free_len()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        self.apply_into(x, y)
    }
}

/// Lower-triangular Cholesky factor of a dense SPD matrix, stored by rows.
/// Supports appending a row/column and deleting an arbitrary index.
#[derive(Clone, Debug, Default)]
pub struct DenseCholesky<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> DenseCholesky<T> {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    /// Factors a dense row-major `n × n` matrix.
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut chol = Self { rows: Vec::with_capacity(n) };
        for i in 0..n {
            chol.push(&a[i * n..i * n + i], a[i * n + i])?;
        }
        Ok(chol)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Solves `L w = b` in place.
    pub fn forward_solve(&self, b: &mut [T]) {
        for i in 0..self.rows.len() {
            let row = &self.rows[i];
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = w` in place.
    pub fn backward_solve(&self, b: &mut [T]) {
        for i in (0..self.rows.len()).rev() {
            b[i] = b[i] / self.rows[i][i];
            let bi = b[i];
            for (k, bk) in b.iter_mut().enumerate().take(i) {
                *bk -= self.rows[i][k] * bi;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        self.backward_solve(&mut x);
        x
    }

    /// Schur complement `a − cᵀ A⁻¹ c` of a prospective new row without appending it,
    /// together with `L⁻¹ c`.
    pub fn schur_complement(&self, cross: &[T], diag: T) -> (T, Vec<T>) {
        let mut w = cross.to_vec();
        self.forward_solve(&mut w);
        (diag - dot(&w, &w), w)
    }

    /// Appends a row/column with off-diagonal entries `cross` and diagonal `diag`.
    /// Returns the new pivot squared (the Schur complement).
    pub fn push(&mut self, cross: &[T], diag: T) -> Result<T> {
        let (pivot_sq, mut w) = self.schur_complement(cross, diag);
        if !(pivot_sq > T::zero()) {
            return Err(Error::NotPositiveDefinite { pivot: self.rows.len(), value: pivot_sq.to_f64_lossy() });
        }
        w.push(pivot_sq.sqrt());
        self.rows.push(w);
        Ok(pivot_sq)
    }

    /// Deletes row/column `k`, repairing the trailing block with a rank-one update.
    pub fn remove(&mut self, k: usize) {
        self.rows.remove(k);
        let n = self.rows.len();
        // column k of the remaining rows below k
        let mut x: Vec<T> = (k..n).map(|i| self.rows[i].remove(k)).collect();
        for j in 0..x.len() {
            let gj = k + j;
            let ljj = self.rows[gj][gj];
            let r = ljj.hypot(x[j]);
            let c = r / ljj;
            let s = x[j] / ljj;
            self.rows[gj][gj] = r;
            for i in j + 1..x.len() {
                let gi = k + i;
                let lij = (self.rows[gi][gj] + s * x[i]) / c;
                x[i] = c * x[i] - s * lij;
                self.rows[gi][gj] = lij;
            }
        }
    }

    /// `log det A = 2 Σ log L_ii`
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        self.rows.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<T>() * two
    }

    /// Reconstructs `A = L Lᵀ` (testing aid).
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.rows.len();
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.rows[i][..=j], &self.rows[j][..=j]);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }
}

/// Reverse Cuthill–McKee ordering of the adjacency graph of a symmetric CSR matrix.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee<T: Real>(a: &CsrMatrix<T>) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).expect("unvisited node");
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            nbrs.clear();
            nbrs.extend(a.row(i).map(|(j, _)| j).filter(|&j| !visited[j]));
            nbrs.sort_by_key(|&j| (degree[j], j));
            for &j in &nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels<T: Real>(a: &CsrMatrix<T>, start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; a.nrows()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for (j, _) in a.row(i) {
            if level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            }
        }
    }
    level
}

fn pseudo_peripheral<T: Real>(a: &CsrMatrix<T>, seed: usize, degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(a, node);
        let far = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if far <= ecc {
            break;
        }
        ecc = far;
        node = (0..a.nrows()).filter(|&i| level[i] == far).min_by_key(|&i| degree[i]).unwrap_or(node);
    }
    node
}

/// Envelope (skyline) Cholesky factor of a sparse SPD matrix under an RCM ordering.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky<T> {
    perm: Vec<usize>,
    inverse: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<T>,
}

/// Storage and flop estimates for an envelope factorization.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeProfile {
    pub entries: usize,
    pub flops: f64,
}

impl<T: Real> EnvelopeCholesky<T> {
    fn envelope(a: &CsrMatrix<T>, perm: &[usize], inverse: &[usize]) -> Vec<usize> {
        (0..a.nrows()).map(|i| a.row(perm[i]).map(|(j, _)| inverse[j]).filter(|&j| j <= i).min().unwrap_or(i)).collect()
    }

    /// Envelope size of the RCM-ordered matrix, without factoring.
    pub fn profile(a: &CsrMatrix<T>) -> (Vec<usize>, EnvelopeProfile) {
        let perm = reverse_cuthill_mckee(a);
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let first = Self::envelope(a, &perm, &inverse);
        let entries = first.iter().enumerate().map(|(i, &f)| i - f + 1).sum();
        let flops = first.iter().enumerate().map(|(i, &f)| ((i - f) as f64).powi(2) / 2.0).sum();
        (perm, EnvelopeProfile { entries, flops })
    }

    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        let (perm, _) = Self::profile(a);
        Self::factor_with(a, perm)
    }

    pub fn factor_with(a: &CsrMatrix<T>, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let first = Self::envelope(a, &perm, &inverse);
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i] + 1);
        }
        let mut data = vec![T::zero(); start[n]];
        for i in 0..n {
            for (j_old, v) in a.row(perm[i]) {
                let j = inverse[j_old];
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let (head, tail) = data.split_at_mut(start[i]);
                let row_j = &head[start[j]..start[j + 1]];
                let row_i = &mut tail[..start[i + 1] - start[i]];
                let s = dot(&row_i[lo - fi..j - fi], &row_j[lo - fj..j - fj]);
                row_i[j - fi] = (row_i[j - fi] - s) / row_j[j - fj];
            }
            let row_i = &mut data[start[i]..start[i + 1]];
            let s = dot(&row_i[..i - fi], &row_i[..i - fi]);
            let pivot = row_i[i - fi] - s;
            if !(pivot > T::zero()) {
                return Err(Error::NotPositiveDefinite { pivot: perm[i], value: pivot.to_f64_lossy() });
            }
            row_i[i - fi] = pivot.sqrt();
        }
        Ok(Self { perm, inverse, first, start, data })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.len();
        let mut y: Vec<T> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let s = dot(&row[..i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] = y[i] / row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (i, v) in y.into_iter().enumerate() {
            x[self.perm[i]] = v;
        }
        x
    }

    /// `x = Pᵀ L⁻ᵀ z`. For white noise `z` this has covariance `A⁻¹`.
    pub fn color(&self, z: &[T]) -> Vec<T> {
        let n = self.len();
        let mut y = z.to_vec();
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] = y[i] / row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (i, v) in y.into_iter().enumerate() {
            x[self.perm[i]] = v;
        }
        x
    }

    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.len()).map(|i| self.data[self.start[i] + i - self.first[i]].ln()).sum::<T>() * two
    }

    pub fn position(&self, original: usize) -> usize {
        self.inverse[original]
    }
}

/// Outcome of a conjugate gradient solve.
#[derive(Clone, Debug)]
pub struct CgOutcome<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients, stopping at `‖b − Ax‖ ≤ tol · ‖b‖`
/// measured on the true residual.
pub fn conjugate_gradient<T: Real, A: LinearOperator<T> + ?Sized>(
    op: &A,
    b: &[T],
    diagonal: &[T],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome<T>> {
    let n = op.dim();
    let b_norm = dot(b, b).sqrt().to_f64_lossy();
    let mut x = vec![T::zero(); n];
    if b_norm == 0.0 {
        return Ok(CgOutcome { solution: x, iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<T> = diagonal.iter().map(|&d| T::one() / d).collect();
    let mut r = b.to_vec();
    let mut ap = vec![T::zero(); n];
    let mut iterations = 0;
    let mut relative = 1.0;
    // restart loop: re-seed from the true residual so the stopping test is honest
    while iterations < max_iter {
        let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&a, &b)| a * b).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) {
                return Err(Error::NotPositiveDefinite { pivot: iterations, value: pap.to_f64_lossy() });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            relative = dot(&r, &r).sqrt().to_f64_lossy() / b_norm;
            if relative <= tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        op.apply(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        relative = dot(&r, &r).sqrt().to_f64_lossy() / b_norm;
        if relative <= tol {
            return Ok(CgOutcome { solution: x, iterations, relative_residual: relative });
        }
    }
    Err(Error::NoConvergence { iterations, residual: relative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball, box_sites};
    use crate::operator::RestrictedBilaplacian;

    fn spd(n: usize) -> Vec<f64> {
        // A = BᵀB + n I with a deterministic B
        let b: Vec<f64> = (0..n * n).map(|k| ((k * 7919 % 23) as f64 - 11.0) / 7.0).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn dense_factor_solve_and_reconstruct() {
        let n = 9;
        let a = spd(n);
        let ch = DenseCholesky::factor(&a, n).unwrap();
        let rec = ch.reconstruct();
        for (x, y) in a.iter().zip(&rec) {
            assert!((x - y).abs() < 1e-10);
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = ch.solve(&b);
        for i in 0..n {
            let r: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn dense_remove_matches_refactor() {
        let n = 8;
        let a = spd(n);
        for k in 0..n {
            let mut ch = DenseCholesky::factor(&a, n).unwrap();
            ch.remove(k);
            let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            let sub: Vec<f64> = keep.iter().flat_map(|&i| keep.iter().map(move |&j| (i, j))).map(|(i, j)| a[i * n + j]).collect();
            let fresh = DenseCholesky::factor(&sub, n - 1).unwrap();
            for (x, y) in ch.reconstruct().iter().zip(fresh.reconstruct()) {
                assert!((x - y).abs() < 1e-9, "k={k}");
            }
            assert!((ch.log_det() - fresh.log_det()).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(matches!(DenseCholesky::factor(&a, 2), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn envelope_matches_dense_on_bilaplacian() {
        let e = ball(&[0, 0, 0], 3).filter(|s| (s[0] - s[1] + 2 * s[2]).rem_euclid(5) != 0);
        let m = RestrictedBilaplacian::<f64>::assemble(&e);
        let env = EnvelopeCholesky::factor(m.matrix()).unwrap();
        let n = e.len();
        let dense: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m.matrix().get(i, j)).collect();
        let dch = DenseCholesky::factor(&dense, n).unwrap();
        assert!((env.log_det() - dch.log_det()).abs() < 1e-9);
        let b: Vec<f64> = (0..n).map(|i| ((i % 5) as f64) - 2.0).collect();
        let x1 = env.solve(&b);
        let x2 = dch.solve(&b);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rcm_is_a_permutation_and_reduces_profile() {
        let e = box_sites(3, 6).unwrap();
        let m = RestrictedBilaplacian::<f64>::assemble(&e);
        let perm = reverse_cuthill_mckee(m.matrix());
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..e.len()).collect::<Vec<_>>());
        let (_, prof) = EnvelopeCholesky::profile(m.matrix());
        let identity: Vec<usize> = (0..e.len()).collect();
        let mut inv = identity.clone();
        for (a, &b) in perm.iter().enumerate() {
            inv[b] = a;
        }
        let lex = EnvelopeCholesky::envelope(m.matrix(), &identity, &identity);
        let lex_entries: usize = lex.iter().enumerate().map(|(i, f)| i - f + 1).sum();
        assert!(prof.entries <= lex_entries);
    }

    #[test]
    fn cg_matches_direct() {
        let e = box_sites(2, 8).unwrap();
        let m = RestrictedBilaplacian::<f64>::assemble(&e);
        let b: Vec<f64> = (0..e.len()).map(|i| if i == 40 { 1.0 } else { 0.0 }).collect();
        let out = conjugate_gradient(m.matrix(), &b, &m.matrix().diagonal(), 1e-12, 10_000).unwrap();
        assert!(out.relative_residual <= 1e-12);
        let direct = EnvelopeCholesky::factor(m.matrix()).unwrap().solve(&b);
        for (a, b) in out.solution.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8);
        }
        let mf = MatrixFreeBilaplacian::new(&e);
        let out2 = conjugate_gradient(&mf, &b, &m.matrix().diagonal(), 1e-12, 10_000).unwrap();
        for (a, b) in out2.solution.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let e = box_sites(2, 8).unwrap();
        let m = RestrictedBilaplacian::<f64>::assemble(&e);
        let b = vec![1.0; e.len()];
        let err = conjugate_gradient(m.matrix(), &b, &m.matrix().diagonal(), 1e-14, 3).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 3, .. }));
    }

    #[test]
    fn single_precision_factorization() {
        let e = ball(&[0, 0], 2);
        let m = RestrictedBilaplacian::<f32>::assemble(&e);
        let env = EnvelopeCholesky::factor(m.matrix()).unwrap();
        let x = env.solve(&vec![1.0f32; e.len()]);
        let y = m.apply(&x);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-4));
    }
}
