//! Discrete derivatives, the Laplacian and the Bilaplacian.
//!
//! Fields have finite support and are implicitly zero elsewhere. The
//! Bilaplacian exists in two forms: matrix-free stencil application on a
//! [`LatticeField`], and an assembled sparse matrix restricted to a free set
//! with zero exterior data ([`RestrictedBilaplacian`]).

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::lattice::{axis_offset, Region};
use crate::scalar::Scalar;

/// Real-valued function of finite support on `Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField<T> {
    support: Region,
    values: Vec<T>,
}

impl<T: Scalar> LatticeField<T> {
    pub fn new(support: Region, values: Vec<T>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: values.len() });
        }
        Ok(Self { support, values })
    }

    pub fn zeros(support: Region) -> Self {
        let values = vec![T::zero(); support.len()];
        Self { support, values }
    }

    pub fn from_fn(support: Region, mut f: impl FnMut(&[i32]) -> T) -> Self {
        let values = support.iter().map(&mut f).collect();
        Self { support, values }
    }

    /// Indicator of a single site.
    pub fn delta(site: &[i32]) -> Self {
        Self { support: Region::from_sites(site.len(), [site]), values: vec![T::one()] }
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_parts(self) -> (Region, Vec<T>) {
        (self.support, self.values)
    }

    /// Value at `site`; exactly zero outside the support.
    #[inline]
    pub fn get(&self, site: &[i32]) -> T {
        self.support.index_of(site).map_or_else(T::zero, |i| self.values[i])
    }

    /// Re-express the field on `region`, dropping values outside it.
    pub fn restrict(&self, region: &Region) -> Self {
        Self::from_fn(region.clone(), |s| self.get(s))
    }

    /// `Σ_x f(x) g(x)`
    pub fn dot(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for (s, &v) in self.support.iter().zip(&self.values) {
            acc += v * other.get(s);
        }
        acc
    }

    pub fn norm_sq(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v * v;
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| if v.abs_val() > m { v.abs_val() } else { m })
    }

    pub fn scale(&mut self, a: T) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Pointwise map onto a new scalar type.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> LatticeField<U> {
        LatticeField { support: self.support.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

fn direction(dim: usize, dir: i32) -> Result<Vec<i32>> {
    let a = dir.unsigned_abs() as usize;
    if dir == 0 || a > dim {
        return Err(invalid("direction", format!("direction {dir} not in ±1..±{dim}")));
    }
    Ok(axis_offset(dim, a - 1, dir.signum()))
}

fn shifted(site: &[i32], by: &[i32], buf: &mut [i32]) {
    for ((b, s), o) in buf.iter_mut().zip(site).zip(by) {
        *b = s + o;
    }
}

/// `D_i f(x) = f(x + e_i) − f(x)`, with `e_{−i} = −e_i`. Directions are
/// signed integers `±1..±d`.
pub fn forward_diff<T: Scalar>(f: &LatticeField<T>, dir: i32) -> Result<LatticeField<T>> {
    let dim = f.dim();
    let e = direction(dim, dir)?;
    let back: Vec<i32> = e.iter().map(|c| -c).collect();
    let support = f.support.union(&f.support.translate(&back));
    let mut buf = vec![0; dim];
    Ok(LatticeField::from_fn(support, |x| {
        shifted(x, &e, &mut buf);
        f.get(&buf) - f.get(x)
    }))
}

/// `D_{ij} f = D_i D_j f`.
pub fn second_diff<T: Scalar>(f: &LatticeField<T>, i: i32, j: i32) -> Result<LatticeField<T>> {
    forward_diff(&forward_diff(f, j)?, i)
}

/// `Δf(x) = (1/2d) Σ_{y ~ x} (f(y) − f(x))`.
pub fn laplacian<T: Scalar>(f: &LatticeField<T>) -> LatticeField<T> {
    let dim = f.dim();
    let support = f.support.dilate(1);
    let w = T::from_ratio(1, 2 * dim as i64);
    let two_d = T::from_ratio(2 * dim as i64, 1);
    let mut buf = vec![0; dim];
    LatticeField::from_fn(support, |x| {
        let mut acc = T::zero();
        for a in 0..dim {
            for step in [1, -1] {
                buf.copy_from_slice(x);
                buf[a] += step;
                acc += f.get(&buf);
            }
        }
        w * (acc - two_d * f.get(x))
    })
}

/// The Bilaplacian stencil `Δ²` as integer numerators over `4d²`.
#[derive(Clone, Debug)]
pub struct BilaplacianStencil {
    dim: usize,
    offsets: Vec<Vec<i32>>,
    numerators: Vec<i64>,
}

impl BilaplacianStencil {
    /// Center `4d² + 2d`, `±e_i` → `−4d`, `±2e_i` → `1`, `±e_i ± e_j` (`i ≠ j`) → `2`.
    pub fn new(dim: usize) -> Self {
        let d = dim as i64;
        let mut offsets = vec![vec![0; dim]];
        let mut numerators = vec![4 * d * d + 2 * d];
        for a in 0..dim {
            for s in [1, -1] {
                offsets.push(axis_offset(dim, a, s));
                numerators.push(-4 * d);
                offsets.push(axis_offset(dim, a, 2 * s));
                numerators.push(1);
            }
        }
        for a in 0..dim {
            for b in a + 1..dim {
                for sa in [1, -1] {
                    for sb in [1, -1] {
                        let mut o = vec![0; dim];
                        o[a] = sa;
                        o[b] = sb;
                        offsets.push(o);
                        numerators.push(2);
                    }
                }
            }
        }
        Self { dim, offsets, numerators }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn denominator(&self) -> i64 {
        4 * (self.dim as i64).pow(2)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Vec<i32>] {
        &self.offsets
    }

    pub fn numerators(&self) -> &[i64] {
        &self.numerators
    }

    pub fn coefficient<T: Scalar>(&self, k: usize) -> T {
        T::from_ratio(self.numerators[k], self.denominator())
    }

    /// Coefficient for an arbitrary offset (zero outside the stencil).
    pub fn coefficient_at<T: Scalar>(&self, offset: &[i32]) -> T {
        self.offsets.iter().position(|o| o == offset).map_or_else(T::zero, |k| self.coefficient(k))
    }

    /// `1 + 1/(2d)`
    pub fn center<T: Scalar>(&self) -> T {
        self.coefficient(0)
    }
}

/// Matrix-free `Δ²f`; the result is supported on the 2-neighbourhood of `supp f`.
pub fn bilaplacian<T: Scalar>(f: &LatticeField<T>) -> LatticeField<T> {
    let stencil = BilaplacianStencil::new(f.dim());
    let coeffs: Vec<T> = (0..stencil.len()).map(|k| stencil.coefficient(k)).collect();
    let support = f.support.dilate(2);
    let mut buf = vec![0; f.dim()];
    LatticeField::from_fn(support, |x| {
        let mut acc = T::zero();
        for (o, &c) in stencil.offsets.iter().zip(&coeffs) {
            shifted(x, o, &mut buf);
            acc += c * f.get(&buf);
        }
        acc
    })
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().zip(&self.values[r]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map_or_else(T::zero, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    /// `xᵀ A x`
    pub fn quadratic_form(&self, x: &[T]) -> T {
        let y = self.mul_vec(x);
        let mut acc = T::zero();
        for (a, b) in x.iter().zip(&y) {
            acc += *a * *b;
        }
        acc
    }
}

/// `Δ²` restricted to a free set `E`, with zero data outside `E`.
#[derive(Clone, Debug)]
pub struct RestrictedBilaplacian<T> {
    free: Region,
    matrix: CsrMatrix<T>,
}

impl<T: Scalar> RestrictedBilaplacian<T> {
    pub fn assemble(free: &Region) -> Self {
        let stencil = BilaplacianStencil::new(free.dim());
        let coeffs: Vec<T> = (0..stencil.len()).map(|k| stencil.coefficient(k)).collect();
        let n = free.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n * stencil.len());
        let mut values = Vec::with_capacity(n * stencil.len());
        let mut buf = vec![0; free.dim()];
        let mut row: Vec<(u32, T)> = Vec::with_capacity(stencil.len());
        row_ptr.push(0);
        for x in free.iter() {
            row.clear();
            for (o, &c) in stencil.offsets.iter().zip(&coeffs) {
                shifted(x, o, &mut buf);
                if let Some(j) = free.index_of(&buf) {
                    row.push((j as u32, c));
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, c) in &row {
                col_idx.push(j);
                values.push(c);
            }
            row_ptr.push(col_idx.len());
        }
        Self { free: free.clone(), matrix: CsrMatrix { n, row_ptr, col_idx, values } }
    }

    pub fn free_set(&self) -> &Region {
        &self.free
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.n
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n == 0
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.matrix.mul_vec(x)
    }

    /// Coordinate listing `row,col,value` with a header row.
    pub fn to_coo_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for i in 0..self.matrix.n {
            for (j, v) in self.matrix.row(i) {
                let _ = writeln!(out, "{i},{j},{:e}", v.to_f64_lossy());
            }
        }
        out
    }
}

/// `Δ²` on a free set applied without assembling: zero-extend, stencil, restrict.
#[derive(Clone, Debug)]
pub struct MatrixFreeBilaplacian<'a> {
    free: &'a Region,
    stencil: BilaplacianStencil,
}

impl<'a> MatrixFreeBilaplacian<'a> {
    pub fn new(free: &'a Region) -> Self {
        Self { free, stencil: BilaplacianStencil::new(free.dim()) }
    }

    pub fn free_len(&self) -> usize {
        self.free.len()
    }

    pub fn apply_into<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        let coeffs: Vec<T> = (0..self.stencil.len()).map(|k| self.stencil.coefficient(k)).collect();
        let mut buf = vec![0; self.free.dim()];
        for (i, s) in self.free.iter().enumerate() {
            let mut acc = T::zero();
            for (o, &c) in self.stencil.offsets.iter().zip(&coeffs) {
                shifted(s, o, &mut buf);
                if let Some(j) = self.free.index_of(&buf) {
                    acc += c * x[j];
                }
            }
            y[i] = acc;
        }
    }
}

/// `Σ D_i f · g − Σ f · D_{−i} g`; zero by summation by parts.
pub fn sum_by_parts_defect<T: Scalar>(f: &LatticeField<T>, g: &LatticeField<T>, dir: i32) -> Result<T> {
    let lhs = forward_diff(f, dir)?.dot(g);
    let rhs = f.dot(&forward_diff(g, -dir)?);
    Ok(lhs - rhs)
}

/// `Σ_{i,j=1}^d Σ_x (D_i D_j u)²`, the squared `∇₂` seminorm over all of `Z^d`.
pub fn second_derivative_energy<T: Scalar>(u: &LatticeField<T>) -> T {
    let dim = u.dim() as i32;
    let mut acc = T::zero();
    for i in 1..=dim {
        for j in 1..=dim {
            // directions are in range, so this cannot fail
            let dij = second_diff(u, i, j).expect("valid direction");
            acc += dij.norm_sq();
        }
    }
    acc
}

/// `Σ_{i,j}(D_i D_j u)² − 4d² Σ u Δ²u`; zero for every finitely supported `u`.
pub fn gradient_energy_identity_defect<T: Scalar>(u: &LatticeField<T>) -> T {
    let d = u.dim() as i64;
    let lhs = second_derivative_energy(u);
    let rhs = T::from_ratio(4 * d * d, 1) * u.dot(&bilaplacian(u));
    lhs - rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball, box_sites};
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    fn vals_at<T: Scalar>(f: &LatticeField<T>, xs: &[i32]) -> Vec<T> {
        xs.iter().map(|&x| f.get(&[x])).collect()
    }

    #[test]
    fn forward_diff_of_delta() {
        let f = LatticeField::<Q>::delta(&[0]);
        let d = forward_diff(&f, 1).unwrap();
        assert_eq!(vals_at(&d, &[-2, -1, 0, 1]), vec![q(0, 1), q(1, 1), q(-1, 1), q(0, 1)]);
        assert!(forward_diff(&f, 2).is_err());
        assert!(forward_diff(&f, 0).is_err());
    }

    #[test]
    fn backward_is_negated_shifted_forward() {
        let sup = ball(&[0, 0], 3);
        let f = LatticeField::<f64>::from_fn(sup.clone(), |s| (s[0] * 7 + s[1] * 3) as f64 * 0.1 + 1.0);
        for i in 1..=2 {
            let fwd = forward_diff(&f, i).unwrap();
            let back = forward_diff(&f, -i).unwrap();
            for x in sup.dilate(2).iter() {
                let mut xm = x.to_vec();
                xm[(i - 1) as usize] -= 1;
                assert_eq!(back.get(x), -fwd.get(&xm));
            }
        }
    }

    #[test]
    fn second_diff_examples() {
        let f = LatticeField::<Q>::delta(&[0]);
        let dd = second_diff(&f, 1, 1).unwrap();
        assert_eq!(vals_at(&dd, &[-3, -2, -1, 0, 1]), vec![q(0, 1), q(1, 1), q(-2, 1), q(1, 1), q(0, 1)]);
        let big = box_sites(2, 10).unwrap();
        let lin = LatticeField::<Q>::from_fn(big, |s| Q::from_integer(s[0] as i64));
        let dd = second_diff(&lin, 1, 1).unwrap();
        assert_eq!(dd.get(&[0, 0]), q(0, 1));
        let d12 = second_diff(&lin, 1, 2).unwrap();
        assert_eq!(d12.get(&[1, 2]), q(0, 1));
    }

    #[test]
    fn constant_field_interior_derivatives_vanish() {
        let big = box_sites(2, 10).unwrap();
        let c = LatticeField::<Q>::from_fn(big, |_| q(3, 1));
        assert_eq!(forward_diff(&c, 1).unwrap().get(&[0, 0]), q(0, 1));
        assert_eq!(laplacian(&c).get(&[2, -1]), q(0, 1));
    }

    #[test]
    fn laplacian_examples() {
        let f = LatticeField::<Q>::delta(&[0]);
        let l = laplacian(&f);
        assert_eq!(vals_at(&l, &[-1, 0, 1]), vec![q(1, 2), q(-1, 1), q(1, 2)]);
        for d in 1..=4usize {
            let big = box_sites(d, 6).unwrap();
            let sq = LatticeField::<Q>::from_fn(big, |s| Q::from_integer((s[0] * s[0]) as i64));
            assert_eq!(laplacian(&sq).get(&vec![0; d]), q(1, d as i64));
            let bl = bilaplacian(&sq);
            assert_eq!(bl.get(&vec![0; d]), q(0, 1));
        }
    }

    #[test]
    fn laplacian_matches_second_difference_form() {
        // Δf = −(1/2d) Σ_i D_{i,−i} f
        let sup = ball(&[0, 0, 0], 2);
        let f = LatticeField::<Q>::from_fn(sup, |s| Q::from_integer((s[0] - 2 * s[1] + s[2] * s[0]) as i64 + 1));
        let lap = laplacian(&f);
        let mut alt = LatticeField::<Q>::zeros(lap.support().clone());
        for i in 1..=3 {
            let dd = second_diff(&f, i, -i).unwrap();
            for (k, x) in lap.support().clone().iter().enumerate() {
                alt.values_mut()[k] -= dd.get(x) * q(1, 6);
            }
        }
        assert_eq!(lap, alt);
    }

    #[test]
    fn stencil_coefficients() {
        for d in 1..=5usize {
            let st = BilaplacianStencil::new(d);
            let di = d as i64;
            assert_eq!(st.center::<Q>(), q(1, 1) + q(1, 2 * di));
            assert_eq!(st.coefficient_at::<Q>(&axis_offset(d, 0, 1)), q(-1, di));
            assert_eq!(st.coefficient_at::<Q>(&axis_offset(d, d - 1, -2)), q(1, 4 * di * di));
            if d > 1 {
                let mut o = vec![0; d];
                o[0] = 1;
                o[1] = -1;
                assert_eq!(st.coefficient_at::<Q>(&o), q(1, 2 * di * di));
            }
            let row_sum = (0..st.len()).fold(q(0, 1), |a, k| a + st.coefficient::<Q>(k));
            assert_eq!(row_sum, q(0, 1));
            assert_eq!(st.len(), 1 + 4 * d + 2 * d * (d - 1));
        }
    }

    #[test]
    fn stencil_equals_composed_laplacian() {
        for d in 1..=4usize {
            let f = LatticeField::<Q>::delta(&vec![0; d]);
            let composed = laplacian(&laplacian(&f));
            let direct = bilaplacian(&f);
            for x in direct.support().iter() {
                assert_eq!(direct.get(x), composed.get(x), "d={d} x={x:?}");
            }
        }
        let f = LatticeField::<Q>::delta(&[0]);
        let b = bilaplacian(&f);
        assert_eq!(vals_at(&b, &[-2, -1, 0, 1, 2]), vec![q(1, 4), q(-1, 1), q(3, 2), q(-1, 1), q(1, 4)]);
    }

    #[test]
    fn assembled_examples() {
        for d in 1..=5usize {
            let e = Region::from_sites(d, [vec![0; d]]);
            let m = RestrictedBilaplacian::<Q>::assemble(&e);
            assert_eq!(m.matrix().get(0, 0), q(2 * d as i64 + 1, 2 * d as i64));
        }
        let e = Region::from_sites(1, [[0], [1]]);
        let m = RestrictedBilaplacian::<Q>::assemble(&e);
        assert_eq!(m.matrix().get(0, 0), q(3, 2));
        assert_eq!(m.matrix().get(0, 1), q(-1, 1));
        assert_eq!(m.matrix().get(1, 0), q(-1, 1));
        assert_eq!(m.matrix().get(1, 1), q(3, 2));
        assert!(m.to_coo_csv().starts_with("row,col,value\n0,0,1.5e0"));
    }

    #[test]
    fn sum_by_parts_small_cases() {
        let f = LatticeField::<Q>::delta(&[0]);
        assert_eq!(sum_by_parts_defect(&f, &f, 1).unwrap(), q(0, 1));
        let z = LatticeField::<Q>::zeros(Region::empty(1));
        assert_eq!(sum_by_parts_defect(&z, &f, -1).unwrap(), q(0, 1));
    }

    #[test]
    fn energy_identity_on_delta() {
        let f = LatticeField::<Q>::delta(&[0]);
        assert_eq!(second_derivative_energy(&f), q(6, 1));
        assert_eq!(f.dot(&bilaplacian(&f)) * q(4, 1), q(6, 1));
        assert_eq!(gradient_energy_identity_defect(&f), q(0, 1));
        let z = LatticeField::<f64>::zeros(Region::empty(3));
        assert_eq!(gradient_energy_identity_defect(&z), 0.0);
    }

    #[test]
    fn matrix_free_matches_assembled() {
        let e = ball(&[0, 0], 4).filter(|s| (s[0] + 2 * s[1]).rem_euclid(3) != 0);
        let m = RestrictedBilaplacian::<f64>::assemble(&e);
        let x: Vec<f64> = (0..e.len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let mut y = vec![0.0; e.len()];
        MatrixFreeBilaplacian::new(&e).apply_into(&x, &mut y);
        let ya = m.apply(&x);
        let fld = LatticeField::new(e.clone(), x.clone()).unwrap();
        let yb = bilaplacian(&fld).restrict(&e);
        for i in 0..e.len() {
            assert!((y[i] - ya[i]).abs() < 1e-12);
            assert!((yb.values()[i] - ya[i]).abs() < 1e-12);
        }
        assert!(m.matrix().is_symmetric());
    }
}
