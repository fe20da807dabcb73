//! Discrete Sobolev norms over finite regions, the `H²` energy identity for
//! Green columns, shell-norm decay certificates and the adaptive bound
//! driven by the `a_k` statistic.
//!
//! Derivatives are forward differences in the positive directions
//! `i, j = 1..d`, evaluated on the zero extension of the field:
//!
//! * `‖f‖²_{L²(E)} = Σ_{z∈E} f(z)²`
//! * `‖∇f‖²_{L²(E)} = Σ_{z∈E} Σ_i (D_i f(z))²`
//! * `‖∇₂f‖²_{L²(E)} = Σ_{z∈E} Σ_{i,j} (D_i D_j f(z))²`
//! * `H¹ = L² + ∇`, `H² = L² + ∇ + ∇₂`

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::least_squares_line;
use crate::lattice::{annulus_d, l1_distance, max_distance_from, max_distance_to_interior, Distance, LatticeBox, Region};
use crate::operator::LatticeField;
use crate::scalar::{Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport<T> {
    pub l2: T,
    pub grad: T,
    pub grad2: T,
    pub h1: T,
    pub h2: T,
}

impl<T: Scalar> NormReport<T> {
    fn from_parts(l2: T, grad: T, grad2: T) -> Self {
        Self { l2, grad, grad2, h1: l2 + grad, h2: l2 + grad + grad2 }
    }
}

/// Per-site contributions `(f(z)², Σ_i (D_i f)², Σ_{i,j} (D_i D_j f)²)` for every `z` in `region`.
pub fn norm_densities<T: Scalar>(f: &LatticeField<T>, region: &Region) -> Vec<[T; 3]> {
    let d = region.dim();
    let mut shifted = vec![T::zero(); d];
    let mut buf = vec![0i32; d];
    region
        .iter()
        .map(|z| {
            let f0 = f.get(z);
            buf.copy_from_slice(z);
            for (i, slot) in shifted.iter_mut().enumerate() {
                buf[i] += 1;
                *slot = f.get(&buf);
                buf[i] -= 1;
            }
            let mut grad = T::zero();
            let mut grad2 = T::zero();
            for i in 0..d {
                let di = shifted[i] - f0;
                grad += di * di;
                buf[i] += 1;
                for j in 0..d {
                    buf[j] += 1;
                    let dij = f.get(&buf) - shifted[i] - shifted[j] + f0;
                    buf[j] -= 1;
                    grad2 += dij * dij;
                }
                buf[i] -= 1;
            }
            [f0 * f0, grad, grad2]
        })
        .collect()
}

/// Sobolev norms of `f` (squared) over `region`.
pub fn norms<T: Scalar>(f: &LatticeField<T>, region: &Region) -> NormReport<T> {
    let mut acc = [T::zero(); 3];
    for p in norm_densities(f, region) {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    NormReport::from_parts(acc[0], acc[1], acc[2])
}

/// Sites where `f` or one of its forward derivatives can be nonzero.
pub fn derivative_window<T: Scalar>(f: &LatticeField<T>) -> Region {
    f.support().dilate(2)
}

/// Constant `C` with `‖Δf‖_{L²(Z^d)} ≤ C ‖∇₂f‖_{L²(Z^d)}`.
///
/// `Δf(z) = (1/2d) Σ_i D_i D_i f(z − e_i)`, so Cauchy–Schwarz over the `d`
/// terms gives `C = 1/(2√d)`.
pub fn laplacian_bound_constant(dim: usize) -> f64 {
    0.5 / (dim as f64).sqrt()
}

/// `(Σ_{z,i,j} (D_i D_j G(z))², 4d² G(y,y))` for a Green column with pole `y`.
///
/// Summation by parts gives `Σ (D_i D_j u)² = 4d² Σ u Δ²u`, and `Δ²G = δ_y`
/// on the free set while `G = 0` off it, so the two entries agree.
pub fn h2_total_identity<T: Real>(column: &LatticeField<T>, y: &[i32]) -> (T, T) {
    if column.support().is_empty() {
        return (T::zero(), T::zero());
    }
    let d = column.dim();
    let lhs = norms(column, &derivative_window(column)).grad2;
    let four_d2 = <T as Real>::from_usize(4 * d * d);
    (lhs, four_d2 * column.get(y))
}

/// `|lhs − rhs| / max(|rhs|, tiny)`
pub fn relative_defect(lhs: f64, rhs: f64) -> f64 {
    if lhs == rhs {
        return 0.0;
    }
    (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
}

/// `A ∪ (a collar of width 3 around the box)`, so exterior sites count as pinned
/// and those at distance ≥ 2 from the box are cluster-interior.
pub fn with_pinned_exterior(bx: &LatticeBox, pinned: &Region) -> Region {
    let h = bx.half();
    let d = bx.dim();
    let outer = Region::from_bounds(d, &vec![-h - 3; d], &vec![h + 3; d]).filter(|s| !bx.contains(s));
    pinned.union(&outer)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub center: Vec<i32>,
    pub shells: Vec<u32>,
    /// `‖G‖²_{H²(B_k(y)^c ∩ window)}` for each shell index.
    pub norms: Vec<f64>,
    /// `norms[k] / norms[k−5]` for `k ≥ 5` with positive denominators.
    pub contraction: Vec<(u32, f64)>,
    pub s_fit: Option<f64>,
    pub log_intercept: Option<f64>,
    /// `2 · max_{x free} d(x, Â)`.
    pub m: Distance,
    pub c: f64,
    /// `C/(C+1)` with `C = c M^{2d+2}`.
    pub theoretical_ratio: Option<f64>,
    /// `(1/5) log((1+C)/C)`.
    pub theoretical_rate: Option<f64>,
    /// Largest observed 5-shell contraction ratio `Ĉ/(Ĉ+1)`.
    pub worst_ratio: Option<f64>,
}

/// Norms below this are treated as numerically zero in log fits.
pub const NORM_FLOOR: f64 = 1e-14;

/// Constant in the norm equivalence, `M^{2(d+1)} + M^{d+1} + 1 ≤ 3 M^{2(d+1)}`.
pub const EQUIVALENCE_C: f64 = 3.0;

impl DecayCertificate {
    /// `(1/5) log(1/worst_ratio)`: the rate implied by the measured contraction.
    pub fn measured_rate(&self) -> Option<f64> {
        self.worst_ratio.filter(|&r| r > 0.0 && r < 1.0).map(|r| -r.ln() / 5.0)
    }

    /// Pointwise bound `|G(x)| ≤ ‖G‖_{H²(B_k^c)}` for `‖x − y‖₁ > k`.
    pub fn pointwise_bound(&self, distance: u32) -> Option<f64> {
        let k = distance.checked_sub(1)?;
        self.shells.iter().position(|&s| s == k).map(|i| self.norms[i].max(0.0).sqrt())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,norm\n");
        for (k, v) in self.shells.iter().zip(&self.norms) {
            out.push_str(&format!("{k},{v:e}\n"));
        }
        out
    }
}

/// Shell norms `‖G‖²_{H²(B_k(y)^c ∩ window)}` for `k = 0..=k_max` with a log-linear rate fit.
///
/// `M` is measured treating every site off the column's support as pinned,
/// on the support plus a 3-collar so that collar sites can be cluster-interior.
pub fn shell_norm_sequence(column: &LatticeField<f64>, y: &[i32], k_max: u32, window: &Region, c: f64) -> Result<DecayCertificate> {
    let dens = norm_densities(column, window);
    let mut by_dist = vec![0.0f64; k_max as usize + 2];
    for (z, p) in window.iter().zip(&dens) {
        let r = (l1_distance(z, y) as usize).min(k_max as usize + 1);
        by_dist[r] += p[0] + p[1] + p[2];
    }
    // tail[k] = Σ_{r > k}, accumulated from the outside in
    let shells: Vec<u32> = (0..=k_max).collect();
    let mut norm_seq = vec![0.0; k_max as usize + 1];
    let mut tail = by_dist[k_max as usize + 1];
    for k in (0..=k_max as usize).rev() {
        norm_seq[k] = tail;
        tail += by_dist[k];
    }
    if norm_seq.iter().all(|&v| v < NORM_FLOOR) {
        return Err(Error::Degenerate("all shell norms are numerically zero".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        shells.iter().zip(&norm_seq).filter(|(_, &v)| v >= NORM_FLOOR).map(|(&k, &v)| (k as f64, v.ln())).unzip();
    let (log_intercept, s_fit) = if xs.len() >= 2 {
        let (a, b) = least_squares_line(&xs, &ys);
        (Some(a), Some(-b))
    } else {
        (None, None)
    };
    let contraction: Vec<(u32, f64)> = (5..=k_max as usize)
        .filter(|&k| norm_seq[k - 5] >= NORM_FLOOR)
        .map(|k| (k as u32, norm_seq[k] / norm_seq[k - 5]))
        .collect();
    let worst_ratio = contraction.iter().map(|c| c.1).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));

    let support = column.support();
    let hull = support.dilate(3);
    let pinned = hull.difference(support);
    let m = match max_distance_from(support, &hull, &pinned) {
        Distance::Finite(v) => Distance::Finite(2 * v),
        Distance::Unreachable => Distance::Unreachable,
    };
    let d = column.dim() as i32;
    let big_c = m.finite().map(|m| c * (m.max(1) as f64).powi(2 * d + 2));
    Ok(DecayCertificate {
        center: y.to_vec(),
        shells,
        norms: norm_seq,
        contraction,
        s_fit,
        log_intercept,
        m,
        c,
        theoretical_ratio: big_c.map(|cc| cc / (cc + 1.0)),
        theoretical_rate: big_c.map(|cc| ((1.0 + cc) / cc).ln() / 5.0),
        worst_ratio,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `‖u‖²_{H²(E)}`
    pub lhs: f64,
    /// `3 M^{2(d+1)} ‖∇₂u‖²_{L²(E)}`
    pub rhs: f64,
    pub m: u32,
}

impl EquivalenceReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12)
    }
}

/// Compares `‖u‖²_{H²(E)}` with `3 M^{2(d+1)} ‖∇₂u‖²_{L²(E)}` where
/// `M = max(1, 2 max_{x∈E} d_E(x, Â ∩ E))`.
pub fn equivalence_check(u: &LatticeField<f64>, region: &Region, pinned: &Region) -> Result<EquivalenceReport> {
    if let Some(bad) = pinned.iter().find(|s| u.get(s) != 0.0) {
        return Err(Error::HypothesisViolated(format!("u is nonzero at pinned site {bad:?}")));
    }
    let half = max_distance_to_interior(region, pinned)
        .finite()
        .ok_or_else(|| Error::HypothesisViolated("some site of E cannot reach the pinned interior".into()))?;
    let m = (2 * half).max(1);
    let n = norms(u, region);
    let d = region.dim() as i32;
    Ok(EquivalenceReport { lhs: n.h2, rhs: EQUIVALENCE_C * (m as f64).powi(2 * (d + 1)) * n.grad2, m })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveBoundReport {
    pub center: Vec<i32>,
    pub target: Vec<i32>,
    pub k: u32,
    pub xi: f64,
    pub m_k: f64,
    /// `M_ℓ^(k)` for `ℓ = 0..=⌊k/5⌋`.
    pub m_ell: Vec<Distance>,
    pub a_k: u32,
    /// Uniform variance bound used for `γ` (already multiplied by `log N` in `d = 4`).
    pub gamma: f64,
    pub c: f64,
    pub bound: f64,
    pub measured: Option<f64>,
    /// Whether `0 < ξ < 1/(2(d+1))`.
    pub xi_in_stated_range: bool,
}

impl AdaptiveBoundReport {
    pub fn holds(&self) -> Option<bool> {
        self.measured.map(|m| m <= self.bound)
    }
}

/// `M_ℓ^(k)` for every annulus and the count `a_k = #{ℓ : M_ℓ^(k) ≤ m_k}`.
pub fn annulus_statistics(pinned: &Region, y: &[i32], k: u32, m_k: f64) -> Result<(Vec<Distance>, u32)> {
    let mut m_ell = Vec::with_capacity(k as usize / 5 + 1);
    for ell in 0..=k / 5 {
        m_ell.push(max_distance_to_interior(&annulus_d(y, k, ell)?, pinned));
    }
    let a_k = m_ell.iter().filter(|m| m.finite().is_some_and(|v| v as f64 <= m_k)).count() as u32;
    Ok((m_ell, a_k))
}

/// `γ · exp(−c m_k^{−2(d+1)} a_k)` with `k = ‖x − y‖₁`, `m_k = k^ξ`.
///
/// `pinned` must already contain any exterior pinning (see [`with_pinned_exterior`]).
pub fn adaptive_bound(
    pinned: &Region,
    x: &[i32],
    y: &[i32],
    xi: f64,
    gamma: f64,
    c: f64,
    column: Option<&LatticeField<f64>>,
) -> Result<AdaptiveBoundReport> {
    let k = l1_distance(x, y);
    if k < 6 {
        return Err(invalid("k", format!("‖x − y‖₁ = {k} must be at least 6")));
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(invalid("xi", format!("ξ must be positive, got {xi}")));
    }
    let d = y.len() as i32;
    let m_k = (k as f64).powf(xi);
    let (m_ell, a_k) = annulus_statistics(pinned, y, k, m_k)?;
    let bound = gamma * (-c * m_k.powi(-2 * (d + 1)) * a_k as f64).exp();
    Ok(AdaptiveBoundReport {
        center: y.to_vec(),
        target: x.to_vec(),
        k,
        xi,
        m_k,
        m_ell,
        a_k,
        gamma,
        c,
        bound,
        measured: column.map(|g| g.get(x).abs()),
        xi_in_stated_range: xi < 1.0 / (2.0 * (d as f64 + 1.0)),
    })
}

/// Largest `c` for which every `(measured, γ, m_k, a_k)` satisfies the adaptive bound.
///
/// Samples with `a_k = 0` impose `measured ≤ γ` only and do not constrain `c`.
/// Returns `None` when some sample exceeds `γ` outright.
pub fn calibrate_c(samples: &[(f64, f64, f64, u32)], dim: usize) -> Option<f64> {
    let mut best = f64::INFINITY;
    for &(measured, gamma, m_k, a_k) in samples {
        if measured > gamma {
            return None;
        }
        if a_k == 0 || measured == 0.0 {
            continue;
        }
        let c = (gamma / measured).ln() * m_k.powi(2 * (dim as i32 + 1)) / a_k as f64;
        best = best.min(c);
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{GreenSolver, SolverConfig};
    use crate::lattice::{ball, box_sites};
    use num_rational::Ratio;

    fn q(n: i64) -> Ratio<i64> {
        Ratio::from_integer(n)
    }

    #[test]
    fn delta_norms_in_one_dimension() {
        let f = LatticeField::delta(&[0]).map(|v: f64| q(v as i64));
        let n = norms(&f, &ball(&[0], 2));
        assert_eq!((n.l2, n.grad, n.grad2), (q(1), q(2), q(6)));
        assert_eq!(n.h2, q(9));
        let zero = LatticeField::<f64>::zeros(ball(&[0], 1));
        let z = norms(&zero, &ball(&[0], 3));
        assert_eq!(z.h2, 0.0);
    }

    #[test]
    fn single_site_identity() {
        let e = Region::from_sites(4, [[0, 0, 0, 0]]);
        let col = GreenSolver::<f64>::new(&e, SolverConfig::default()).unwrap().column(&[0; 4]).unwrap();
        let (lhs, rhs) = h2_total_identity(&col, &[0; 4]);
        assert!((rhs - 64.0 * 8.0 / 9.0).abs() < 1e-12);
        assert!(relative_defect(lhs, rhs) < 1e-12);
        let empty = LatticeField::<f64>::zeros(Region::empty(2));
        assert_eq!(h2_total_identity(&empty, &[0, 0]), (0.0, 0.0));
    }

    #[test]
    fn pinned_d1_identity() {
        let e = box_sites(1, 10).unwrap().filter(|s| s[0] % 3 != 0 || s[0] == 0);
        let solver = GreenSolver::<f64>::new(&e, SolverConfig::default()).unwrap();
        for y in [[0], [2], [-4]] {
            let col = solver.column(&y).unwrap();
            let (lhs, rhs) = h2_total_identity(&col, &y);
            assert!(relative_defect(lhs, rhs) < 1e-10, "{lhs} {rhs}");
        }
    }

    #[test]
    fn shells_vanish_outside_collar() {
        let e = ball(&[0, 0], 1);
        let col = GreenSolver::<f64>::new(&e, SolverConfig::default()).unwrap().column(&[0, 0]).unwrap();
        let window = derivative_window(&col);
        let cert = shell_norm_sequence(&col, &[0, 0], 6, &window, EQUIVALENCE_C).unwrap();
        for k in 4..=6 {
            assert_eq!(cert.norms[k], 0.0);
        }
        assert!(cert.norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(cert.s_fit.unwrap() > 0.0);
    }

    #[test]
    fn zero_column_is_degenerate() {
        let f = LatticeField::<f64>::zeros(ball(&[0], 2));
        assert!(matches!(shell_norm_sequence(&f, &[0], 3, &ball(&[0], 4), 3.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn equivalence_examples() {
        let pinned = Region::from_sites(1, [[0], [1], [2], [6], [7], [8]]);
        let e = Region::from_bounds(1, &[0], &[6]);
        let u = LatticeField::delta(&[4]);
        let r = equivalence_check(&u, &e, &pinned).unwrap();
        assert_eq!(r.m, 10);
        assert!(r.holds() && r.lhs < r.rhs);
        let zero = LatticeField::<f64>::zeros(e.clone());
        let r0 = equivalence_check(&zero, &e, &pinned).unwrap();
        assert_eq!((r0.lhs, r0.rhs), (0.0, 0.0));
        let bad = LatticeField::delta(&[1]);
        assert!(matches!(equivalence_check(&bad, &e, &pinned), Err(Error::HypothesisViolated(_))));
    }

    #[test]
    fn adaptive_bound_extremes() {
        let y = [0, 0];
        let x = [7, 3];
        let all = ball(&y, 14);
        let r = adaptive_bound(&all, &x, &y, 0.2, 2.0, 1.0, None).unwrap();
        assert_eq!(r.k, 10);
        assert_eq!(r.a_k, 3);
        assert!(r.m_ell.iter().all(|m| *m == Distance::Finite(0)));
        let none = adaptive_bound(&Region::empty(2), &x, &y, 0.2, 2.0, 1.0, None).unwrap();
        assert_eq!(none.a_k, 0);
        assert_eq!(none.bound, 2.0);
        assert!(none.m_ell.iter().all(|m| *m == Distance::Unreachable));
        assert!(adaptive_bound(&all, &[3, 2], &y, 0.2, 2.0, 1.0, None).is_err());
        assert!(adaptive_bound(&all, &x, &y, 0.0, 2.0, 1.0, None).is_err());
    }

    #[test]
    fn adaptive_bound_one_dimensional_pipeline() {
        // free near the origin and at x ≡ 0, 1 (mod 5) beyond |x| = 12; pinned clusters elsewhere
        let bx = LatticeBox::new(1, 60).unwrap();
        let pinned = bx.sites().filter(|s| s[0].abs() > 2 && (s[0].abs() <= 12 || s[0].rem_euclid(5) >= 2));
        let free = bx.sites().difference(&pinned);
        let col = GreenSolver::<f64>::new(&free, SolverConfig::default()).unwrap().column(&[0]).unwrap();
        let full = with_pinned_exterior(&bx, &pinned);
        let gamma = col.get(&[0]);
        let r = adaptive_bound(&full, &[20], &[0], 0.2, gamma, 1.0, Some(&col)).unwrap();
        // D_0 = {±21}: 21 ≡ 1 is free, so M_0 is unreachable; D_ℓ for ℓ ≥ 1 holds free sites at distance 2
        assert_eq!(r.m_ell[0], Distance::Unreachable);
        assert_eq!(r.a_k, 0);
        assert_eq!(r.holds(), Some(true));
        let r = adaptive_bound(&full, &[10], &[0], 0.2, gamma, 1.0, Some(&col)).unwrap();
        // D_0 = {±11} and D_1 = {6..11} lie inside the pinned block; D_2 reaches the free sites 1, 2
        assert_eq!(r.m_ell, vec![Distance::Finite(0), Distance::Finite(0), Distance::Finite(3)]);
        assert_eq!(r.a_k, 2);
        assert!(r.bound < gamma);
        assert_eq!(r.holds(), Some(true));
    }

    #[test]
    fn laplacian_constant_holds_on_random_like_field() {
        let sup = ball(&[0, 0, 0], 3);
        let f = LatticeField::from_fn(sup, |s| ((s[0] * 7 + s[1] * 3 - s[2] * 5) % 11) as f64);
        let window = derivative_window(&f);
        let lap = crate::operator::laplacian(&f);
        let lhs = norms(&lap, &window.dilate(1)).l2.sqrt();
        let rhs = norms(&f, &window).grad2.sqrt();
        assert!(lhs <= laplacian_bound_constant(3) * rhs + 1e-12);
    }
}
