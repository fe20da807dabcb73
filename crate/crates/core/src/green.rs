//! Green's functions `G_A` of the membrane model: columns on arbitrary free
//! sets, Gaussian conditioning on additional pinned sites, variances, the
//! infinite-volume random-walk series and the finite-box asymptotic profile.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{l1_norm, LatticeBox, Region};
use crate::linalg::{conjugate_gradient, DenseCholesky, EnvelopeCholesky};
use crate::operator::{LatticeField, RestrictedBilaplacian};
use crate::scalar::Real;

/// Which linear solver backs a [`GreenSolver`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Direct,
    ConjugateGradient,
    /// Direct when the free set and its envelope are small enough, otherwise CG.
    Auto,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub backend: Backend,
    /// Relative residual target for conjugate gradients.
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    /// Largest free set handed to the direct backend under [`Backend::Auto`].
    pub direct_max_sites: usize,
    /// Largest envelope factorization cost (flops) accepted under [`Backend::Auto`].
    pub direct_max_flops: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            cg_tolerance: 1e-10,
            cg_max_iterations: 20_000,
            direct_max_sites: 50_000,
            direct_max_flops: 4e9,
        }
    }
}

impl SolverConfig {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.cg_tolerance = tol;
        self
    }
}

#[derive(Clone, Debug)]
enum Factor<T> {
    Direct(EnvelopeCholesky<T>),
    Iterative { diagonal: Vec<T> },
}

/// `Δ²` on a free set `E` with zero data on `E^c`, ready to produce Green columns.
#[derive(Clone, Debug)]
pub struct GreenSolver<T> {
    operator: RestrictedBilaplacian<T>,
    factor: Factor<T>,
    config: SolverConfig,
}

impl<T: Real> GreenSolver<T> {
    pub fn new(free: &Region, config: SolverConfig) -> Result<Self> {
        let operator = RestrictedBilaplacian::<T>::assemble(free);
        let direct = match config.backend {
            Backend::Direct => true,
            Backend::ConjugateGradient => false,
            Backend::Auto => {
                free.len() <= config.direct_max_sites && {
                    let (_, profile) = EnvelopeCholesky::profile(operator.matrix());
                    profile.flops <= config.direct_max_flops
                }
            }
        };
        let factor = if direct {
            Factor::Direct(EnvelopeCholesky::factor(operator.matrix())?)
        } else {
            Factor::Iterative { diagonal: operator.matrix().diagonal() }
        };
        Ok(Self { operator, factor, config })
    }

    pub fn free_set(&self) -> &Region {
        self.operator.free_set()
    }

    pub fn operator(&self) -> &RestrictedBilaplacian<T> {
        &self.operator
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.factor, Factor::Direct(_))
    }

    pub fn backend_name(&self) -> &'static str {
        if self.is_direct() {
            "direct"
        } else {
            "conjugate-gradient"
        }
    }

    /// Solves `Δ²|_E u = rhs`.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        match &self.factor {
            Factor::Direct(ch) => Ok(ch.solve(rhs)),
            Factor::Iterative { diagonal } => Ok(conjugate_gradient(
                self.operator.matrix(),
                rhs,
                diagonal,
                self.config.cg_tolerance,
                self.config.cg_max_iterations,
            )?
            .solution),
        }
    }

    fn index(&self, site: &[i32]) -> Result<usize> {
        self.free_set().index_of(site).ok_or_else(|| Error::SiteNotInRegion(site.to_vec()))
    }

    /// Column `G(·, y)` as a vector over the free set.
    pub fn column_vec(&self, y: usize) -> Result<Vec<T>> {
        let mut rhs = vec![T::zero(); self.operator.len()];
        rhs[y] = T::one();
        self.solve(&rhs)
    }

    /// `G_A(·, y)`, supported on the free set (exactly zero elsewhere).
    pub fn column(&self, y: &[i32]) -> Result<LatticeField<T>> {
        let idx = self.index(y)?;
        LatticeField::new(self.free_set().clone(), self.column_vec(idx)?)
    }

    /// `G_A(x, x)`
    pub fn variance(&self, x: &[i32]) -> Result<T> {
        let idx = self.index(x)?;
        Ok(self.column_vec(idx)?[idx])
    }

    /// `max_{x ∈ E} |Δ²G(x) − δ_y(x)|` for a column produced by this solver.
    pub fn residual_inf(&self, column: &[T], y: usize) -> T {
        let r = self.operator.apply(column);
        r.iter()
            .enumerate()
            .map(|(i, &v)| if i == y { (v - T::one()).abs() } else { v.abs() })
            .fold(T::zero(), T::max)
    }
}

/// `G_A(·, y)` on the free set `E` with the default solver configuration.
pub fn green_column(free: &Region, y: &[i32]) -> Result<LatticeField<f64>> {
    GreenSolver::<f64>::new(free, SolverConfig::default())?.column(y)
}

/// `G_{E^c}(x, x)`
pub fn variance(free: &Region, x: &[i32]) -> Result<f64> {
    GreenSolver::<f64>::new(free, SolverConfig::default())?.variance(x)
}

/// Covariance of the field on `E` after additionally pinning `S ⊆ E`:
/// `G(x,y) − G(x,S) G(S,S)⁻¹ G(S,y)`.
#[derive(Clone, Debug)]
pub struct ConditionedGreen<'a, T> {
    solver: &'a GreenSolver<T>,
    pinned: Vec<usize>,
    columns: Vec<Vec<T>>,
    block: DenseCholesky<T>,
}

impl<'a, T: Real> ConditionedGreen<'a, T> {
    pub fn new(solver: &'a GreenSolver<T>, pinned: &Region) -> Result<Self> {
        let pinned: Vec<usize> = pinned.iter().map(|s| solver.index(s)).collect::<Result<_>>()?;
        let columns: Vec<Vec<T>> = pinned.iter().map(|&s| solver.column_vec(s)).collect::<Result<_>>()?;
        let mut block = DenseCholesky::new();
        for (k, col) in columns.iter().enumerate() {
            let cross: Vec<T> = pinned[..k].iter().map(|&s| col[s]).collect();
            block.push(&cross, col[pinned[k]]).map_err(|e| {
                Error::SingularBlock(format!("pinning site #{k} is numerically dependent on earlier ones ({e})"))
            })?;
        }
        Ok(Self { solver, pinned, columns, block })
    }

    /// `G_S(·, y)` over the free set of the underlying solver; zero on `S`.
    pub fn column_vec(&self, y: usize) -> Result<Vec<T>> {
        let mut col = match self.pinned.iter().position(|&s| s == y) {
            Some(k) => self.columns[k].clone(),
            None => self.solver.column_vec(y)?,
        };
        let rhs: Vec<T> = self.pinned.iter().map(|&s| col[s]).collect();
        let weights = self.block.solve(&rhs);
        for (w, c) in weights.iter().zip(&self.columns) {
            for (v, &g) in col.iter_mut().zip(c) {
                *v -= *w * g;
            }
        }
        for &s in &self.pinned {
            col[s] = T::zero();
        }
        Ok(col)
    }

    pub fn column(&self, y: &[i32]) -> Result<LatticeField<T>> {
        let idx = self.solver.index(y)?;
        LatticeField::new(self.solver.free_set().clone(), self.column_vec(idx)?)
    }

    pub fn entry(&self, x: &[i32], y: &[i32]) -> Result<T> {
        let xi = self.solver.index(x)?;
        let yi = self.solver.index(y)?;
        Ok(self.column_vec(yi)?[xi])
    }
}

/// `condition_on`: the conditioned covariance entry for `x, y ∈ E`.
pub fn condition_on(solver: &GreenSolver<f64>, pinned: &Region, x: &[i32], y: &[i32]) -> Result<f64> {
    ConditionedGreen::new(solver, pinned)?.entry(x, y)
}

/// `P[S_n = z]` for a one-dimensional simple random walk, for all `n ≤ max_steps`.
fn walk_1d(z: i32, max_steps: usize) -> Vec<f64> {
    let mut p = vec![0.0; max_steps + 1];
    let a = z.unsigned_abs() as usize;
    if a > max_steps {
        return p;
    }
    p[a] = 0.5f64.powi(a as i32);
    let mut n = a;
    while n + 2 <= max_steps {
        let up = ((n + a) / 2) as f64;
        let down = ((n - a) / 2) as f64;
        p[n + 2] = p[n] * ((n + 1) * (n + 2)) as f64 / (4.0 * (up + 1.0) * (down + 1.0));
        n += 2;
    }
    p
}

/// `P_0[S_m = z]` for `m = 0..=max_steps` for the simple random walk on `Z^d`.
///
/// Each step picks one of `d` axes uniformly, so the step counts per axis
/// are multinomial and the axes then move as independent 1-d walks. The
/// multinomial is built one axis at a time as a chain of binomial splits.
pub fn walk_return_probabilities(z: &[i32], max_steps: usize) -> Vec<f64> {
    let mut acc = walk_1d(z[0], max_steps);
    for (j, &zj) in z.iter().enumerate().skip(1) {
        let axis = walk_1d(zj, max_steps);
        let keep = j as f64 / (j + 1) as f64;
        let mut next = vec![0.0; max_steps + 1];
        // binomial(n, ·; keep) row, advanced in n
        let mut row = vec![1.0];
        for (n, slot) in next.iter_mut().enumerate() {
            if n > 0 {
                let mut new_row = vec![0.0; n + 1];
                for (a, &v) in row.iter().enumerate() {
                    new_row[a] += (1.0 - keep) * v;
                    new_row[a + 1] += keep * v;
                }
                row = new_row;
            }
            let mut s = 0.0;
            for a in 0..=n {
                let w = row[a] * acc[a] * axis[n - a];
                s += w;
            }
            *slot = s;
        }
        acc = next;
    }
    acc
}

/// Truncated infinite-volume covariance `Σ_{m=0}^{M} (m+1) P_0[S_m = z]` (d ≥ 5).
pub fn rw_green_infinite(z: &[i32], truncation: usize) -> Result<f64> {
    if z.len() < 5 {
        return Err(invalid("d", format!("the random-walk series diverges for d = {} ≤ 4", z.len())));
    }
    Ok(walk_return_probabilities(z, truncation).iter().enumerate().map(|(m, p)| (m + 1) as f64 * p).sum())
}

/// Variance bounds used wherever the constant `γ` appears.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VarianceBoundConstants {
    pub dim: usize,
    /// `d ≥ 5`: uniform bound on `G_A(x, x)`.
    pub gamma: Option<f64>,
    /// `d = 4`: coefficient of `log N`.
    pub gamma_log: Option<f64>,
}

pub const GAMMA_TRUNCATION: usize = 2_000;

impl VarianceBoundConstants {
    /// `γ̂ = Σ_{m ≤ 2000} (m+1) P_0[S_m = 0]` for `d ≥ 5`.
    pub fn measured(dim: usize) -> Result<Self> {
        if dim < 5 {
            return Err(invalid("d", "use `calibrated_log` for d = 4"));
        }
        let gamma = rw_green_infinite(&vec![0; dim], GAMMA_TRUNCATION)?;
        Ok(Self { dim, gamma: Some(gamma), gamma_log: None })
    }

    /// `d = 4`: `γ̂ = max_N G_N(0,0) / log N` over the supplied box sides.
    pub fn calibrated_log(sides: &[u32], config: SolverConfig) -> Result<Self> {
        let mut best = 0.0f64;
        for &n in sides {
            if n < 2 {
                return Err(invalid("N", "log N calibration needs N ≥ 2"));
            }
            let bx = LatticeBox::new(4, n)?;
            let g = GreenSolver::<f64>::new(&bx.sites(), config)?.variance(&[0; 4])?;
            best = best.max(g / (n as f64).ln());
        }
        Ok(Self { dim: 4, gamma: None, gamma_log: Some(best) })
    }

    /// Upper bound on `G_A(x,x)` in the box of side `N`.
    pub fn variance_bound(&self, side: u32) -> f64 {
        match (self.gamma, self.gamma_log) {
            (Some(g), _) => g,
            (None, Some(c)) => c * (side.max(2) as f64).ln(),
            (None, None) => f64::INFINITY,
        }
    }
}

/// Lower bound `G_A(x,x) ≥ 1 / Δ²(x,x) = 2d/(2d+1)`.
pub fn variance_lower_bound(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * d / (2.0 * d + 1.0)
}

/// Representative site at ℓ¹ distance `r` with the smallest ℓ∞ norm
/// (`r` spread as evenly as possible over the axes).
pub fn spread_site(dim: usize, r: u32) -> Vec<i32> {
    let base = (r as usize / dim) as i32;
    let extra = r as usize % dim;
    (0..dim).map(|a| base + i32::from(a < extra)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioRow {
    pub distance: u32,
    pub site: Vec<i32>,
    pub green: f64,
    pub green_reflected: f64,
    /// `G_N(0,x) ‖x‖^{d−4}` for `d ≥ 5`; `log N − log ‖x‖` for `d = 4`.
    pub scaled: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioProfile {
    pub dim: usize,
    pub side: u32,
    pub rows: Vec<RatioRow>,
    /// `d = 4` only: least-squares slope of `G_N(0,x)` against `log N − log ‖x‖`.
    pub log_slope: Option<f64>,
}

/// `G_N(0, x)` at the listed ℓ¹ distances, scaled by `‖x‖^{d−4}` (or tabulated
/// against `log N − log ‖x‖` in `d = 4`). Each site must sit at least `N/4`
/// from the boundary in ℓ∞.
pub fn asymptotic_ratio_profile(dim: usize, side: u32, distances: &[u32], config: SolverConfig) -> Result<RatioProfile> {
    if dim < 4 {
        return Err(invalid("d", "the asymptotic profile is defined for d ≥ 4"));
    }
    let bx = LatticeBox::new(dim, side)?;
    let sites: Vec<Vec<i32>> = distances.iter().map(|&r| spread_site(dim, r)).collect();
    for (s, &r) in sites.iter().zip(distances) {
        if r == 0 || s.iter().map(|c| c.abs()).max().unwrap_or(0) > (side / 4) as i32 {
            return Err(invalid("distances", format!("distance {r} is not within N/4 = {} of the center", side / 4)));
        }
    }
    let solver = GreenSolver::<f64>::new(&bx.sites(), config)?;
    let col = solver.column(&vec![0; dim])?;
    let rows: Vec<RatioRow> = sites
        .into_iter()
        .zip(distances)
        .map(|(site, &r)| {
            let green = col.get(&site);
            let reflected: Vec<i32> = site.iter().map(|c| -c).collect();
            let scaled = if dim == 4 {
                (side as f64).ln() - (r as f64).ln()
            } else {
                green * (r as f64).powi(dim as i32 - 4)
            };
            RatioRow { distance: l1_norm(&site), green_reflected: col.get(&reflected), site, green, scaled }
        })
        .collect();
    let log_slope = (dim == 4).then(|| {
        let xs: Vec<f64> = rows.iter().map(|r| r.scaled).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.green).collect();
        least_squares_line(&xs, &ys).1
    });
    Ok(RatioProfile { dim, side, rows, log_slope })
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b)`.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Key of a cached Green column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnKey {
    pub dim: usize,
    pub side: u32,
    pub free_hash: String,
    pub y_index: usize,
}

/// On-disk cache of Green columns: `<root>/<d>/<N>/<free-set hash>/<y-index>.col`.
///
/// Each file is a little-endian `u64` count followed by that many
/// `(u64 site index, f64 value)` pairs. Writes go to a temporary file that
/// is renamed into place, so concurrent writers never expose partial entries.
#[derive(Clone, Debug)]
pub struct ColumnCache {
    root: PathBuf,
}

pub const CACHE_ENV: &str = "MEMBRANE_LAB_CACHE";

impl ColumnCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Uses `MEMBRANE_LAB_CACHE` when set, otherwise `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, key: &ColumnKey) -> PathBuf {
        self.root
            .join(key.dim.to_string())
            .join(key.side.to_string())
            .join(&key.free_hash)
            .join(format!("{}.col", key.y_index))
    }

    pub fn load(&self, key: &ColumnKey) -> Result<Option<Vec<(u64, f64)>>> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode_column(&bytes).map(Some)
    }

    pub fn store(&self, key: &ColumnKey, entries: &[(u64, f64)]) -> Result<()> {
        let path = self.path(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", key.y_index, std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encode_column(entries))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Returns the cached column for `y`, solving and storing it on a miss.
    pub fn column(&self, bx: &LatticeBox, solver: &GreenSolver<f64>, y: &[i32]) -> Result<LatticeField<f64>> {
        let free = solver.free_set();
        let y_index = free.index_of(y).ok_or_else(|| Error::SiteNotInRegion(y.to_vec()))?;
        let key = ColumnKey { dim: bx.dim(), side: bx.side(), free_hash: free.content_hash(), y_index };
        if let Some(entries) = self.load(&key)? {
            if entries.len() == free.len() && entries.iter().enumerate().all(|(i, e)| e.0 == i as u64) {
                return LatticeField::new(free.clone(), entries.into_iter().map(|e| e.1).collect());
            }
        }
        let col = solver.column_vec(y_index)?;
        let entries: Vec<(u64, f64)> = col.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect();
        self.store(&key, &entries)?;
        LatticeField::new(free.clone(), col)
    }
}

pub fn encode_column(entries: &[(u64, f64)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 * entries.len());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for &(i, v) in entries {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_column(bytes: &[u8]) -> Result<Vec<(u64, f64)>> {
    let bad = || Error::Format("truncated column file".into());
    let count = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().expect("8 bytes")) as usize;
    if bytes.len() != 8 + 16 * count {
        return Err(bad());
    }
    Ok(bytes[8..]
        .chunks_exact(16)
        .map(|c| {
            let i = u64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let v = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            (i, v)
        })
        .collect())
}

/// CSV export of a column: `x1,...,xd,value`.
pub fn column_to_csv(field: &LatticeField<f64>) -> String {
    let dim = field.dim();
    let mut out = (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push_str(",value\n");
    for (s, v) in field.support().iter().zip(field.values()) {
        for c in s {
            out.push_str(&c.to_string());
            out.push(',');
        }
        out.push_str(&format!("{v:e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball, box_sites};

    /// Naive oracle: repeated convolution of the walk kernel on a box of radius `m`.
    fn walk_by_convolution(dim: usize, z: &[i32], max_steps: usize) -> Vec<f64> {
        let r = max_steps as i32;
        let region = Region::from_bounds(dim, &vec![-r; dim], &vec![r; dim]);
        let table = region.neighbor_table();
        let mut p = vec![0.0; region.len()];
        p[region.index_of(&vec![0; dim]).unwrap()] = 1.0;
        let target = region.index_of(z);
        let mut out = vec![target.map_or(0.0, |t| p[t])];
        for _ in 0..max_steps {
            let mut q = vec![0.0; region.len()];
            for i in 0..region.len() {
                if p[i] == 0.0 {
                    continue;
                }
                for nb in table[i * 2 * dim..(i + 1) * 2 * dim].iter().flatten() {
                    q[*nb as usize] += p[i] / (2 * dim) as f64;
                }
            }
            p = q;
            out.push(target.map_or(0.0, |t| p[t]));
        }
        out
    }

    #[test]
    fn walk_probabilities_match_convolution_oracle() {
        for (dim, z) in [(1, vec![0]), (2, vec![1, 0]), (3, vec![1, -1, 0]), (5, vec![0; 5]), (5, vec![2, 0, 1, 0, 0])] {
            let fast = walk_return_probabilities(&z, 8);
            let slow = walk_by_convolution(dim, &z, 8);
            for (m, (a, b)) in fast.iter().zip(&slow).enumerate() {
                assert!((a - b).abs() < 1e-14, "dim={dim} z={z:?} m={m}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rw_series_small_cases() {
        assert_eq!(rw_green_infinite(&[0; 5], 0).unwrap(), 1.0);
        assert!((rw_green_infinite(&[0; 5], 2).unwrap() - 1.3).abs() < 1e-15);
        assert!(rw_green_infinite(&[0; 4], 10).is_err());
        let z = [1, 0, 0, 0, 0];
        let probs = walk_return_probabilities(&z, 6);
        let a = rw_green_infinite(&z, 4).unwrap();
        let c = rw_green_infinite(&z, 6).unwrap();
        assert!((c - a - 6.0 * probs[5] - 7.0 * probs[6]).abs() < 1e-15);
        assert_eq!(probs[1], 0.1);
    }

    #[test]
    fn rw_partial_sums_change_only_on_matching_parity() {
        let z = [1, 1, 1, 0, 0];
        let probs = walk_return_probabilities(&z, 40);
        for (m, p) in probs.iter().enumerate() {
            if m % 2 == 0 {
                assert_eq!(*p, 0.0);
            }
        }
        let mut prev = 0.0;
        for m in 0..20 {
            let s = rw_green_infinite(&z, m).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn single_site_and_pair_columns() {
        for d in 1..=5usize {
            let e = Region::from_sites(d, [vec![0; d]]);
            let g = variance(&e, &vec![0; d]).unwrap();
            assert!((g - variance_lower_bound(d)).abs() < 1e-12);
        }
        let e = Region::from_sites(1, [[0], [1]]);
        let col = green_column(&e, &[0]).unwrap();
        assert!((col.get(&[0]) - 1.2).abs() < 1e-12);
        assert!((col.get(&[1]) - 0.8).abs() < 1e-12);
        assert_eq!(col.get(&[2]), 0.0);
        assert!(green_column(&e, &[5]).is_err());
    }

    #[test]
    fn condition_on_examples() {
        let e = Region::from_sites(1, [[0], [1]]);
        let solver = GreenSolver::<f64>::new(&e, SolverConfig::default()).unwrap();
        let s = Region::from_sites(1, [[1]]);
        let v = condition_on(&solver, &s, &[0], &[0]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(condition_on(&solver, &s, &[1], &[0]).unwrap(), 0.0);
        let none = Region::empty(1);
        assert!((condition_on(&solver, &none, &[0], &[1]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn backends_agree() {
        let e = ball(&[0, 0, 0], 4).filter(|s| (s[0] + s[1] * 2 + s[2] * 3).rem_euclid(4) != 0);
        let y = [1, 0, 0];
        let direct = GreenSolver::<f64>::new(&e, SolverConfig::default().with_backend(Backend::Direct)).unwrap();
        let cg = GreenSolver::<f64>::new(&e, SolverConfig::default().with_backend(Backend::ConjugateGradient).with_tolerance(1e-13))
            .unwrap();
        assert!(direct.is_direct() && !cg.is_direct());
        let a = direct.column(&y).unwrap();
        let b = cg.column(&y).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() < 1e-9);
        }
        let yi = e.index_of(&y).unwrap();
        assert!(direct.residual_inf(a.values(), yi) < 1e-12);
    }

    #[test]
    fn column_symmetry_and_positivity() {
        let e = box_sites(2, 6).unwrap().filter(|s| !(s[0] == 1 && s[1] == 1));
        let solver = GreenSolver::<f64>::new(&e, SolverConfig::default()).unwrap();
        let sites = [[0, 0], [2, -1], [-3, 3]];
        for x in &sites {
            let cx = solver.column(x).unwrap();
            assert!(cx.get(x) > 0.0);
            for y in &sites {
                let cy = solver.column(y).unwrap();
                assert!((cx.get(y) - cy.get(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ColumnCache::new(dir.path());
        let bx = LatticeBox::new(2, 4).unwrap();
        let solver = GreenSolver::<f64>::new(&bx.sites(), SolverConfig::default()).unwrap();
        let first = cache.column(&bx, &solver, &[0, 1]).unwrap();
        let key = ColumnKey { dim: 2, side: 4, free_hash: bx.sites().content_hash(), y_index: bx.sites().index_of(&[0, 1]).unwrap() };
        assert!(cache.path(&key).exists());
        let second = cache.column(&bx, &solver, &[0, 1]).unwrap();
        assert_eq!(first, second);
        assert!(decode_column(&[1, 0, 0]).is_err());
    }

    #[test]
    fn spread_sites() {
        assert_eq!(spread_site(5, 3), vec![1, 1, 1, 0, 0]);
        assert_eq!(spread_site(4, 6), vec![2, 2, 1, 1]);
    }
}
