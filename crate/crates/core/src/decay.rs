//! Covariances of the pinned field as mixtures of Green's functions over
//! sampled pinned sets, their decay profiles and stretched-exponential fits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::green::{GreenSolver, SolverConfig};
use crate::lattice::{LatticeBox, Region};
use crate::linalg::EnvelopeCholesky;
use crate::operator::{LatticeField, RestrictedBilaplacian};
use crate::pinning::{PinnedEnsemble, ZetaTable};
use crate::rng::substream;

/// Monte Carlo mean with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Number of batches for batch-means errors (fewer when there are fewer samples).
pub const BATCHES: usize = 20;

fn batch_bounds(n: usize) -> Vec<(usize, usize)> {
    let b = n.clamp(1, BATCHES);
    (0..b).map(|i| (i * n / b, (i + 1) * n / b)).collect()
}

/// Mean of `values` and the standard error of the mean from batch means.
pub fn batch_mean(values: &[f64]) -> CovarianceEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batches = batch_bounds(n);
    let stderr = if batches.len() < 2 {
        0.0
    } else {
        let means: Vec<f64> = batches.iter().map(|&(a, b)| values[a..b].iter().sum::<f64>() / (b - a) as f64).collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (var / means.len() as f64).sqrt()
    };
    CovarianceEstimate { estimate: mean, stderr, samples: n }
}

/// `G_{A∪V_N^c}(x, t)` for every sampled `A` and target `t`, indexed `[sample][target]`.
///
/// One column solve per sample; consecutive identical pinned sets reuse the previous column.
pub fn sample_columns(
    bx: &LatticeBox,
    pinned_sets: &[Region],
    x: &[i32],
    targets: &[Vec<i32>],
    config: SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    if !bx.contains(x) {
        return Err(Error::SiteNotInRegion(x.to_vec()));
    }
    if let Some(t) = targets.iter().find(|t| !bx.contains(t)) {
        return Err(Error::SiteNotInRegion(t.clone()));
    }
    let sites = bx.sites();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(pinned_sets.len());
    let mut previous: Option<&Region> = None;
    for a in pinned_sets {
        if let (Some(p), Some(last)) = (previous, out.last()) {
            if p.len() == a.len() && p.iter().zip(a.iter()).all(|(u, v)| u == v) {
                out.push(last.clone());
                continue;
            }
        }
        let row = if a.contains(x) {
            vec![0.0; targets.len()]
        } else {
            let col = GreenSolver::<f64>::new(&sites.difference(a), config)?.column(x)?;
            targets.iter().map(|t| col.get(t)).collect()
        };
        out.push(row);
        previous = Some(a);
    }
    Ok(out)
}

/// `E_ζ[G_{𝒜∪V_N^c}(x, y)]` estimated from the ensemble.
pub fn pinned_covariance(ensemble: &PinnedEnsemble, x: &[i32], y: &[i32], config: SolverConfig) -> Result<CovarianceEstimate> {
    let bx = ensemble.lattice_box()?;
    let values = sample_columns(&bx, &ensemble.regions()?, x, &[y.to_vec()], config)?;
    Ok(batch_mean(&values.iter().map(|r| r[0]).collect::<Vec<_>>()))
}

/// `Σ_A ζ(A) G_{A∪V_N^c}(x, y)` over an enumerated law.
pub fn exact_mixture_covariance(table: &ZetaTable, x: &[i32], y: &[i32]) -> Result<f64> {
    let sites = table.lattice_box.sites();
    let n = sites.len();
    let (xi, yi) = match (sites.index_of(x), sites.index_of(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::SiteNotInRegion(x.to_vec())),
    };
    let mut total = 0.0;
    for (mask, &p) in table.probabilities.iter().enumerate() {
        if p == 0.0 || mask >> xi & 1 == 1 || mask >> yi & 1 == 1 {
            continue;
        }
        let free = Region::from_sites(sites.dim(), (0..n).filter(|i| mask >> i & 1 == 0).map(|i| sites.site(i).to_vec()));
        let col = GreenSolver::<f64>::new(&free, SolverConfig::default())?.column(x)?;
        total += p * col.get(y);
    }
    Ok(total)
}

/// Stable identifier of an ensemble: SHA-256 of its record bytes.
pub fn ensemble_id(ensemble: &PinnedEnsemble) -> Result<String> {
    Ok(hex::encode(Sha256::digest(ensemble.to_bytes()?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub k: u32,
    pub cov: f64,
    pub stderr: f64,
    pub baseline: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayProfile {
    pub dim: usize,
    pub side: u32,
    pub epsilon: f64,
    pub ensemble_id: String,
    pub center: Vec<i32>,
    pub axis: usize,
    pub rows: Vec<ProfileRow>,
    /// Per-sample covariances `[sample][row]`, kept for resampling errors.
    #[serde(skip)]
    pub per_sample: Vec<Vec<f64>>,
}

impl DecayProfile {
    /// `k,cov,stderr,baseline,n_samples`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,cov,stderr,baseline,n_samples\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e},{}\n", r.k, r.cov, r.stderr, r.baseline, r.n_samples));
        }
        out
    }

    /// Keeps rows with `k ≥ δ N^λ`.
    pub fn windowed(&self, delta: f64, lambda: f64) -> DecayProfile {
        let cut = delta * (self.side as f64).powf(lambda);
        let keep: Vec<bool> = self.rows.iter().map(|r| r.k as f64 >= cut).collect();
        let mut out = self.clone();
        out.rows = self.rows.iter().zip(&keep).filter(|(_, &k)| k).map(|(r, _)| r.clone()).collect();
        out.per_sample =
            self.per_sample.iter().map(|s| s.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect()).collect();
        out
    }
}

/// Pinned and unpinned covariances between `center` and `center + k e_axis`.
pub fn decay_profile(
    ensemble: &PinnedEnsemble,
    center: &[i32],
    distances: &[u32],
    axis: usize,
    config: SolverConfig,
) -> Result<DecayProfile> {
    let bx = ensemble.lattice_box()?;
    let mut distinct = distances.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(invalid("distances", "at least two distinct distances are required"));
    }
    if axis >= bx.dim() {
        return Err(invalid("axis", format!("axis {axis} out of range for d = {}", bx.dim())));
    }
    let margin = (bx.side() / 8) as i32;
    let targets: Vec<Vec<i32>> = distances
        .iter()
        .map(|&k| {
            let mut t = center.to_vec();
            t[axis] += k as i32;
            t
        })
        .collect();
    for t in std::iter::once(&center.to_vec()).chain(&targets) {
        if !bx.contains(t) || bx.margin(t) < margin {
            return Err(invalid("distances", format!("site {t:?} is closer than N/8 = {margin} to the boundary")));
        }
    }
    let baseline_col = GreenSolver::<f64>::new(&bx.sites(), config)?.column(center)?;
    let per_sample = sample_columns(&bx, &ensemble.regions()?, center, &targets, config)?;
    let rows = distances
        .iter()
        .zip(&targets)
        .enumerate()
        .map(|(j, (&k, t))| {
            let est = batch_mean(&per_sample.iter().map(|r| r[j]).collect::<Vec<_>>());
            ProfileRow { k, cov: est.estimate, stderr: est.stderr, baseline: baseline_col.get(t), n_samples: est.samples }
        })
        .collect();
    Ok(DecayProfile {
        dim: bx.dim(),
        side: bx.side(),
        epsilon: ensemble.header.epsilon,
        ensemble_id: ensemble_id(ensemble)?,
        center: center.to_vec(),
        axis,
        rows,
        per_sample,
    })
}

/// `c(k) ≈ A exp(−b k^α)` fitted on the strictly positive entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StretchedFit {
    pub alpha: f64,
    pub alpha_stderr: Option<f64>,
    pub amplitude: f64,
    pub rate: f64,
    /// Root-mean-square residual of `log c`.
    pub residual: f64,
    pub k_range: (f64, f64),
    pub used_points: usize,
    pub excluded_points: usize,
    /// False when `α̂` sits at the lower end of the search range or `b ≤ 0`:
    /// the data look polynomial rather than stretched-exponential.
    pub stretched: bool,
}

pub const ALPHA_MIN: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 4.0;

/// Least-squares `log c = a + s x`; returns `(a, s, sum of squared residuals)`.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (a, s) = crate::green::least_squares_line(xs, ys);
    let ssr = xs.iter().zip(ys).map(|(x, y)| (y - a - s * x).powi(2)).sum();
    (a, s, ssr)
}

fn ssr_at(alpha: f64, ks: &[f64], logs: &[f64]) -> f64 {
    let xs: Vec<f64> = ks.iter().map(|k| k.powf(alpha)).collect();
    line_fit(&xs, logs).2
}

/// Profile least squares over `α ∈ [ALPHA_MIN, ALPHA_MAX]`: log-spaced grid then golden-section refinement.
pub fn fit_stretched_exponential(points: &[(f64, f64)]) -> Result<StretchedFit> {
    let (used, excluded): (Vec<(f64, f64)>, Vec<(f64, f64)>) = points.iter().partition(|p| p.1 > 0.0 && p.1.is_finite());
    if used.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, have: used.len() });
    }
    let ks: Vec<f64> = used.iter().map(|p| p.0).collect();
    let logs: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let grid = 400;
    let ratio = (ALPHA_MAX / ALPHA_MIN).ln() / grid as f64;
    let alpha_at = |i: usize| ALPHA_MIN * (ratio * i as f64).exp();
    let best = (0..=grid)
        .map(|i| (i, ssr_at(alpha_at(i), &ks, &logs)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .expect("grid is nonempty");
    let (mut lo, mut hi) = (alpha_at(best.saturating_sub(1)), alpha_at((best + 1).min(grid)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if ssr_at(m1, &ks, &logs) <= ssr_at(m2, &ks, &logs) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let xs: Vec<f64> = ks.iter().map(|k| k.powf(alpha)).collect();
    let (a, s, ssr) = line_fit(&xs, &logs);
    let rate = -s;
    Ok(StretchedFit {
        alpha,
        alpha_stderr: None,
        amplitude: a.exp(),
        rate,
        residual: (ssr / used.len() as f64).sqrt(),
        k_range: (ks.iter().copied().fold(f64::INFINITY, f64::min), ks.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        used_points: used.len(),
        excluded_points: excluded.len(),
        stretched: alpha > 2.0 * ALPHA_MIN && rate > 0.0,
    })
}

/// Fit of the profile means with a jackknife (delete-one-batch) error on `α̂`.
pub fn fit_profile(profile: &DecayProfile) -> Result<StretchedFit> {
    let points: Vec<(f64, f64)> = profile.rows.iter().map(|r| (r.k as f64, r.cov)).collect();
    let mut fit = fit_stretched_exponential(&points)?;
    let n = profile.per_sample.len();
    let batches = batch_bounds(n);
    if batches.len() >= 2 {
        let mut alphas = Vec::new();
        for &(a, b) in &batches {
            let kept = n - (b - a);
            let pts: Vec<(f64, f64)> = profile
                .rows
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let s: f64 = profile.per_sample[..a].iter().chain(&profile.per_sample[b..]).map(|v| v[j]).sum();
                    (r.k as f64, s / kept as f64)
                })
                .collect();
            if let Ok(f) = fit_stretched_exponential(&pts) {
                alphas.push(f.alpha);
            }
        }
        if alphas.len() >= 2 {
            let m = alphas.len() as f64;
            let mean = alphas.iter().sum::<f64>() / m;
            fit.alpha_stderr = Some(((m - 1.0) / m * alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>()).sqrt());
        }
    }
    Ok(fit)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub k: u32,
    pub deterministic: f64,
    pub mixture: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub deterministic_fit: Option<StretchedFit>,
    pub mixture_fit: Option<StretchedFit>,
    /// `α̂_det ≥ α̂_mix`, when both fits exist.
    pub deterministic_decays_faster: Option<bool>,
}

/// Tabulates `|G_A(center, center + k e_axis)|` for a fixed `A` against the mixture profile.
pub fn deterministic_vs_random_comparison(deterministic: &LatticeField<f64>, profile: &DecayProfile) -> ComparisonReport {
    let rows: Vec<ComparisonRow> = profile
        .rows
        .iter()
        .map(|r| {
            let mut t = profile.center.clone();
            t[profile.axis] += r.k as i32;
            ComparisonRow { k: r.k, deterministic: deterministic.get(&t).abs(), mixture: r.cov, baseline: r.baseline }
        })
        .collect();
    let det_fit = fit_stretched_exponential(&rows.iter().map(|r| (r.k as f64, r.deterministic)).collect::<Vec<_>>()).ok();
    let mix_fit = fit_profile(profile).ok();
    let faster = match (&det_fit, &mix_fit) {
        (Some(d), Some(m)) => Some(d.alpha >= m.alpha),
        _ => None,
    };
    ComparisonReport { rows, deterministic_fit: det_fit, mixture_fit: mix_fit, deterministic_decays_faster: faster }
}

/// Exact Gaussian draws with covariance `G_{E^c}` on a free set `E`.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    free: Region,
    factor: EnvelopeCholesky<f64>,
}

impl FieldSampler {
    pub fn new(free: &Region) -> Result<Self> {
        let op = RestrictedBilaplacian::<f64>::assemble(free);
        Ok(Self { free: free.clone(), factor: EnvelopeCholesky::factor(op.matrix())? })
    }

    /// `φ = Pᵀ L⁻ᵀ z` for standard normal `z`.
    pub fn draw(&self, rng: &mut crate::rng::Rng) -> LatticeField<f64> {
        use rand::Rng as _;
        let z: Vec<f64> = (0..self.free.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        LatticeField::new(self.free.clone(), self.factor.color(&z)).expect("sizes agree")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldCovarianceCheck {
    pub x: Vec<i32>,
    pub y: Vec<i32>,
    pub empirical: f64,
    pub stderr: f64,
    pub exact: f64,
}

impl FieldCovarianceCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        (self.empirical - self.exact).abs() <= sigmas * self.stderr
    }
}

/// Empirical `E[φ_x φ_y]` from `draws` exact field samples against Green entries.
pub fn field_sampling_check(free: &Region, pairs: &[(Vec<i32>, Vec<i32>)], draws: usize, seed: u64) -> Result<Vec<FieldCovarianceCheck>> {
    let sampler = FieldSampler::new(free)?;
    let solver = GreenSolver::<f64>::new(free, SolverConfig::default())?;
    let mut rng = substream(seed, "field-draws", 0);
    let mut products = vec![Vec::with_capacity(draws); pairs.len()];
    for _ in 0..draws {
        let phi = sampler.draw(&mut rng);
        for (p, (x, y)) in products.iter_mut().zip(pairs) {
            p.push(phi.get(x) * phi.get(y));
        }
    }
    pairs
        .iter()
        .zip(products)
        .map(|((x, y), p)| {
            let n = p.len() as f64;
            let mean = p.iter().sum::<f64>() / n;
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(FieldCovarianceCheck {
                x: x.clone(),
                y: y.clone(),
                empirical: mean,
                stderr: (var / n).sqrt(),
                exact: solver.column(y)?.get(x),
            })
        })
        .collect()
}
