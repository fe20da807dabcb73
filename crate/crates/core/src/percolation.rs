//! Bernoulli site percolation and the distance statistics of its cluster
//! interior `Â`, compared against the tail bounds used for random pinning.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{annulus_d, ball, cluster_interior, distance_field, Distance, Region};
use crate::rng::substream;
use crate::sobolev::annulus_statistics;

/// Open sites of one Bernoulli(`ρ`) draw inside a window.
#[derive(Clone, Debug)]
pub struct PercolationSample {
    pub window: Region,
    pub rho: f64,
    pub seed: u64,
    pub open: Region,
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(invalid("rho", format!("intensity must lie in [0, 1], got {rho}")))
    }
}

/// One uniform per window site for trial `trial`; thresholding at `ρ` couples all intensities.
pub fn coupled_uniforms(window: &Region, seed: u64, trial: u64) -> Vec<f64> {
    let mut rng = substream(seed, "percolation", trial);
    (0..window.len()).map(|_| rng.random::<f64>()).collect()
}

/// Sites whose uniform falls below `ρ`.
pub fn threshold(window: &Region, uniforms: &[f64], rho: f64) -> Region {
    let mut i = 0;
    window.filter(|_| {
        let open = uniforms[i] < rho;
        i += 1;
        open
    })
}

pub fn sample_bernoulli(window: &Region, rho: f64, seed: u64) -> Result<PercolationSample> {
    check_rho(rho)?;
    let open = threshold(window, &coupled_uniforms(window, seed, 0), rho);
    Ok(PercolationSample { window: window.clone(), rho, seed, open })
}

/// Monte Carlo proportion with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub hits: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn estimate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// `√(p(1−p)/n)` at the supplied reference `p`.
    pub fn stderr_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    pub fn stderr(&self) -> f64 {
        self.stderr_at(self.estimate())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteriorCheck {
    pub dim: usize,
    pub rho: f64,
    pub empirical: Proportion,
    /// `ρ^{2d+1}`
    pub exact: f64,
}

impl InteriorCheck {
    /// `|p̂ − p| / σ(p)`, with `0` when both agree exactly.
    pub fn z_score(&self) -> f64 {
        let diff = (self.empirical.estimate() - self.exact).abs();
        if diff == 0.0 {
            return 0.0;
        }
        diff / self.empirical.stderr_at(self.exact)
    }
}

/// Estimates `ν(0 ∈ Â)` by sampling the ball `B_1(0)`.
pub fn interior_site_probability_check(dim: usize, rho: f64, trials: u64, seed: u64) -> Result<InteriorCheck> {
    check_rho(rho)?;
    if trials == 0 {
        return Err(invalid("trials", "at least one trial is required"));
    }
    let origin = vec![0; dim];
    let window = ball(&origin, 1);
    let mut hits = 0;
    for t in 0..trials {
        let open = threshold(&window, &coupled_uniforms(&window, seed, t), rho);
        hits += u64::from(cluster_interior(&open).contains(&origin));
    }
    Ok(InteriorCheck { dim, rho, empirical: Proportion { hits, trials }, exact: rho.powi(2 * dim as i32 + 1) })
}

/// `(1 − ρ^{2d+1})^{⌊t/4⌋}`
pub fn per_point_bound(dim: usize, rho: f64, t: u32) -> f64 {
    (1.0 - rho.powi(2 * dim as i32 + 1)).powi((t / 4) as i32)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub rho: f64,
    pub t: u32,
    /// `P(d_W(x, Â) ≥ t)`
    pub point: Proportion,
    pub point_bound: f64,
    /// `P(max_{z ∈ B_k(x)} d_W(z, Â) ≥ t)` with its union bound, when a radius is given.
    pub region: Option<(u32, Proportion, f64)>,
    /// Per-trial `d_W(x, Â)`; `None` when unreachable.
    pub distances: Vec<Option<u32>>,
}

impl TailReport {
    /// Empirical ≤ bound + 4σ for both the point and region statistics.
    pub fn honored(&self) -> bool {
        let ok = |p: &Proportion, b: f64| p.estimate() <= b.min(1.0) + 4.0 * p.stderr_at(b.clamp(0.0, 1.0));
        ok(&self.point, self.point_bound) && self.region.as_ref().is_none_or(|(_, p, b)| ok(p, *b))
    }
}

fn reaches(d: Distance, t: u32) -> bool {
    d.finite().is_none_or(|v| v >= t)
}

/// Monte Carlo tail of the graph distance (inside `window`) from `x` to the open cluster interior.
pub fn distance_tail_experiment(
    window: &Region,
    rho: f64,
    x: &[i32],
    t: u32,
    region_radius: Option<u32>,
    trials: u64,
    seed: u64,
) -> Result<TailReport> {
    check_rho(rho)?;
    if t == 0 {
        return Err(invalid("t", "t must be at least 1"));
    }
    let xi = window.index_of(x).ok_or_else(|| invalid("x", "x must lie in the window"))?;
    let dim = window.dim();
    let region_idx: Option<Vec<usize>> = region_radius.map(|k| ball(x, k).iter().filter_map(|s| window.index_of(s)).collect());
    let mut point_hits = 0;
    let mut region_hits = 0;
    let mut distances = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let open = threshold(window, &coupled_uniforms(window, seed, trial), rho);
        let field = distance_field(window, &cluster_interior(&open));
        distances.push(field[xi].finite());
        point_hits += u64::from(reaches(field[xi], t));
        if let Some(idx) = &region_idx {
            region_hits += u64::from(idx.iter().any(|&i| reaches(field[i], t)));
        }
    }
    let bound = per_point_bound(dim, rho, t);
    let region = region_radius.map(|k| {
        let prefactor = (2f64.sqrt() * (k as f64 + 1.0)).powi(dim as i32);
        (k, Proportion { hits: region_hits, trials }, prefactor * bound)
    });
    Ok(TailReport { rho, t, point: Proportion { hits: point_hits, trials }, point_bound: bound, region, distances })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AkTailReport {
    pub dim: usize,
    pub rho: f64,
    pub k: u32,
    pub xi: f64,
    pub m_k: f64,
    /// `P(a_k ≤ ⌊k/10⌋)`
    pub empirical: Proportion,
    /// `⌊k/10⌋ (√2 (k+1))^d (1 − ρ^{2d+1})^{⌊m_k/4⌋}`
    pub bound: f64,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    /// `m_k ≤ |D_ℓ^(k)|` for every annulus.
    pub precondition: bool,
    pub a_k: Vec<u32>,
}

impl AkTailReport {
    pub fn honored(&self) -> bool {
        let b = self.bound.min(1.0);
        self.vacuous || self.empirical.estimate() <= b + 4.0 * self.empirical.stderr_at(b)
    }
}

/// Percolation on `B_{k+2}(0)` with `a_k` computed from its cluster interior.
pub fn ak_tail_experiment(dim: usize, rho: f64, k: u32, xi: f64, trials: u64, seed: u64) -> Result<AkTailReport> {
    check_rho(rho)?;
    if k < 10 {
        return Err(invalid("k", format!("k must be at least 10, got {k}")));
    }
    if !(xi > 0.0) {
        return Err(invalid("xi", "ξ must be positive"));
    }
    let y = vec![0; dim];
    let window = ball(&y, k + 2);
    let m_k = (k as f64).powf(xi);
    let mut precondition = true;
    for ell in 0..=k / 5 {
        precondition &= m_k <= annulus_d(&y, k, ell)?.len() as f64;
    }
    let mut a_k = Vec::with_capacity(trials as usize);
    let mut hits = 0;
    if precondition {
        for trial in 0..trials {
            let open = threshold(&window, &coupled_uniforms(&window, seed, trial), rho);
            let (_, a) = annulus_statistics(&open, &y, k, m_k)?;
            hits += u64::from(a <= k / 10);
            a_k.push(a);
        }
    }
    let bound = (k / 10) as f64
        * (2f64.sqrt() * (k as f64 + 1.0)).powi(dim as i32)
        * (1.0 - rho.powi(2 * dim as i32 + 1)).powi((m_k / 4.0).floor() as i32);
    Ok(AkTailReport {
        dim,
        rho,
        k,
        xi,
        m_k,
        empirical: Proportion { hits, trials: if precondition { trials } else { 0 } },
        bound,
        vacuous: bound >= 1.0,
        precondition,
        a_k,
    })
}
