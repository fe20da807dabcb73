//! The pinning measure `ζ_N^ε(A) ∝ ε^{|A|} Z_{V_N∖A}` on subsets of a box:
//! conditional pinning probabilities, exact enumeration on tiny boxes,
//! Gibbs samplers and the Bernoulli domination envelope.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{variance_lower_bound, GreenSolver, SolverConfig};
use crate::lattice::{LatticeBox, Region};
use crate::linalg::{DenseCholesky, EnvelopeCholesky};
use crate::operator::{BilaplacianStencil, RestrictedBilaplacian};
use crate::rng::{substream, Rng};

/// `ζ_N^ε` on the box `V_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnedLaw {
    lattice_box: LatticeBox,
    epsilon: f64,
}

impl PinnedLaw {
    pub fn new(lattice_box: LatticeBox, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("eps", format!("pinning strength must be positive and finite, got {epsilon}")));
        }
        Ok(Self { lattice_box, epsilon })
    }

    pub fn lattice_box(&self) -> &LatticeBox {
        &self.lattice_box
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Density of `N(0, σ²)` at 0.
pub fn conditional_density(variance: f64) -> f64 {
    1.0 / (2.0 * PI * variance).sqrt()
}

/// `q/(1+q)` with `q = ε / √(2πσ²)`.
pub fn pin_probability(epsilon: f64, variance: f64) -> f64 {
    let q = epsilon * conditional_density(variance);
    q / (1.0 + q)
}

/// `Z_{E∖{x}} / Z_E = 1/√(2π σ_x²)` with `σ_x² = G_{E^c}(x, x)`.
pub fn partition_ratio(free: &Region, x: &[i32]) -> Result<f64> {
    let v = GreenSolver::<f64>::new(free, SolverConfig::default())?.variance(x)?;
    Ok(conditional_density(v))
}

/// `ζ(x ∈ A | A ∖ {x} = C)` for `C = pinned ∖ {x}`.
pub fn gibbs_conditional(law: &PinnedLaw, pinned: &Region, x: &[i32], config: SolverConfig) -> Result<f64> {
    let bx = law.lattice_box();
    if !bx.contains(x) {
        return Err(Error::SiteNotInRegion(x.to_vec()));
    }
    let free = bx.sites().filter(|s| s == x || !pinned.contains(s));
    let v = GreenSolver::<f64>::new(&free, config)?.variance(x)?;
    Ok(pin_probability(law.epsilon(), v))
}

/// `log Z_E = (|E|/2) log 2π − (1/2) log det Δ²|_E`.
pub fn log_partition(free: &Region) -> Result<f64> {
    if free.is_empty() {
        return Ok(0.0);
    }
    let op = RestrictedBilaplacian::<f64>::assemble(free);
    let ch = EnvelopeCholesky::factor(op.matrix())?;
    Ok(0.5 * free.len() as f64 * (2.0 * PI).ln() - 0.5 * ch.log_det())
}

/// Largest box handled by [`enumerate_zeta`].
pub const ENUMERATION_MAX_SITES: usize = 16;

/// Exact `ζ_N^ε` over all subsets; subset `A` is the bitmask with bit `i`
/// set when site `i` (lexicographic box order) is pinned.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZetaTable {
    pub lattice_box: LatticeBox,
    pub epsilon: f64,
    pub probabilities: Vec<f64>,
}

/// Exact law of the pinned set by enumeration of all `2^{|V_N|}` subsets (`ε ≥ 0`).
pub fn enumerate_zeta(bx: &LatticeBox, epsilon: f64) -> Result<ZetaTable> {
    let n = bx.len();
    if n > ENUMERATION_MAX_SITES {
        return Err(invalid("N", format!("enumeration needs |V_N| ≤ {ENUMERATION_MAX_SITES}, got {n}")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid("eps", format!("pinning strength must be nonnegative, got {epsilon}")));
    }
    let sites = bx.sites();
    let mut logw = vec![f64::NEG_INFINITY; 1 << n];
    for (mask, slot) in logw.iter_mut().enumerate() {
        let size = mask.count_ones();
        if epsilon == 0.0 && size > 0 {
            continue;
        }
        let free = Region::from_sites(bx.dim(), (0..n).filter(|i| mask >> i & 1 == 0).map(|i| sites.site(i).to_vec()));
        let eps_term = if size == 0 { 0.0 } else { size as f64 * epsilon.ln() };
        *slot = eps_term + log_partition(&free)?;
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probabilities: Vec<f64> = logw.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    Ok(ZetaTable { lattice_box: *bx, epsilon, probabilities })
}

impl ZetaTable {
    pub fn sites(&self) -> usize {
        self.lattice_box.len()
    }

    /// `½ Σ |p̂(A) − ζ(A)|` against counts indexed by bitmask.
    pub fn tv_distance(&self, counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        0.5 * self.probabilities.iter().zip(counts).map(|(p, &c)| (c as f64 / total as f64 - p).abs()).sum::<f64>()
    }

    /// `ζ(|A| ≥ t)`
    pub fn size_tail(&self, t: u32) -> f64 {
        self.probabilities.iter().enumerate().filter(|(m, _)| m.count_ones() >= t).map(|(_, p)| p).sum()
    }

    /// `ζ(x ∈ A)` for site index `i`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.probabilities.iter().enumerate().filter(|(m, _)| m >> i & 1 == 1).map(|(_, p)| p).sum()
    }

    /// `max_A |(ζ K_x)(A) − ζ(A)|` over every single-site heat-bath kernel `K_x`,
    /// with pinning probabilities from Green-function variances rather than from the table.
    pub fn stationarity_defect(&self) -> Result<f64> {
        let n = self.sites();
        let sites = self.lattice_box.sites();
        let mut worst = 0.0f64;
        for x in 0..n {
            let bit = 1usize << x;
            let mut next = vec![0.0; self.probabilities.len()];
            for c in 0..self.probabilities.len() {
                if c & bit != 0 {
                    continue;
                }
                let free = Region::from_sites(
                    self.lattice_box.dim(),
                    (0..n).filter(|i| c >> i & 1 == 0).map(|i| sites.site(i).to_vec()),
                );
                let v = GreenSolver::<f64>::new(&free, SolverConfig::default())?.variance(sites.site(x))?;
                let p = pin_probability(self.epsilon, v);
                let mass = self.probabilities[c] + self.probabilities[c | bit];
                next[c] += (1.0 - p) * mass;
                next[c | bit] += p * mass;
            }
            for (a, b) in next.iter().zip(&self.probabilities) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Which Markov chain drives [`sample_ensemble`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Heat bath on the pinned set alone, conditionals from Schur-corrected `G_N`.
    Collapsed,
    /// Heat bath on (field, pinned set) jointly; its pinned-set marginal is `ζ_N^ε`.
    Field,
    /// `Collapsed` up to [`AUTO_COLLAPSED_MAX_SITES`] sites, `Field` above.
    Auto,
}

pub const AUTO_COLLAPSED_MAX_SITES: usize = 512;

/// Accepted moves between refactorizations of the pinned-block Cholesky factor.
pub const REFRESH_INTERVAL: usize = 256;

impl SamplerKind {
    pub fn resolve(self, sites: usize) -> Self {
        match self {
            SamplerKind::Auto if sites <= AUTO_COLLAPSED_MAX_SITES => SamplerKind::Collapsed,
            SamplerKind::Auto => SamplerKind::Field,
            k => k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    Systematic,
    Random,
}

/// Collapsed heat bath: keeps dense `G_N` and a Cholesky factor of `G_N(C, C)`
/// for the current pinned set `C`, so each conditional variance is one Schur complement.
#[derive(Clone, Debug)]
pub struct CollapsedGibbs {
    n: usize,
    epsilon: f64,
    green: Vec<f64>,
    pinned: Vec<bool>,
    order: Vec<usize>,
    block: DenseCholesky<f64>,
    moves_since_refresh: usize,
}

impl CollapsedGibbs {
    pub fn new(law: &PinnedLaw) -> Result<Self> {
        let sites = law.lattice_box().sites();
        let n = sites.len();
        let op = RestrictedBilaplacian::<f64>::assemble(&sites);
        let ch = EnvelopeCholesky::factor(op.matrix())?;
        let mut green = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = ch.solve(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                green[i * n + j] = v;
            }
        }
        Ok(Self {
            n,
            epsilon: law.epsilon(),
            green,
            pinned: vec![false; n],
            order: Vec::new(),
            block: DenseCholesky::new(),
            moves_since_refresh: 0,
        })
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    /// Variance of `φ_x` given `φ = 0` on `C ∖ {x}`.
    pub fn conditional_variance(&self, x: usize) -> f64 {
        let row = &self.green[x * self.n..(x + 1) * self.n];
        match self.order.iter().position(|&s| s == x) {
            None => {
                let cross: Vec<f64> = self.order.iter().map(|&s| row[s]).collect();
                self.block.schur_complement(&cross, row[x]).0
            }
            Some(k) => {
                // 1 / (G_CC⁻¹)_kk, with (G_CC⁻¹)_kk = ‖L⁻¹ e_k‖²
                let mut w = vec![0.0; self.order.len()];
                w[k] = 1.0;
                self.block.forward_solve(&mut w);
                1.0 / w[k..].iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    pub fn conditional(&self, x: usize) -> f64 {
        pin_probability(self.epsilon, self.conditional_variance(x))
    }

    fn set(&mut self, x: usize, pin: bool) -> Result<()> {
        if self.pinned[x] == pin {
            return Ok(());
        }
        if pin {
            let row = &self.green[x * self.n..(x + 1) * self.n];
            let cross: Vec<f64> = self.order.iter().map(|&s| row[s]).collect();
            self.block.push(&cross, row[x])?;
            self.order.push(x);
        } else {
            let k = self.order.iter().position(|&s| s == x).expect("pinned site is in the block");
            self.block.remove(k);
            self.order.remove(k);
        }
        self.pinned[x] = pin;
        self.moves_since_refresh += 1;
        if self.moves_since_refresh >= REFRESH_INTERVAL {
            self.refresh()?;
        }
        Ok(())
    }

    /// Rebuilds the pinned-block factor from `G_N` to shed accumulated rounding.
    pub fn refresh(&mut self) -> Result<()> {
        let m = self.order.len();
        let mut a = vec![0.0; m * m];
        for (i, &si) in self.order.iter().enumerate() {
            for (j, &sj) in self.order.iter().enumerate() {
                a[i * m + j] = self.green[si * self.n + sj];
            }
        }
        self.block = DenseCholesky::factor(&a, m)?;
        self.moves_since_refresh = 0;
        Ok(())
    }

    /// Heat-bath update of site `x` with uniform `u`.
    pub fn update(&mut self, x: usize, u: f64) -> Result<()> {
        let p = self.conditional(x);
        self.set(x, u < p).map_err(|e| Error::SweepFailed { site: x, reason: e.to_string() })
    }
}

/// Joint heat bath on `(φ, A)` for the measure
/// `exp(−½ φᵀ Δ²_N φ) Π_x (dφ_x + ε δ_0(dφ_x))`.
///
/// Given the rest, `φ_x` has precision `Q = Δ²(x,x)` and mean `μ = −b/Q` with
/// `b = Σ_{y≠x} Δ²(x,y) φ_y`. Integrating the Lebesgue part gives weight
/// `√(2π/Q) e^{Qμ²/2}` against `ε` for the atom at zero.
#[derive(Clone, Debug)]
pub struct FieldHeatBath {
    epsilon: f64,
    precision: f64,
    /// neighbour indices (excluding the centre) and their stencil coefficients
    neighbors: Vec<u32>,
    offsets: Vec<usize>,
    coefficients: Vec<f64>,
    field: Vec<f64>,
    pinned: Vec<bool>,
}

impl FieldHeatBath {
    pub fn new(law: &PinnedLaw) -> Result<Self> {
        let sites = law.lattice_box().sites();
        let dim = sites.dim();
        let stencil = BilaplacianStencil::new(dim);
        let mut neighbors = Vec::new();
        let mut coefficients = Vec::new();
        let mut offsets = vec![0];
        let mut buf = vec![0i32; dim];
        for s in sites.iter() {
            for (k, off) in stencil.offsets().iter().enumerate() {
                if off.iter().all(|&o| o == 0) {
                    continue;
                }
                for a in 0..dim {
                    buf[a] = s[a] + off[a];
                }
                if let Some(j) = sites.index_of(&buf) {
                    neighbors.push(j as u32);
                    coefficients.push(stencil.coefficient::<f64>(k));
                }
            }
            offsets.push(neighbors.len());
        }
        let n = sites.len();
        Ok(Self {
            epsilon: law.epsilon(),
            precision: stencil.center(),
            neighbors,
            offsets,
            coefficients,
            field: vec![0.0; n],
            pinned: vec![false; n],
        })
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// Heat-bath update of site `x` from a uniform `u` and a standard normal `z`.
    pub fn update(&mut self, x: usize, u: f64, z: f64) {
        let range = self.offsets[x]..self.offsets[x + 1];
        let b: f64 =
            self.neighbors[range.clone()].iter().zip(&self.coefficients[range]).map(|(&j, &c)| c * self.field[j as usize]).sum();
        let q = self.precision;
        let mu = -b / q;
        let log_free = 0.5 * (2.0 * PI / q).ln() + 0.5 * q * mu * mu;
        let p = 1.0 / (1.0 + (log_free - self.epsilon.ln()).exp());
        if u < p {
            self.pinned[x] = true;
            self.field[x] = 0.0;
        } else {
            self.pinned[x] = false;
            self.field[x] = mu + z / q.sqrt();
        }
    }
}

#[derive(Clone, Debug)]
enum Engine {
    Collapsed(Box<CollapsedGibbs>),
    Field(Box<FieldHeatBath>),
}

/// One Markov chain on pinned subsets of the box. Starts from `A = ∅`.
#[derive(Clone, Debug)]
pub struct GibbsChain {
    law: PinnedLaw,
    engine: Engine,
    kind: SamplerKind,
    scan: ScanOrder,
    rng: Rng,
    sweeps: u64,
}

impl GibbsChain {
    pub fn new(law: &PinnedLaw, kind: SamplerKind, scan: ScanOrder, seed: u64) -> Result<Self> {
        let kind = kind.resolve(law.lattice_box().len());
        let engine = match kind {
            SamplerKind::Field => Engine::Field(Box::new(FieldHeatBath::new(law)?)),
            _ => Engine::Collapsed(Box::new(CollapsedGibbs::new(law)?)),
        };
        Ok(Self { law: *law, engine, kind, scan, rng: substream(seed, "pinning-chain", 0), sweeps: 0 })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn pinned_mask(&self) -> &[bool] {
        match &self.engine {
            Engine::Collapsed(c) => c.pinned(),
            Engine::Field(f) => f.pinned(),
        }
    }

    pub fn pinned_region(&self) -> Region {
        let sites = self.law.lattice_box().sites();
        let d = sites.dim();
        Region::from_sites(d, self.pinned_mask().iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| sites.site(i).to_vec()))
    }

    fn update_site(&mut self, x: usize) -> Result<()> {
        let u: f64 = self.rng.random();
        match &mut self.engine {
            Engine::Collapsed(c) => c.update(x, u),
            Engine::Field(f) => {
                let z: f64 = self.rng.sample(StandardNormal);
                f.update(x, u, z);
                Ok(())
            }
        }
    }

    /// One sweep: every site once in lexicographic order, or `|V_N|` uniformly drawn sites.
    pub fn sweep(&mut self) -> Result<()> {
        let n = self.pinned_mask().len();
        for i in 0..n {
            let x = match self.scan {
                ScanOrder::Systematic => i,
                ScanOrder::Random => self.rng.random_range(0..n),
            };
            self.update_site(x)?;
        }
        self.sweeps += 1;
        Ok(())
    }
}

/// Advances the chain by one sweep.
pub fn gibbs_sweep(chain: &mut GibbsChain) -> Result<()> {
    chain.sweep()
}

pub const ENSEMBLE_VERSION: u32 = 1;
const ENSEMBLE_MAGIC: &[u8] = b"MLENS1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub dim: usize,
    pub side: u32,
    pub epsilon: f64,
    pub seed: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub samples: usize,
    pub sampler: SamplerKind,
    pub scan: ScanOrder,
    pub version: u32,
}

/// Recorded pinned sets, each with weight `1/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnedEnsemble {
    pub header: EnsembleHeader,
    pub samples: Vec<Vec<bool>>,
}

/// Sweeps `burn_in` times, then records `n` states `thinning` sweeps apart.
/// The first record is taken right after burn-in, so `n = 1, burn_in = 0` returns the initial `A = ∅`.
pub fn sample_ensemble(
    law: &PinnedLaw,
    n: usize,
    burn_in: u64,
    thinning: u64,
    seed: u64,
    kind: SamplerKind,
    scan: ScanOrder,
) -> Result<PinnedEnsemble> {
    if n == 0 {
        return Err(invalid("n", "at least one sample is required"));
    }
    if thinning == 0 {
        return Err(invalid("thinning", "thinning must be at least 1"));
    }
    let mut chain = GibbsChain::new(law, kind, scan, seed)?;
    for _ in 0..burn_in {
        chain.sweep()?;
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            for _ in 0..thinning {
                chain.sweep()?;
            }
        }
        samples.push(chain.pinned_mask().to_vec());
    }
    let bx = law.lattice_box();
    Ok(PinnedEnsemble {
        header: EnsembleHeader {
            dim: bx.dim(),
            side: bx.side(),
            epsilon: law.epsilon(),
            seed,
            burn_in,
            thinning,
            samples: n,
            sampler: chain.kind(),
            scan,
            version: ENSEMBLE_VERSION,
        },
        samples,
    })
}

impl PinnedEnsemble {
    pub fn lattice_box(&self) -> Result<LatticeBox> {
        LatticeBox::new(self.header.dim, self.header.side)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.iter().filter(|&&p| p).count() as f64 / s.len() as f64).collect()
    }

    pub fn mean_density(&self) -> f64 {
        let d = self.densities();
        d.iter().sum::<f64>() / d.len() as f64
    }

    pub fn regions(&self) -> Result<Vec<Region>> {
        let sites = self.lattice_box()?.sites();
        Ok(self
            .samples
            .iter()
            .map(|s| {
                Region::from_sites(sites.dim(), s.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| sites.site(i).to_vec()))
            })
            .collect())
    }

    /// Magic line, JSON header line, then one little-endian bitmap per sample.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = ENSEMBLE_MAGIC.to_vec();
        out.extend(serde_json::to_vec(&self.header)?);
        out.push(b'\n');
        for s in &self.samples {
            let mut bytes = vec![0u8; s.len().div_ceil(8)];
            for (i, &p) in s.iter().enumerate() {
                if p {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend(bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes.strip_prefix(ENSEMBLE_MAGIC).ok_or_else(|| Error::Format("not an ensemble record".into()))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("missing header line".into()))?;
        let header: EnsembleHeader = serde_json::from_slice(&rest[..nl])?;
        let n = LatticeBox::new(header.dim, header.side)?.len();
        let width = n.div_ceil(8);
        let body = &rest[nl + 1..];
        if body.len() != width * header.samples {
            return Err(Error::Format(format!("expected {} bitmap bytes, found {}", width * header.samples, body.len())));
        }
        let samples = body.chunks_exact(width).map(|c| (0..n).map(|i| c[i / 8] >> (i % 8) & 1 == 1).collect()).collect();
        Ok(Self { header, samples })
    }

    /// `sample,size,density`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("sample,size,density\n");
        for (i, s) in self.samples.iter().enumerate() {
            let size = s.iter().filter(|&&p| p).count();
            out.push_str(&format!("{i},{size},{}\n", size as f64 / s.len() as f64));
        }
        out
    }
}

/// Sandwich of every conditional pinning probability between the values
/// implied by the variance bounds `2d/(2d+1) ≤ σ² ≤ V_max`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationReport {
    pub dim: usize,
    pub side: u32,
    pub epsilon: f64,
    pub variance_bound: f64,
    pub checks: usize,
    /// `q₋/(1+q₋)` with `q₋ = ε/√(2π V_max)`
    pub lower: f64,
    /// `q₊/(1+q₊)` with `q₊ = ε/√(2π · 2d/(2d+1))`
    pub upper: f64,
    pub observed_min: f64,
    pub observed_max: f64,
    pub observed_min_variance: f64,
    pub observed_max_variance: f64,
    pub violations: Vec<(Vec<i32>, f64)>,
}

/// Slack for rounding in the envelope comparison.
pub const ENVELOPE_SLACK: f64 = 1e-12;

impl DominationReport {
    pub fn new(law: &PinnedLaw, variance_bound: f64) -> Self {
        let bx = law.lattice_box();
        Self {
            dim: bx.dim(),
            side: bx.side(),
            epsilon: law.epsilon(),
            variance_bound,
            checks: 0,
            lower: pin_probability(law.epsilon(), variance_bound),
            upper: pin_probability(law.epsilon(), variance_lower_bound(bx.dim())),
            observed_min: f64::INFINITY,
            observed_max: f64::NEG_INFINITY,
            observed_min_variance: f64::INFINITY,
            observed_max_variance: f64::NEG_INFINITY,
            violations: Vec::new(),
        }
    }

    /// Records one conditional computed from variance `v` at site `x`.
    pub fn record(&mut self, x: &[i32], v: f64) {
        let p = pin_probability(self.epsilon, v);
        self.checks += 1;
        self.observed_min = self.observed_min.min(p);
        self.observed_max = self.observed_max.max(p);
        self.observed_min_variance = self.observed_min_variance.min(v);
        self.observed_max_variance = self.observed_max_variance.max(v);
        if p < self.lower - ENVELOPE_SLACK || p > self.upper + ENVELOPE_SLACK {
            self.violations.push((x.to_vec(), p));
        }
    }

    pub fn merge(&mut self, other: &DominationReport) {
        self.checks += other.checks;
        self.observed_min = self.observed_min.min(other.observed_min);
        self.observed_max = self.observed_max.max(other.observed_max);
        self.observed_min_variance = self.observed_min_variance.min(other.observed_min_variance);
        self.observed_max_variance = self.observed_max_variance.max(other.observed_max_variance);
        self.violations.extend(other.violations.iter().cloned());
    }
}

/// Checks `gibbs_conditional(A, x)` against the envelope for every `(A, x)` pair.
pub fn domination_diagnostic<'a>(
    law: &PinnedLaw,
    variance_bound: f64,
    pairs: impl IntoIterator<Item = (&'a Region, Vec<i32>)>,
    config: SolverConfig,
) -> Result<DominationReport> {
    let mut report = DominationReport::new(law, variance_bound);
    let sites = law.lattice_box().sites();
    for (pinned, x) in pairs {
        let free = sites.filter(|s| s == x.as_slice() || !pinned.contains(s));
        let v = GreenSolver::<f64>::new(&free, config)?.variance(&x)?;
        report.record(&x, v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(dim: usize, side: u32, eps: f64) -> PinnedLaw {
        PinnedLaw::new(LatticeBox::new(dim, side).unwrap(), eps).unwrap()
    }

    #[test]
    fn partition_ratio_single_sites() {
        let one = Region::from_sites(1, [[0]]);
        assert!((partition_ratio(&one, &[0]).unwrap() - 1.0 / (4.0 * PI / 3.0).sqrt()).abs() < 1e-12);
        assert!((partition_ratio(&one, &[0]).unwrap() - 0.48860).abs() < 1e-5);
        let one4 = Region::from_sites(4, [[0; 4]]);
        assert!((partition_ratio(&one4, &[0; 4]).unwrap() - 0.423142).abs() < 1e-6);
        let e = Region::from_bounds(2, &[-2, -2], &[2, 2]);
        let r = partition_ratio(&e, &[0, 0]).unwrap();
        assert!(r > 0.0 && r <= conditional_density(variance_lower_bound(2)));
    }

    #[test]
    fn one_site_conditional_matches_enumeration() {
        let l = law(1, 0, 1.0);
        let p = gibbs_conditional(&l, &Region::empty(1), &[0], SolverConfig::default()).unwrap();
        assert!((p - 0.3283).abs() < 1e-4);
        let table = enumerate_zeta(l.lattice_box(), 1.0).unwrap();
        assert!((table.probabilities[1] - p).abs() < 1e-12);
        // two-term sum with Z_∅ = 1 and Z_{x} = √(4π/3)
        let z_free = (4.0 * PI / 3.0).sqrt();
        assert!((1.0 / (1.0 + z_free) - p).abs() < 1e-12);
    }

    #[test]
    fn conditional_monotone_in_epsilon() {
        let mut last = 0.0;
        for eps in [1e-6, 0.01, 0.5, 1.0, 2.0, 50.0] {
            let p = gibbs_conditional(&law(2, 2, eps), &Region::empty(2), &[0, 0], SolverConfig::default()).unwrap();
            assert!(p > last && p < 1.0);
            last = p;
        }
        assert!(PinnedLaw::new(LatticeBox::new(1, 2).unwrap(), 0.0).is_err());
    }

    #[test]
    fn enumeration_edges() {
        let bx = LatticeBox::new(1, 4).unwrap();
        let t0 = enumerate_zeta(&bx, 0.0).unwrap();
        assert_eq!(t0.probabilities[0], 1.0);
        let t = enumerate_zeta(&bx, 1.0).unwrap();
        assert!((t.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.probabilities.iter().all(|&p| p > 0.0));
        assert!(enumerate_zeta(&LatticeBox::new(2, 4).unwrap(), 1.0).is_err());
    }

    #[test]
    fn size_tails_increase_with_epsilon() {
        let bx = LatticeBox::new(1, 6).unwrap();
        let tables: Vec<ZetaTable> = [0.5, 1.0, 2.0].iter().map(|&e| enumerate_zeta(&bx, e).unwrap()).collect();
        for t in 0..=7 {
            assert!(tables[0].size_tail(t) <= tables[1].size_tail(t) + 1e-12);
            assert!(tables[1].size_tail(t) <= tables[2].size_tail(t) + 1e-12);
        }
    }

    #[test]
    fn enumeration_is_stationary_for_green_kernel() {
        for (dim, side) in [(1, 6), (2, 2)] {
            let t = enumerate_zeta(&LatticeBox::new(dim, side).unwrap(), 0.7).unwrap();
            assert!(t.stationarity_defect().unwrap() < 1e-10);
        }
    }

    #[test]
    fn collapsed_variances_match_fresh_solves() {
        let l = law(2, 4, 1.0);
        let mut g = CollapsedGibbs::new(&l).unwrap();
        let sites = l.lattice_box().sites();
        for &x in &[3usize, 7, 12, 20, 13] {
            g.set(x, true).unwrap();
        }
        g.set(7, false).unwrap();
        for x in [0usize, 3, 7, 12, 24] {
            let pinned =
                Region::from_sites(2, (0..sites.len()).filter(|&i| g.pinned()[i] && i != x).map(|i| sites.site(i).to_vec()));
            let free = sites.difference(&pinned);
            let v = GreenSolver::<f64>::new(&free, SolverConfig::default()).unwrap().variance(sites.site(x)).unwrap();
            assert!((g.conditional_variance(x) - v).abs() < 1e-10 * v, "site {x}");
        }
    }

    #[test]
    fn large_epsilon_pins_everything() {
        for kind in [SamplerKind::Collapsed, SamplerKind::Field] {
            let mut chain = GibbsChain::new(&law(2, 4, 1e9), kind, ScanOrder::Systematic, 3).unwrap();
            for _ in 0..3 {
                chain.sweep().unwrap();
            }
            assert!(chain.pinned_mask().iter().all(|&p| p), "{kind:?}");
        }
    }

    #[test]
    fn chains_are_deterministic() {
        for kind in [SamplerKind::Collapsed, SamplerKind::Field] {
            for scan in [ScanOrder::Systematic, ScanOrder::Random] {
                let a = sample_ensemble(&law(2, 4, 1.0), 5, 3, 2, 11, kind, scan).unwrap();
                let b = sample_ensemble(&law(2, 4, 1.0), 5, 3, 2, 11, kind, scan).unwrap();
                assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
            }
        }
    }

    #[test]
    fn ensemble_edges_and_round_trip() {
        let e = sample_ensemble(&law(1, 6, 1.0), 1, 0, 1, 1, SamplerKind::Auto, ScanOrder::Systematic).unwrap();
        assert_eq!(e.samples, vec![vec![false; 7]]);
        let e = sample_ensemble(&law(2, 4, 1.0), 4, 2, 1, 9, SamplerKind::Field, ScanOrder::Systematic).unwrap();
        let back = PinnedEnsemble::from_bytes(&e.to_bytes().unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(e.summary_csv().starts_with("sample,size,density\n0,"));
        assert!(PinnedEnsemble::from_bytes(b"nope").is_err());
        assert!(sample_ensemble(&law(1, 2, 1.0), 0, 0, 1, 1, SamplerKind::Auto, ScanOrder::Systematic).is_err());
    }

    #[test]
    fn single_site_envelope_is_tight() {
        let l = law(3, 0, 1.3);
        let empty = Region::empty(3);
        let r = domination_diagnostic(&l, variance_lower_bound(3), [(&empty, vec![0, 0, 0])], SolverConfig::default()).unwrap();
        assert!(r.violations.is_empty());
        assert!((r.lower - r.upper).abs() < 1e-15);
        assert!((r.observed_min - r.lower).abs() < 1e-12);
    }
}
