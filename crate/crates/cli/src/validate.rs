//! The default small invariant suite behind `membrane-lab validate`.

use rand::Rng as _;
use serde::Serialize;

use membrane_core::decay::{exact_mixture_covariance, field_sampling_check, fit_stretched_exponential, pinned_covariance};
use membrane_core::green::{
    condition_on, variance_lower_bound, walk_return_probabilities, SolverConfig, VarianceBoundConstants,
};
use membrane_core::lattice::{ball, LatticeBox, Region};
use membrane_core::operator::{gradient_energy_identity_defect, second_derivative_energy, sum_by_parts_defect};
use membrane_core::percolation::{ak_tail_experiment, distance_tail_experiment, interior_site_probability_check};
use membrane_core::pinning::{
    domination_diagnostic, enumerate_zeta, pin_probability, sample_ensemble, GibbsChain, PinnedLaw, SamplerKind, ScanOrder,
};
use membrane_core::rng::{substream, Rng};
use membrane_core::sobolev::{adaptive_bound, calibrate_c, h2_total_identity, norms, relative_defect, with_pinned_exterior};
use membrane_core::{Field, Solver};

use crate::commands::tube_certificate;
use crate::RunError;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name, passed: value <= threshold, value, threshold, detail: detail.into() }
    }
}

fn random_subset(rng: &mut Rng, region: &Region, p: f64) -> Region {
    region.filter(|_| rng.random::<f64>() < p)
}

fn random_field(rng: &mut Rng, support: Region) -> Field {
    Field::from_fn(support, |_| rng.random_range(-1.0..1.0))
}

/// Relative defects of every column checked for `Σ(D_iD_jG)² = 4d² G(y,y)`.
#[derive(Default)]
struct IdentityLog(Vec<f64>);

impl IdentityLog {
    fn record(&mut self, col: &Field, y: &[i32]) {
        let (lhs, rhs) = h2_total_identity(col, y);
        self.0.push(relative_defect(lhs, rhs));
    }
}

fn operator_identities(seed: u64) -> Check {
    let mut rng = substream(seed, "validate-fields", 0);
    let mut worst = 0.0f64;
    for d in [1usize, 2, 4, 5] {
        for _ in 0..20 {
            let u = random_field(&mut rng, ball(&vec![0; d], 2));
            let scale = second_derivative_energy(&u).abs().max(1e-300);
            worst = worst.max(gradient_energy_identity_defect(&u).abs() / scale);
            for dir in 1..=d as i32 {
                let v = random_field(&mut rng, ball(&vec![0; d], 2));
                let s = sum_by_parts_defect(&u, &v, dir).unwrap_or(f64::INFINITY);
                worst = worst.max(s.abs() / u.norm_sq().sqrt().max(1e-300) / v.norm_sq().sqrt().max(1e-300));
            }
        }
    }
    let delta = Field::delta(&[0]);
    let n = norms(&delta, &ball(&[0], 3));
    let exact = n.l2 == 1.0 && n.h1 == 3.0 && n.grad2 == 6.0 && second_derivative_energy(&delta) == 6.0;
    Check { name: "operator-identities", passed: worst <= 1e-10 && exact, value: worst, threshold: 1e-10, detail: format!("delta_0 in d=1 gives grad2 = {}", n.grad2) }
}

fn green_oracles(ids: &mut IdentityLog) -> Result<Check, RunError> {
    let mut worst = 0.0f64;
    for d in 1..=5usize {
        let y = vec![0; d];
        let col = Solver::new(&Region::from_sites(d, [y.clone()]), SolverConfig::default())?.column(&y)?;
        ids.record(&col, &y);
        worst = worst.max((col.get(&y) - variance_lower_bound(d)).abs());
    }
    let col = Solver::new(&Region::from_bounds(1, &[0], &[1]), SolverConfig::default())?.column(&[0])?;
    ids.record(&col, &[0]);
    worst = worst.max((col.get(&[0]) - 1.2).abs()).max((col.get(&[1]) - 0.8).abs());
    Ok(Check::at_most("green-closed-forms", worst, 1e-12, "single sites and the two-site d=1 box"))
}

fn schur(seed: u64, ids: &mut IdentityLog) -> Result<Check, RunError> {
    let mut rng = substream(seed, "validate-schur", 0);
    let bx = LatticeBox::new(2, 8)?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let free = random_subset(&mut rng, &bx.sites(), 0.8);
        let pinned = random_subset(&mut rng, &free, 0.2);
        let rest = free.difference(&pinned);
        if rest.is_empty() {
            continue;
        }
        let x = rest.site(rng.random_range(0..rest.len())).to_vec();
        let y = rest.site(rng.random_range(0..rest.len())).to_vec();
        let solver = Solver::new(&free, SolverConfig::default())?;
        let cond = condition_on(&solver, &pinned, &x, &y)?;
        let fresh_col = Solver::new(&rest, SolverConfig::default())?.column(&y)?;
        ids.record(&fresh_col, &y);
        let fresh = fresh_col.get(&x);
        worst = worst.max((cond - fresh).abs() / fresh.abs().max(1e-12));
    }
    Ok(Check::at_most("schur-conditioning", worst, 1e-8, "10 random (E, S) pairs in d=2, N=8"))
}

fn monotonicity(seed: u64) -> Result<Check, RunError> {
    let mut rng = substream(seed, "validate-monotone", 0);
    let bx = LatticeBox::new(4, 4)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let big = random_subset(&mut rng, &bx.sites(), 0.9);
        if big.is_empty() {
            continue;
        }
        let x = big.site(rng.random_range(0..big.len())).to_vec();
        let small = big.filter(|s| s == x.as_slice() || rng.random::<f64>() < 0.7);
        let vb = Solver::new(&big, SolverConfig::default())?.variance(&x)?;
        let vs = Solver::new(&small, SolverConfig::default())?.variance(&x)?;
        worst = worst.max(vs - vb);
    }
    Ok(Check::at_most("variance-monotonicity", worst, 1e-10, "max G_small(x,x) - G_big(x,x) over 10 nested pairs, d=4"))
}

fn random_walk() -> Result<Vec<Check>, RunError> {
    let p = walk_return_probabilities(&[0; 5], 2);
    let partial: f64 = p.iter().enumerate().map(|(m, q)| (m as f64 + 1.0) * q).sum();
    let rw = membrane_core::green::rw_green_infinite(&[0; 5], 2000)?;
    let gaps: Vec<f64> = [2u32, 4, 6]
        .iter()
        .map(|&n| Ok((rw - Solver::new(&LatticeBox::new(5, n)?.sites(), SolverConfig::default())?.variance(&[0; 5])?).abs()))
        .collect::<Result<_, RunError>>()?;
    Ok(vec![
        Check::at_most("rw-partial-sum", (partial - 1.3).abs(), 0.0, format!("M=2 partial sum {partial}")),
        Check {
            name: "rw-convergence",
            passed: gaps.windows(2).all(|w| w[1] < w[0]),
            value: gaps[2],
            threshold: gaps[1],
            detail: format!("|G_inf - G_N(0,0)| for N = 2, 4, 6 in d=5: {gaps:?}"),
        },
    ])
}

fn pinning(seed: u64) -> Result<Vec<Check>, RunError> {
    let single = enumerate_zeta(&LatticeBox::new(1, 0)?, 1.0)?.probabilities[1];
    let closed = pin_probability(1.0, variance_lower_bound(1));
    let bx = LatticeBox::new(1, 6)?;
    let table = enumerate_zeta(&bx, 1.0)?;
    let mut tv = 0.0f64;
    for (i, kind) in [SamplerKind::Collapsed, SamplerKind::Field].into_iter().enumerate() {
        let law = PinnedLaw::new(bx, 1.0)?;
        let mut chain = GibbsChain::new(&law, kind, ScanOrder::Systematic, seed.wrapping_add(i as u64))?;
        for _ in 0..100 {
            chain.sweep()?;
        }
        let mut counts = vec![0u64; 1 << bx.len()];
        for _ in 0..100_000 {
            chain.sweep()?;
            counts[chain.pinned_mask().iter().enumerate().map(|(i, &p)| (p as usize) << i).sum::<usize>()] += 1;
        }
        tv = tv.max(table.tv_distance(&counts));
    }
    Ok(vec![
        Check::at_most("pin-closed-form", (single - closed).abs(), 1e-10, format!("one-site P = {closed:.6}")),
        Check::at_most("gibbs-tv", tv, 0.02, "both samplers, 7-site d=1 box, eps=1, 1e5 sweeps"),
        Check::at_most("zeta-stationarity", table.stationarity_defect()?, 1e-10, "enumerated law is Gibbs-stationary"),
    ])
}

fn domination(seed: u64) -> Result<(Check, VarianceBoundConstants), RunError> {
    let bx = LatticeBox::new(4, 4)?;
    let vc = VarianceBoundConstants::calibrated_log(&[2, 4], SolverConfig::default())?;
    let law = PinnedLaw::new(bx, 1.0)?;
    let mut rng = substream(seed, "validate-domination", 0);
    let sites = bx.sites();
    let sets: Vec<Region> = (0..50)
        .map(|_| {
            let p = rng.random::<f64>();
            random_subset(&mut rng, &sites, p)
        })
        .collect();
    let pairs: Vec<(&Region, Vec<i32>)> =
        sets.iter().map(|a| (a, sites.site(rng.random_range(0..sites.len())).to_vec())).collect();
    let report = domination_diagnostic(&law, vc.variance_bound(bx.side()), pairs, SolverConfig::default())?;
    Ok((
        Check::at_most("domination-envelope", report.violations.len() as f64, 0.0, format!("{} checks in d=4, N=4", report.checks)),
        vc,
    ))
}

fn percolation(seed: u64) -> Result<Vec<Check>, RunError> {
    let c = interior_site_probability_check(2, 0.7, 10_000, seed)?;
    let window = ball(&[0, 0], 6);
    let tail = distance_tail_experiment(&window, 0.7, &[0, 0], 2, Some(2), 2_000, seed)?;
    let ak = ak_tail_experiment(2, 0.9, 10, 0.5, 500, seed)?;
    Ok(vec![
        Check::at_most("interior-probability", c.z_score().abs(), 4.0, format!("d=2, rho=0.7: {} vs {}", c.empirical.estimate(), c.exact)),
        Check { name: "distance-tail-bound", passed: tail.honored(), value: tail.point.estimate(), threshold: tail.point_bound, detail: "d=2, rho=0.7, t=2".into() },
        Check { name: "ak-tail-bound", passed: ak.honored(), value: ak.empirical.estimate(), threshold: ak.bound, detail: format!("vacuous = {}", ak.vacuous) },
    ])
}

fn field_sampling(seed: u64) -> Result<Check, RunError> {
    let free = Region::from_bounds(2, &[-2, -2], &[2, 2]);
    let pairs = vec![(vec![0, 0], vec![0, 0]), (vec![0, 0], vec![1, 0]), (vec![-1, 1], vec![2, 2])];
    let checks = field_sampling_check(&free, &pairs, 10_000, seed)?;
    let worst = checks.iter().map(|c| (c.empirical - c.exact).abs() / c.stderr).fold(0.0, f64::max);
    Ok(Check::at_most("field-sampling", worst, 4.0, "largest |z| over three covariances, 1e4 draws"))
}

fn fits() -> Check {
    let synth = |f: &dyn Fn(f64) -> f64| (1..=20).map(|k| (k as f64, f(k as f64))).collect::<Vec<_>>();
    let a = fit_stretched_exponential(&synth(&|k| (-k.sqrt()).exp())).map(|f| f.alpha).unwrap_or(f64::NAN);
    let b = fit_stretched_exponential(&synth(&|k| (-k).exp())).map(|f| f.alpha).unwrap_or(f64::NAN);
    let poly = fit_stretched_exponential(&synth(&|k| 1.0 / k)).map(|f| f.stretched).unwrap_or(true);
    let err = (a - 0.5).abs().max((b - 1.0).abs());
    Check { name: "stretched-fit", passed: err <= 0.01 && !poly, value: err, threshold: 0.01, detail: format!("alpha = {a:.4}, {b:.4}; k^-1 flagged = {}", !poly) }
}

fn mixture(seed: u64) -> Result<Vec<Check>, RunError> {
    let bx = LatticeBox::new(1, 4)?;
    let table = enumerate_zeta(&bx, 1.0)?;
    let law = PinnedLaw::new(bx, 1.0)?;
    let ens = sample_ensemble(&law, 4_000, 50, 1, seed, SamplerKind::Collapsed, ScanOrder::Systematic)?;
    let est = pinned_covariance(&ens, &[0], &[1], SolverConfig::default())?;
    let exact = exact_mixture_covariance(&table, &[0], &[1])?;
    let var = pinned_covariance(&ens, &[0], &[0], SolverConfig::default())?;
    let g = Solver::new(&bx.sites(), SolverConfig::default())?.variance(&[0])?;
    Ok(vec![
        Check::at_most("mixture-consistency", (est.estimate - exact).abs() / est.stderr.max(1e-12), 3.0, format!("{} vs exact {exact}", est.estimate)),
        Check::at_most("pinning-reduces-variance", var.estimate - g - 2.0 * var.stderr, 0.0, format!("{} vs G_N(0,0) = {g}", var.estimate)),
    ])
}

fn certificate(ids: &mut IdentityLog) -> Result<Check, RunError> {
    let bx = LatticeBox::new(2, 16)?;
    let s = tube_certificate(&bx, 1, SolverConfig::default())?;
    ids.0.push(relative_defect(s.identity_lhs, s.identity_rhs));
    let fit = s.certificate.s_fit.unwrap_or(0.0);
    Ok(Check { name: "tube-certificate", passed: fit > 0.1 && s.pointwise_ok, value: fit, threshold: 0.1, detail: format!("d=2, N=16 tube; pointwise bound holds = {}", s.pointwise_ok) })
}

/// `c_cfg` from Bernoulli pinned sets in d=2, then the adaptive bound with it.
fn adaptive(seed: u64) -> Result<(Check, Option<f64>), RunError> {
    let bx = LatticeBox::new(2, 24)?;
    let y = vec![0, 0];
    let mut rng = substream(seed, "validate-adaptive", 0);
    let mut samples = Vec::new();
    for _ in 0..20 {
        let pinned = random_subset(&mut rng, &bx.sites(), 0.97).filter(|s| !(s[1] == 0 && (0..=10).contains(&s[0])));
        let free = bx.sites().difference(&pinned);
        let col = Solver::new(&free, SolverConfig::default())?.column(&y)?;
        let gamma = col.get(&y);
        let all = with_pinned_exterior(&bx, &pinned);
        let r = adaptive_bound(&all, &[10, 0], &y, 0.65, gamma, 1.0, Some(&col))?;
        samples.push((r.measured.unwrap_or(0.0), gamma, r.m_k, r.a_k));
    }
    let c = calibrate_c(&samples, 2);
    let finite_c = c.filter(|c| c.is_finite());
    let informative = samples.iter().any(|s| s.3 > 0);
    let ok = informative
        && c.is_some_and(|c| c > 0.0)
        && samples.iter().all(|&(measured, gamma, m_k, a_k)| {
            let exponent = if a_k == 0 { 0.0 } else { finite_c.unwrap_or(0.0) * m_k.powi(-2 * 3) * a_k as f64 };
            measured <= gamma * (-exponent).exp() * (1.0 + 1e-12)
        });
    Ok((
        Check { name: "adaptive-bound", passed: ok, value: finite_c.unwrap_or(f64::INFINITY), threshold: 0.0, detail: "calibrated c_cfg over 20 configurations, d=2, k=10".into() },
        finite_c,
    ))
}

pub struct SuiteResult {
    pub checks: Vec<Check>,
    pub gamma_log_hat: Option<f64>,
    pub c_cfg: Option<f64>,
}

pub fn run_suite(seed: u64) -> Result<SuiteResult, RunError> {
    let mut ids = IdentityLog::default();
    let mut checks = vec![operator_identities(seed), green_oracles(&mut ids)?, schur(seed, &mut ids)?, monotonicity(seed)?];
    checks.extend(random_walk()?);
    checks.extend(pinning(seed)?);
    let (dom, vc) = domination(seed)?;
    checks.push(dom);
    checks.extend(percolation(seed)?);
    checks.push(field_sampling(seed)?);
    checks.push(fits());
    checks.extend(mixture(seed)?);
    checks.push(certificate(&mut ids)?);
    let (ad, c_cfg) = adaptive(seed)?;
    checks.push(ad);
    let worst = ids.0.iter().copied().fold(0.0, f64::max);
    checks.push(Check::at_most("energy-identity", worst, 1e-8, format!("sum (D_iD_j G)^2 = 4d^2 G(y,y) on {} columns", ids.0.len())));
    Ok(SuiteResult { checks, gamma_log_hat: vc.gamma_log, c_cfg })
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("name,passed,value,threshold\n");
    for c in checks {
        out.push_str(&format!("{},{},{},{}\n", c.name, c.passed, crate::output::num(c.value), crate::output::num(c.threshold)));
    }
    out
}
