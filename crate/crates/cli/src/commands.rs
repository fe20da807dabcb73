use std::path::PathBuf;

use serde::Serialize;

use membrane_core::decay::{
    batch_mean, decay_profile, deterministic_vs_random_comparison, ensemble_id, fit_profile, ComparisonReport, StretchedFit,
};
use membrane_core::green::{
    asymptotic_ratio_profile, column_to_csv, rw_green_infinite, spread_site, variance_lower_bound, ColumnCache,
    VarianceBoundConstants, GAMMA_TRUNCATION,
};
use membrane_core::lattice::{ball, l1_distance, tube, LatticeBox, Region};
use membrane_core::percolation::{ak_tail_experiment, distance_tail_experiment, interior_site_probability_check};
use membrane_core::pinning::{
    domination_diagnostic, enumerate_zeta, pin_probability, sample_ensemble, PinnedLaw,
};
use membrane_core::rng::substream;
use membrane_core::sobolev::{h2_total_identity, relative_defect, shell_norm_sequence, DecayCertificate, EQUIVALENCE_C};
use membrane_core::Solver;

use crate::config::RunConfig;
use crate::output::{coord_header, coords, num, OutputDir};
use crate::{RunError, Status};

/// `$MEMBRANE_LAB_CACHE`, else `$XDG_CACHE_HOME/membrane-lab`, else `~/.cache/membrane-lab`.
pub fn cache() -> ColumnCache {
    let fallback = std::env::var_os("XDG_CACHE_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache")))
        .unwrap_or_else(std::env::temp_dir)
        .join("membrane-lab");
    ColumnCache::from_env_or(fallback)
}

fn eps_tag(e: f64) -> String {
    format!("eps-{e}")
}

#[derive(Serialize)]
struct GreenSummary {
    dim: usize,
    side: u32,
    sites: usize,
    backend: &'static str,
    variance: f64,
    variance_lower_bound: f64,
    residual_inf: f64,
    identity_lhs: f64,
    identity_rhs: f64,
    identity_relative_defect: f64,
    rw_green_infinite: Option<f64>,
    rw_truncation: usize,
}

pub fn green(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let bx = LatticeBox::new(cfg.d, cfg.n)?;
    let y = vec![0; cfg.d];
    let solver = Solver::new(&bx.sites(), cfg.solver())?;
    let col = out.timed("solve", |_| cache().column(&bx, &solver, &y))?;
    let y_idx = solver.free_set().index_of(&y).expect("origin is in the box");
    let (lhs, rhs) = h2_total_identity(&col, &y);
    let rw = if cfg.d >= 5 { Some(rw_green_infinite(&y, GAMMA_TRUNCATION)?) } else { None };
    out.write("green_column.csv", column_to_csv(&col).as_bytes())?;
    out.write_json(
        "green_summary.json",
        &GreenSummary {
            dim: cfg.d,
            side: cfg.n,
            sites: bx.len(),
            backend: solver.backend_name(),
            variance: col.get(&y),
            variance_lower_bound: variance_lower_bound(cfg.d),
            residual_inf: solver.residual_inf(col.values(), y_idx),
            identity_lhs: lhs,
            identity_rhs: rhs,
            identity_relative_defect: relative_defect(lhs, rhs),
            rw_green_infinite: rw,
            rw_truncation: GAMMA_TRUNCATION,
        },
    )?;
    let quarter = (cfg.n / 4) as i32;
    let usable: Vec<u32> = cfg
        .distances
        .iter()
        .copied()
        .filter(|&r| r >= 1 && spread_site(cfg.d, r).iter().all(|v| v.abs() <= quarter))
        .collect();
    if cfg.d >= 4 && !usable.is_empty() {
        let profile = asymptotic_ratio_profile(cfg.d, cfg.n, &usable, cfg.solver())?;
        let mut csv = format!("distance,{},green,green_reflected,scaled\n", coord_header(cfg.d));
        for r in &profile.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.distance,
                coords(&r.site),
                num(r.green),
                num(r.green_reflected),
                num(r.scaled)
            ));
        }
        out.write("green_profile.csv", csv.as_bytes())?;
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
pub struct PointwiseRow {
    pub distance: u32,
    pub max_abs_green: f64,
    pub bound: Option<f64>,
    pub ok: Option<bool>,
}

#[derive(Serialize)]
pub struct CertificateSummary {
    pub free_sites: usize,
    pub certificate: DecayCertificate,
    pub measured_rate: Option<f64>,
    pub identity_lhs: f64,
    pub identity_rhs: f64,
    pub pointwise_ok: bool,
    pub pointwise: Vec<PointwiseRow>,
}

/// Shell-norm certificate for `G_A(·, 0)` with everything outside a tube pinned.
pub fn tube_certificate(bx: &LatticeBox, half_width: u32, config: membrane_core::green::SolverConfig) -> Result<CertificateSummary, RunError> {
    let d = bx.dim();
    let free = tube(bx, half_width);
    let y = vec![0; d];
    let col = Solver::new(&free, config)?.column(&y)?;
    let k_max = bx.half() as u32 + (d as u32 - 1) * half_width + 1;
    let cert = shell_norm_sequence(&col, &y, k_max, &col.support().dilate(2), EQUIVALENCE_C)?;
    let (lhs, rhs) = h2_total_identity(&col, &y);
    let mut maxima = vec![0.0f64; k_max as usize + 1];
    for (s, v) in free.iter().zip(col.values()) {
        let r = l1_distance(s, &y) as usize;
        maxima[r] = maxima[r].max(v.abs());
    }
    let pointwise: Vec<PointwiseRow> = (1..=k_max)
        .map(|r| {
            let bound = cert.pointwise_bound(r);
            let m = maxima[r as usize];
            PointwiseRow { distance: r, max_abs_green: m, bound, ok: bound.map(|b| m <= b) }
        })
        .collect();
    Ok(CertificateSummary {
        free_sites: free.len(),
        measured_rate: cert.measured_rate(),
        certificate: cert,
        identity_lhs: lhs,
        identity_rhs: rhs,
        pointwise_ok: pointwise.iter().all(|p| p.ok != Some(false)),
        pointwise,
    })
}

pub fn certificate(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let bx = LatticeBox::new(cfg.d, cfg.n)?;
    let summary = out.timed("certificate", |_| tube_certificate(&bx, cfg.tube, cfg.solver()))?;
    out.write("certificate.csv", summary.certificate.to_csv().as_bytes())?;
    let mut csv = String::from("distance,max_abs_green,bound,ok\n");
    for p in &summary.pointwise {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.distance,
            num(p.max_abs_green),
            p.bound.map_or(String::new(), num),
            p.ok.map_or(String::new(), |b| b.to_string())
        ));
    }
    out.write("certificate_pointwise.csv", csv.as_bytes())?;
    out.write_json("certificate.json", &summary)?;
    Ok(Status::Ok)
}

/// `γ̂` for the variance envelope, recording it in the manifest.
fn variance_constants(cfg: &RunConfig, out: &mut OutputDir) -> Result<Option<VarianceBoundConstants>, RunError> {
    let c = match cfg.d {
        4 => VarianceBoundConstants::calibrated_log(&[2, 4, cfg.n.max(2)], cfg.solver())?,
        d if d >= 5 => VarianceBoundConstants::measured(d)?,
        _ => return Ok(None),
    };
    out.measured.gamma_hat = c.gamma;
    out.measured.gamma_log_hat = c.gamma_log;
    Ok(Some(c))
}

#[derive(Serialize)]
struct EnsembleSummary {
    ensemble_id: String,
    header: membrane_core::pinning::EnsembleHeader,
    mean_density: f64,
    density_stderr: f64,
}

pub const DOMINATION_CHECKS: usize = 20;

pub fn pin_sample(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let bx = LatticeBox::new(cfg.d, cfg.n)?;
    let law = PinnedLaw::new(bx, cfg.eps[0])?;
    let ens = out.timed("sample", |_| {
        sample_ensemble(&law, cfg.samples, cfg.burn_in, cfg.thinning, cfg.seed, cfg.sampler, cfg.scan)
    })?;
    let dens = batch_mean(&ens.densities());
    out.write("ensemble.mlens", &ens.to_bytes()?)?;
    out.write("ensemble_summary.csv", ens.summary_csv().as_bytes())?;
    out.write_json(
        "ensemble.json",
        &EnsembleSummary { ensemble_id: ensemble_id(&ens)?, header: ens.header.clone(), mean_density: dens.estimate, density_stderr: dens.stderr },
    )?;
    if let Some(vc) = variance_constants(cfg, out)? {
        let regions = ens.regions()?;
        let sites = bx.sites();
        let mut rng = substream(cfg.seed, "domination-pairs", 0);
        let pairs: Vec<(&Region, Vec<i32>)> = (0..DOMINATION_CHECKS)
            .map(|_| {
                use rand::Rng;
                let a = &regions[rng.random_range(0..regions.len())];
                (a, sites.site(rng.random_range(0..sites.len())).to_vec())
            })
            .collect();
        let report = out.timed("domination", |_| domination_diagnostic(&law, vc.variance_bound(cfg.n), pairs, cfg.solver()))?;
        out.write_json("domination.json", &report)?;
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct EnumerationSummary {
    epsilon: f64,
    sites: usize,
    stationarity_defect: f64,
    size_tail: Vec<f64>,
    single_site_closed_form: f64,
    single_site_enumerated: f64,
}

pub fn pin_enumerate(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let bx = LatticeBox::new(cfg.d, cfg.n)?;
    let single = LatticeBox::new(cfg.d, 0)?;
    let mut summaries = Vec::new();
    for &eps in &cfg.eps {
        let table = enumerate_zeta(&bx, eps)?;
        let n = table.sites();
        let mut csv = String::from("mask,size,probability\n");
        for (mask, p) in table.probabilities.iter().enumerate() {
            csv.push_str(&format!("{mask},{},{}\n", mask.count_ones(), num(*p)));
        }
        out.write(&format!("zeta_{}.csv", eps_tag(eps)), csv.as_bytes())?;
        let sites = bx.sites();
        let mut csv = format!("{},marginal\n", coord_header(cfg.d));
        for i in 0..n {
            csv.push_str(&format!("{},{}\n", coords(sites.site(i)), num(table.marginal(i))));
        }
        out.write(&format!("zeta_marginals_{}.csv", eps_tag(eps)), csv.as_bytes())?;
        summaries.push(EnumerationSummary {
            epsilon: eps,
            sites: n,
            stationarity_defect: table.stationarity_defect()?,
            size_tail: (0..=n as u32).map(|t| table.size_tail(t)).collect(),
            single_site_closed_form: pin_probability(eps, variance_lower_bound(cfg.d)),
            single_site_enumerated: enumerate_zeta(&single, eps)?.probabilities[1],
        });
    }
    out.write_json("enumeration.json", &summaries)?;
    Ok(Status::Ok)
}

pub const TAIL_REGION_RADIUS: u32 = 2;
pub const AK_TRIALS_MAX: u64 = 2_000;

pub fn percolation(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let d = cfg.d;
    let x = vec![0; d];
    let mut interior = String::from("dim,rho,trials,hits,empirical,stderr,exact,z\n");
    let mut tails = String::from("rho,t,point_hits,trials,point_estimate,point_bound,region_radius,region_hits,region_bound,honored\n");
    let mut ak = String::from("rho,k,xi,m_k,trials,hits,empirical,bound,vacuous,precondition,honored\n");
    let window = ball(&x, cfg.t + TAIL_REGION_RADIUS + 2);
    let mut all_honored = true;
    for (i, &rho) in cfg.rho.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let c = out.timed(&format!("interior-{rho}"), |_| interior_site_probability_check(d, rho, cfg.trials, seed))?;
        interior.push_str(&format!(
            "{d},{rho},{},{},{},{},{},{}\n",
            c.empirical.trials,
            c.empirical.hits,
            num(c.empirical.estimate()),
            num(c.empirical.stderr_at(c.exact)),
            num(c.exact),
            num(c.z_score())
        ));
        for t in 1..=cfg.t {
            let r = distance_tail_experiment(&window, rho, &x, t, Some(TAIL_REGION_RADIUS), cfg.trials, seed)?;
            let (k, region, rb) = r.region.expect("radius was given");
            all_honored &= r.honored();
            tails.push_str(&format!(
                "{rho},{t},{},{},{},{},{k},{},{},{}\n",
                r.point.hits,
                r.point.trials,
                num(r.point.estimate()),
                num(r.point_bound),
                region.hits,
                num(rb),
                r.honored()
            ));
        }
        let trials = cfg.trials.min(AK_TRIALS_MAX);
        let r = out.timed(&format!("ak-{rho}"), |_| ak_tail_experiment(d, rho, cfg.k, cfg.xi, trials, seed))?;
        all_honored &= r.honored();
        ak.push_str(&format!(
            "{rho},{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            cfg.xi,
            num(r.m_k),
            r.empirical.trials,
            r.empirical.hits,
            num(r.empirical.estimate()),
            num(r.bound),
            r.vacuous,
            r.precondition,
            r.honored()
        ));
    }
    out.write("percolation_interior.csv", interior.as_bytes())?;
    out.write("percolation_tail.csv", tails.as_bytes())?;
    out.write("percolation_ak.csv", ak.as_bytes())?;
    out.write_json("percolation.json", &serde_json::json!({ "dim": d, "bounds_honored": all_honored }))?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct DecayRun {
    epsilon: f64,
    ensemble_id: String,
    mean_density: f64,
    fit: Option<StretchedFit>,
    fit_error: Option<String>,
    comparison: ComparisonReport,
}

#[derive(Serialize)]
struct Overlap {
    eps_a: f64,
    eps_b: f64,
    alpha_a: f64,
    alpha_b: f64,
    within_two_sigma: Option<bool>,
}

pub fn decay(cfg: &RunConfig, out: &mut OutputDir) -> Result<Status, RunError> {
    let bx = LatticeBox::new(cfg.d, cfg.n)?;
    let center = vec![0; cfg.d];
    let deterministic = out.timed("deterministic", |_| Solver::new(&tube(&bx, cfg.tube), cfg.solver())?.column(&center))?;
    let mut runs = Vec::new();
    for &eps in &cfg.eps {
        let law = PinnedLaw::new(bx, eps)?;
        let ens = out.timed(&format!("sample-{eps}"), |_| {
            sample_ensemble(&law, cfg.samples, cfg.burn_in, cfg.thinning, cfg.seed, cfg.sampler, cfg.scan)
        })?;
        let mut profile = out.timed(&format!("profile-{eps}"), |_| decay_profile(&ens, &center, &cfg.distances, 0, cfg.solver()))?;
        if cfg.lambda > 0.0 {
            profile = profile.windowed(cfg.delta, cfg.lambda);
        }
        out.write(&format!("decay_{}.csv", eps_tag(eps)), profile.to_csv().as_bytes())?;
        let comparison = deterministic_vs_random_comparison(&deterministic, &profile);
        let mut csv = String::from("k,deterministic,mixture,baseline\n");
        for r in &comparison.rows {
            csv.push_str(&format!("{},{},{},{}\n", r.k, num(r.deterministic), num(r.mixture), num(r.baseline)));
        }
        out.write(&format!("comparison_{}.csv", eps_tag(eps)), csv.as_bytes())?;
        let (fit, fit_error) = match fit_profile(&profile) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        runs.push(DecayRun { epsilon: eps, ensemble_id: profile.ensemble_id.clone(), mean_density: ens.mean_density(), fit, fit_error, comparison });
    }
    let mut overlaps = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            if let (Some(fa), Some(fb)) = (&a.fit, &b.fit) {
                let within = match (fa.alpha_stderr, fb.alpha_stderr) {
                    (Some(sa), Some(sb)) => Some((fa.alpha - fb.alpha).abs() <= 2.0 * (sa * sa + sb * sb).sqrt()),
                    _ => None,
                };
                overlaps.push(Overlap { eps_a: a.epsilon, eps_b: b.epsilon, alpha_a: fa.alpha, alpha_b: fb.alpha, within_two_sigma: within });
            }
        }
    }
    out.write_json("decay.json", &serde_json::json!({ "runs": runs, "alpha_overlaps": overlaps }))?;
    Ok(Status::Ok)
}

