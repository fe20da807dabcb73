//! Flat `key = value` run configuration. Command-line flags mirror the keys one to one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use membrane_core::green::{Backend, SolverConfig};
use membrane_core::pinning::{SamplerKind, ScanOrder};

/// Every recognised key, with its meaning; also used for `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("d", "lattice dimension, 1..=6"),
    ("N", "box side, even; the box is {-N/2..N/2}^d"),
    ("eps", "pinning strength, or a comma-separated list"),
    ("xi", "exponent of m_k = k^xi"),
    ("lambda", "distance window exponent: keep k >= delta N^lambda"),
    ("delta", "distance window prefactor in (0, 1]"),
    ("seed", "64-bit master seed"),
    ("backend", "auto | direct | cg"),
    ("tol", "conjugate gradient relative tolerance"),
    ("samples", "ensemble size"),
    ("burn_in", "Gibbs sweeps before the first record"),
    ("thinning", "sweeps between records"),
    ("sampler", "auto | collapsed | field"),
    ("scan", "systematic | random"),
    ("rho", "site percolation density, or a comma-separated list"),
    ("trials", "Monte Carlo trials for percolation"),
    ("distances", "comma-separated distances k for profiles"),
    ("k", "annulus scale for the a_k experiment, at least 10"),
    ("t", "largest distance threshold for the tail experiment"),
    ("tube", "half-width of the unpinned tube for certificates"),
    ("out", "output directory"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Green,
    Certificate,
    PinSample,
    PinEnumerate,
    Percolation,
    Decay,
    Validate,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Green,
        Command::Certificate,
        Command::PinSample,
        Command::PinEnumerate,
        Command::Percolation,
        Command::Decay,
        Command::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Green => "green",
            Command::Certificate => "certificate",
            Command::PinSample => "pin-sample",
            Command::PinEnumerate => "pin-enumerate",
            Command::Percolation => "percolation",
            Command::Decay => "decay",
            Command::Validate => "validate",
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::new("subcommand", format!("unknown subcommand `{s}`")))
    }
}

/// A configuration problem, always naming the offending key.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new("config", format!("line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim();
        if !KEYS.iter().any(|(name, _)| *name == k) {
            return Err(ConfigError::new(k, format!("unknown key on line {}", lineno + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub d: usize,
    pub n: u32,
    pub eps: Vec<f64>,
    pub xi: f64,
    pub lambda: f64,
    pub delta: f64,
    pub seed: u64,
    pub backend: Backend,
    pub tol: f64,
    pub samples: usize,
    pub burn_in: u64,
    pub thinning: u64,
    pub sampler: SamplerKind,
    pub scan: ScanOrder,
    pub rho: Vec<f64>,
    pub trials: u64,
    pub distances: Vec<u32>,
    pub k: u32,
    pub t: u32,
    pub tube: u32,
    pub out: PathBuf,
}

fn parse<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::new(field, format!("cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    let items: Vec<T> = v.split(',').map(|s| parse(field, s.trim())).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::new(field, "empty list"));
    }
    Ok(items)
}

impl RunConfig {
    /// Builds and validates a configuration from merged key-value pairs.
    pub fn from_map(command: Command, map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let (d0, n0) = match command {
            Command::PinEnumerate => (1, 6),
            Command::Percolation => (2, 8),
            Command::Decay => (4, 16),
            _ => (4, 8),
        };
        let d: usize = get("d").map_or(Ok(d0), |v| parse("d", v))?;
        let n: u32 = get("N").map_or(Ok(n0), |v| parse("N", v))?;
        let eps_default = if command == Command::Decay { "0.5,1,2" } else { "1" };
        let mut cfg = RunConfig {
            command,
            d,
            n,
            eps: parse_list("eps", get("eps").unwrap_or(eps_default))?,
            xi: get("xi").map_or(Ok(0.5), |v| parse("xi", v))?,
            lambda: get("lambda").map_or(Ok(0.0), |v| parse("lambda", v))?,
            delta: get("delta").map_or(Ok(1.0), |v| parse("delta", v))?,
            seed: get("seed").map_or(Ok(1), |v| parse("seed", v))?,
            backend: match get("backend").unwrap_or("auto") {
                "auto" => Backend::Auto,
                "direct" => Backend::Direct,
                "cg" => Backend::ConjugateGradient,
                other => return Err(ConfigError::new("backend", format!("expected auto, direct or cg, got `{other}`"))),
            },
            tol: get("tol").map_or(Ok(1e-10), |v| parse("tol", v))?,
            samples: get("samples").map_or(Ok(200), |v| parse("samples", v))?,
            burn_in: get("burn_in").map_or(Ok(100), |v| parse("burn_in", v))?,
            thinning: get("thinning").map_or(Ok(2), |v| parse("thinning", v))?,
            sampler: match get("sampler").unwrap_or("auto") {
                "auto" => SamplerKind::Auto,
                "collapsed" => SamplerKind::Collapsed,
                "field" => SamplerKind::Field,
                other => return Err(ConfigError::new("sampler", format!("expected auto, collapsed or field, got `{other}`"))),
            },
            scan: match get("scan").unwrap_or("systematic") {
                "systematic" => ScanOrder::Systematic,
                "random" => ScanOrder::Random,
                other => return Err(ConfigError::new("scan", format!("expected systematic or random, got `{other}`"))),
            },
            rho: parse_list("rho", get("rho").unwrap_or("0.5,0.7,0.9"))?,
            trials: get("trials").map_or(Ok(10_000), |v| parse("trials", v))?,
            distances: Vec::new(),
            k: get("k").map_or(Ok(10), |v| parse("k", v))?,
            t: get("t").map_or(Ok(3), |v| parse("t", v))?,
            tube: get("tube").map_or(Ok(1), |v| parse("tube", v))?,
            out: PathBuf::from(get("out").unwrap_or("out")),
        };
        cfg.check()?;
        cfg.distances = match get("distances") {
            Some(v) => parse_list("distances", v)?,
            None => {
                let reach = (n / 2).saturating_sub(n / 8).max(1);
                (1..=reach.min(6)).collect()
            }
        };
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(1..=6).contains(&self.d) {
            return Err(ConfigError::new("d", format!("d must be between 1 and 6, got d = {}", self.d)));
        }
        if self.n % 2 == 1 {
            return Err(ConfigError::new("N", format!("N must be even, got N = {}", self.n)));
        }
        if self.n == 0 {
            return Err(ConfigError::new("N", "N must be at least 2, got N = 0"));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(ConfigError::new("eps", format!("ε must be positive and finite, got {e}")));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(ConfigError::new("xi", format!("ξ must be positive, got {}", self.xi)));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(ConfigError::new("lambda", format!("λ must lie in [0, 1), got {}", self.lambda)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(ConfigError::new("delta", format!("δ must lie in (0, 1], got {}", self.delta)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(ConfigError::new("tol", format!("tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.samples == 0 {
            return Err(ConfigError::new("samples", "at least one sample is required"));
        }
        if self.thinning == 0 {
            return Err(ConfigError::new("thinning", "thinning must be at least 1"));
        }
        if let Some(r) = self.rho.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(ConfigError::new("rho", format!("ρ must lie in (0, 1], got {r}")));
        }
        if self.trials == 0 {
            return Err(ConfigError::new("trials", "at least one trial is required"));
        }
        if self.t == 0 {
            return Err(ConfigError::new("t", "t must be at least 1"));
        }
        if self.command == Command::Percolation && self.k < 10 {
            return Err(ConfigError::new("k", format!("k must be at least 10, got k = {}", self.k)));
        }
        if self.tube > self.n / 2 {
            return Err(ConfigError::new("tube", format!("tube half-width {} exceeds N/2 = {}", self.tube, self.n / 2)));
        }
        if self.command == Command::PinEnumerate {
            let sites = (self.n as u64 + 1).pow(self.d as u32);
            if sites > membrane_core::pinning::ENUMERATION_MAX_SITES as u64 {
                return Err(ConfigError::new(
                    "N",
                    format!(
                        "enumeration needs at most {} sites, but d = {} and N = {} give {sites}",
                        membrane_core::pinning::ENUMERATION_MAX_SITES,
                        self.d,
                        self.n
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::default().with_backend(self.backend).with_tolerance(self.tol)
    }

    /// The effective configuration as sorted key-value pairs, for the manifest.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let backend = match self.backend {
            Backend::Auto => "auto",
            Backend::Direct => "direct",
            Backend::ConjugateGradient => "cg",
        };
        let sampler = match self.sampler {
            SamplerKind::Auto => "auto",
            SamplerKind::Collapsed => "collapsed",
            SamplerKind::Field => "field",
        };
        let scan = match self.scan {
            ScanOrder::Systematic => "systematic",
            ScanOrder::Random => "random",
        };
        [
            ("d", self.d.to_string()),
            ("N", self.n.to_string()),
            ("eps", join(&self.eps)),
            ("xi", self.xi.to_string()),
            ("lambda", self.lambda.to_string()),
            ("delta", self.delta.to_string()),
            ("seed", self.seed.to_string()),
            ("backend", backend.to_string()),
            ("tol", format!("{:e}", self.tol)),
            ("samples", self.samples.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("thinning", self.thinning.to_string()),
            ("sampler", sampler.to_string()),
            ("scan", scan.to_string()),
            ("rho", join(&self.rho)),
            ("trials", self.trials.to_string()),
            ("distances", self.distances.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")),
            ("k", self.k.to_string()),
            ("t", self.t.to_string()),
            ("tube", self.tube.to_string()),
            ("out", self.out.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Merges a config file (if any) with flag overrides.
pub fn load(command: Command, file: Option<&Path>, flags: &BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let mut map = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", p.display())))?;
            parse_key_values(&text)?
        }
        None => BTreeMap::new(),
    };
    for (k, v) in flags {
        map.insert(k.clone(), v.clone());
    }
    RunConfig::from_map(command, &map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let m = parse_key_values("# header\nd = 2\n\nN=4  # side\n").unwrap();
        assert_eq!(m, map(&[("d", "2"), ("N", "4")]));
        assert_eq!(parse_key_values("depth = 3").unwrap_err().field, "depth");
        assert_eq!(parse_key_values("d 3").unwrap_err().field, "config");
    }

    #[test]
    fn odd_n_names_n() {
        let e = RunConfig::from_map(Command::Green, &map(&[("N", "7")])).unwrap_err();
        assert_eq!(e.field, "N");
        assert!(e.to_string().contains("N = 7"));
    }

    #[test]
    fn defaults_and_lists() {
        let c = RunConfig::from_map(Command::Decay, &map(&[])).unwrap();
        assert_eq!((c.d, c.n), (4, 16));
        assert_eq!(c.eps, vec![0.5, 1.0, 2.0]);
        assert_eq!(c.distances, vec![1, 2, 3, 4, 5, 6]);
        let c = RunConfig::from_map(Command::Green, &map(&[("distances", "2, 4"), ("backend", "cg")])).unwrap();
        assert_eq!(c.distances, vec![2, 4]);
        assert_eq!(c.backend, Backend::ConjugateGradient);
        assert_eq!(RunConfig::from_map(Command::Green, &map(&[("eps", "1,-2")])).unwrap_err().field, "eps");
        assert_eq!(RunConfig::from_map(Command::PinEnumerate, &map(&[("N", "16")])).unwrap_err().field, "N");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_map(Command::Percolation, &map(&[("rho", "0.25"), ("seed", "9")])).unwrap();
        let mut echoed = c.echo();
        echoed.retain(|k, _| k != "out");
        let again = RunConfig::from_map(Command::Percolation, &echoed).unwrap();
        assert_eq!(again, RunConfig { out: again.out.clone(), ..c.clone() });
    }
}
