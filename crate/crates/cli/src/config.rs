//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Missing keys take their defaults, unknown or repeated keys are
//! errors. [`ExperimentConfig::emit`] writes every key in a fixed order, and
//! parsing the output gives back the same configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use erw_core::cuts::Window;
use erw_core::environment::{CookieCount, CookieEnvironment, Marginal, StackLaw};
use erw_core::estimators::RunOptions;
use erw_core::rng::{site_key, Purpose, SeedSpec};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// One-site cookie law, written `const:B`, `uniform:LO:HI` or
/// `discrete:V@W,V@W,...`.
#[derive(Debug, Clone, PartialEq)]
pub enum LawSpec {
    Const(f64),
    Uniform(f64, f64),
    Discrete(Vec<(f64, f64)>),
}

impl LawSpec {
    fn validate(&self, key: &str) -> Result<(), ConfigError> {
        let in_range = |b: f64| (-1.0..=1.0).contains(&b);
        let ok = match self {
            LawSpec::Const(b) => in_range(*b),
            LawSpec::Uniform(lo, hi) => in_range(*lo) && in_range(*hi) && lo <= hi,
            LawSpec::Discrete(atoms) => {
                !atoms.is_empty() && atoms.iter().all(|&(v, w)| in_range(v) && w > 0.0 && w.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(bad(key, format!("`{self}` is not a law on [-1, 1]")))
        }
    }

    fn marginal(&self) -> erw_core::Result<Marginal> {
        match self {
            LawSpec::Const(b) => Marginal::discrete(&[*b], &[1.0]),
            LawSpec::Uniform(lo, hi) => Marginal::uniform(*lo, *hi),
            LawSpec::Discrete(atoms) => {
                let (v, w): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
                Marginal::discrete(&v, &w)
            }
        }
    }
}

impl fmt::Display for LawSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawSpec::Const(b) => write!(f, "const:{b}"),
            LawSpec::Uniform(lo, hi) => write!(f, "uniform:{lo}:{hi}"),
            LawSpec::Discrete(atoms) => {
                write!(f, "discrete:")?;
                for (i, (v, w)) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}@{w}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for LawSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("`{s}` has no law kind"))?;
        match kind.trim() {
            "const" => Ok(LawSpec::Const(num(rest)?)),
            "uniform" => {
                let (lo, hi) = rest.split_once(':').ok_or("uniform needs `LO:HI`")?;
                Ok(LawSpec::Uniform(num(lo)?, num(hi)?))
            }
            "discrete" => rest
                .split(',')
                .map(|atom| {
                    let (v, w) = atom.split_once('@').ok_or_else(|| format!("atom `{atom}` needs `V@W`"))?;
                    Ok((num(v)?, num(w)?))
                })
                .collect::<Result<Vec<_>, String>>()
                .map(LawSpec::Discrete),
            other => Err(format!("unknown law kind `{other}`")),
        }
    }
}

/// Which environment to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// `beta` at every site.
    Constant,
    /// Independent stacks drawn from `law`.
    Iid,
    /// Stacks constant along horizontal lines, drawn from `law`.
    Vertical,
    /// Coupled pair `(lower, upper)`; random members share site keys.
    Pair,
}

impl EnvKind {
    fn name(self) -> &'static str {
        match self {
            EnvKind::Constant => "constant",
            EnvKind::Iid => "iid",
            EnvKind::Vertical => "vertical",
            EnvKind::Pair => "pair",
        }
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(EnvKind::Constant),
            "iid" => Ok(EnvKind::Iid),
            "vertical" => Ok(EnvKind::Vertical),
            "pair" => Ok(EnvKind::Pair),
            _ => Err(format!("unknown environment `{s}`")),
        }
    }
}

/// Which derivative the `derivative` subcommand estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeKind {
    AtZero,
    MBeta,
    Coupled,
}

impl DerivativeKind {
    fn name(self) -> &'static str {
        match self {
            DerivativeKind::AtZero => "at-zero",
            DerivativeKind::MBeta => "m-beta",
            DerivativeKind::Coupled => "coupled",
        }
    }
}

impl FromStr for DerivativeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "at-zero" => Ok(DerivativeKind::AtZero),
            "m-beta" => Ok(DerivativeKind::MBeta),
            "coupled" => Ok(DerivativeKind::Coupled),
            _ => Err(format!("unknown derivative `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub d: usize,
    pub m: CookieCount,
    pub env: EnvKind,
    pub beta: f64,
    pub law: LawSpec,
    pub identical: bool,
    pub lower: LawSpec,
    pub upper: LawSpec,
    pub sigma: Option<f64>,
    pub horizon: usize,
    pub window: usize,
    pub replicates: u64,
    pub betas: Vec<f64>,
    pub t: f64,
    pub env_draws: u64,
    pub derivative: DerivativeKind,
    pub dim: usize,
    pub eps: f64,
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub max_attempts: u64,
    pub ess_fraction: f64,
    pub truncation_threshold: f64,
    pub beta_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            d: 6,
            m: CookieCount::Finite(1),
            env: EnvKind::Constant,
            beta: 0.5,
            law: LawSpec::Uniform(0.0, 0.3),
            identical: true,
            lower: LawSpec::Const(0.0),
            upper: LawSpec::Const(0.3),
            sigma: None,
            horizon: 100_000,
            window: 10_000,
            replicates: 1000,
            betas: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            t: 0.5,
            env_draws: 10,
            derivative: DerivativeKind::AtZero,
            dim: 3,
            eps: 0.9,
            n: 10,
            seed: 1,
            stream: 0,
            threads: 1,
            out: PathBuf::from("results"),
            max_attempts: 100_000,
            ess_fraction: 0.1,
            truncation_threshold: 0.01,
            beta_max: 0.8,
        }
    }
}

/// Keys in emit order. `threads` and `out` only affect where and how fast
/// results are produced, so they are left out of the configuration hash.
pub const KEYS: &[&str] = &[
    "experiment",
    "d",
    "m",
    "env",
    "beta",
    "law",
    "identical",
    "lower",
    "upper",
    "sigma",
    "horizon",
    "window",
    "replicates",
    "betas",
    "t",
    "env_draws",
    "derivative",
    "dim",
    "eps",
    "n",
    "seed",
    "stream",
    "threads",
    "out",
    "max_attempts",
    "ess_fraction",
    "truncation_threshold",
    "beta_max",
];

const UNHASHED: &[&str] = &["threads", "out"];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, e.to_string()))
}

fn parse_float(key: &str, value: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(key, value)?;
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form, as in a file or on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "experiment" => {
                if value.is_empty() || value.contains(char::is_whitespace) {
                    return Err(bad(key, "must be a single word"));
                }
                self.experiment = value.to_string();
            }
            "d" => self.d = parse_num(key, value)?,
            "m" => {
                self.m = match value {
                    "inf" => CookieCount::Infinite,
                    v => CookieCount::Finite(parse_num(key, v)?),
                }
            }
            "env" => self.env = value.parse().map_err(|e: String| bad(key, e))?,
            "beta" => self.beta = parse_float(key, value)?,
            "law" => self.law = value.parse().map_err(|e: String| bad(key, e))?,
            "identical" => self.identical = parse_num(key, value)?,
            "lower" => self.lower = value.parse().map_err(|e: String| bad(key, e))?,
            "upper" => self.upper = value.parse().map_err(|e: String| bad(key, e))?,
            "sigma" => {
                self.sigma = match value {
                    "none" => None,
                    v => Some(parse_float(key, v)?),
                }
            }
            "horizon" => self.horizon = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "replicates" => self.replicates = parse_num(key, value)?,
            "betas" => {
                self.betas = value
                    .split(',')
                    .map(|b| parse_float(key, b.trim()))
                    .collect::<Result<_, _>>()?
            }
            "t" => self.t = parse_float(key, value)?,
            "env_draws" => self.env_draws = parse_num(key, value)?,
            "derivative" => self.derivative = value.parse().map_err(|e: String| bad(key, e))?,
            "dim" => self.dim = parse_num(key, value)?,
            "eps" => self.eps = parse_float(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "stream" => self.stream = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "max_attempts" => self.max_attempts = parse_num(key, value)?,
            "ess_fraction" => self.ess_fraction = parse_float(key, value)?,
            "truncation_threshold" => self.truncation_threshold = parse_float(key, value)?,
            "beta_max" => self.beta_max = parse_float(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let floats = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match key {
            "experiment" => self.experiment.clone(),
            "d" => self.d.to_string(),
            "m" => self.m.to_string(),
            "env" => self.env.name().into(),
            "beta" => self.beta.to_string(),
            "law" => self.law.to_string(),
            "identical" => self.identical.to_string(),
            "lower" => self.lower.to_string(),
            "upper" => self.upper.to_string(),
            "sigma" => self.sigma.map_or("none".into(), |s| s.to_string()),
            "horizon" => self.horizon.to_string(),
            "window" => self.window.to_string(),
            "replicates" => self.replicates.to_string(),
            "betas" => floats(&self.betas),
            "t" => self.t.to_string(),
            "env_draws" => self.env_draws.to_string(),
            "derivative" => self.derivative.name().into(),
            "dim" => self.dim.to_string(),
            "eps" => self.eps.to_string(),
            "n" => self.n.to_string(),
            "seed" => self.seed.to_string(),
            "stream" => self.stream.to_string(),
            "threads" => self.threads.to_string(),
            "out" => self.out.display().to_string(),
            "max_attempts" => self.max_attempts.to_string(),
            "ess_fraction" => self.ess_fraction.to_string(),
            "truncation_threshold" => self.truncation_threshold.to_string(),
            "beta_max" => self.beta_max.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Canonical text form: every key, in [`KEYS`] order.
    pub fn emit(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical form, without the
    /// keys that cannot change results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for k in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            h.update(format!("{k} = {}\n", self.value_of(k)));
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d < 2 {
            return Err(bad("d", "need d >= 2"));
        }
        if self.m == CookieCount::Finite(0) {
            return Err(bad("m", "need m >= 1 or inf"));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(bad("beta", "must lie in [-1, 1]"));
        }
        self.law.validate("law")?;
        self.lower.validate("lower")?;
        self.upper.validate("upper")?;
        if let Some(s) = self.sigma {
            if !(0.0..1.0).contains(&s) {
                return Err(bad("sigma", "must lie in [0, 1)"));
            }
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !(-1.0..=1.0).contains(b)) {
            return Err(bad("betas", "need a nonempty list in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(bad("t", "must lie in [0, 1]"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(bad("eps", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("horizon", self.horizon as u64),
            ("window", self.window as u64),
            ("env_draws", self.env_draws),
            ("dim", self.dim as u64),
            ("threads", self.threads as u64),
            ("max_attempts", self.max_attempts),
        ] {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.replicates < 2 {
            return Err(bad("replicates", "need at least 2"));
        }
        for (key, v) in [("ess_fraction", self.ess_fraction), ("truncation_threshold", self.truncation_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(key, "must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.beta_max) {
            return Err(bad("beta_max", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.seed, self.stream)
    }

    pub fn window(&self) -> Window {
        Window::symmetric(self.window)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            threads: self.threads,
            max_attempts: self.max_attempts,
            truncation_threshold: self.truncation_threshold,
            ess_fraction: self.ess_fraction,
            beta_max: self.beta_max,
        }
    }

    /// Site key for random fields, derived from the seed.
    fn env_key(&self) -> u64 {
        site_key(self.seed_spec(), Purpose::Environment)
    }

    pub fn stack_law(&self, law: &LawSpec) -> erw_core::Result<StackLaw> {
        StackLaw::new(law.marginal()?, self.identical, self.m)
    }

    fn field(&self, law: &LawSpec, key: u64, vertical: bool) -> erw_core::Result<CookieEnvironment> {
        if let LawSpec::Const(b) = law {
            return CookieEnvironment::constant(*b, self.m);
        }
        let law = self.stack_law(law)?;
        Ok(if vertical {
            CookieEnvironment::vertical(key, law)
        } else {
            CookieEnvironment::iid(key, law)
        })
    }

    pub fn environment(&self) -> erw_core::Result<CookieEnvironment> {
        let key = self.env_key();
        let env = match self.env {
            EnvKind::Constant => CookieEnvironment::constant(self.beta, self.m)?,
            EnvKind::Iid => self.field(&self.law, key, false)?,
            EnvKind::Vertical => self.field(&self.law, key, true)?,
            EnvKind::Pair => {
                let lower = self.field(&self.lower, key, false)?;
                let upper = self.field(&self.upper, key, false)?;
                CookieEnvironment::coupled(lower, upper, self.t)?
            }
        };
        match self.sigma {
            Some(s) => env.with_sigma(s),
            None => Ok(env),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law() -> impl Strategy<Value = LawSpec> {
        prop_oneof![
            (-1.0..=1.0f64).prop_map(LawSpec::Const),
            (-1.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, w)| LawSpec::Uniform(a, a + w * (1.0 - a))),
            prop::collection::vec((-1.0..=1.0f64, 0.01..10.0f64), 1..4).prop_map(LawSpec::Discrete),
        ]
    }

    prop_compose! {
        fn config()(
            d in 2usize..20,
            m in prop_oneof![Just(CookieCount::Infinite), (1u32..50).prop_map(CookieCount::Finite)],
            env in prop_oneof![Just(EnvKind::Constant), Just(EnvKind::Iid), Just(EnvKind::Vertical), Just(EnvKind::Pair)],
            beta in -1.0..=1.0f64,
            laws in (law(), law(), law()),
            identical in any::<bool>(),
            sigma in prop::option::of(0.0..0.999f64),
            sizes in (1usize..1_000_000, 1usize..100_000, 2u64..1_000_000, 1u64..100),
            betas in prop::collection::vec(-1.0..=1.0f64, 1..6),
            t in 0.0..=1.0f64,
            derivative in prop_oneof![Just(DerivativeKind::AtZero), Just(DerivativeKind::MBeta), Just(DerivativeKind::Coupled)],
            ret in (1usize..6, 0.01..=1.0f64, 0usize..40),
            seeds in (any::<u64>(), any::<u64>(), 1usize..64),
            caps in (1u64..1_000_000, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..0.99f64),
        ) -> ExperimentConfig {
            ExperimentConfig {
                experiment: format!("exp{d}"),
                d,
                m,
                env,
                beta,
                law: laws.0,
                identical,
                lower: laws.1,
                upper: laws.2,
                sigma,
                horizon: sizes.0,
                window: sizes.1,
                replicates: sizes.2,
                betas,
                t,
                env_draws: sizes.3,
                derivative,
                dim: ret.0,
                eps: ret.1,
                n: ret.2,
                seed: seeds.0,
                stream: seeds.1,
                threads: seeds.2,
                out: PathBuf::from(format!("out/{d}")),
                max_attempts: caps.0,
                ess_fraction: caps.1,
                truncation_threshold: caps.2,
                beta_max: caps.3,
            }
        }
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(cfg in config()) {
            prop_assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg);
        }
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = ExperimentConfig::parse("# speed run\nd = 8\n\nbetas = 0, 0.5\n").unwrap();
        assert_eq!(cfg.d, 8);
        assert_eq!(cfg.betas, vec![0.0, 0.5]);
        assert_eq!(cfg.window, ExperimentConfig::default().window);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert_eq!(ExperimentConfig::parse("d 8"), Err(ConfigError::Syntax { line: 1 }));
        assert_eq!(ExperimentConfig::parse("colour = red"), Err(ConfigError::UnknownKey("colour".into())));
        assert_eq!(ExperimentConfig::parse("d = 3\nd = 4"), Err(ConfigError::Duplicate("d".into())));
        for text in ["d = 1", "m = 0", "beta = 1.5", "t = -0.1", "eps = 0", "replicates = 1", "law = uniform:0.5:0.2", "sigma = 1"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Value { .. })), "{text}");
        }
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.threads = 8;
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn pair_members_share_site_keys() {
        let cfg = ExperimentConfig::parse("env = pair\nlower = uniform:0:0.15\nupper = uniform:0.15:0.3\nsigma = 0.3").unwrap();
        let env = cfg.environment().unwrap();
        let pair = env.coupled_pair().unwrap();
        for x in -5..5 {
            let y = [x, 1, -2];
            assert!((pair.difference(&y, 1) - 0.15).abs() < 1e-12);
        }
    }
}
