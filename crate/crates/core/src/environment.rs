//! Cookie environments: the field of cookie stacks attached to lattice sites.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{mix2, site_hash, unit_from_hash};

/// Number of cookies per site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CookieCount {
    Finite(u32),
    Infinite,
}

impl CookieCount {
    /// True when the `k`-th visit still finds a cookie (`k <= m`).
    #[inline]
    pub fn covers(self, k: u32) -> bool {
        match self {
            CookieCount::Finite(m) => k <= m,
            CookieCount::Infinite => true,
        }
    }
}

impl fmt::Display for CookieCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CookieCount::Finite(m) => write!(f, "{m}"),
            CookieCount::Infinite => write!(f, "inf"),
        }
    }
}

fn check_beta(name: &'static str, b: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&b) {
        return Err(invalid(name, format!("{b} is outside [-1, 1]")));
    }
    Ok(())
}

/// The cookies of a single site. With infinitely many cookies the stack
/// holds one value that is repeated forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CookieStack {
    betas: Vec<f64>,
    count: CookieCount,
}

impl CookieStack {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("cookies", "a stack needs at least one cookie"));
        }
        for &b in &betas {
            check_beta("beta", b)?;
        }
        let count = CookieCount::Finite(betas.len() as u32);
        Ok(Self { betas, count })
    }

    /// `m` copies of the same value (`m` may be infinite).
    pub fn identical(beta: f64, count: CookieCount) -> Result<Self> {
        check_beta("beta", beta)?;
        match count {
            CookieCount::Finite(0) => Err(invalid("m", "need m >= 1")),
            CookieCount::Finite(m) => Ok(Self {
                betas: vec![beta; m as usize],
                count,
            }),
            CookieCount::Infinite => Ok(Self {
                betas: vec![beta],
                count,
            }),
        }
    }

    pub fn count(&self) -> CookieCount {
        self.count
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cookie eaten at the `k`-th visit, 0 once the stack is exhausted.
    #[inline]
    pub fn get(&self, k: u32) -> f64 {
        debug_assert!(k >= 1);
        match self.count {
            CookieCount::Finite(m) if k > m => 0.0,
            CookieCount::Finite(_) => self.betas[k as usize - 1],
            CookieCount::Infinite => self.betas[0],
        }
    }

    fn max_abs(&self) -> f64 {
        self.betas.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// Marginal law of a single cookie value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    /// Atoms sorted increasingly with their cumulative weights.
    Discrete { atoms: Vec<f64>, cumulative: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn discrete(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(invalid("marginal", "atoms and weights must be nonempty and of equal length"));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.iter().copied().zip(weights.iter().copied()).collect();
        for &(a, w) in &pairs {
            check_beta("atom", a)?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid("weight", format!("{w} is not a nonnegative number")));
            }
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(invalid("weight", "weights sum to zero"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(pairs.len());
        for &(_, w) in &pairs {
            acc += w / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Marginal::Discrete {
            atoms: pairs.iter().map(|p| p.0).collect(),
            cumulative,
        })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_beta("lo", lo)?;
        check_beta("hi", hi)?;
        if lo > hi {
            return Err(invalid("uniform", format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Marginal::Uniform { lo, hi })
    }

    /// Inverse CDF. Using the same `u` for two laws gives the quantile
    /// coupling, which is pointwise monotone under stochastic order.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::Discrete { atoms, cumulative } => {
                let i = cumulative.partition_point(|&c| c <= u);
                atoms[i.min(atoms.len() - 1)]
            }
            Marginal::Uniform { lo, hi } => lo + u * (hi - lo),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Discrete { atoms, cumulative } => {
                let mut prev = 0.0;
                let mut m = 0.0;
                for (a, c) in atoms.iter().zip(cumulative) {
                    m += a * (c - prev);
                    prev = *c;
                }
                m
            }
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Marginal::Discrete { atoms, .. } => atoms.iter().fold(0.0, |a, b| a.max(b.abs())),
            Marginal::Uniform { lo, hi } => lo.abs().max(hi.abs()),
        }
    }

    /// Atoms with their probabilities (discrete laws only).
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Marginal::Discrete { atoms, cumulative } => {
                let mut prev = 0.0;
                Some(
                    atoms
                        .iter()
                        .zip(cumulative)
                        .map(|(&a, &c)| {
                            let w = c - prev;
                            prev = c;
                            (a, w)
                        })
                        .collect(),
                )
            }
            Marginal::Uniform { .. } => None,
        }
    }
}

/// Law of a random cookie stack: either one draw shared by all `m` cookies
/// (identical cookies) or independent draws per cookie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLaw {
    pub marginal: Marginal,
    pub identical: bool,
    pub count: CookieCount,
}

impl StackLaw {
    pub fn new(marginal: Marginal, identical: bool, count: CookieCount) -> Result<Self> {
        if count == CookieCount::Finite(0) {
            return Err(invalid("m", "need m >= 1"));
        }
        Ok(Self {
            marginal,
            identical,
            count,
        })
    }

    #[inline]
    fn draw(&self, key: u64, coords: &[i32], k: u32) -> f64 {
        if !self.count.covers(k) {
            return 0.0;
        }
        let tag = if self.identical { 0 } else { u64::from(k) };
        self.marginal.quantile(unit_from_hash(site_hash(key, coords, tag)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Field {
    Deterministic(CookieStack),
    IidLazy { key: u64, law: StackLaw },
    VerticalStationary { key: u64, law: StackLaw },
    CoupledPair(Box<CoupledPair>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub lower: CookieEnvironment,
    pub upper: CookieEnvironment,
    pub t: f64,
}

impl CoupledPair {
    /// `beta_2 - beta_1` at a site and visit.
    #[inline]
    pub fn difference(&self, y: &[i32], k: u32) -> f64 {
        self.upper.beta(y, k) - self.lower.beta(y, k)
    }
}

/// A cookie environment. Lookups are pure functions of `(environment, site,
/// visit)`, so the quenched field is reproduced without storing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CookieEnvironment {
    field: Field,
    sigma: Option<f64>,
}

impl CookieEnvironment {
    pub fn deterministic(stack: CookieStack) -> Self {
        Self {
            field: Field::Deterministic(stack),
            sigma: None,
        }
    }

    /// Identical cookies `beta` at every site, `m` per site.
    pub fn constant(beta: f64, count: CookieCount) -> Result<Self> {
        Ok(Self::deterministic(CookieStack::identical(beta, count)?))
    }

    pub fn iid(key: u64, law: StackLaw) -> Self {
        Self {
            field: Field::IidLazy { key, law },
            sigma: None,
        }
    }

    pub fn vertical(key: u64, law: StackLaw) -> Self {
        Self {
            field: Field::VerticalStationary { key, law },
            sigma: None,
        }
    }

    pub fn coupled(lower: CookieEnvironment, upper: CookieEnvironment, t: f64) -> Result<Self> {
        if lower.count() != upper.count() {
            return Err(invalid("coupled", "both environments need the same number of cookies"));
        }
        if matches!(lower.field, Field::CoupledPair(_)) || matches!(upper.field, Field::CoupledPair(_)) {
            return Err(invalid("coupled", "nested pairs are not supported"));
        }
        check_t(t)?;
        Ok(Self {
            field: Field::CoupledPair(Box::new(CoupledPair { lower, upper, t })),
            sigma: None,
        })
    }

    /// Attaches a bound `|beta| <= sigma`, rejecting environments whose
    /// support exceeds it.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma) {
            return Err(invalid("sigma", format!("{sigma} is not in [0, 1)")));
        }
        let bound = self.support_bound();
        if bound > sigma {
            return Err(invalid("sigma", format!("cookies reach {bound}, above sigma = {sigma}")));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn count(&self) -> CookieCount {
        match &self.field {
            Field::Deterministic(s) => s.count(),
            Field::IidLazy { law, .. } | Field::VerticalStationary { law, .. } => law.count,
            Field::CoupledPair(p) => p.lower.count(),
        }
    }

    pub fn coupled_pair(&self) -> Option<&CoupledPair> {
        match &self.field {
            Field::CoupledPair(p) => Some(p),
            _ => None,
        }
    }

    /// Whether the field is random, so that annealed estimates need fresh
    /// draws of the environment.
    pub fn is_random(&self) -> bool {
        match &self.field {
            Field::Deterministic(_) => false,
            Field::IidLazy { .. } | Field::VerticalStationary { .. } => true,
            Field::CoupledPair(p) => p.lower.is_random() || p.upper.is_random(),
        }
    }

    /// Every cookie takes the same value at a given site.
    pub fn has_identical_cookies(&self) -> bool {
        match &self.field {
            Field::Deterministic(s) => s.betas.windows(2).all(|w| w[0] == w[1]),
            Field::IidLazy { law, .. } | Field::VerticalStationary { law, .. } => law.identical,
            Field::CoupledPair(p) => p.lower.has_identical_cookies() && p.upper.has_identical_cookies(),
        }
    }

    /// Upper bound on `|beta|` over the support of the field.
    pub fn support_bound(&self) -> f64 {
        match &self.field {
            Field::Deterministic(s) => s.max_abs(),
            Field::IidLazy { law, .. } | Field::VerticalStationary { law, .. } => law.marginal.max_abs(),
            Field::CoupledPair(p) => p.lower.support_bound().max(p.upper.support_bound()),
        }
    }

    /// Independent copy of a random field: site keys are remixed with `draw`.
    /// Pairs remix both members identically, preserving their coupling.
    pub fn redraw(&self, draw: u64) -> Self {
        let field = match &self.field {
            Field::Deterministic(s) => Field::Deterministic(s.clone()),
            Field::IidLazy { key, law } => Field::IidLazy {
                key: mix2(*key, draw),
                law: law.clone(),
            },
            Field::VerticalStationary { key, law } => Field::VerticalStationary {
                key: mix2(*key, draw),
                law: law.clone(),
            },
            Field::CoupledPair(p) => Field::CoupledPair(Box::new(CoupledPair {
                lower: p.lower.redraw(draw),
                upper: p.upper.redraw(draw),
                t: p.t,
            })),
        };
        Self {
            field,
            sigma: self.sigma,
        }
    }

    /// `beta_k(y)` for the `k`-th visit to `y`; 0 when `k > m`.
    #[inline]
    pub fn beta(&self, y: &[i32], k: u32) -> f64 {
        debug_assert!(k >= 1);
        let b = match &self.field {
            Field::Deterministic(s) => s.get(k),
            Field::IidLazy { key, law } => law.draw(*key, y, k),
            Field::VerticalStationary { key, law } => law.draw(*key, &y[1..], k),
            Field::CoupledPair(p) => (1.0 - p.t) * p.lower.beta(y, k) + p.t * p.upper.beta(y, k),
        };
        debug_assert!((-1.0..=1.0).contains(&b));
        debug_assert!(self.sigma.is_none_or(|s| b.abs() <= s + 1e-15));
        b
    }

    /// The stack at `y`: `m` values, or a single value when `m` is infinite
    /// and cookies are identical.
    pub fn stack_at(&self, y: &[i32]) -> CookieStack {
        let count = self.count();
        let len = match count {
            CookieCount::Finite(m) => m,
            CookieCount::Infinite => 1,
        };
        CookieStack {
            betas: (1..=len).map(|k| self.beta(y, k)).collect(),
            count,
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", format!("{t} is outside [0, 1]")));
    }
    Ok(())
}

/// The member `beta_t` of the family spanned by a coupled pair.
pub fn interpolate(pair: &CookieEnvironment, t: f64) -> Result<CookieEnvironment> {
    check_t(t)?;
    let mut out = pair.clone();
    match &mut out.field {
        Field::CoupledPair(q) => q.t = t,
        _ => return Err(invalid("pair", "environment is not a coupled pair")),
    }
    Ok(out)
}

/// Finite restriction of an environment to a set of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSample {
    pub stacks: BTreeMap<Vec<i32>, CookieStack>,
}

impl EnvSample {
    pub fn from_environment<'a>(env: &CookieEnvironment, sites: impl IntoIterator<Item = &'a [i32]>) -> Self {
        let stacks = sites
            .into_iter()
            .map(|y| (y.to_vec(), env.stack_at(y)))
            .collect();
        Self { stacks }
    }
}

/// Per-line bijections of the horizontal axis, keyed by vertical coordinate.
/// Lines without an entry, and points missing from a line's map, are fixed.
pub type LinePermutation = BTreeMap<Vec<i32>, BTreeMap<i32, i32>>;

/// Returns the sample with `out(x, z) = in(delta_z(x), z)`.
pub fn e1_permute(sample: &EnvSample, delta: &LinePermutation) -> Result<EnvSample> {
    let mut lines: BTreeMap<Vec<i32>, BTreeSet<i32>> = BTreeMap::new();
    for y in sample.stacks.keys() {
        lines.entry(y[1..].to_vec()).or_default().insert(y[0]);
    }
    let mut out = BTreeMap::new();
    for (z, xs) in &lines {
        let map = delta.get(z);
        let apply = |x: i32| map.and_then(|m| m.get(&x).copied()).unwrap_or(x);
        let mut seen = BTreeSet::new();
        for &x in xs {
            let image = apply(x);
            if !seen.insert(image) {
                return Err(Error::NotInjective { line: z.clone() });
            }
            if !xs.contains(&image) {
                return Err(Error::PermutationOutOfDomain { line: z.clone(), x });
            }
            let mut src = Vec::with_capacity(z.len() + 1);
            src.push(image);
            src.extend_from_slice(z);
            let mut dst = src.clone();
            dst[0] = x;
            out.insert(dst, sample.stacks[&src].clone());
        }
    }
    Ok(EnvSample { stacks: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_law(lo: f64, hi: f64, m: u32) -> StackLaw {
        StackLaw::new(Marginal::uniform(lo, hi).unwrap(), true, CookieCount::Finite(m)).unwrap()
    }

    #[test]
    fn exhausted_cookies_are_zero() {
        let env = CookieEnvironment::constant(0.4, CookieCount::Finite(2)).unwrap();
        assert_eq!(env.beta(&[5, -3], 3), 0.0);
        assert_eq!(env.beta(&[5, -3], 1), 0.4);
        let inf = CookieEnvironment::constant(0.4, CookieCount::Infinite).unwrap();
        assert_eq!(inf.beta(&[0, 0], 1000), 0.4);
    }

    #[test]
    fn iid_lookup_is_consistent() {
        let law = StackLaw::new(
            Marginal::discrete(&[0.2, 0.6], &[0.5, 0.5]).unwrap(),
            true,
            CookieCount::Finite(1),
        )
        .unwrap();
        let env = CookieEnvironment::iid(17, law);
        let a = env.beta(&[1, 2], 1);
        let _ = env.beta(&[3, 3], 1);
        assert_eq!(a, env.beta(&[1, 2], 1));
        assert!(a == 0.2 || a == 0.6);
    }

    #[test]
    fn vertical_field_ignores_horizontal_coordinate() {
        let env = CookieEnvironment::vertical(3, uniform_law(-0.5, 0.5, 1));
        assert_eq!(env.beta(&[0, 4, 1], 1), env.beta(&[-9, 4, 1], 1));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let lo = CookieEnvironment::constant(0.2, CookieCount::Finite(1)).unwrap();
        let hi = CookieEnvironment::constant(0.6, CookieCount::Finite(1)).unwrap();
        let pair = CookieEnvironment::coupled(lo, hi, 0.0).unwrap();
        let y = [2, -1];
        assert_eq!(interpolate(&pair, 0.0).unwrap().beta(&y, 1), 0.2);
        assert_eq!(interpolate(&pair, 1.0).unwrap().beta(&y, 1), 0.6);
        assert!((interpolate(&pair, 0.5).unwrap().beta(&y, 1) - 0.4).abs() < 1e-15);
        assert!(interpolate(&pair, 1.5).is_err());
    }

    #[test]
    fn sigma_bound_is_checked() {
        let env = CookieEnvironment::iid(1, uniform_law(0.0, 0.3, 1));
        assert!(env.clone().with_sigma(0.3).is_ok());
        assert!(env.with_sigma(0.2).is_err());
    }

    #[test]
    fn quantile_coupling_is_monotone() {
        let lo = CookieEnvironment::iid(8, uniform_law(0.0, 0.2, 1));
        let hi = CookieEnvironment::iid(8, uniform_law(0.1, 0.3, 1));
        for x in -20..20 {
            let y = [x, x / 3];
            let d = hi.beta(&y, 1) - lo.beta(&y, 1);
            assert!((d - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn redraw_changes_field_but_keeps_coupling() {
        let lo = CookieEnvironment::iid(8, uniform_law(0.0, 0.2, 1));
        let hi = CookieEnvironment::iid(8, uniform_law(0.1, 0.3, 1));
        let pair = CookieEnvironment::coupled(lo, hi, 0.5).unwrap();
        let other = pair.redraw(1);
        assert_ne!(pair.beta(&[0, 0], 1), other.beta(&[0, 0], 1));
        let p = other.coupled_pair().unwrap();
        assert!((p.difference(&[4, 4], 1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identity_and_transposition() {
        let env = CookieEnvironment::iid(5, uniform_law(-1.0, 1.0, 2));
        let sites: Vec<Vec<i32>> = vec![vec![0, 0], vec![1, 0]];
        let sample = EnvSample::from_environment(&env, sites.iter().map(|s| s.as_slice()));
        assert_eq!(e1_permute(&sample, &LinePermutation::new()).unwrap(), sample);

        let mut delta = LinePermutation::new();
        delta.insert(vec![0], BTreeMap::from([(0, 1), (1, 0)]));
        let swapped = e1_permute(&sample, &delta).unwrap();
        assert_eq!(swapped.stacks[&vec![0, 0]], sample.stacks[&vec![1, 0]]);
        assert_eq!(swapped.stacks[&vec![1, 0]], sample.stacks[&vec![0, 0]]);
    }

    #[test]
    fn non_injective_permutation_is_rejected() {
        let env = CookieEnvironment::constant(0.1, CookieCount::Finite(1)).unwrap();
        let sites: Vec<Vec<i32>> = vec![vec![0, 0], vec![1, 0]];
        let sample = EnvSample::from_environment(&env, sites.iter().map(|s| s.as_slice()));
        let mut delta = LinePermutation::new();
        delta.insert(vec![0], BTreeMap::from([(0, 1), (1, 1)]));
        assert!(matches!(e1_permute(&sample, &delta), Err(Error::NotInjective { .. })));
    }

    #[test]
    fn discrete_quantile() {
        let m = Marginal::discrete(&[0.6, 0.2], &[1.0, 3.0]).unwrap();
        assert_eq!(m.quantile(0.0), 0.2);
        assert_eq!(m.quantile(0.74), 0.2);
        assert_eq!(m.quantile(0.76), 0.6);
        assert!((m.mean() - 0.3).abs() < 1e-15);
        assert!(Marginal::discrete(&[1.5], &[1.0]).is_err());
    }
}
