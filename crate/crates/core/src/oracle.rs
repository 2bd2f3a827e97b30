//! Exact path laws of short walks by exhaustive enumeration.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::environment::{CookieEnvironment, StackLaw};
use crate::error::{invalid, Error, Result};
use crate::lattice::Direction;
use crate::walker::Trajectory;

/// Largest number of paths `(2d)^n` that [`enumerate`] accepts.
pub const MAX_PATHS: u64 = 10_000_000;

/// A path, as direction indices, with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAtom {
    pub steps: Vec<u8>,
    pub probability: f64,
}

impl PathAtom {
    pub fn moves(&self) -> Vec<Direction> {
        self.steps.iter().map(|&s| Direction::from_index(s as usize)).collect()
    }
}

/// Law of the enumerated walk.
#[derive(Debug, Clone, Copy)]
pub enum PathLaw<'a> {
    /// Simple symmetric walk.
    Symmetric,
    /// Quenched law in a fixed environment, by the direct transition rule.
    Quenched(&'a CookieEnvironment),
    /// Finite mixture of quenched laws with the given weights.
    Mixture(&'a [(f64, CookieEnvironment)]),
    /// Annealed law of an i.i.d. environment with a discrete marginal.
    AnnealedIid(&'a StackLaw),
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

fn check_size(d: usize, n: usize) -> Result<()> {
    if d < 2 {
        return Err(invalid("d", "need d >= 2"));
    }
    let count = (2 * d as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if count > MAX_PATHS {
        return Err(Error::InstanceTooLarge(format!("(2d)^n = {count} paths")));
    }
    Ok(())
}

/// Visit bookkeeping for short paths: linear scan is fastest here.
#[derive(Clone, Default)]
struct SmallCounter {
    sites: Vec<(Vec<i32>, u32)>,
}

impl SmallCounter {
    fn visit(&mut self, y: &[i32]) -> u32 {
        if let Some(e) = self.sites.iter_mut().find(|e| e.0 == y) {
            e.1 += 1;
            e.1
        } else {
            self.sites.push((y.to_vec(), 1));
            1
        }
    }

    fn unvisit(&mut self, y: &[i32]) {
        let i = self.sites.iter().position(|e| e.0 == y).expect("visited");
        self.sites[i].1 -= 1;
        if self.sites[i].1 == 0 {
            self.sites.swap_remove(i);
        }
    }
}

/// Every path of `n` steps with its probability, in lexicographic order of
/// direction indices.
pub fn enumerate(d: usize, n: usize, law: PathLaw<'_>) -> Result<Vec<PathAtom>> {
    check_size(d, n)?;
    match law {
        PathLaw::Symmetric => {
            let p = (2.0 * d as f64).powi(-(n as i32));
            Ok(all_paths(d, n).into_iter().map(|steps| PathAtom { steps, probability: p }).collect())
        }
        PathLaw::Quenched(env) => Ok(enumerate_direct(d, n, env)),
        PathLaw::Mixture(parts) => {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let tables: Vec<Vec<PathAtom>> = parts.iter().map(|(_, e)| enumerate_direct(d, n, e)).collect();
            let mut out = tables[0].clone();
            for (i, atom) in out.iter_mut().enumerate() {
                atom.probability = tables
                    .iter()
                    .zip(parts)
                    .map(|(t, (w, _))| w / total * t[i].probability)
                    .collect::<NeumaierSum>()
                    .value();
            }
            Ok(out)
        }
        PathLaw::AnnealedIid(law) => {
            let atoms = law
                .marginal
                .atoms()
                .ok_or_else(|| invalid("law", "annealed enumeration needs a discrete marginal"))?;
            let base = (2.0 * d as f64).powi(-(n as i32));
            Ok(all_paths(d, n)
                .into_iter()
                .map(|steps| {
                    let p = base * annealed_factor(d, &steps, law, &atoms);
                    PathAtom { steps, probability: p }
                })
                .collect())
        }
    }
}

fn all_paths(d: usize, n: usize) -> Vec<Vec<u8>> {
    let k = 2 * d;
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut steps = vec![0u8; n];
            for s in steps.iter_mut().rev() {
                *s = (code % k) as u8;
                code /= k;
            }
            steps
        })
        .collect()
}

/// Expectation over the i.i.d. field of the product of `1 + E_j beta` along
/// the path; sites are independent, so it factorizes site by site.
fn annealed_factor(d: usize, steps: &[u8], law: &StackLaw, atoms: &[(f64, f64)]) -> f64 {
    let moves: Vec<Direction> = steps.iter().map(|&s| Direction::from_index(s as usize)).collect();
    let traj = Trajectory::from_moves(d, &moves, None);
    let mut per_site: BTreeMap<&[i32], Vec<(u32, f64)>> = BTreeMap::new();
    for j in 0..traj.len() {
        let e = traj.horiz_increments[j];
        let k = traj.visit_index[j];
        if e != 0 && law.count.covers(k) {
            per_site.entry(traj.position(j)).or_default().push((k, f64::from(e)));
        }
    }
    let mut total = 1.0;
    for uses in per_site.values() {
        if law.identical {
            total *= atoms
                .iter()
                .map(|&(b, w)| w * uses.iter().map(|&(_, e)| 1.0 + e * b).product::<f64>())
                .sum::<f64>();
        } else {
            for &(_, e) in uses {
                total *= atoms.iter().map(|&(b, w)| w * (1.0 + e * b)).sum::<f64>();
            }
        }
    }
    total
}

fn enumerate_direct(d: usize, n: usize, env: &CookieEnvironment) -> Vec<PathAtom> {
    let mut out = Vec::with_capacity((2 * d).pow(n as u32));
    let mut counter = SmallCounter::default();
    let mut pos = vec![0i32; d];
    let mut steps = Vec::with_capacity(n);
    direct_rec(d, n, env, &mut counter, &mut pos, &mut steps, 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn direct_rec(
    d: usize,
    n: usize,
    env: &CookieEnvironment,
    counter: &mut SmallCounter,
    pos: &mut Vec<i32>,
    steps: &mut Vec<u8>,
    prob: f64,
    out: &mut Vec<PathAtom>,
) {
    if steps.len() == n {
        out.push(PathAtom {
            steps: steps.clone(),
            probability: prob,
        });
        return;
    }
    let k = counter.visit(pos);
    let beta = env.beta(pos, k);
    let unit = 1.0 / (2 * d) as f64;
    for idx in 0..2 * d {
        let dir = Direction::from_index(idx);
        let p = match (dir.axis, dir.sign) {
            (0, 1) => (1.0 + beta) * unit,
            (0, _) => (1.0 - beta) * unit,
            _ => unit,
        };
        pos[dir.axis] += i32::from(dir.sign);
        steps.push(idx as u8);
        direct_rec(d, n, env, counter, pos, steps, prob * p, out);
        steps.pop();
        pos[dir.axis] -= i32::from(dir.sign);
    }
    counter.unvisit(pos);
}

/// Path law obtained by enumerating the auxiliary variables of the
/// construction (move flags, fair coins, site coins, vertical jump chain) and
/// pushing each outcome forward to the path it produces. Only variables that
/// the path actually reads are branched on; the others integrate to one.
pub fn enumerate_constructed(d: usize, n: usize, env: &CookieEnvironment) -> Result<Vec<PathAtom>> {
    check_size(d, n)?;
    let mut acc: BTreeMap<Vec<u8>, NeumaierSum> = BTreeMap::new();
    let mut counter = SmallCounter::default();
    let mut pos = vec![0i32; d];
    let mut steps = Vec::new();
    constructed_rec(d, n, env, &mut counter, &mut pos, &mut steps, 1.0, &mut acc);
    // Every path receives mass; paths of probability zero still appear.
    let mut out = Vec::new();
    for steps in all_paths(d, n) {
        let p = acc.get(&steps).map_or(0.0, |s| s.value());
        out.push(PathAtom { steps, probability: p });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn constructed_rec(
    d: usize,
    n: usize,
    env: &CookieEnvironment,
    counter: &mut SmallCounter,
    pos: &mut Vec<i32>,
    steps: &mut Vec<u8>,
    prob: f64,
    acc: &mut BTreeMap<Vec<u8>, NeumaierSum>,
) {
    if steps.len() == n {
        acc.entry(steps.clone()).or_default().add(prob);
        return;
    }
    let k = counter.visit(pos);
    let p_h = 1.0 / d as f64;
    // Horizontal move: sign from the site coin zeta_k(y) if a cookie is left,
    // otherwise from the fair coin xi.
    let (p_up, p_down) = if env.count().covers(k) {
        let b = env.beta(pos, k);
        (0.5 * (1.0 + b), 0.5 * (1.0 - b))
    } else {
        (0.5, 0.5)
    };
    let mut branch = |idx: usize, p: f64, pos: &mut Vec<i32>, steps: &mut Vec<u8>, counter: &mut SmallCounter| {
        if p == 0.0 {
            return;
        }
        let dir = Direction::from_index(idx);
        pos[dir.axis] += i32::from(dir.sign);
        steps.push(idx as u8);
        constructed_rec(d, n, env, counter, pos, steps, prob * p, acc);
        steps.pop();
        pos[dir.axis] -= i32::from(dir.sign);
    };
    branch(0, p_h * p_up, pos, steps, counter);
    branch(1, p_h * p_down, pos, steps, counter);
    // Vertical move: the next step of the jump chain, uniform on 2(d-1).
    let p_jump = (1.0 - p_h) / (2 * (d - 1)) as f64;
    for idx in 2..2 * d {
        branch(idx, p_jump, pos, steps, counter);
    }
    counter.unvisit(pos);
}

/// Symmetric-walk law reweighted by `M_n(beta)`.
pub fn enumerate_reweighted(d: usize, n: usize, env: &CookieEnvironment) -> Result<Vec<PathAtom>> {
    let mut atoms = enumerate(d, n, PathLaw::Symmetric)?;
    for atom in atoms.iter_mut() {
        let traj = Trajectory::from_moves(d, &atom.moves(), None);
        let w = crate::girsanov::weight(&traj, env, n)?;
        atom.probability *= w.value();
    }
    Ok(atoms)
}

/// `sum f(path) P(path)` with compensated summation.
pub fn oracle_expectation(d: usize, atoms: &[PathAtom], f: impl Fn(&Trajectory) -> f64) -> f64 {
    atoms
        .iter()
        .filter(|a| a.probability != 0.0)
        .map(|a| a.probability * f(&Trajectory::from_moves(d, &a.moves(), None)))
        .collect::<NeumaierSum>()
        .value()
}

/// Total variation distance between two enumerations of the same paths.
pub fn total_variation(a: &[PathAtom], b: &[PathAtom]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            debug_assert_eq!(x.steps, y.steps);
            (x.probability - y.probability).abs()
        })
        .collect::<NeumaierSum>()
        .value()
}

/// Largest `n` accepted by the exact rational mode.
pub const MAX_EXACT_STEPS: usize = 6;

/// Exact rational quenched path law (direct rule). Cookie values are taken
/// as the exact binary fractions of their floating-point representation.
pub fn enumerate_exact(d: usize, n: usize, env: &CookieEnvironment) -> Result<Vec<(Vec<u8>, BigRational)>> {
    check_size(d, n)?;
    if n > MAX_EXACT_STEPS {
        return Err(Error::InstanceTooLarge(format!("exact mode supports n <= {MAX_EXACT_STEPS}")));
    }
    let unit = BigRational::new(1.into(), (2 * d).into());
    let one = BigRational::one();
    let mut out = Vec::new();
    for steps in all_paths(d, n) {
        let moves: Vec<Direction> = steps.iter().map(|&s| Direction::from_index(s as usize)).collect();
        let traj = Trajectory::from_moves(d, &moves, None);
        let mut p = BigRational::one();
        for (j, dir) in moves.iter().enumerate() {
            let factor = if dir.axis == 0 {
                let b = env.beta(traj.position(j), traj.visit_index[j]);
                let b = BigRational::from_float(b).ok_or_else(|| invalid("beta", "not finite"))?;
                if dir.sign > 0 {
                    &one + b
                } else {
                    &one - b
                }
            } else {
                one.clone()
            };
            p *= factor * &unit;
        }
        out.push((steps, p));
    }
    Ok(out)
}

/// Sum of exact probabilities.
pub fn exact_total(atoms: &[(Vec<u8>, BigRational)]) -> BigRational {
    atoms.iter().fold(BigRational::zero(), |acc, (_, p)| acc + p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{CookieCount, Marginal};

    fn env(beta: f64) -> CookieEnvironment {
        CookieEnvironment::constant(beta, CookieCount::Finite(1)).unwrap()
    }

    #[test]
    fn one_step_law() {
        let e = env(0.5);
        let atoms = enumerate(2, 1, PathLaw::Quenched(&e)).unwrap();
        let p: Vec<f64> = atoms.iter().map(|a| a.probability).collect();
        assert_eq!(p, vec![1.5 / 4.0, 0.5 / 4.0, 0.25, 0.25]);
    }

    #[test]
    fn normalization() {
        for (n, b) in [(1, 0.9), (3, -0.4), (6, 0.7)] {
            let e = env(b);
            let s: NeumaierSum = enumerate(2, n, PathLaw::Quenched(&e)).unwrap().iter().map(|a| a.probability).collect();
            assert!((s.value() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_mixture_is_average_of_quenched_laws() {
        let law = StackLaw::new(Marginal::discrete(&[0.2, 0.6], &[0.5, 0.5]).unwrap(), true, CookieCount::Finite(1)).unwrap();
        let annealed = enumerate(2, 2, PathLaw::AnnealedIid(&law)).unwrap();
        let a = enumerate(2, 2, PathLaw::Quenched(&env(0.2))).unwrap();
        let b = enumerate(2, 2, PathLaw::Quenched(&env(0.6))).unwrap();
        let parts = vec![(0.5, env(0.2)), (0.5, env(0.6))];
        let mix = enumerate(2, 2, PathLaw::Mixture(&parts)).unwrap();
        for i in 0..mix.len() {
            let avg = 0.5 * (a[i].probability + b[i].probability);
            assert!((mix[i].probability - avg).abs() < 1e-16);
        }
        let s: f64 = annealed.iter().map(|a| a.probability).sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn size_limit() {
        assert!(matches!(enumerate(2, 12, PathLaw::Symmetric), Err(Error::InstanceTooLarge(_))));
        assert!(matches!(enumerate_exact(2, 7, &env(0.1)), Err(Error::InstanceTooLarge(_))));
    }

    #[test]
    fn exact_mode_sums_to_one() {
        let atoms = enumerate_exact(2, 4, &env(0.3)).unwrap();
        assert_eq!(exact_total(&atoms), BigRational::one());
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let s: NeumaierSum = [1.0, 1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
