//! Simulation of the excited walk under the quenched law, by the direct
//! transition rule and by the auxiliary-variable construction.

use std::io::Write;

use rand::Rng;

use crate::environment::{CookieCount, CookieEnvironment};
use crate::error::{invalid, Result};
use crate::lattice::Direction;
use crate::rng::{derive_substream, site_hash, site_key, unit_from_hash, Purpose, SeedSpec, Stream};
use crate::sites::{SiteHasher, SiteTable};

/// A realized path `Y_0 = 0, ..., Y_n` with per-step bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    positions: Vec<i32>,
    /// `E_j = (Y_{j+1} - Y_j) . e_1`.
    pub horiz_increments: Vec<i8>,
    /// `eta_j = 1` iff step `j` is horizontal.
    pub move_flags: Vec<u8>,
    /// Number of visits to `Y_j` among times `0..=j`; has `n + 1` entries.
    pub visit_index: Vec<u32>,
    /// Cookie value applied at step `j`, 0 when none was left.
    pub cookie_used: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(dim: usize, n: usize) -> Self {
        let mut positions = Vec::with_capacity((n + 1) * dim);
        positions.resize(dim, 0);
        Self {
            dim,
            positions,
            horiz_increments: Vec::with_capacity(n),
            move_flags: Vec::with_capacity(n),
            visit_index: Vec::with_capacity(n + 1),
            cookie_used: Vec::with_capacity(n),
        }
    }

    /// Builds a trajectory from a list of moves, recomputing visit indices.
    /// Cookies are looked up in `env` when given, else recorded as 0.
    pub fn from_moves(dim: usize, moves: &[Direction], env: Option<&CookieEnvironment>) -> Self {
        let mut traj = Self::with_capacity(dim, moves.len());
        let mut counter = VisitCounter::new(dim);
        let mut pos = vec![0i32; dim];
        for dir in moves {
            let k = counter.visit(&pos);
            traj.visit_index.push(k);
            traj.cookie_used.push(env.map_or(0.0, |e| e.beta(&pos, k)));
            pos[dir.axis] += i32::from(dir.sign);
            traj.push_step(&pos, *dir);
        }
        let k = counter.visit(&pos);
        traj.visit_index.push(k);
        traj
    }

    fn push_step(&mut self, pos: &[i32], dir: Direction) {
        self.positions.extend_from_slice(pos);
        let horizontal = dir.is_horizontal();
        self.horiz_increments.push(if horizontal { dir.sign } else { 0 });
        self.move_flags.push(u8::from(horizontal));
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `n`.
    pub fn len(&self) -> usize {
        self.horiz_increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horiz_increments.is_empty()
    }

    pub fn position(&self, j: usize) -> &[i32] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn horizontal(&self, j: usize) -> i32 {
        self.positions[j * self.dim]
    }

    pub fn vertical(&self, j: usize) -> &[i32] {
        &self.position(j)[1..]
    }

    pub fn direction(&self, j: usize) -> Direction {
        let a = self.position(j);
        let b = self.position(j + 1);
        let axis = (0..self.dim).find(|&i| a[i] != b[i]).expect("steps are unit moves");
        Direction::new(axis, (b[axis] - a[axis]) as i8)
    }

    pub fn moves(&self) -> Vec<Direction> {
        (0..self.len()).map(|j| self.direction(j)).collect()
    }

    /// One CSV record per step: time, coordinates of `Y_j`, `E_j`, `eta_j`,
    /// `k_j`, cookie used.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "time")?;
        for i in 0..self.dim {
            write!(w, ",y{i}")?;
        }
        writeln!(w, ",e,eta,k,cookie")?;
        for j in 0..self.len() {
            write!(w, "{j}")?;
            for c in self.position(j) {
                write!(w, ",{c}")?;
            }
            writeln!(
                w,
                ",{},{},{},{}",
                self.horiz_increments[j], self.move_flags[j], self.visit_index[j], self.cookie_used[j]
            )?;
        }
        Ok(())
    }
}

/// Visit counts keyed by site.
#[derive(Clone)]
pub struct VisitCounter {
    hasher: SiteHasher,
    table: SiteTable<u32>,
}

impl VisitCounter {
    pub fn new(dim: usize) -> Self {
        Self {
            hasher: SiteHasher::new(dim),
            table: SiteTable::new(dim),
        }
    }

    pub fn clear(&mut self) {
        self.table.clear();
    }

    pub fn hasher(&self) -> &SiteHasher {
        &self.hasher
    }

    /// Records an arrival at `y` and returns its visit index.
    pub fn visit(&mut self, y: &[i32]) -> u32 {
        let h = self.hasher.hash(y);
        self.visit_hashed(h, y)
    }

    #[inline]
    pub fn visit_hashed(&mut self, h: u64, y: &[i32]) -> u32 {
        let (c, _) = self.table.entry(h, y);
        *c += 1;
        *c
    }

    pub fn count(&self, y: &[i32]) -> u32 {
        self.table.get(self.hasher.hash(y), y).unwrap_or(0)
    }

    /// Number of distinct sites seen.
    pub fn distinct(&self) -> usize {
        self.table.len()
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(invalid("d", format!("need d >= 2, got {d}")));
    }
    Ok(())
}

/// Draws one step of the direct rule from `u` uniform on [0, 1): the first
/// two slots of width `(1 +- beta)/2d` are `+-e_1`, the rest are vertical.
#[inline]
pub(crate) fn direct_step(u: f64, beta: f64, d: usize) -> Direction {
    let x = u * (2 * d) as f64;
    if x < 1.0 + beta {
        Direction::new(0, 1)
    } else if x < 2.0 {
        Direction::new(0, -1)
    } else {
        let i = (x as usize).clamp(2, 2 * d - 1);
        Direction::from_index(i)
    }
}

/// Samples `n` steps with the direct transition rule: at the `k`-th visit to
/// `y`, `P(+-e_1) = (1 +- beta_k(y))/2d`, every other move `1/2d`.
pub fn simulate_direct(env: &CookieEnvironment, d: usize, n: usize, seed: SeedSpec) -> Result<Trajectory> {
    check_dim(d)?;
    let mut rng = derive_substream(seed, Purpose::Main);
    let mut traj = Trajectory::with_capacity(d, n);
    let mut counter = VisitCounter::new(d);
    let mut pos = vec![0i32; d];
    for _ in 0..n {
        let k = counter.visit(&pos);
        let beta = env.beta(&pos, k);
        let dir = direct_step(rng.random::<f64>(), beta, d);
        traj.visit_index.push(k);
        traj.cookie_used.push(beta);
        pos[dir.axis] += i32::from(dir.sign);
        traj.push_step(&pos, dir);
    }
    traj.visit_index.push(counter.visit(&pos));
    Ok(traj)
}

/// Samples `n` steps from auxiliary variables: move flags `eta_i ~ Ber(1/d)`
/// (1 = horizontal), fair coins `xi_i`, site coins
/// `zeta_k(y) ~ Ber((1 + beta_k(y))/2)` and a simple random walk on `Z^{d-1}`
/// whose steps are consumed by the vertical moves in order.
pub fn simulate_constructed(
    env: &CookieEnvironment,
    d: usize,
    n: usize,
    seed: SeedSpec,
) -> Result<Trajectory> {
    check_dim(d)?;
    let mut eta_rng = derive_substream(seed, Purpose::MoveFlags);
    let mut xi_rng = derive_substream(seed, Purpose::FairCoins);
    let mut jump_rng = derive_substream(seed, Purpose::JumpChain);
    let coin_key = site_key(seed, Purpose::SiteCoins);
    let count = env.count();
    let p_horizontal = 1.0 / d as f64;

    let mut traj = Trajectory::with_capacity(d, n);
    let mut counter = VisitCounter::new(d);
    let mut pos = vec![0i32; d];
    for _ in 0..n {
        let k = counter.visit(&pos);
        let horizontal = eta_rng.random::<f64>() < p_horizontal;
        let xi = xi_rng.random::<bool>();
        let beta = env.beta(&pos, k);
        let dir = if horizontal {
            let up = if count.covers(k) {
                let zeta = unit_from_hash(site_hash(coin_key, &pos, u64::from(k)));
                zeta < 0.5 * (1.0 + beta)
            } else {
                xi
            };
            Direction::new(0, if up { 1 } else { -1 })
        } else {
            let i = jump_rng.random_range(0..2 * (d - 1));
            Direction::from_index(2 + i)
        };
        traj.visit_index.push(k);
        traj.cookie_used.push(beta);
        pos[dir.axis] += i32::from(dir.sign);
        traj.push_step(&pos, dir);
    }
    traj.visit_index.push(counter.visit(&pos));
    Ok(traj)
}

/// Visit index `k_j`: `Y_j` was visited exactly `k_j - 1` times before `j`.
pub fn visit_count_semantics(traj: &Trajectory, j: usize) -> u32 {
    traj.visit_index[j]
}

/// The event that `Y_j` had exactly `k - 1` earlier visits.
pub fn exact_visit(traj: &Trajectory, j: usize, k: u32) -> bool {
    traj.visit_index[j] == k
}

/// The event that `Y_j` had fewer than `m` earlier visits, i.e. a cookie is
/// still present.
pub fn fresh_within(traj: &Trajectory, j: usize, m: CookieCount) -> bool {
    m.covers(traj.visit_index[j])
}

/// Adds horizontal moves on top of a given vertical path `Z_0..Z_T` with
/// move flags `eta_j`. With `env = None` the signs are fair coins (the
/// symmetric walk); otherwise the sign at the `k`-th visit to `y` is `+1`
/// with probability `(1 + beta_k(y))/2`. Because the vertical path and the
/// horizontal coins are independent, any conditioning on the vertical path
/// (such as a cut at 0) can be applied before this step.
pub fn overlay_horizontal(
    d: usize,
    vertical: &[i32],
    moves: &[u8],
    env: Option<&CookieEnvironment>,
    rng: &mut Stream,
    counter: &mut VisitCounter,
) -> Trajectory {
    let t = moves.len();
    let v = d - 1;
    debug_assert_eq!(vertical.len(), (t + 1) * v);
    counter.clear();
    let mut traj = Trajectory::with_capacity(d, t);
    let mut pos = vec![0i32; d];
    pos[1..].copy_from_slice(&vertical[..v]);
    traj.positions.clear();
    traj.positions.extend_from_slice(&pos);
    for j in 0..t {
        let k = counter.visit(&pos);
        let beta = env.map_or(0.0, |e| e.beta(&pos, k));
        traj.visit_index.push(k);
        traj.cookie_used.push(beta);
        let dir = if moves[j] == 1 {
            let up = rng.random::<f64>() < 0.5 * (1.0 + beta);
            Direction::new(0, if up { 1 } else { -1 })
        } else {
            let next = &vertical[(j + 1) * v..(j + 2) * v];
            let axis = (0..v).find(|&i| next[i] != pos[i + 1]).expect("vertical step moves") + 1;
            Direction::new(axis, (next[axis - 1] - pos[axis]) as i8)
        };
        pos[dir.axis] += i32::from(dir.sign);
        traj.push_step(&pos, dir);
    }
    traj.visit_index.push(counter.visit(&pos));
    traj
}

/// Reusable state for long runs that only need the final horizontal
/// position, without storing the path.
pub struct DirectRunner {
    d: usize,
    counter: VisitCounter,
    pos: Vec<i32>,
}

impl DirectRunner {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            counter: VisitCounter::new(d),
            pos: vec![0; d],
        }
    }

    /// Runs `n` direct-rule steps and returns `X_n`.
    pub fn final_horizontal(&mut self, env: &CookieEnvironment, n: usize, seed: SeedSpec) -> i64 {
        let d = self.d;
        let mut rng = derive_substream(seed, Purpose::Main);
        self.counter.clear();
        self.pos.iter_mut().for_each(|c| *c = 0);
        let track = matches!(env.count(), CookieCount::Finite(_)) || !env.has_identical_cookies();
        let hasher = self.counter.hasher().clone();
        let mut h = hasher.hash(&self.pos);
        for _ in 0..n {
            let k = if track {
                self.counter.visit_hashed(h, &self.pos)
            } else {
                1
            };
            let beta = env.beta(&self.pos, k);
            let dir = direct_step(rng.random::<f64>(), beta, d);
            self.pos[dir.axis] += i32::from(dir.sign);
            h = hasher.shift(h, dir.axis, dir.sign);
        }
        i64::from(self.pos[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visit_index_matches_brute_force() {
        let env = CookieEnvironment::constant(0.3, CookieCount::Finite(2)).unwrap();
        for s in 0..20 {
            let traj = simulate_direct(&env, 2, 300, SeedSpec::new(4, s)).unwrap();
            for j in 0..=traj.len() {
                let prior = (0..j).filter(|&i| traj.position(i) == traj.position(j)).count() as u32;
                assert_eq!(visit_count_semantics(&traj, j), prior + 1);
            }
        }
    }

    #[test]
    fn first_visit_and_return() {
        let moves = [Direction::new(1, 1), Direction::new(1, -1)];
        let traj = Trajectory::from_moves(2, &moves, None);
        assert_eq!(traj.visit_index, vec![1, 1, 2]);
        assert!(exact_visit(&traj, 2, 2));
        assert!(!fresh_within(&traj, 2, CookieCount::Finite(1)));
        assert!(fresh_within(&traj, 2, CookieCount::Infinite));
    }

    #[test]
    fn increments_and_flags_are_consistent() {
        let env = CookieEnvironment::constant(0.5, CookieCount::Finite(1)).unwrap();
        for traj in [
            simulate_direct(&env, 3, 500, SeedSpec::new(1, 1)).unwrap(),
            simulate_constructed(&env, 3, 500, SeedSpec::new(1, 1)).unwrap(),
        ] {
            for j in 0..traj.len() {
                let a = traj.position(j);
                let b = traj.position(j + 1);
                let l1: i32 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                assert_eq!(l1, 1);
                assert_eq!(traj.move_flags[j], traj.horiz_increments[j].unsigned_abs());
                assert_eq!(traj.move_flags[j] == 1, traj.vertical(j) == traj.vertical(j + 1));
                assert_eq!(i32::from(traj.horiz_increments[j]), b[0] - a[0]);
            }
        }
    }

    #[test]
    fn same_seed_same_path() {
        let env = CookieEnvironment::constant(0.5, CookieCount::Finite(1)).unwrap();
        let a = simulate_constructed(&env, 4, 200, SeedSpec::new(9, 2)).unwrap();
        let b = simulate_constructed(&env, 4, 200, SeedSpec::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn runner_matches_recorded_path() {
        let env = CookieEnvironment::constant(0.4, CookieCount::Finite(1)).unwrap();
        let mut runner = DirectRunner::new(3);
        for s in 0..5 {
            let seed = SeedSpec::new(2, s);
            let traj = simulate_direct(&env, 3, 400, seed).unwrap();
            assert_eq!(runner.final_horizontal(&env, 400, seed), i64::from(traj.horizontal(400)));
        }
    }

    #[test]
    fn overlay_follows_vertical_path() {
        let vertical = [0, 0, 1, 1, 0];
        let moves = [1, 0, 1, 0];
        let mut rng = derive_substream(SeedSpec::new(1, 1), Purpose::Horizontal);
        let mut counter = VisitCounter::new(2);
        let traj = overlay_horizontal(2, &vertical, &moves, None, &mut rng, &mut counter);
        assert_eq!(traj.len(), 4);
        for j in 0..=4 {
            assert_eq!(traj.vertical(j), &vertical[j..j + 1]);
        }
        assert_eq!(traj.move_flags, vec![1, 0, 1, 0]);
        let full = CookieEnvironment::constant(1.0, CookieCount::Infinite).unwrap();
        let traj = overlay_horizontal(2, &vertical, &moves, Some(&full), &mut rng, &mut counter);
        assert_eq!(traj.horizontal(4), 2);
    }

    #[test]
    fn csv_dump_has_one_row_per_step() {
        let env = CookieEnvironment::constant(0.0, CookieCount::Finite(1)).unwrap();
        let traj = simulate_direct(&env, 2, 5, SeedSpec::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("time,y0,y1,e,eta,k,cookie"));
    }
}
