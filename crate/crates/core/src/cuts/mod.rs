//! Cut times of the vertical walk.
//!
//! `n` is a cut time when the vertical path before `n` never meets the path
//! from `n` on. Two finite-window versions are provided:
//!
//! * anchored: the past and future are the fixed ranges `[-W_p, n)` and
//!   `[n, W_f]` of one stored path ([`detect_window_cuts`]);
//! * sliding: the last `H_p` moves before `n` against the next `H_f` moves
//!   from `n`, for `n` reached by a move (after a hold, `Z_{n-1} = Z_n` and
//!   `n` cannot be a cut). This rule commutes with time shifts, so the
//!   windowed cut set is itself a stationary point process and the Palm
//!   identities hold exactly for it. Counting moves rather than steps makes
//!   the cuts of a lazy walk exactly the arrivals at cuts of its jump chain,
//!   whatever the window. Sampling, moments and the segment estimator all use
//!   the sliding rule.

mod palm;
mod returns;

pub use palm::{
    lazy_walk_t, palm_t_moments, sample_cut, sample_palm, segment_palm_chains, segment_palm_estimator, CutSample,
    CutWorkspace, LazyMoments, PalmMoments, PalmSample, Segment, SegmentEstimate,
};
pub use returns::{
    gauss_legendre, return_probability, return_probability_convolution,
    return_probability_quadrature, ReturnMethod,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_substream, Purpose, SeedSpec, Stream};
use crate::sites::{SiteHasher, SiteTable};

/// Past and future horizons of the cut test, in steps, and how far the
/// samplers look for the first positive cut (`search`, by default `future`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub past: usize,
    pub future: usize,
    pub search: usize,
}

impl Window {
    pub fn new(past: usize, future: usize) -> Self {
        Self {
            past,
            future,
            search: future,
        }
    }

    pub fn symmetric(h: usize) -> Self {
        Self::new(h, h)
    }

    /// Same cut rule, with the first positive cut sought in `[1, search]`.
    pub fn with_search(self, search: usize) -> Self {
        Self { search, ..self }
    }

    pub fn doubled(self) -> Self {
        Self {
            past: 2 * self.past,
            future: 2 * self.future,
            search: 2 * self.search,
        }
    }
}

/// Walk on `Z^vdim` that holds with probability `1 - eps` and otherwise jumps
/// to a uniform neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazyWalkSpec {
    pub eps: f64,
    pub vdim: usize,
}

impl LazyWalkSpec {
    pub fn new(eps: f64, vdim: usize) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid("eps", format!("{eps} is not in (0, 1]")));
        }
        if vdim == 0 {
            return Err(invalid("dim", "need at least one vertical dimension"));
        }
        Ok(Self { eps, vdim })
    }

    /// Vertical component of a walk on `Z^d`: holds exactly when the walk
    /// moves horizontally, i.e. with probability `1/d`.
    pub fn vertical_of(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(invalid("d", format!("need d >= 2, got {d}")));
        }
        Self::new((d - 1) as f64 / d as f64, d - 1)
    }

    /// Jump chain of the same walk.
    pub fn jump_chain(self) -> Self {
        Self {
            eps: 1.0,
            vdim: self.vdim,
        }
    }

    /// Draws one step; returns `None` for a hold, else the direction index
    /// (`2 * axis + (sign < 0)`, axes counted from 0 within `Z^vdim`).
    #[inline]
    pub fn draw(&self, rng: &mut Stream) -> Option<usize> {
        let n = 2 * self.vdim;
        if self.eps >= 1.0 {
            return Some(rng.random_range(0..n));
        }
        let u: f64 = rng.random();
        let hold = 1.0 - self.eps;
        if u < hold {
            None
        } else {
            Some((((u - hold) / self.eps * n as f64) as usize).min(n - 1))
        }
    }
}

/// Moves `pos` (and its hash) by direction index `dir`.
#[inline]
pub(crate) fn apply(hasher: &SiteHasher, pos: &mut [i32], h: &mut u64, dir: usize) {
    let axis = dir / 2;
    let sign: i8 = if dir % 2 == 0 { 1 } else { -1 };
    pos[axis] += i32::from(sign);
    *h = hasher.shift(*h, axis, sign);
}

/// Vertical path on `[-W_p, W_f]` with `Z_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedPath {
    vdim: usize,
    /// `Z_{-1}, Z_{-2}, ..., Z_{-W_p}`.
    past: Vec<i32>,
    /// `Z_0, Z_1, ..., Z_{W_f}`.
    future: Vec<i32>,
}

impl TwoSidedPath {
    /// Two independent one-sided walks glued at the origin.
    pub fn generate(spec: LazyWalkSpec, window: Window, seed: SeedSpec) -> Self {
        let one_sided = |purpose, len: usize, include_origin: bool| {
            let mut rng = derive_substream(seed, purpose);
            let hasher = SiteHasher::new(spec.vdim);
            let mut pos = vec![0i32; spec.vdim];
            let mut h = 0u64;
            let mut out = Vec::with_capacity((len + 1) * spec.vdim);
            if include_origin {
                out.extend_from_slice(&pos);
            }
            for _ in 0..len {
                if let Some(dir) = spec.draw(&mut rng) {
                    apply(&hasher, &mut pos, &mut h, dir);
                }
                out.extend_from_slice(&pos);
            }
            out
        };
        Self {
            vdim: spec.vdim,
            past: one_sided(Purpose::Past, window.past, false),
            future: one_sided(Purpose::Future, window.future, true),
        }
    }

    /// Builds a path from explicit positions; `past[0]` is `Z_{-1}` and
    /// `future[0]` must be the origin.
    pub fn from_positions(vdim: usize, past: &[Vec<i32>], future: &[Vec<i32>]) -> Result<Self> {
        if future.is_empty() || future[0].iter().any(|&c| c != 0) {
            return Err(invalid("future", "must start at the origin"));
        }
        let all = past.iter().chain(future);
        if all.clone().any(|p| p.len() != vdim) {
            return Err(invalid("positions", "inconsistent dimension"));
        }
        Ok(Self {
            vdim,
            past: past.concat(),
            future: future.concat(),
        })
    }

    pub fn window(&self) -> Window {
        Window::new(self.past.len() / self.vdim, self.future.len() / self.vdim - 1)
    }

    pub fn vdim(&self) -> usize {
        self.vdim
    }

    pub fn position(&self, t: i64) -> &[i32] {
        let v = self.vdim;
        if t >= 0 {
            let i = t as usize * v;
            &self.future[i..i + v]
        } else {
            let i = (-t - 1) as usize * v;
            &self.past[i..i + v]
        }
    }
}

/// Cut times of a stored two-sided path under the anchored window rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub window_cut_times: Vec<i64>,
    pub zero_is_cut: bool,
    /// First positive window cut time.
    pub t: Option<i64>,
    pub window: Window,
    pub truncated: bool,
}

/// All `t` in `[-W_p, W_f]` with `Z[-W_p, t) ∩ Z[t, W_f] = ∅`, in O(L).
///
/// A site first visited at `f` and last at `l` rules out exactly the times
/// in `(f, l]`, so a difference array over first/last visits suffices.
pub fn detect_window_cuts(path: &TwoSidedPath) -> CutRecord {
    let window = path.window();
    let start = -(window.past as i64);
    let len = window.past + window.future + 1;
    let hasher = SiteHasher::new(path.vdim);
    let mut span: SiteTable<(i64, i64)> = SiteTable::with_capacity(path.vdim, len);
    for t in start..=window.future as i64 {
        let y = path.position(t);
        let (e, fresh) = span.entry(hasher.hash(y), y);
        if fresh {
            *e = (t, t);
        } else {
            e.1 = t;
        }
    }
    let mut diff = vec![0i32; len + 1];
    for (_, &(first, last)) in span.iter() {
        if last > first {
            diff[(first + 1 - start) as usize] += 1;
            diff[(last + 1 - start) as usize] -= 1;
        }
    }
    let mut cuts = Vec::new();
    let mut running = 0;
    for (i, d) in diff.iter().take(len).enumerate() {
        running += d;
        if running == 0 {
            cuts.push(start + i as i64);
        }
    }
    let zero_is_cut = cuts.binary_search(&0).is_ok();
    let t = cuts.iter().copied().find(|&c| c > 0);
    CutRecord {
        window_cut_times: cuts,
        zero_is_cut,
        t,
        window,
        truncated: t.is_none(),
    }
}

/// Sliding-window cut times of a stored one-sided path `Z_0..Z_N`. With
/// `J_0, J_1, ..., J_K` the jump chain of the path, `n` is reported when the
/// step into `n` is a move, to `J_k` say, with `J[k - H_p, k) ∩ J[k, k + H_f]
/// = ∅`; only `k` in `[max(H_p, 1), K - H_f]` can be decided.
pub fn sliding_cuts(positions: &[i32], vdim: usize, window: Window) -> Vec<usize> {
    let len = positions.len() / vdim;
    let at = |t: usize| &positions[t * vdim..(t + 1) * vdim];
    let mut arrival = Vec::with_capacity(len);
    arrival.push(0);
    arrival.extend((1..len).filter(|&t| at(t) != at(t - 1)));
    let k_max = arrival.len() - 1;
    if k_max < window.past.max(1) + window.future {
        return Vec::new();
    }
    let lo_n = window.past.max(1) as i64;
    let hi_n = (k_max - window.future) as i64;
    let hasher = SiteHasher::new(vdim);
    let mut last: SiteTable<i64> = SiteTable::with_capacity(vdim, arrival.len());
    let mut diff = vec![0i32; (hi_n - lo_n + 2) as usize];
    for (b, &t) in arrival.iter().enumerate() {
        let b = b as i64;
        let y = at(t);
        let (e, fresh) = last.entry(hasher.hash(y), y);
        if !fresh {
            let a = *e;
            let lo = (a + 1).max(b - window.future as i64).max(lo_n);
            let hi = b.min(a + window.past as i64).min(hi_n);
            if lo <= hi {
                diff[(lo - lo_n) as usize] += 1;
                diff[(hi - lo_n + 1) as usize] -= 1;
            }
        }
        *e = b;
    }
    let mut running = 0;
    let mut cuts = Vec::new();
    for (i, d) in diff[..(hi_n - lo_n + 1) as usize].iter().enumerate() {
        running += d;
        if running == 0 {
            cuts.push(arrival[i + lo_n as usize]);
        }
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(path: &TwoSidedPath) -> Vec<i64> {
        let w = path.window();
        let lo = -(w.past as i64);
        let hi = w.future as i64;
        (lo..=hi)
            .filter(|&t| {
                (lo..t).all(|a| (t..=hi).all(|b| path.position(a) != path.position(b)))
            })
            .collect()
    }

    #[test]
    fn straight_line_is_all_cuts() {
        let past: Vec<Vec<i32>> = (1..=5).map(|k| vec![-k]).collect();
        let future: Vec<Vec<i32>> = (0..=5).map(|k| vec![k]).collect();
        let path = TwoSidedPath::from_positions(1, &past, &future).unwrap();
        let rec = detect_window_cuts(&path);
        assert_eq!(rec.window_cut_times, (-5..=5).collect::<Vec<_>>());
        assert_eq!(rec.t, Some(1));
    }

    #[test]
    fn overlap_removes_cuts() {
        let path = TwoSidedPath::from_positions(1, &[vec![1]], &[vec![0], vec![1]]).unwrap();
        let rec = detect_window_cuts(&path);
        assert!(!rec.zero_is_cut);
        assert!(!rec.window_cut_times.contains(&1));
        assert!(rec.truncated);
    }

    #[test]
    fn fast_detection_matches_brute_force() {
        for (i, vdim) in [1usize, 2, 3].into_iter().cycle().take(300).enumerate() {
            let spec = LazyWalkSpec::new(0.75, vdim).unwrap();
            let w = Window::new(5 + i % 17, 3 + i % 23);
            let path = TwoSidedPath::generate(spec, w, SeedSpec::new(3, i as u64));
            assert_eq!(detect_window_cuts(&path).window_cut_times, brute_force(&path));
        }
    }

    #[test]
    fn sliding_rule_matches_brute_force() {
        for i in 0..200u64 {
            let spec = LazyWalkSpec::new(0.8, 1 + (i % 3) as usize).unwrap();
            let path = TwoSidedPath::generate(spec, Window::new(0, 60), SeedSpec::new(8, i));
            let w = Window::new((i % 7) as usize, 1 + (i % 11) as usize);
            let pos = |t: usize| path.position(t as i64);
            let jumps: Vec<usize> = std::iter::once(0).chain((1..=60).filter(|&t| pos(t) != pos(t - 1))).collect();
            let k_max = jumps.len() - 1;
            let slow: Vec<usize> = (w.past.max(1)..=k_max.saturating_sub(w.future))
                .filter(|&k| k + w.future <= k_max)
                .filter(|&k| {
                    (k - w.past..k).all(|a| (k..=k + w.future).all(|b| pos(jumps[a]) != pos(jumps[b])))
                })
                .map(|k| jumps[k])
                .collect();
            assert_eq!(sliding_cuts(&path.future, spec.vdim, w), slow, "case {i}");
        }
    }

    #[test]
    fn lazy_step_frequencies() {
        let spec = LazyWalkSpec::new(0.25, 2).unwrap();
        let mut rng = derive_substream(SeedSpec::new(1, 1), Purpose::Main);
        let mut counts = [0usize; 5];
        let n = 40_000;
        for _ in 0..n {
            match spec.draw(&mut rng) {
                None => counts[4] += 1,
                Some(d) => counts[d] += 1,
            }
        }
        let hold = counts[4] as f64 / n as f64;
        assert!((hold - 0.75).abs() < 4.0 * (0.75 * 0.25 / n as f64).sqrt());
        for &c in &counts[..4] {
            let p = c as f64 / n as f64;
            assert!((p - 0.0625).abs() < 4.0 * (0.0625 * 0.9375 / n as f64).sqrt());
        }
    }
}
