//! Sampling of sliding-window cut times: unconditioned draws, the Palm
//! version (conditioned on a cut at 0), moment estimates and the long-run
//! segment estimator.

use serde::{Deserialize, Serialize};

use super::{apply, sliding_cuts, LazyWalkSpec, Window};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{derive_substream, Purpose, SeedSpec, Stream};
use crate::sites::{SiteHasher, SiteTable};
use crate::stats::{batch_means, mean, mean_estimate, Estimate};

/// Outcome of one unconditioned two-sided draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutSample {
    pub zero_is_cut: bool,
    /// First positive cut time, `None` when none was found within `[1, search]`.
    pub t: Option<u32>,
}

/// A draw conditioned on `0` being a cut time, with the vertical path up to
/// the next cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmSample {
    /// Attempts used by the rejection sampler, including the accepted one.
    pub attempts: u64,
    /// First positive cut time, `None` if truncated.
    pub t: Option<usize>,
    /// `Z_0, ..., Z_T` (empty when truncated).
    pub vertical: Vec<i32>,
    /// `eta_j = 1` when `Z_j = Z_{j+1}` for `j < T`.
    pub moves: Vec<u8>,
}

/// Scratch space reused across draws. The lazy path is stored step by step
/// and, separately, move by move (its jump chain), which is what the cut test
/// looks at.
pub struct CutWorkspace {
    vdim: usize,
    hasher: SiteHasher,
    past: SiteTable<i64>,
    future: SiteTable<i64>,
    /// `Z_0, Z_1, ...`
    buf: Vec<i32>,
    moved: Vec<bool>,
    /// Hash, position and arrival time of move `k`; `k = 0` is the origin.
    jump_hash: Vec<u64>,
    jump_pos: Vec<i32>,
    jump_time: Vec<usize>,
    diff: Vec<i32>,
    pos: Vec<i32>,
    h: u64,
}

impl CutWorkspace {
    pub fn new(vdim: usize) -> Self {
        Self {
            vdim,
            hasher: SiteHasher::new(vdim),
            past: SiteTable::with_capacity(vdim, 1024),
            future: SiteTable::with_capacity(vdim, 1024),
            buf: Vec::new(),
            moved: Vec::new(),
            jump_hash: Vec::new(),
            jump_pos: Vec::new(),
            jump_time: Vec::new(),
            diff: Vec::new(),
            pos: vec![0; vdim],
            h: 0,
        }
    }

    fn reset(&mut self) {
        self.past.clear();
        self.future.clear();
        self.buf.clear();
        self.moved.clear();
        self.jump_hash.clear();
        self.jump_pos.clear();
        self.jump_time.clear();
        self.pos.iter_mut().for_each(|c| *c = 0);
        self.h = 0;
        self.buf.extend_from_slice(&self.pos);
        self.jump_hash.push(0);
        self.jump_pos.extend_from_slice(&self.pos);
        self.jump_time.push(0);
    }

    /// Appends the next step of the future path.
    fn push_future(&mut self, spec: &LazyWalkSpec, rng: &mut Stream) {
        let step = spec.draw(rng);
        if let Some(dir) = step {
            apply(&self.hasher, &mut self.pos, &mut self.h, dir);
            self.jump_hash.push(self.h);
            self.jump_pos.extend_from_slice(&self.pos);
            self.jump_time.push(self.moved.len() + 1);
        }
        self.moved.push(step.is_some());
        self.buf.extend_from_slice(&self.pos);
    }

    /// Extends the future until move `k` exists.
    fn ensure_move(&mut self, spec: &LazyWalkSpec, rng: &mut Stream, k: usize) {
        while self.jump_hash.len() <= k {
            self.push_future(spec, rng);
        }
    }

    /// Walks the past until `h_past` moves are made, keeping for each site
    /// its most recent move index (negative). Returns whether the step into
    /// time 0 was a move.
    fn fill_past(&mut self, spec: &LazyWalkSpec, rng: &mut Stream, h_past: usize) -> bool {
        let mut pos = vec![0i32; self.vdim];
        let mut h = 0u64;
        let first = spec.draw(rng);
        let mut next = first;
        let mut k = 0i64;
        while k < h_past as i64 {
            if let Some(dir) = next {
                apply(&self.hasher, &mut pos, &mut h, dir);
                k += 1;
                let (e, fresh) = self.past.entry(h, &pos);
                if fresh {
                    *e = -k;
                }
            }
            if k < h_past as i64 {
                next = spec.draw(rng);
            }
        }
        first.is_some()
    }

    /// Grows past and future in lockstep, one move at a time, and stops at
    /// the first site shared by the two. Returns true when time 0 is a cut.
    fn zero_is_cut_early(&mut self, spec: &LazyWalkSpec, window: Window, past_rng: &mut Stream, fut_rng: &mut Stream) -> bool {
        let mut next = spec.draw(past_rng);
        if next.is_none() {
            return false;
        }
        let mut pos = vec![0i32; self.vdim];
        let mut h = 0u64;
        *self.future.entry(h, &pos).0 = 0;
        let mut y = vec![0i32; self.vdim];
        for k in 1..=window.past.max(window.future) {
            if k <= window.past {
                let dir = loop {
                    if let Some(dir) = next.take() {
                        break dir;
                    }
                    next = spec.draw(past_rng);
                };
                apply(&self.hasher, &mut pos, &mut h, dir);
                if self.future.get(h, &pos).is_some() {
                    return false;
                }
                let (e, fresh) = self.past.entry(h, &pos);
                if fresh {
                    *e = -(k as i64);
                }
            }
            if k <= window.future {
                self.ensure_move(spec, fut_rng, k);
                let hb = self.jump_hash[k];
                y.copy_from_slice(&self.jump_pos[k * self.vdim..(k + 1) * self.vdim]);
                if self.past.get(hb, &y).is_some() {
                    return false;
                }
                *self.future.entry(hb, &y).0 = k as i64;
            }
        }
        true
    }

    /// Sweeps the moves of the future in order. A pair of consecutive visits
    /// `a < b` (move indices) to one site rules out exactly the candidates
    /// `k ∈ [max(a+1, b-H_f), min(b, a+H_p)]`; candidate `k` is settled once
    /// move `k + H_f` has been processed. Returns whether move 0 passes and
    /// the first positive move index that does, searched up to
    /// `window.search`.
    fn scan(&mut self, spec: &LazyWalkSpec, window: Window, fut_rng: &mut Stream) -> (bool, Option<usize>) {
        let hf = window.future as i64;
        let hp = window.past as i64;
        let n_max = window.search as i64;
        let v = self.vdim;
        self.future.clear();
        self.diff.clear();
        self.diff.resize(window.search + 2, 0);
        let mut running = 0i32;
        let mut zero = false;
        for b in 0..=(n_max + hf) {
            let bu = b as usize;
            self.ensure_move(spec, fut_rng, bu);
            let hb = self.jump_hash[bu];
            let y = &self.jump_pos[bu * v..(bu + 1) * v];
            let (e, fresh) = self.future.entry(hb, y);
            let prev = if fresh { None } else { Some(*e) };
            *e = b;
            let prev = prev.or_else(|| self.past.get(hb, y));
            if let Some(a) = prev {
                let lo = (a + 1).max(b - hf).max(0);
                let hi = b.min(a + hp).min(n_max);
                if lo <= hi {
                    self.diff[lo as usize] += 1;
                    self.diff[hi as usize + 1] -= 1;
                }
            }
            if b >= hf {
                let n = b - hf;
                running += self.diff[n as usize];
                let blocked = running > 0;
                if n == 0 {
                    zero = !blocked;
                } else if !blocked {
                    return (zero, Some(n as usize));
                }
            }
        }
        (zero, None)
    }
}

/// One unconditioned draw: whether 0 is a cut and the first positive cut.
pub fn sample_cut(spec: LazyWalkSpec, window: Window, seed: SeedSpec, ws: &mut CutWorkspace) -> CutSample {
    debug_assert_eq!(ws.vdim, spec.vdim);
    let mut past_rng = derive_substream(seed, Purpose::Past);
    let mut fut_rng = derive_substream(seed, Purpose::Future);
    ws.reset();
    let moved_in = ws.fill_past(&spec, &mut past_rng, window.past);
    let (zero, k) = ws.scan(&spec, window, &mut fut_rng);
    CutSample {
        zero_is_cut: moved_in && zero,
        t: k.map(|k| ws.jump_time[k] as u32),
    }
}

/// Rejection sampler for the Palm measure: attempt `a` uses the streams of
/// `seed.child(a)` and is accepted when 0 is a window cut time.
pub fn sample_palm(
    spec: LazyWalkSpec,
    window: Window,
    seed: SeedSpec,
    max_attempts: u64,
    ws: &mut CutWorkspace,
) -> Result<PalmSample> {
    debug_assert_eq!(ws.vdim, spec.vdim);
    for a in 0..max_attempts {
        let s = seed.child(a);
        let mut past_rng = derive_substream(s, Purpose::Past);
        let mut fut_rng = derive_substream(s, Purpose::Future);
        ws.reset();
        if !ws.zero_is_cut_early(&spec, window, &mut past_rng, &mut fut_rng) {
            continue;
        }
        let (zero, k) = ws.scan(&spec, window, &mut fut_rng);
        debug_assert!(zero);
        let t = k.map(|k| ws.jump_time[k]);
        let (vertical, moves) = match t {
            Some(t) => (
                ws.buf[..(t + 1) * ws.vdim].to_vec(),
                ws.moved[..t].iter().map(|&m| u8::from(!m)).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        return Ok(PalmSample {
            attempts: a + 1,
            t,
            vertical,
            moves,
        });
    }
    Err(Error::RejectionBudgetExhausted {
        attempts: max_attempts,
    })
}

/// Results of [`palm_t_moments`]: an unconditioned batch and an independent
/// batch of Palm draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PalmMoments {
    pub window: Window,
    pub unconditioned: Vec<CutSample>,
    /// `(attempts, T)` per Palm draw; `T = None` when truncated.
    pub palm: Vec<(u64, Option<u32>)>,
}

impl PalmMoments {
    /// `P(0 ∈ D)` from the unconditioned batch.
    pub fn p_cut(&self) -> Estimate {
        let xs: Vec<f64> = self.unconditioned.iter().map(|s| f64::from(u8::from(s.zero_is_cut))).collect();
        mean_estimate(&xs)
    }

    /// `P(0 ∈ D)` from the Palm batch's acceptance rate (accepted / attempts).
    pub fn p_cut_from_acceptance(&self) -> Estimate {
        let attempts: u64 = self.palm.iter().map(|p| p.0).sum();
        let p = self.palm.len() as f64 / attempts as f64;
        // Attempts per acceptance are geometric; delta method on 1/mean.
        let per: Vec<f64> = self.palm.iter().map(|p| p.0 as f64).collect();
        let m = mean_estimate(&per);
        Estimate::new(p, m.stderr / (m.value * m.value))
    }

    /// `E[T 1{0 ∈ D}]` from the unconditioned batch (truncated draws count 0).
    pub fn t_on_cut(&self) -> Estimate {
        let xs: Vec<f64> = self
            .unconditioned
            .iter()
            .map(|s| if s.zero_is_cut { f64::from(s.t.unwrap_or(0)) } else { 0.0 })
            .collect();
        mean_estimate(&xs)
    }

    /// `E[T]` over untruncated unconditioned draws.
    pub fn t_unconditioned(&self) -> Estimate {
        mean_estimate(&self.unconditioned_t_powers(1))
    }

    pub fn unconditioned_t_powers(&self, k: i32) -> Vec<f64> {
        self.unconditioned
            .iter()
            .filter_map(|s| s.t.map(|t| f64::from(t).powi(k)))
            .collect()
    }

    /// Untruncated Palm values of `T`.
    pub fn palm_t(&self) -> Vec<f64> {
        self.palm.iter().filter_map(|p| p.1.map(f64::from)).collect()
    }

    /// `Ê(T^k)`.
    pub fn palm_moment(&self, k: i32) -> Estimate {
        let xs: Vec<f64> = self.palm_t().iter().map(|t| t.powi(k)).collect();
        mean_estimate(&xs)
    }

    /// Fraction of draws (both batches) with no positive cut in the window.
    pub fn truncation_rate(&self) -> f64 {
        let bad = self.unconditioned.iter().filter(|s| s.t.is_none()).count()
            + self.palm.iter().filter(|p| p.1.is_none()).count();
        bad as f64 / (self.unconditioned.len() + self.palm.len()) as f64
    }
}

/// Estimates cut-time moments from `attempts` unconditioned draws
/// (streams `seed.child(0).child(i)`) and `palm_draws` Palm draws (streams
/// `seed.child(1).child(i)`). Reusing a seed with a larger window gives
/// common random numbers, since every stream is consumed sequentially.
pub fn palm_t_moments(
    spec: LazyWalkSpec,
    window: Window,
    attempts: u64,
    palm_draws: u64,
    seed: SeedSpec,
    max_attempts: u64,
    threads: usize,
) -> Result<PalmMoments> {
    let base_u = seed.child(0);
    let base_p = seed.child(1);
    let unconditioned = map_indexed(
        threads,
        attempts,
        || CutWorkspace::new(spec.vdim),
        |ws, i| sample_cut(spec, window, base_u.child(i), ws),
    );
    let palm = map_indexed(
        threads,
        palm_draws,
        || CutWorkspace::new(spec.vdim),
        |ws, i| sample_palm(spec, window, base_p.child(i), max_attempts, ws).map(|p| (p.attempts, p.t.map(|t| t as u32))),
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PalmMoments {
        window,
        unconditioned,
        palm,
    })
}

/// Moments of the first positive cut of a lazy walk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LazyMoments {
    pub spec: LazyWalkSpec,
    pub samples: Vec<Option<u32>>,
}

impl LazyMoments {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|t| t.map(f64::from)).collect()
    }

    pub fn moment(&self, k: i32) -> Estimate {
        let xs: Vec<f64> = self.values().iter().map(|t| t.powi(k)).collect();
        mean_estimate(&xs)
    }

    pub fn truncation_rate(&self) -> f64 {
        self.samples.iter().filter(|t| t.is_none()).count() as f64 / self.samples.len() as f64
    }
}

/// Unconditioned first cut times `T^eps` of the lazy walk `spec`.
pub fn lazy_walk_t(spec: LazyWalkSpec, window: Window, replicates: u64, seed: SeedSpec, threads: usize) -> LazyMoments {
    let samples = map_indexed(
        threads,
        replicates,
        || CutWorkspace::new(spec.vdim),
        |ws, i| sample_cut(spec, window, seed.child(i), ws).t,
    );
    LazyMoments { spec, samples }
}

/// One stretch `[T_i, T_{i+1}]` between consecutive cuts of a long path.
pub struct Segment<'a> {
    pub length: usize,
    /// Vertical positions `Z_{T_i}, ..., Z_{T_{i+1}}`.
    pub positions: &'a [i32],
    pub vdim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub estimate: Estimate,
    pub segments: usize,
}

/// Averages `f` over the inter-cut segments of one long one-sided path of
/// `run_length` steps. By stationarity of the cut process this estimates the
/// Palm expectation of `f` applied to `[0, T]`. Standard errors use 20 batch
/// means.
pub fn segment_palm_estimator(
    spec: LazyWalkSpec,
    window: Window,
    run_length: usize,
    seed: SeedSpec,
    min_segments: usize,
    f: impl Fn(&Segment<'_>) -> f64,
) -> Result<SegmentEstimate> {
    let values = segment_values(spec, window, run_length, seed, min_segments, &f)?;
    Ok(SegmentEstimate {
        estimate: batch_means(&values, SEGMENT_BATCHES),
        segments: values.len(),
    })
}

const SEGMENT_BATCHES: usize = 20;

/// Pools [`segment_palm_estimator`] over `chains` independent runs (chain `c`
/// uses `seed.child(c)`), so long totals fit in memory. The standard error
/// comes from the batch means of all chains together.
#[allow(clippy::too_many_arguments)]
pub fn segment_palm_chains(
    spec: LazyWalkSpec,
    window: Window,
    run_length: usize,
    chains: u64,
    seed: SeedSpec,
    min_segments: usize,
    threads: usize,
    f: impl Fn(&Segment<'_>) -> f64 + Sync + Send,
) -> Result<SegmentEstimate> {
    let per_chain = map_indexed(
        threads,
        chains,
        || (),
        |_, c| -> Result<(Vec<f64>, usize)> {
            let values = segment_values(spec, window, run_length, seed.child(c), min_segments, &f)?;
            let size = values.len() / SEGMENT_BATCHES;
            let batches = values.chunks_exact(size).take(SEGMENT_BATCHES).map(mean).collect();
            Ok((batches, values.len()))
        },
    );
    let mut batches = Vec::new();
    let mut segments = 0;
    for r in per_chain {
        let (b, n) = r?;
        batches.extend(b);
        segments += n;
    }
    Ok(SegmentEstimate {
        estimate: mean_estimate(&batches),
        segments,
    })
}

fn segment_values(
    spec: LazyWalkSpec,
    window: Window,
    run_length: usize,
    seed: SeedSpec,
    min_segments: usize,
    f: &dyn Fn(&Segment<'_>) -> f64,
) -> Result<Vec<f64>> {
    let mut rng = derive_substream(seed, Purpose::Future);
    let hasher = SiteHasher::new(spec.vdim);
    let mut pos = vec![0i32; spec.vdim];
    let mut h = 0u64;
    let mut path = Vec::with_capacity((run_length + 1) * spec.vdim);
    path.extend_from_slice(&pos);
    for _ in 0..run_length {
        if let Some(dir) = spec.draw(&mut rng) {
            apply(&hasher, &mut pos, &mut h, dir);
        }
        path.extend_from_slice(&pos);
    }
    let cuts = sliding_cuts(&path, spec.vdim, window);
    let found = cuts.len().saturating_sub(1);
    let required = min_segments.max(SEGMENT_BATCHES);
    if found < required {
        return Err(Error::TooFewSegments { found, required });
    }
    let v = spec.vdim;
    Ok(cuts
        .windows(2)
        .map(|w| {
            f(&Segment {
                length: w[1] - w[0],
                positions: &path[w[0] * v..(w[1] + 1) * v],
                vdim: v,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{detect_window_cuts, TwoSidedPath};

    #[test]
    fn streaming_scan_matches_stored_path() {
        // Rebuild the same draw as a stored path and apply the quadratic
        // definition of the sliding rule to its jump chain.
        let spec = LazyWalkSpec::new(0.7, 2).unwrap();
        let mut ws = CutWorkspace::new(2);
        for i in 0..300u64 {
            let f = 2 + (i % 6) as usize;
            let w = Window::new(3 + (i % 9) as usize, f).with_search(f + 4 * (i % 4) as usize);
            let seed = SeedSpec::new(12, i);
            let got = sample_cut(spec, w, seed, &mut ws);
            let long = Window::new(4 * w.past + 20, 4 * (w.search + w.future) + 20);
            let path = TwoSidedPath::generate(spec, long, seed);
            let lo = -(long.past as i64);
            let hi = long.future as i64;
            // Jump chain as (move index, a time the walk is there).
            let mut chain = vec![(0i64, 0i64)];
            let (mut k, mut t) = (0, 0);
            while t > lo {
                t -= 1;
                if path.position(t) != path.position(t + 1) {
                    k -= 1;
                    chain.insert(0, (k, t));
                }
            }
            let (mut k, mut t) = (0, 0);
            while t < hi {
                t += 1;
                if path.position(t) != path.position(t - 1) {
                    k += 1;
                    chain.push((k, t));
                }
            }
            let origin = chain.iter().position(|c| c.0 == 0).unwrap() as i64;
            let jpos = |j: i64| path.position(chain[(origin + j) as usize].1);
            let is_cut = |n: i64| {
                (n - w.past as i64..n).all(|a| (n..=n + w.future as i64).all(|b| jpos(a) != jpos(b)))
            };
            let moved_in = path.position(-1) != path.position(0);
            assert_eq!(got.zero_is_cut, moved_in && is_cut(0), "case {i}");
            let expect = (1..=w.search as i64)
                .find(|&n| is_cut(n))
                .map(|n| chain[(origin + n) as usize].1 as u32);
            assert_eq!(got.t, expect, "case {i}");
        }
    }

    #[test]
    fn zero_cut_agrees_with_anchored_detection() {
        // Without holds, moves and steps coincide and so do the two rules at 0.
        let spec = LazyWalkSpec::vertical_of(3).unwrap().jump_chain();
        let mut ws = CutWorkspace::new(2);
        for i in 0..200u64 {
            let w = Window::symmetric(8 + (i % 5) as usize);
            let seed = SeedSpec::new(2, i);
            let s = sample_cut(spec, w, seed, &mut ws);
            let rec = detect_window_cuts(&TwoSidedPath::generate(spec, w, seed));
            assert_eq!(s.zero_is_cut, rec.zero_is_cut);
        }
    }

    #[test]
    fn palm_draws_are_cuts() {
        let spec = LazyWalkSpec::vertical_of(4).unwrap();
        let mut ws = CutWorkspace::new(3);
        let w = Window::symmetric(30);
        for i in 0..100u64 {
            let seed = SeedSpec::new(6, i);
            let p = sample_palm(spec, w, seed, 1000, &mut ws).unwrap();
            // The accepted attempt replayed unconditioned must agree.
            let replay = sample_cut(spec, w, seed.child(p.attempts - 1), &mut ws);
            assert!(replay.zero_is_cut);
            assert_eq!(replay.t.map(|t| t as usize), p.t);
            if let Some(t) = p.t {
                assert_eq!(p.vertical.len(), (t + 1) * 3);
                assert_eq!(p.moves.len(), t);
                for j in 0..t {
                    let same = p.vertical[j * 3..(j + 1) * 3] == p.vertical[(j + 1) * 3..(j + 2) * 3];
                    assert_eq!(p.moves[j] == 1, same);
                }
            }
        }
    }

    #[test]
    fn early_rejection_matches_full_test() {
        let spec = LazyWalkSpec::vertical_of(3).unwrap();
        let mut ws = CutWorkspace::new(2);
        let w = Window::new(15, 11);
        for i in 0..300u64 {
            let seed = SeedSpec::new(21, i);
            let full = sample_cut(spec, w, seed, &mut ws).zero_is_cut;
            let mut pr = derive_substream(seed, Purpose::Past);
            let mut fr = derive_substream(seed, Purpose::Future);
            ws.reset();
            assert_eq!(ws.zero_is_cut_early(&spec, w, &mut pr, &mut fr), full, "case {i}");
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let spec = LazyWalkSpec::vertical_of(2).unwrap();
        let mut ws = CutWorkspace::new(1);
        let r = sample_palm(spec, Window::symmetric(5000), SeedSpec::new(1, 1), 3, &mut ws);
        assert!(matches!(r, Err(Error::RejectionBudgetExhausted { attempts: 3 })));
    }

    #[test]
    fn segment_normalization() {
        let spec = LazyWalkSpec::vertical_of(6).unwrap();
        let est = segment_palm_estimator(spec, Window::symmetric(200), 20_000, SeedSpec::new(1, 0), 10, |_| 1.0).unwrap();
        assert_eq!(est.estimate.value, 1.0);
        assert!(est.segments > 1000);
    }
}
