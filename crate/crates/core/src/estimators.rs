//! Speed and derivative estimators.
//!
//! Every quantity is available in at least two independent forms so they can
//! be checked against each other: long-run averages, Palm ratio estimators
//! built on cut times, and reweighted symmetric-walk samples.

use serde::{Deserialize, Serialize};

use crate::cuts::{sample_palm, CutWorkspace, LazyWalkSpec, Window};
use crate::environment::{CookieCount, CookieEnvironment};
use crate::error::{invalid, Error, Result};
use crate::girsanov::{derivative_weights, LogWeight};
use crate::parallel::map_indexed;
use crate::rng::{derive_substream, Purpose, SeedSpec};
use crate::sites::{SiteHasher, SiteTable};
use crate::stats::{effective_sample_size, jackknife_ratio, mean_estimate, ratio_estimate, Estimate};
use crate::walker::{overlay_horizontal, DirectRunner, Trajectory, VisitCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lln,
    CutRatio,
    GirsanovProduct,
    GirsanovNumerator,
    DerivativeAtZero,
    RangeLln,
    RangePalm,
    DerivativeMBeta,
    CoupledDerivative,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Lln => "lln",
            Method::CutRatio => "cut-ratio",
            Method::GirsanovProduct => "girsanov-product",
            Method::GirsanovNumerator => "girsanov-numerator",
            Method::DerivativeAtZero => "derivative-at-zero",
            Method::RangeLln => "range-lln",
            Method::RangePalm => "range-palm",
            Method::DerivativeMBeta => "derivative-m-beta",
            Method::CoupledDerivative => "coupled-derivative",
        }
    }
}

/// Result record shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub method: Method,
    pub d: usize,
    pub m: CookieCount,
    /// Cookie strength or interpolation parameter; `None` for random fields.
    pub parameter: Option<f64>,
    pub value: f64,
    pub stderr: f64,
    pub replicates: u64,
    pub horizon: Option<usize>,
    pub window: Option<Window>,
    pub ess: Option<f64>,
    pub truncation_rate: f64,
    pub jackknife_stderr: Option<f64>,
}

impl SpeedEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.stderr)
    }
}

/// Execution and resource settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub threads: usize,
    /// Rejection budget per Palm draw.
    pub max_attempts: u64,
    /// Largest tolerated fraction of draws without a cut in the window.
    pub truncation_threshold: f64,
    /// Smallest tolerated effective sample size, as a fraction of the draws.
    pub ess_fraction: f64,
    /// Largest cookie strength accepted by reweighted estimators.
    pub beta_max: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            max_attempts: 100_000,
            truncation_threshold: 0.01,
            ess_fraction: 0.1,
            beta_max: 0.8,
        }
    }
}

fn check_dim(d: usize, min: usize) -> Result<()> {
    if d < min {
        return Err(invalid("d", format!("need d >= {min}, got {d}")));
    }
    Ok(())
}

fn check_replicates(n: u64) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: n as usize,
        });
    }
    Ok(())
}

/// Per-thread scratch space for Palm-based estimators.
struct PalmScratch {
    cuts: CutWorkspace,
    counter: VisitCounter,
}

impl PalmScratch {
    fn new(d: usize) -> Self {
        Self {
            cuts: CutWorkspace::new(d - 1),
            counter: VisitCounter::new(d),
        }
    }
}

struct PalmBatch<R> {
    values: Vec<R>,
    truncated: u64,
    draws: u64,
}

impl<R> PalmBatch<R> {
    fn truncation_rate(&self) -> f64 {
        self.truncated as f64 / self.draws as f64
    }

    /// Acceptance-rate estimate of `P(0 ∈ D)`.
    fn p_cut(&self, per_draw_attempts: &[f64]) -> Estimate {
        let m = mean_estimate(per_draw_attempts);
        Estimate::new(1.0 / m.value, m.stderr / (m.value * m.value))
    }
}

/// Draws `n` Palm samples for the walk on `Z^d` (draw `i` uses
/// `seed.child(i)`), lays the horizontal component on top with `env` (or
/// fair coins when `None`), and maps each trajectory through `f`. Draws
/// without a cut in the window are dropped and counted.
fn palm_batch<R, F>(
    d: usize,
    window: Window,
    n: u64,
    seed: SeedSpec,
    opts: &RunOptions,
    env: impl Fn(u64) -> Option<CookieEnvironment> + Sync + Send,
    f: F,
) -> Result<(PalmBatch<R>, Vec<f64>)>
where
    R: Send,
    F: Fn(&Trajectory, usize, u64) -> R + Sync + Send,
{
    let spec = LazyWalkSpec::vertical_of(d)?;
    let raw = map_indexed(
        opts.threads,
        n,
        || PalmScratch::new(d),
        |ws, i| -> Result<(u64, Option<R>)> {
            let s = seed.child(i);
            let p = sample_palm(spec, window, s, opts.max_attempts, &mut ws.cuts)?;
            let Some(t) = p.t else {
                return Ok((p.attempts, None));
            };
            let e = env(i);
            let mut rng = derive_substream(s, Purpose::Horizontal);
            let traj = overlay_horizontal(d, &p.vertical, &p.moves, e.as_ref(), &mut rng, &mut ws.counter);
            Ok((p.attempts, Some(f(&traj, t, i))))
        },
    );
    let mut values = Vec::with_capacity(n as usize);
    let mut truncated = 0;
    let mut per_draw = Vec::with_capacity(n as usize);
    for r in raw {
        let (a, v) = r?;
        per_draw.push(a as f64);
        match v {
            Some(v) => values.push(v),
            None => truncated += 1,
        }
    }
    let batch = PalmBatch {
        values,
        truncated,
        draws: n,
    };
    let rate = batch.truncation_rate();
    if rate > opts.truncation_threshold {
        return Err(Error::TruncationRateExceeded {
            rate,
            threshold: opts.truncation_threshold,
        });
    }
    if batch.values.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: batch.values.len(),
        });
    }
    Ok((batch, per_draw))
}

fn constant_parameter(env: &CookieEnvironment) -> Option<f64> {
    match env.field() {
        crate::environment::Field::Deterministic(s) if env.has_identical_cookies() => Some(s.betas()[0]),
        _ => None,
    }
}

/// `X_n / n` averaged over independent runs; random fields are redrawn for
/// every run, so the result is the annealed speed.
pub fn speed_lln(
    env: &CookieEnvironment,
    d: usize,
    horizon: usize,
    replicates: u64,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<SpeedEstimate> {
    check_dim(d, 2)?;
    check_replicates(replicates)?;
    if horizon == 0 {
        return Err(invalid("horizon", "need a positive horizon"));
    }
    let xs = map_indexed(
        opts.threads,
        replicates,
        || DirectRunner::new(d),
        |runner, i| {
            let e = if env.is_random() { env.redraw(i) } else { env.clone() };
            runner.final_horizontal(&e, horizon, seed.child(i)) as f64 / horizon as f64
        },
    );
    let est = mean_estimate(&xs);
    Ok(SpeedEstimate {
        method: Method::Lln,
        d,
        m: env.count(),
        parameter: constant_parameter(env),
        value: est.value,
        stderr: est.stderr,
        replicates,
        horizon: Some(horizon),
        window: None,
        ess: None,
        truncation_rate: 0.0,
        jackknife_stderr: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRatioResult {
    pub speed: SpeedEstimate,
    /// Palm mean of `T`.
    pub palm_t: Estimate,
    /// Acceptance-rate estimate of `P(0 ∈ D)`.
    pub p_cut: Estimate,
}

/// `sum X_T / sum T` over Palm samples, with the walk simulated under the
/// excited law (annealed: the field is redrawn per sample).
pub fn speed_cut_ratio(
    env: &CookieEnvironment,
    d: usize,
    window: Window,
    replicates: u64,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<CutRatioResult> {
    check_dim(d, 3)?;
    check_replicates(replicates)?;
    let (batch, per_draw) = palm_batch(
        d,
        window,
        replicates,
        seed,
        opts,
        |i| Some(if env.is_random() { env.redraw(i) } else { env.clone() }),
        |traj, t, _| (f64::from(traj.horizontal(t)), t as f64),
    )?;
    let (xs, ts): (Vec<f64>, Vec<f64>) = batch.values.iter().copied().unzip();
    let r = ratio_estimate(&xs, &ts);
    Ok(CutRatioResult {
        speed: SpeedEstimate {
            method: Method::CutRatio,
            d,
            m: env.count(),
            parameter: constant_parameter(env),
            value: r.value,
            stderr: r.stderr,
            replicates: batch.values.len() as u64,
            horizon: None,
            window: Some(window),
            ess: None,
            truncation_rate: batch.truncation_rate(),
            jackknife_stderr: Some(jackknife_ratio(&xs, &ts).stderr),
        },
        palm_t: mean_estimate(&ts),
        p_cut: batch.p_cut(&per_draw),
    })
}

/// Per-sample summary of a symmetric-walk Palm draw for constant cookies:
/// `T`, `X_T`, and the numbers of steps before `T` that are horizontal with a
/// cookie present (in total and to the right).
#[derive(Debug, Clone, Copy)]
struct CookieCounts {
    t: f64,
    x: f64,
    cookie_steps: f64,
    cookie_up: f64,
}

fn cookie_counts(traj: &Trajectory, t: usize, m: CookieCount) -> CookieCounts {
    let mut c = CookieCounts {
        t: t as f64,
        x: f64::from(traj.horizontal(t)),
        cookie_steps: 0.0,
        cookie_up: 0.0,
    };
    for j in 0..t {
        let e = traj.horiz_increments[j];
        if e != 0 && m.covers(traj.visit_index[j]) {
            c.cookie_steps += 1.0;
            if e > 0 {
                c.cookie_up += 1.0;
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    /// `E_0[X_T M_T 1_D] / E_0[T 1_D]`.
    pub product: SpeedEstimate,
    /// `E_0[sum_j beta 1{cookie, horizontal} M_T 1_D] / E_0[T 1_D]`.
    pub numerator: SpeedEstimate,
    pub ess: f64,
    pub ess_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// The shared, cookie-free denominator `E_0[T | 0 ∈ D]`.
    pub denominator: Estimate,
    pub replicates: u64,
    pub truncation_rate: f64,
}

/// Speed at every `beta` of a grid from one batch of symmetric-walk Palm
/// samples, reweighted by `M_T(beta)`, in both numerator forms.
pub fn speed_girsanov_sweep(
    d: usize,
    m: CookieCount,
    betas: &[f64],
    window: Window,
    replicates: u64,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<SweepResult> {
    check_dim(d, 3)?;
    check_replicates(replicates)?;
    for &b in betas {
        if !(0.0..1.0).contains(&b) || b > opts.beta_max {
            return Err(invalid("beta", format!("{b} is outside [0, {}]", opts.beta_max)));
        }
    }
    let (batch, _) = palm_batch(d, window, replicates, seed, opts, |_| None, |traj, t, _| cookie_counts(traj, t, m))?;
    let ts: Vec<f64> = batch.values.iter().map(|c| c.t).collect();
    let n = batch.values.len();
    let denominator = mean_estimate(&ts);
    let points = betas
        .iter()
        .map(|&beta| {
            let (lu, ld) = ((1.0 + beta).ln(), (1.0 - beta).ln());
            let logs: Vec<f64> = batch
                .values
                .iter()
                .map(|c| c.cookie_up * lu + (c.cookie_steps - c.cookie_up) * ld)
                .collect();
            let prod: Vec<f64> = batch.values.iter().zip(&logs).map(|(c, l)| c.x * l.exp()).collect();
            let numv: Vec<f64> = batch
                .values
                .iter()
                .zip(&logs)
                .map(|(c, l)| beta * c.cookie_steps * l.exp())
                .collect();
            let ess = effective_sample_size(&logs);
            let record = |method, xs: &[f64]| {
                let r = ratio_estimate(xs, &ts);
                SpeedEstimate {
                    method,
                    d,
                    m,
                    parameter: Some(beta),
                    value: r.value,
                    stderr: r.stderr,
                    replicates: n as u64,
                    horizon: None,
                    window: Some(window),
                    ess: Some(ess),
                    truncation_rate: batch.truncation_rate(),
                    jackknife_stderr: Some(jackknife_ratio(xs, &ts).stderr),
                }
            };
            SweepPoint {
                beta,
                product: record(Method::GirsanovProduct, &prod),
                numerator: record(Method::GirsanovNumerator, &numv),
                ess,
                ess_ok: ess >= opts.ess_fraction * n as f64,
            }
        })
        .collect();
    Ok(SweepResult {
        points,
        denominator,
        replicates: n as u64,
        truncation_rate: batch.truncation_rate(),
    })
}

/// `lim v(beta)/beta` for one cookie per site: the Palm ratio
/// `E_0[#{j < T : Y_j new, horizontal step}] / E_0[T]`, i.e.
/// `E_0[N_T 1_D] / (d E_0[T 1_D])`.
pub fn derivative_at_zero(d: usize, window: Window, replicates: u64, seed: SeedSpec, opts: &RunOptions) -> Result<SpeedEstimate> {
    check_dim(d, 3)?;
    check_replicates(replicates)?;
    let m = CookieCount::Finite(1);
    let (batch, _) = palm_batch(d, window, replicates, seed, opts, |_| None, |traj, t, _| cookie_counts(traj, t, m))?;
    let xs: Vec<f64> = batch.values.iter().map(|c| c.cookie_steps).collect();
    let ts: Vec<f64> = batch.values.iter().map(|c| c.t).collect();
    let r = ratio_estimate(&xs, &ts);
    Ok(SpeedEstimate {
        method: Method::DerivativeAtZero,
        d,
        m,
        parameter: Some(0.0),
        value: r.value,
        stderr: r.stderr,
        replicates: batch.values.len() as u64,
        horizon: None,
        window: Some(window),
        ess: None,
        truncation_rate: batch.truncation_rate(),
        jackknife_stderr: Some(jackknife_ratio(&xs, &ts).stderr),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeResult {
    /// `R_n / n`, with `R_n` the number of distinct sites among `Y_0..Y_{n-1}`.
    pub lln: SpeedEstimate,
    /// `E_0[N_n] / n` with `N_n = d #{j < n : Y_j new, horizontal step}`,
    /// from independent runs.
    pub n_statistic: Estimate,
    /// `E_0[R_T 1_D] / E_0[T 1_D]` from Palm samples (needs `d >= 3`).
    pub palm: Option<SpeedEstimate>,
}

/// Distinct sites and fresh horizontal steps of a symmetric walk on `Z^d`.
fn srw_range(d: usize, n: usize, seed: SeedSpec, table: &mut SiteTable<()>, hasher: &SiteHasher) -> (usize, usize) {
    use rand::Rng;
    let mut rng = derive_substream(seed, Purpose::Main);
    table.clear();
    let mut pos = vec![0i32; d];
    let mut h = 0u64;
    let mut fresh_horizontal = 0;
    for _ in 0..n {
        let (_, fresh) = table.entry(h, &pos);
        let idx = rng.random_range(0..2 * d);
        if fresh && idx < 2 {
            fresh_horizontal += 1;
        }
        let axis = idx / 2;
        let sign: i8 = if idx % 2 == 0 { 1 } else { -1 };
        pos[axis] += i32::from(sign);
        h = hasher.shift(h, axis, sign);
    }
    (table.len(), fresh_horizontal)
}

/// The range constant `lim R_n / n` of the simple walk on `Z^d`, by long
/// runs and, when `palm` is given, by the Palm ratio over cut segments.
pub fn range_constant(
    d: usize,
    horizon: usize,
    replicates: u64,
    palm: Option<(Window, u64)>,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<RangeResult> {
    check_dim(d, 1)?;
    check_replicates(replicates)?;
    let run = |base: SeedSpec| {
        map_indexed(
            opts.threads,
            replicates,
            || (SiteTable::<()>::with_capacity(d, horizon), SiteHasher::new(d)),
            |(table, hasher), i| srw_range(d, horizon, base.child(i), table, hasher),
        )
    };
    let a = run(seed.child(0));
    let b = run(seed.child(1));
    let ranges: Vec<f64> = a.iter().map(|r| r.0 as f64 / horizon as f64).collect();
    let nstat: Vec<f64> = b.iter().map(|r| (d * r.1) as f64 / horizon as f64).collect();
    let est = mean_estimate(&ranges);
    let lln = SpeedEstimate {
        method: Method::RangeLln,
        d,
        m: CookieCount::Finite(1),
        parameter: None,
        value: est.value,
        stderr: est.stderr,
        replicates,
        horizon: Some(horizon),
        window: None,
        ess: None,
        truncation_rate: 0.0,
        jackknife_stderr: None,
    };
    let palm = match palm {
        None => None,
        Some((window, draws)) => {
            check_dim(d, 3)?;
            let (batch, _) = palm_batch(d, window, draws, seed.child(2), opts, |_| None, |traj, t, _| {
                let mut seen = std::collections::HashSet::with_capacity(t);
                for j in 0..t {
                    seen.insert(traj.position(j).to_vec());
                }
                (seen.len() as f64, t as f64)
            })?;
            let (rs, ts): (Vec<f64>, Vec<f64>) = batch.values.iter().copied().unzip();
            let r = ratio_estimate(&rs, &ts);
            Some(SpeedEstimate {
                method: Method::RangePalm,
                d,
                m: CookieCount::Finite(1),
                parameter: None,
                value: r.value,
                stderr: r.stderr,
                replicates: rs.len() as u64,
                horizon: None,
                window: Some(window),
                ess: None,
                truncation_rate: batch.truncation_rate(),
                jackknife_stderr: Some(jackknife_ratio(&rs, &ts).stderr),
            })
        }
    };
    Ok(RangeResult {
        lln,
        n_statistic: mean_estimate(&nstat),
        palm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeResult {
    pub estimate: SpeedEstimate,
    /// `(1/d) E_0[N M 1_D] / E_0[T 1_D]`.
    pub first: Estimate,
    /// `(beta/d) E_0[N M U 1_D] / E_0[T 1_D]`.
    pub second: Estimate,
}

fn check_ess(logs: &[f64], opts: &RunOptions) -> Result<f64> {
    let ess = effective_sample_size(logs);
    let threshold = opts.ess_fraction * logs.len() as f64;
    if ess < threshold {
        return Err(Error::LowEffectiveSampleSize { ess, threshold });
    }
    Ok(ess)
}

/// Derivative in `beta` of the speed with `m` identical cookies `beta`:
/// `(1/d) E_0[N M 1_D]/E_0[T 1_D] + (beta/d) E_0[N M U 1_D]/E_0[T 1_D]`.
pub fn derivative_v_m_beta(
    d: usize,
    m: CookieCount,
    beta: f64,
    window: Window,
    replicates: u64,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<DerivativeResult> {
    check_dim(d, 3)?;
    check_replicates(replicates)?;
    if !(0.0..1.0).contains(&beta) || beta > opts.beta_max {
        return Err(invalid("beta", format!("{beta} is outside [0, {}]", opts.beta_max)));
    }
    let env = CookieEnvironment::constant(beta, m)?;
    let (batch, _) = palm_batch(d, window, replicates, seed, opts, |_| None, |traj, t, _| {
        let w = derivative_weights(traj, &env, Some(t)).expect("cookies below one");
        (w, t as f64)
    })?;
    let logs: Vec<f64> = batch.values.iter().map(|(w, _)| w.m.ln()).collect();
    let ess = check_ess(&logs, opts)?;
    let df = d as f64;
    let ts: Vec<f64> = batch.values.iter().map(|v| v.1).collect();
    let first: Vec<f64> = batch.values.iter().map(|(w, _)| w.n * w.m.value() / df).collect();
    let second: Vec<f64> = batch.values.iter().map(|(w, _)| beta * w.n * w.m.value() * w.u / df).collect();
    let total: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    let r = ratio_estimate(&total, &ts);
    Ok(DerivativeResult {
        estimate: SpeedEstimate {
            method: Method::DerivativeMBeta,
            d,
            m,
            parameter: Some(beta),
            value: r.value,
            stderr: r.stderr,
            replicates: ts.len() as u64,
            horizon: None,
            window: Some(window),
            ess: Some(ess),
            truncation_rate: batch.truncation_rate(),
            jackknife_stderr: Some(jackknife_ratio(&total, &ts).stderr),
        },
        first: ratio_estimate(&first, &ts),
        second: ratio_estimate(&second, &ts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledResult {
    /// `f'(t)`, the sum of the two terms.
    pub estimate: SpeedEstimate,
    /// `Q E_{beta_t}[sum_j (beta_2 - beta_1)(Y_j) 1{cookie, horizontal}] / E[T 1_D]`.
    pub first: Estimate,
    /// `Q E_{beta_t}[N_T(t) sum_i (beta_2 - beta_1)(Y_i) E_i / (1 + beta_t(Y_i) E_i)] / E[T 1_D]`.
    pub second: Estimate,
    /// Part of the second term with `i < j`.
    pub second_before: Estimate,
    /// Part with `i >= j`; zero in expectation.
    pub second_after: Estimate,
    /// `(1/d) Q[(beta_2 - beta_1)(0)] / E[T | 0 ∈ D]`, a lower bound for the
    /// first term.
    pub first_lower_bound: Estimate,
    /// Variance of per-sample contributions between environment draws.
    pub between_variance: f64,
    /// Variance of per-sample contributions within an environment draw.
    pub within_variance: f64,
    pub env_draws: u64,
}

#[derive(Debug, Clone, Copy)]
struct CoupledTerms {
    t: f64,
    first: f64,
    second: f64,
    before: f64,
    log_m: f64,
    zero: bool,
}

fn coupled_terms(traj: &Trajectory, t: usize, env: &CookieEnvironment) -> CoupledTerms {
    let pair = env.coupled_pair().expect("coupled pair");
    let count = env.count();
    let mut w = LogWeight::one();
    let (mut first, mut n_t, mut g_total, mut before) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..t {
        let e = traj.horiz_increments[j];
        let k = traj.visit_index[j];
        if e == 0 || !count.covers(k) {
            continue;
        }
        let y = traj.position(j);
        let b = env.beta(y, k);
        let delta = pair.difference(y, k);
        let ef = f64::from(e);
        first += delta;
        // N_T(t) collects beta_t at step j; the i < j part pairs it with the
        // score terms accumulated strictly before j.
        n_t += b;
        before += b * g_total;
        g_total += delta * ef / (1.0 + b * ef);
        w.mul(1.0 + ef * b);
    }
    let m = w.value();
    CoupledTerms {
        t: t as f64,
        first: first * m,
        second: n_t * g_total * m,
        before: before * m,
        log_m: w.ln(),
        zero: w.zero_flag,
    }
}

/// Derivative in `t` of `f(t) = Q E_{beta_t}[X_T | 0 ∈ D] / E[T | 0 ∈ D]`
/// for a coupled pair, estimated by reweighting symmetric-walk Palm samples
/// inside each of `env_draws` environment draws. Draw `(e, r)` uses stream
/// `e * 2^32 + r`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_derivative(
    pair: &CookieEnvironment,
    t: f64,
    d: usize,
    window: Window,
    replicates: u64,
    env_draws: u64,
    seed: SeedSpec,
    opts: &RunOptions,
) -> Result<CoupledResult> {
    check_dim(d, 3)?;
    check_replicates(replicates)?;
    if env_draws == 0 {
        return Err(invalid("env_draws", "need at least one environment draw"));
    }
    let env = crate::environment::interpolate(pair, t)?;
    if env.support_bound() >= 1.0 {
        return Err(invalid("pair", "cookies must be bounded away from 1"));
    }
    let envs: Vec<CookieEnvironment> = (0..env_draws)
        .map(|e| if env.is_random() { env.redraw(e) } else { env.clone() })
        .collect();
    let total = env_draws * replicates;
    let spec = LazyWalkSpec::vertical_of(d)?;
    let raw = map_indexed(
        opts.threads,
        total,
        || PalmScratch::new(d),
        |ws, i| -> Result<Option<CoupledTerms>> {
            let (e, r) = (i / replicates, i % replicates);
            let s = seed.child((e << 32) | r);
            let p = sample_palm(spec, window, s, opts.max_attempts, &mut ws.cuts)?;
            let Some(tt) = p.t else { return Ok(None) };
            let mut rng = derive_substream(s, Purpose::Horizontal);
            let traj = overlay_horizontal(d, &p.vertical, &p.moves, None, &mut rng, &mut ws.counter);
            Ok(Some(coupled_terms(&traj, tt, &envs[e as usize])))
        },
    );
    // Group by environment draw, keeping the draw order.
    let mut clusters: Vec<Vec<CoupledTerms>> = vec![Vec::new(); env_draws as usize];
    let mut truncated = 0u64;
    for (i, r) in raw.into_iter().enumerate() {
        match r? {
            Some(c) => clusters[i / replicates as usize].push(c),
            None => truncated += 1,
        }
    }
    let rate = truncated as f64 / total as f64;
    if rate > opts.truncation_threshold {
        return Err(Error::TruncationRateExceeded {
            rate,
            threshold: opts.truncation_threshold,
        });
    }
    let all: Vec<CoupledTerms> = clusters.iter().flatten().copied().collect();
    if all.iter().all(|c| c.zero) {
        return Err(Error::AllWeightsZero);
    }
    let logs: Vec<f64> = all.iter().map(|c| c.log_m).collect();
    let ess = check_ess(&logs, opts)?;

    // With several environment draws the clusters are the independent
    // units; with one draw the samples are.
    let units: Vec<Vec<CoupledTerms>> = if env_draws > 1 {
        clusters.clone()
    } else {
        all.iter().map(|c| vec![*c]).collect()
    };
    let sums = |f: &dyn Fn(&CoupledTerms) -> f64| -> Vec<f64> {
        units.iter().map(|u| u.iter().map(f).sum()).collect()
    };
    let ts = sums(&|c| c.t);
    let first = ratio_estimate(&sums(&|c| c.first), &ts);
    let second = ratio_estimate(&sums(&|c| c.second), &ts);
    let before = ratio_estimate(&sums(&|c| c.before), &ts);
    let after = ratio_estimate(&sums(&|c| c.second - c.before), &ts);
    let totals = sums(&|c| c.first + c.second);
    let tot = ratio_estimate(&totals, &ts);

    // Variance components of the linearized per-sample contribution.
    let resid: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| c.iter().map(|x| x.first + x.second - tot.value * x.t).collect())
        .collect();
    let grand = all.len() as f64;
    let overall = resid.iter().flatten().sum::<f64>() / grand;
    let mut within = 0.0;
    let mut between = 0.0;
    for r in &resid {
        if r.is_empty() {
            continue;
        }
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        within += r.iter().map(|x| (x - mu).powi(2)).sum::<f64>();
        between += r.len() as f64 * (mu - overall).powi(2);
    }
    let within_variance = within / (grand - env_draws as f64).max(1.0);
    let between_variance = between / (env_draws as f64 - 1.0).max(1.0);

    let origin = vec![0i32; d];
    let deltas: Vec<f64> = envs
        .iter()
        .map(|e| {
            let p = e.coupled_pair().expect("coupled pair");
            p.difference(&origin, 1)
        })
        .collect();
    let q_delta = mean_estimate(&deltas);
    let all_t: Vec<f64> = all.iter().map(|c| c.t).collect();
    let palm_t = mean_estimate(&all_t);
    let bound_value = q_delta.value / (d as f64 * palm_t.value);
    let q_delta_se = if q_delta.stderr.is_finite() { q_delta.stderr } else { 0.0 };
    let bound_se = bound_value * ((q_delta_se / q_delta.value.max(1e-300)).powi(2) + (palm_t.stderr / palm_t.value).powi(2)).sqrt();

    Ok(CoupledResult {
        estimate: SpeedEstimate {
            method: Method::CoupledDerivative,
            d,
            m: env.count(),
            parameter: Some(t),
            value: tot.value,
            stderr: tot.stderr,
            replicates: all.len() as u64,
            horizon: None,
            window: Some(window),
            ess: Some(ess),
            truncation_rate: rate,
            jackknife_stderr: Some(jackknife_ratio(&totals, &ts).stderr),
        },
        first,
        second,
        second_before: before,
        second_after: after,
        first_lower_bound: Estimate::new(bound_value, if bound_se.is_finite() { bound_se } else { 0.0 }),
        between_variance,
        within_variance,
        env_draws,
    })
}
