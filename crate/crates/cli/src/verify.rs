//! The acceptance suite: twelve numbered checks, each reporting pass/fail
//! with the numbers behind the verdict.
//!
//! Monte Carlo checks use 3 standard errors unless stated otherwise. Seeds
//! derive from the configured seed, so a report is reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use erw_core::cuts::{
    lazy_walk_t, palm_t_moments, return_probability, return_probability_convolution, return_probability_quadrature,
    segment_palm_chains, LazyWalkSpec, PalmMoments, Segment, Window,
};
use erw_core::environment::{CookieCount, CookieEnvironment, Marginal, StackLaw};
use erw_core::estimators::{
    coupled_derivative, derivative_at_zero, derivative_v_m_beta, range_constant, speed_cut_ratio, speed_girsanov_sweep,
    speed_lln, RunOptions,
};
use erw_core::girsanov::weight;
use erw_core::oracle::{enumerate, enumerate_constructed, enumerate_reweighted, oracle_expectation, total_variation, PathLaw};
use erw_core::parallel::map_indexed;
use erw_core::rng::SeedSpec;
use erw_core::stats::{chi_square_sf, isotonic_fit, mean_estimate, Estimate};
use erw_core::walker::simulate_direct;

use crate::commands::CliError;
use crate::config::ExperimentConfig;

const Z: f64 = 3.0;
const DEFAULT_WINDOW: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub details: Vec<String>,
}

pub const TITLES: [&str; 12] = [
    "oracle exactness",
    "density normalization",
    "Palm identities",
    "lazy-walk identities",
    "return-probability monotonicity",
    "simple-walk limit",
    "derivative at zero",
    "cross-estimator speed consistency",
    "monotonicity trend",
    "coupled derivative",
    "moment boundedness",
    "engineering",
];

/// Collects sub-checks of one criterion.
struct Report {
    pass: bool,
    details: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.details.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, what: String) {
        self.details.push(format!("     {what}"));
    }

    /// `|a - b| < 3` combined standard errors.
    fn agree(&mut self, what: &str, a: Estimate, b: Estimate) {
        let z = a.z_against(b);
        self.check(z < Z, format!("{what}: {} vs {} (z = {z:.2})", show(a), show(b)));
    }

    fn fail_with(&mut self, what: &str, e: impl std::fmt::Display) {
        self.check(false, format!("{what}: {e}"));
    }
}

fn show(e: Estimate) -> String {
    if e.stderr == 0.0 {
        format!("{:.6}", e.value)
    } else {
        format!("{:.5} ± {:.5}", e.value, e.stderr)
    }
}

/// Context shared by all criteria.
pub struct Verifier {
    pub seed: SeedSpec,
    pub threads: usize,
    pub max_attempts: u64,
    /// The `erwlab` binary, for the end-to-end checks of criterion 12.
    pub exe: Option<PathBuf>,
}

impl Verifier {
    pub fn from_config(cfg: &ExperimentConfig, exe: Option<PathBuf>) -> Self {
        Self {
            seed: cfg.seed_spec(),
            threads: cfg.threads,
            max_attempts: cfg.max_attempts,
            exe,
        }
    }

    fn opts(&self) -> RunOptions {
        RunOptions {
            threads: self.threads,
            max_attempts: self.max_attempts,
            ..RunOptions::default()
        }
    }

    pub fn run(&self, id: u32) -> Criterion {
        let seed = self.seed.child(u64::from(id));
        let mut r = Report::new();
        match id {
            1 => oracle_exactness(&mut r),
            2 => density_normalization(self, seed, &mut r),
            3 => palm_identities(self, seed, &mut r),
            4 => lazy_identities(self, seed, &mut r),
            5 => return_monotonicity(&mut r),
            6 => simple_walk_limit(self, seed, &mut r),
            7 => derivative_zero(self, seed, &mut r),
            8 => speed_consistency(self, seed, &mut r),
            9 => monotone_trend(self, seed, &mut r),
            10 => coupled(self, seed, &mut r),
            11 => moment_bound(self, seed, &mut r),
            12 => engineering(self, &mut r),
            _ => r.fail_with("criterion", format!("no criterion {id}")),
        }
        Criterion {
            id,
            title: TITLES.get(id as usize - 1).copied().unwrap_or("unknown"),
            pass: r.pass,
            details: r.details,
        }
    }
}

impl Criterion {
    pub fn line(&self) -> String {
        format!("{} {:>2} {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title)
    }
}

fn constant(beta: f64, m: CookieCount) -> CookieEnvironment {
    CookieEnvironment::constant(beta, m).expect("valid constant environment")
}

fn oracle_exactness(r: &mut Report) {
    let env = constant(0.5, CookieCount::Finite(1));
    let laws = (|| {
        Ok::<_, erw_core::Error>([
            ("direct", enumerate(2, 3, PathLaw::Quenched(&env))?),
            ("constructed", enumerate_constructed(2, 3, &env)?),
            ("reweighted", enumerate_reweighted(2, 3, &env)?),
        ])
    })();
    let laws = match laws {
        Ok(l) => l,
        Err(e) => return r.fail_with("enumeration", e),
    };
    for i in 0..3 {
        for j in i + 1..3 {
            let tv = total_variation(&laws[i].1, &laws[j].1);
            r.check(tv < 1e-12, format!("TV({}, {}) = {tv:.2e}", laws[i].0, laws[j].0));
        }
    }
}

fn density_normalization(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let m = CookieCount::Finite(1);
    for (d, n) in [(2, 8), (6, 5)] {
        let atoms = match enumerate(d, n, PathLaw::Symmetric) {
            Ok(a) => a,
            Err(e) => return r.fail_with("enumeration", e),
        };
        for beta in [0.3, 0.7] {
            let env = constant(beta, m);
            let total = oracle_expectation(d, &atoms, |t| weight(t, &env, n).map_or(f64::NAN, |w| w.value()));
            let err = (total - 1.0).abs();
            r.check(err < 1e-12, format!("exact E_0[M_{n}] at d={d}, beta={beta}: error {err:.2e}"));
        }
    }
    const N: u64 = 100_000;
    const STEPS: usize = 50;
    let zero = constant(0.0, m);
    for (i, d) in [2usize, 6].into_iter().enumerate() {
        let paths = map_indexed(v.threads, N, || (), |_, k| {
            simulate_direct(&zero, d, STEPS, seed.child(i as u64).child(k)).expect("valid walk")
        });
        for beta in [0.3, 0.7] {
            let env = constant(beta, m);
            let ws: Vec<f64> = paths
                .iter()
                .map(|p| weight(p, &env, STEPS).map_or(f64::NAN, |w| w.value()))
                .collect();
            let e = mean_estimate(&ws);
            let z = e.z_to(1.0);
            r.check(z < Z, format!("Monte Carlo E_0[M_50] at d={d}, beta={beta}: {} (z = {z:.2})", show(e)));
        }
    }
}

/// Window used for the identity checks at each dimension. The search for
/// the first positive cut runs far past it so that no draw is truncated.
fn identity_window(d: usize) -> Window {
    let h = match d {
        6 => 300,
        8 => 100,
        _ => 30,
    };
    Window::symmetric(h).with_search(50 * h)
}

fn triangular(s: &Segment<'_>) -> f64 {
    let t = s.length as f64;
    t * (t + 1.0) / 2.0
}

fn square_pyramidal(s: &Segment<'_>) -> f64 {
    let t = s.length as f64;
    t * (t + 1.0) * (2.0 * t + 1.0) / 6.0
}

fn palm_identities(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    for (i, (d, n_u, n_p)) in [(6usize, 100_000u64, 50_000u64), (8, 300_000, 100_000), (10, 1_000_000, 200_000)]
        .into_iter()
        .enumerate()
    {
        let spec = LazyWalkSpec::vertical_of(d).expect("d >= 2");
        let window = identity_window(d);
        let base = seed.child(i as u64);
        let pm = match palm_t_moments(spec, window, n_u, n_p, base.child(0), v.max_attempts, v.threads) {
            Ok(pm) => pm,
            Err(e) => return r.fail_with(&format!("d={d} moments"), e),
        };
        r.note(format!(
            "d={d}: window {} / search {}, truncation rate {:.2e}",
            window.future,
            window.search,
            pm.truncation_rate()
        ));
        let palm_t = pm.palm_moment(1);
        r.agree(&format!("d={d} E[T 1(0 in D)]"), pm.t_on_cut(), Estimate::exact(1.0));
        r.agree(&format!("d={d} Palm E(T) * P(0 in D)"), palm_t.times(pm.p_cut()), Estimate::exact(1.0));
        let segment = |f: fn(&Segment<'_>) -> f64, k: u64| {
            segment_palm_chains(spec, window, 2_000_000, 10, base.child(k), 100, v.threads, f)
        };
        match segment(triangular, 1) {
            Ok(rhs) => r.agree(
                &format!("d={d} Palm E(T) * E(T) vs Palm E((T^2+T)/2)"),
                palm_t.times(pm.t_unconditioned()),
                rhs.estimate,
            ),
            Err(e) => r.fail_with(&format!("d={d} segments"), e),
        }
        if d == 10 {
            let et2 = mean_estimate(&pm.unconditioned_t_powers(2));
            match segment(square_pyramidal, 2) {
                Ok(rhs) => r.agree(
                    "d=10 Palm E(T) * E(T^2) vs Palm E(T(T+1)(2T+1)/6)",
                    palm_t.times(et2),
                    rhs.estimate,
                ),
                Err(e) => r.fail_with("d=10 segments", e),
            }
        }
    }

    // Default windows: truncation, and stability under doubling with common
    // random numbers.
    const N: u64 = 4000;
    for (i, d) in [6usize, 8].into_iter().enumerate() {
        let spec = LazyWalkSpec::vertical_of(d).expect("d >= 2");
        let window = Window::symmetric(DEFAULT_WINDOW);
        let s = seed.child(10 + i as u64);
        let run = |w: Window| palm_t_moments(spec, w, N, N, s, v.max_attempts, v.threads);
        let (a, b) = match (run(window), run(window.doubled())) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return r.fail_with(&format!("d={d} default window"), e),
        };
        let rate = a.truncation_rate();
        r.check(rate < 0.01, format!("d={d} truncation rate at window {DEFAULT_WINDOW}: {rate:.4}"));
        let mut quantities: Vec<(&str, fn(&PalmMoments) -> Estimate)> = vec![
            ("P(0 in D)", |m| m.p_cut()),
            ("Palm E(T)", |m| m.palm_moment(1)),
            ("E[T 1(0 in D)]", |m| m.t_on_cut()),
        ];
        if d == 8 {
            quantities.push(("E(T)", |m| m.t_unconditioned()));
            quantities.push(("Palm E(T^2)", |m| m.palm_moment(2)));
        }
        for (name, f) in quantities {
            let (x, y) = (f(&a), f(&b));
            let shift = (x.value - y.value).abs() / x.stderr;
            r.check(
                shift < 1.0,
                format!("d={d} {name} under window doubling: {} -> {:.5} ({shift:.3} sigma)", show(x), y.value),
            );
        }
    }
}

fn lazy_identities(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    const N: u64 = 300_000;
    let vdim = 7;
    let window = Window::symmetric(100).with_search(5000);
    let run = |eps: f64, k: u64| {
        let spec = LazyWalkSpec::new(eps, vdim).expect("valid eps");
        lazy_walk_t(spec, window, N, seed.child(k), v.threads)
    };
    let jump = run(1.0, 0);
    let t = jump.values();
    r.note(format!("jump chain: {} draws, truncation rate {:.2e}", t.len(), jump.truncation_rate()));
    for (k, eps) in [(1u64, 0.5), (2, 0.875)] {
        let lazy = run(eps, k);
        let first: Vec<f64> = t.iter().map(|x| x / eps).collect();
        let second: Vec<f64> = t.iter().map(|x| (x * x + (1.0 - eps) * x) / (eps * eps)).collect();
        r.agree(&format!("eps={eps} E(T^eps) vs E(T~)/eps"), lazy.moment(1), mean_estimate(&first));
        r.agree(
            &format!("eps={eps} E[(T^eps)^2] vs (E(T~^2) + (1-eps) E(T~))/eps^2"),
            lazy.moment(2),
            mean_estimate(&second),
        );
    }
}

fn return_monotonicity(r: &mut Report) {
    let values: Vec<f64> = (2..=5).map(|dim| return_probability(dim, 0.9, 10).map_or(f64::NAN, |v| v.0)).collect();
    let ok = values.windows(2).all(|w| w[1] <= w[0]);
    r.check(ok, format!("P(Z_10 = 0), eps=0.9, dim 2..5: {values:?}"));
    let mut worst = 0.0f64;
    for dim in 1..=4 {
        for eps in [0.5, 0.9, 1.0] {
            for n in 0..=12 {
                let a = return_probability_convolution(dim, eps, n);
                let b = return_probability_quadrature(dim, eps, n);
                match (a, b) {
                    (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                    _ => worst = f64::INFINITY,
                }
            }
        }
    }
    r.check(worst < 1e-10, format!("convolution vs quadrature, dim 1..4, n <= 12: max difference {worst:.2e}"));
}

fn simple_walk_limit(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let opts = v.opts();
    for (i, (d, beta)) in [(4usize, 0.3), (8, 0.6)].into_iter().enumerate() {
        let env = constant(beta, CookieCount::Infinite);
        match speed_lln(&env, d, 10_000, 2000, seed.child(i as u64), &opts) {
            Ok(e) => r.agree(&format!("m=inf speed at d={d}, beta={beta} vs beta/d"), e.estimate(), Estimate::exact(beta / d as f64)),
            Err(e) => r.fail_with("speed", e),
        }
    }
    let window = Window::symmetric(DEFAULT_WINDOW);
    match derivative_v_m_beta(8, CookieCount::Infinite, 0.3, window, 4000, seed.child(2), &opts) {
        Ok(res) => r.agree("m=inf derivative at d=8, beta=0.3 vs 1/d", res.estimate.estimate(), Estimate::exact(1.0 / 8.0)),
        Err(e) => r.fail_with("derivative", e),
    }
}

fn derivative_zero(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let opts = v.opts();
    let d = 8;
    let window = Window::symmetric(DEFAULT_WINDOW);
    let at_zero = match derivative_at_zero(d, window, 20_000, seed.child(0), &opts) {
        Ok(e) => e.estimate(),
        Err(e) => return r.fail_with("derivative at zero", e),
    };
    match range_constant(d, 100_000, 200, None, seed.child(1), &opts) {
        Ok(range) => r.agree("derivative at zero vs range constant / d", at_zero, range.lln.estimate().scale(1.0 / d as f64)),
        Err(e) => r.fail_with("range", e),
    }
    let beta = 0.05;
    match speed_girsanov_sweep(d, CookieCount::Finite(1), &[beta], window, 20_000, seed.child(2), &opts) {
        Ok(sweep) => {
            let fd = sweep.points[0].numerator.estimate().scale(1.0 / beta);
            let z = at_zero.z_against(fd);
            let slack_z = ((at_zero.value - fd.value).abs() - 0.01).max(0.0) / at_zero.stderr.hypot(fd.stderr);
            r.check(
                slack_z < Z,
                format!(
                    "derivative at zero vs v(0.05)/0.05: {} vs {} (z = {z:.2}, {slack_z:.2} after 0.01 slack)",
                    show(at_zero),
                    show(fd)
                ),
            );
        }
        Err(e) => r.fail_with("sweep", e),
    }
}

fn speed_consistency(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let opts = v.opts();
    let (d, beta) = (6, 0.5);
    let m = CookieCount::Finite(1);
    let env = constant(beta, m);
    let window = Window::symmetric(DEFAULT_WINDOW);
    let mut all = Vec::new();
    match speed_lln(&env, d, 100_000, 100, seed.child(0), &opts) {
        Ok(e) => all.push(("LLN", e.estimate())),
        Err(e) => r.fail_with("LLN", e),
    }
    match speed_cut_ratio(&env, d, window, 20_000, seed.child(1), &opts) {
        Ok(e) => all.push(("cut ratio", e.speed.estimate())),
        Err(e) => r.fail_with("cut ratio", e),
    }
    match speed_girsanov_sweep(d, m, &[beta], window, 20_000, seed.child(2), &opts) {
        Ok(s) => {
            all.push(("Girsanov product", s.points[0].product.estimate()));
            all.push(("Girsanov numerator", s.points[0].numerator.estimate()));
            r.note(format!("Girsanov ESS {:.0} of {}", s.points[0].ess, s.replicates));
        }
        Err(e) => r.fail_with("Girsanov", e),
    }
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            r.agree(&format!("{} vs {}", all[i].0, all[j].0), all[i].1, all[j].1);
        }
    }
}

fn monotone_trend(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let betas = [0.0, 0.2, 0.4, 0.6, 0.8];
    let window = Window::symmetric(DEFAULT_WINDOW);
    let sweep = match speed_girsanov_sweep(10, CookieCount::Finite(1), &betas, window, 40_000, seed, &v.opts()) {
        Ok(s) => s,
        Err(e) => return r.fail_with("sweep", e),
    };
    let pts: Vec<Estimate> = sweep.points.iter().map(|p| p.numerator.estimate()).collect();
    for (p, e) in sweep.points.iter().zip(&pts) {
        r.note(format!("v({}) = {} (ESS {:.0})", p.beta, show(*e), p.ess));
    }
    // v(0) = 0 exactly; fit the noisy points.
    let noisy: Vec<Estimate> = pts.iter().copied().filter(|e| e.stderr > 0.0).collect();
    let y: Vec<f64> = noisy.iter().map(|e| e.value).collect();
    let w: Vec<f64> = noisy.iter().map(|e| e.stderr.powi(-2)).collect();
    let fit = isotonic_fit(&y, &w);
    let chi2: f64 = y.iter().zip(&fit).zip(&w).map(|((a, b), w)| (a - b).powi(2) * w).sum();
    let p = chi_square_sf(chi2, noisy.len() as f64);
    r.check(p >= 0.01, format!("isotonic residual chi2 = {chi2:.3} on {} points, p = {p:.3}", noisy.len()));
    let slope = pts[1].scale(1.0 / betas[1]);
    r.check(
        slope.value > Z * slope.stderr,
        format!("slope at 0, v(0.2)/0.2 = {} ({:.1} sigma)", show(slope), slope.value / slope.stderr),
    );
}

fn coupled(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let opts = v.opts();
    let window = Window::symmetric(DEFAULT_WINDOW);
    let m1 = CookieCount::Finite(1);

    let law = StackLaw::new(Marginal::uniform(0.1, 0.3).expect("valid law"), true, m1).expect("valid law");
    let same = CookieEnvironment::iid(7, law.clone());
    let pair = CookieEnvironment::coupled(same.clone(), same, 0.5).expect("valid pair");
    match coupled_derivative(&pair, 0.5, 8, window, 200, 2, seed.child(0), &opts) {
        Ok(res) => r.check(res.estimate.value == 0.0, format!("equal members: estimate {}", res.estimate.value)),
        Err(e) => r.fail_with("equal members", e),
    }

    let c = 0.6;
    let pair = CookieEnvironment::coupled(constant(0.0, m1), constant(c, m1), 0.5).expect("valid pair");
    let lhs = coupled_derivative(&pair, 0.5, 8, window, 20_000, 1, seed.child(1), &opts);
    let rhs = derivative_v_m_beta(8, m1, 0.5 * c, window, 20_000, seed.child(2), &opts);
    match (lhs, rhs) {
        (Ok(a), Ok(b)) => r.agree(
            "deterministic pair (0, 0.6) at t=0.5 vs 0.6 * dv/dbeta(0.3)",
            a.estimate.estimate(),
            b.estimate.estimate().scale(c),
        ),
        (Err(e), _) | (_, Err(e)) => r.fail_with("deterministic pair", e),
    }

    let m = CookieCount::Finite(2);
    let law = |lo, hi| StackLaw::new(Marginal::uniform(lo, hi).expect("valid law"), true, m).expect("valid law");
    let key = erw_core::rng::site_key(seed, erw_core::rng::Purpose::Environment);
    let pair = CookieEnvironment::coupled(
        CookieEnvironment::iid(key, law(0.0, 0.15)),
        CookieEnvironment::iid(key, law(0.15, 0.3)),
        0.5,
    )
    .and_then(|p| p.with_sigma(0.3))
    .expect("valid pair");
    match coupled_derivative(&pair, 0.5, 12, window, 1000, 20, seed.child(3), &opts) {
        Ok(res) => {
            let e = res.estimate.estimate();
            r.note(format!(
                "first term {}, second term {}, lower bound {}",
                show(res.first),
                show(res.second),
                show(res.first_lower_bound)
            ));
            r.note(format!(
                "variance between environments {:.3e}, within {:.3e}",
                res.between_variance, res.within_variance
            ));
            r.check(
                e.value > Z * e.stderr,
                format!("d=12 i.i.d. pair, sigma=0.3, t=0.5: {} ({:.1} sigma)", show(e), e.value / e.stderr),
            );
        }
        Err(e) => r.fail_with("random pair", e),
    }
}

fn moment_bound(v: &Verifier, seed: SeedSpec, r: &mut Report) {
    let window = Window::symmetric(DEFAULT_WINDOW);
    let mut values = Vec::new();
    for d in 8..=12usize {
        let spec = LazyWalkSpec::vertical_of(d).expect("d >= 2");
        match segment_palm_chains(spec, window, 2_000_000, 10, seed.child(d as u64), 100, v.threads, |s| {
            (s.length as f64).powi(2)
        }) {
            Ok(e) => values.push((d, e.estimate)),
            Err(e) => return r.fail_with(&format!("d={d}"), e),
        }
    }
    let bound = 2.0 * values[0].1.value;
    for (d, e) in values {
        r.check(e.value < bound, format!("d={d} Palm E(T^2) = {} < {bound:.4}", show(e)));
    }
}

/// Runs `erwlab` with the given arguments; returns stdout on success.
fn run_exe(exe: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(exe).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`{}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn csv_files(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            files.push((name, fs::read(&path)?));
        }
    }
    files.sort();
    Ok(files)
}

fn engineering(v: &Verifier, r: &mut Report) {
    let Some(exe) = &v.exe else {
        return r.fail_with("binary", "path to erwlab unknown");
    };
    let root = std::env::temp_dir().join(format!("erwlab-verify-{}", std::process::id()));
    let runs: [&[&str]; 3] = [
        &["sweep", "--d", "8", "--beta", "0,0.2,0.4", "--replicates", "400", "--window", "2000"],
        &["speed", "--d", "6", "--beta", "0.5", "--replicates", "200", "--horizon", "5000", "--window", "2000"],
        &[
            "derivative", "--kind", "coupled", "--env", "pair", "--lower", "uniform:0:0.15", "--upper",
            "uniform:0.15:0.3", "--d", "8", "--replicates", "100", "--env-draws", "4", "--window", "2000",
        ],
    ];
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "8"] {
            let dir = root.join(format!("{i}-{threads}"));
            let dir_s = dir.to_string_lossy().into_owned();
            let mut full = args.to_vec();
            full.extend(["--threads", threads, "--out", &dir_s, "--seed", "11"]);
            if let Err(e) = run_exe(exe, &full) {
                return r.fail_with(args[0], e);
            }
            match csv_files(&dir) {
                Ok(f) => outputs.push(f),
                Err(e) => return r.fail_with(args[0], e),
            }
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        r.check(same, format!("`{}` tables byte-identical with 1 and 8 threads", args[0]));
    }
    match run_exe(exe, &["verify", "--only", "1,5"]) {
        Ok(out) => r.check(
            out.lines().filter(|l| l.starts_with("PASS")).count() == 2,
            "`verify --only 1,5` passes end-to-end".into(),
        ),
        Err(e) => r.fail_with("verify", e),
    }
    let _ = fs::remove_dir_all(&root);
}

/// Runs the selected criteria, printing one line per criterion and its
/// details as they finish.
pub fn run_all(v: &Verifier, ids: &[u32], mut print: impl FnMut(&Criterion)) -> Vec<Criterion> {
    ids.iter()
        .map(|&id| {
            let c = v.run(id);
            print(&c);
            c
        })
        .collect()
}

pub fn parse_ids(list: &str) -> Result<Vec<u32>, CliError> {
    list.split(',')
        .map(|s| match s.trim().parse::<u32>() {
            Ok(id) if (1..=12).contains(&id) => Ok(id),
            _ => Err(CliError::Usage(format!("`{s}` is not a criterion between 1 and 12"))),
        })
        .collect()
}
