//! Step laws of the two simulation mechanisms against exact values.

use std::collections::BTreeMap;

use erw_core::environment::{e1_permute, CookieCount, CookieEnvironment, EnvSample, LinePermutation, Marginal, StackLaw};
use erw_core::girsanov::{reweighted_expectation, weight};
use erw_core::oracle::{enumerate, oracle_expectation, PathLaw};
use erw_core::rng::SeedSpec;
use erw_core::stats::{chi_square_gof, chi_square_two_sample, mean_estimate};
use erw_core::walker::{simulate_constructed, simulate_direct, Trajectory};

fn constant(beta: f64) -> CookieEnvironment {
    CookieEnvironment::constant(beta, CookieCount::Finite(1)).unwrap()
}

type Simulator = fn(&CookieEnvironment, usize, usize, SeedSpec) -> erw_core::Result<Trajectory>;

/// Counts of the first `n`-step path (as a base-`2d` number) over `runs` walks.
fn path_counts(sim: Simulator, env: &CookieEnvironment, d: usize, n: usize, runs: u64, master: u64) -> Vec<u64> {
    let mut counts = vec![0u64; (2 * d).pow(n as u32)];
    for i in 0..runs {
        let traj = sim(env, d, n, SeedSpec::new(master, i)).unwrap();
        let idx = traj.moves().iter().fold(0, |acc, dir| acc * 2 * d + dir.index());
        counts[idx] += 1;
    }
    counts
}

/// Each cell within 3 binomial standard errors of its exact probability.
fn assert_cells_within_3_sigma(counts: &[u64], probs: &[f64]) {
    let n: u64 = counts.iter().sum();
    for (i, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let dev = (c as f64 - n as f64 * p).abs();
        assert!(dev <= 3.0 * sd, "cell {i}: {c} vs expected {} (sd {sd})", n as f64 * p);
    }
}

#[test]
fn full_cookie_first_step() {
    let counts = path_counts(simulate_direct, &constant(1.0), 2, 1, 100_000, 1);
    assert_eq!(counts[1], 0);
    assert_cells_within_3_sigma(&counts, &[0.5, 0.0, 0.25, 0.25]);
}

#[test]
fn symmetric_first_steps_are_uniform() {
    for (sim, master) in [(simulate_direct as Simulator, 2), (simulate_constructed, 3)] {
        let counts = path_counts(sim, &constant(0.0), 3, 1, 100_000, master);
        let (_, p) = chi_square_gof(&counts, &[1.0 / 6.0; 6]);
        assert!(p > 0.01, "p = {p}");
    }
}

#[test]
fn two_step_paths_match_the_oracle() {
    let env = constant(0.5);
    let exact: Vec<f64> = enumerate(2, 2, PathLaw::Quenched(&env)).unwrap().iter().map(|a| a.probability).collect();
    let counts = path_counts(simulate_direct, &env, 2, 2, 100_000, 4);
    assert_cells_within_3_sigma(&counts, &exact);
}

#[test]
fn constructed_and_direct_walks_agree_in_law() {
    let env = constant(0.5);
    let a = path_counts(simulate_direct, &env, 2, 3, 100_000, 5);
    let b = path_counts(simulate_constructed, &env, 2, 3, 100_000, 6);
    let (_, p) = chi_square_two_sample(&a, &b);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn horizontal_steps_have_frequency_one_over_d() {
    let d = 3;
    let traj = simulate_constructed(&constant(0.4), d, 1_000_000, SeedSpec::new(7, 0)).unwrap();
    let flags: Vec<f64> = traj.move_flags.iter().map(|&f| f64::from(f)).collect();
    let e = mean_estimate(&flags);
    let sd = ((1.0 / 3.0) * (2.0 / 3.0) / flags.len() as f64).sqrt();
    assert!((e.value - 1.0 / 3.0).abs() < 3.0 * sd, "{e:?}");
    // eta_j = |E_j|
    assert!(traj.move_flags.iter().zip(&traj.horiz_increments).all(|(&f, &e)| i8::try_from(f).unwrap() == e.abs()));
}

#[test]
fn drift_at_a_fresh_site_is_beta_over_d() {
    let (d, beta) = (4, 0.6);
    let env = constant(beta);
    let first: Vec<f64> = (0..100_000)
        .map(|i| f64::from(simulate_direct(&env, d, 1, SeedSpec::new(8, i)).unwrap().horiz_increments[0]))
        .collect();
    let e = mean_estimate(&first);
    assert!(e.z_to(beta / d as f64) < 3.0, "{e:?}");
}

#[test]
fn horizontal_step_is_centred_after_tilting() {
    // One step from a fresh site: E_beta[E/(1 + beta E) ; horizontal] = 0.
    for beta in [-0.7, 0.0, 0.3, 0.9] {
        let env = constant(beta);
        let atoms = enumerate(3, 1, PathLaw::Quenched(&env)).unwrap();
        let centred = oracle_expectation(3, &atoms, |t| {
            let e = f64::from(t.horiz_increments[0]);
            e / (1.0 + beta * e)
        });
        assert!(centred.abs() < 1e-15, "beta {beta}: {centred}");
    }
}

#[test]
fn oracle_one_step_probabilities() {
    let atoms = enumerate(2, 1, PathLaw::Quenched(&constant(0.5))).unwrap();
    let p: Vec<f64> = atoms.iter().map(|a| a.probability).collect();
    assert_eq!(p, vec![1.5 / 4.0, 0.5 / 4.0, 0.25, 0.25]);
}

#[test]
fn reweighted_monte_carlo_matches_exact_mean() {
    let env = constant(0.5);
    let exact = oracle_expectation(2, &enumerate(2, 3, PathLaw::Quenched(&env)).unwrap(), |t| {
        f64::from(t.horizontal(3))
    });
    let zero = constant(0.0);
    let samples: Vec<(f64, _)> = (0..100_000)
        .map(|i| {
            let t = simulate_direct(&zero, 2, 3, SeedSpec::new(9, i)).unwrap();
            (f64::from(t.horizontal(3)), weight(&t, &env, 3).unwrap())
        })
        .collect();
    let est = reweighted_expectation(&samples).unwrap();
    assert!((est.estimate - exact).abs() < 3.0 * est.stderr, "{} vs {exact}", est.estimate);
    let ones: Vec<(f64, _)> = samples.iter().map(|(_, w)| (1.0, *w)).collect();
    let norm = reweighted_expectation(&ones).unwrap();
    assert!((norm.estimate - 1.0).abs() < 3.0 * norm.stderr);
    assert!(norm.ess < ones.len() as f64);
}

#[test]
fn line_permutations_preserve_iid_laws() {
    let law = StackLaw::new(Marginal::discrete(&[0.2, 0.6], &[0.5, 0.5]).unwrap(), true, CookieCount::Finite(1)).unwrap();
    let env = CookieEnvironment::iid(11, law);
    let sites: Vec<Vec<i32>> = (0..4).map(|x| vec![x, 0]).collect();
    let cycle: BTreeMap<i32, i32> = (0..4).map(|x| (x, (x + 1) % 4)).collect();
    let delta: LinePermutation = [(vec![0], cycle)].into_iter().collect();
    let cell = |s: &EnvSample| {
        sites
            .iter()
            .enumerate()
            .map(|(i, y)| usize::from(s.stacks[y].betas()[0] > 0.4) << i)
            .sum::<usize>()
    };
    let mut plain = vec![0u64; 16];
    let mut permuted = vec![0u64; 16];
    for i in 0..10_000 {
        let a = EnvSample::from_environment(&env.redraw(i), sites.iter().map(|s| s.as_slice()));
        plain[cell(&a)] += 1;
        let b = EnvSample::from_environment(&env.redraw(10_000 + i), sites.iter().map(|s| s.as_slice()));
        permuted[cell(&e1_permute(&b, &delta).unwrap())] += 1;
    }
    let (_, p) = chi_square_two_sample(&plain, &permuted);
    assert!(p > 0.01, "p = {p}");
}
