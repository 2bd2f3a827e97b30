//! Cut times of the vertical walk: Palm sampling, the long-run segment
//! estimator, lazy walks and return probabilities.

use erw_core::cuts::{
    lazy_walk_t, palm_t_moments, return_probability, sample_cut, segment_palm_estimator, CutWorkspace, LazyWalkSpec,
    Window,
};
use erw_core::rng::SeedSpec;
use erw_core::stats::{ks_two_sample, mean_estimate, Estimate};

fn p_cut(spec: LazyWalkSpec, window: Window, n: u64, master: u64) -> Estimate {
    let mut ws = CutWorkspace::new(spec.vdim);
    let xs: Vec<f64> = (0..n)
        .map(|i| f64::from(u8::from(sample_cut(spec, window, SeedSpec::new(master, i), &mut ws).zero_is_cut)))
        .collect();
    mean_estimate(&xs)
}

#[test]
fn acceptance_rate_is_positive_and_stable_across_seeds() {
    let spec = LazyWalkSpec::vertical_of(6).unwrap();
    let window = Window::symmetric(10_000);
    let a = p_cut(spec, window, 1500, 1);
    let b = p_cut(spec, window, 1500, 2);
    assert!(a.value > 0.0 && b.value > 0.0);
    assert!(a.z_against(b) < 3.0, "{a:?} vs {b:?}");
}

#[test]
fn lazy_cut_probability_is_eps_times_jump_chain_probability() {
    let spec = LazyWalkSpec::vertical_of(6).unwrap();
    let window = Window::symmetric(300);
    let lazy = p_cut(spec, window, 20_000, 3);
    let jump = p_cut(spec.jump_chain(), window, 20_000, 4).scale(spec.eps);
    assert!(lazy.z_against(jump) < 3.0, "{lazy:?} vs {jump:?}");
}

#[test]
fn larger_windows_only_remove_cuts() {
    let spec = LazyWalkSpec::vertical_of(6).unwrap();
    let (small, large) = (Window::symmetric(50), Window::symmetric(100));
    let mut ws = CutWorkspace::new(spec.vdim);
    let mut removed = 0;
    for i in 0..2000 {
        let s = SeedSpec::new(5, i);
        let a = sample_cut(spec, small, s, &mut ws).zero_is_cut;
        let b = sample_cut(spec, large, s, &mut ws).zero_is_cut;
        assert!(!b || a, "draw {i} is a cut only in the larger window");
        removed += usize::from(a && !b);
    }
    assert!(removed > 0);
}

#[test]
fn segment_averages_match_rejection_sampling() {
    let spec = LazyWalkSpec::vertical_of(8).unwrap();
    let window = Window::symmetric(100).with_search(5000);
    let seg = |f: fn(&erw_core::cuts::Segment<'_>) -> f64| {
        segment_palm_estimator(spec, window, 1_000_000, SeedSpec::new(6, 0), 100, f).unwrap()
    };
    assert_eq!(seg(|_| 1.0).estimate, Estimate::new(1.0, 0.0));
    let pm = palm_t_moments(spec, window, 10, 100_000, SeedSpec::new(7, 0), 1_000_000, 1).unwrap();
    let mean_t = seg(|s| s.length as f64).estimate;
    assert!(mean_t.z_against(pm.palm_moment(1)) < 3.0, "{mean_t:?} vs {:?}", pm.palm_moment(1));
    let unit = seg(|s| f64::from(u8::from(s.length == 1))).estimate;
    let ones: Vec<f64> = pm.palm_t().iter().map(|&t| f64::from(u8::from(t == 1.0))).collect();
    let palm_unit = mean_estimate(&ones);
    assert!(unit.z_against(palm_unit) < 3.0, "{unit:?} vs {palm_unit:?}");
}

#[test]
fn non_lazy_walk_has_the_jump_chain_cut_law() {
    let window = Window::symmetric(100).with_search(5000);
    let a = lazy_walk_t(LazyWalkSpec::new(1.0, 7).unwrap(), window, 20_000, SeedSpec::new(8, 0), 1);
    let b = lazy_walk_t(LazyWalkSpec::vertical_of(8).unwrap().jump_chain(), window, 20_000, SeedSpec::new(9, 0), 1);
    let (_, p) = ks_two_sample(&a.values(), &b.values());
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn return_probability_values() {
    assert_eq!(return_probability(3, 0.9, 0).unwrap().0, 1.0);
    assert!((return_probability(1, 1.0, 2).unwrap().0 - 0.5).abs() < 1e-15);
    // Odd returns vanish only without holding.
    for dim in 1..4 {
        assert!(return_probability(dim, 1.0, 5).unwrap().0.abs() < 1e-15);
        assert!(return_probability(dim, 0.9, 5).unwrap().0 > 0.0);
    }
    let p: Vec<f64> = (2..=5).map(|dim| return_probability(dim, 0.9, 10).unwrap().0).collect();
    assert!(p.windows(2).all(|w| w[1] < w[0]), "{p:?}");
}
