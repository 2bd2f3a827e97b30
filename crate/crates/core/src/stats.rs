//! Small statistics toolkit: means, ratio estimators, delta method,
//! importance-sampling diagnostics and a few goodness-of-fit tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            value: c * self.value,
            stderr: c.abs() * self.stderr,
        }
    }

    /// Product of two independent estimates, first-order error propagation.
    pub fn times(self, other: Estimate) -> Self {
        Self {
            value: self.value * other.value,
            stderr: (self.stderr * other.value).hypot(other.stderr * self.value),
        }
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_against(self, other: Estimate) -> f64 {
        let s = self.stderr.hypot(other.stderr);
        let diff = (self.value - other.value).abs();
        if s == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / s
        }
    }

    /// `|self - target|` in units of `self.stderr`.
    pub fn z_to(self, target: f64) -> f64 {
        self.z_against(Estimate::exact(target))
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean with the usual `s / sqrt(n)` standard error.
pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if n < 2 {
        return Estimate::new(m, f64::NAN);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Estimate::new(m, (ss / ((n - 1) * n) as f64).sqrt())
}

/// Ratio of sums `sum x / sum y` with the delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len());
    let n = num.len() as f64;
    let sx: f64 = num.iter().sum();
    let sy: f64 = den.iter().sum();
    let r = sx / sy;
    let ybar = sy / n;
    let ss: f64 = num.iter().zip(den).map(|(x, y)| (x - r * y).powi(2)).sum();
    Estimate::new(r, (ss / (n * (n - 1.0))).sqrt() / ybar.abs())
}

/// Delete-one jackknife for the ratio of sums.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len());
    let n = num.len() as f64;
    let sx: f64 = num.iter().sum();
    let sy: f64 = den.iter().sum();
    let full = sx / sy;
    let leave: Vec<f64> = num.iter().zip(den).map(|(x, y)| (sx - x) / (sy - y)).collect();
    let lbar = mean(&leave);
    let var = (n - 1.0) / n * leave.iter().map(|l| (l - lbar).powi(2)).sum::<f64>();
    Estimate::new(n * full - (n - 1.0) * lbar, var.sqrt())
}

/// Samples of several quantities observed jointly (one column per quantity,
/// equal lengths).
pub struct Group<'a> {
    pub columns: Vec<&'a [f64]>,
}

impl<'a> Group<'a> {
    pub fn new(columns: Vec<&'a [f64]>) -> Self {
        let n = columns.first().map_or(0, |c| c.len());
        assert!(columns.iter().all(|c| c.len() == n), "columns differ in length");
        Self { columns }
    }

    fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    fn means(&self) -> Vec<f64> {
        self.columns.iter().map(|c| mean(c)).collect()
    }

    /// Covariance matrix of the column means.
    fn mean_covariance(&self, means: &[f64]) -> Vec<Vec<f64>> {
        let n = self.len() as f64;
        let p = self.columns.len();
        let mut cov = vec![vec![0.0; p]; p];
        for i in 0..p {
            for j in i..p {
                let s: f64 = self.columns[i]
                    .iter()
                    .zip(self.columns[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum();
                let v = s / (n - 1.0) / n;
                cov[i][j] = v;
                cov[j][i] = v;
            }
        }
        cov
    }
}

/// Delta method for a smooth function of the means of independent groups.
/// `g` receives one vector of means per group.
pub fn delta_method(groups: &[Group<'_>], g: impl Fn(&[Vec<f64>]) -> f64) -> Estimate {
    let means: Vec<Vec<f64>> = groups.iter().map(Group::means).collect();
    let value = g(&means);
    let mut var = 0.0;
    for (gi, group) in groups.iter().enumerate() {
        let cov = group.mean_covariance(&means[gi]);
        let p = means[gi].len();
        let grad: Vec<f64> = (0..p)
            .map(|j| {
                let h = 1e-6 * (means[gi][j].abs() + cov[j][j].sqrt() + 1e-9);
                let mut up = means.clone();
                let mut down = means.clone();
                up[gi][j] += h;
                down[gi][j] -= h;
                (g(&up) - g(&down)) / (2.0 * h)
            })
            .collect();
        for i in 0..p {
            for j in 0..p {
                var += grad[i] * cov[i][j] * grad[j];
            }
        }
    }
    Estimate::new(value, var.max(0.0).sqrt())
}

/// Effective sample size `(sum w)^2 / sum w^2` from log-weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), &lw| {
        let w = (lw - max).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic_fit(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // Blocks of (weighted mean, total weight, size).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    blocks
        .iter()
        .flat_map(|&(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Upper tail `P(X > x)` of a chi-square law.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).map(|c| 1.0 - c.cdf(x)).unwrap_or(f64::NAN)
}

/// Pearson goodness-of-fit test; returns `(statistic, p-value)`. Cells with
/// zero expected probability must have zero counts and are skipped.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p == 0.0 {
            if o > 0 {
                return (f64::INFINITY, 0.0);
            }
            continue;
        }
        let e = n as f64 * p;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    (stat, chi_square_sf(stat, (cells - 1) as f64))
}

/// Chi-square test that two count vectors share one law.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, f64) {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        let ea = tot * na as f64 / n;
        let eb = tot * nb as f64 / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        cells += 1;
    }
    (stat, chi_square_sf(stat, (cells.max(2) - 1) as f64))
}

/// Two-sample Kolmogorov-Smirnov test; returns `(D, asymptotic p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_sf(lambda))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Batch-means estimate of the mean of a weakly dependent sequence.
pub fn batch_means(xs: &[f64], batches: usize) -> Estimate {
    let b = batches.min(xs.len()).max(1);
    let size = xs.len() / b;
    if size == 0 || b < 2 {
        return mean_estimate(xs);
    }
    let means: Vec<f64> = xs.chunks(size).take(b).map(mean).collect();
    let se = mean_estimate(&means).stderr;
    Estimate::new(mean(xs), se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let e = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ratio_matches_jackknife_roughly() {
        let x: Vec<f64> = (0..200).map(|i| (i % 7) as f64 + 1.0).collect();
        let y: Vec<f64> = (0..200).map(|i| (i % 5) as f64 + 2.0).collect();
        let r = ratio_estimate(&x, &y);
        let j = jackknife_ratio(&x, &y);
        assert!((r.value - j.value).abs() < 1e-3);
        assert!((r.stderr / j.stderr - 1.0).abs() < 0.1);
    }

    #[test]
    fn delta_method_reduces_to_ratio() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37) % 11) as f64).collect();
        let y: Vec<f64> = (0..300).map(|i| ((i * 13) % 7) as f64 + 1.0).collect();
        let d = delta_method(&[Group::new(vec![&x, &y])], |m| m[0][0] / m[0][1]);
        let r = ratio_estimate(&x, &y);
        assert!((d.value - r.value).abs() < 1e-12);
        assert!((d.stderr / r.stderr - 1.0).abs() < 1e-3);
    }

    #[test]
    fn isotonic_pools_violators() {
        let fit = isotonic_fit(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]);
        assert_eq!(fit, vec![1.0, 2.5, 2.5, 4.0]);
        let sorted = [0.0, 1.0, 2.0];
        assert_eq!(isotonic_fit(&sorted, &[1.0; 3]), sorted.to_vec());
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.0; 10]) - 10.0).abs() < 1e-12);
        assert!((effective_sample_size(&[0.0, -1000.0]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chi_square_sanity() {
        let (_, p) = chi_square_gof(&[250, 250, 250, 250], &[0.25; 4]);
        assert!(p > 0.99);
        let (_, p) = chi_square_gof(&[400, 200, 200, 200], &[0.25; 4]);
        assert!(p < 1e-6);
        let (_, p) = chi_square_two_sample(&[100, 100], &[100, 100]);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_sanity() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..500).map(|i| i as f64 + 0.5).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.5);
        let c: Vec<f64> = (0..500).map(|i| i as f64 + 200.0).collect();
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
    }
}
