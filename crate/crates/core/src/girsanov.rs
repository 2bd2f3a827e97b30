//! Change-of-measure weights relating the excited walk to the simple
//! symmetric walk, and the derivative weights of the speed.

use serde::{Deserialize, Serialize};

use crate::environment::CookieEnvironment;
use crate::error::{invalid, Error, Result};
use crate::stats::effective_sample_size;
use crate::walker::Trajectory;

/// Logarithm of a product of nonnegative factors, with a flag for an exact
/// zero factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogWeight {
    pub log_value: f64,
    pub zero_flag: bool,
}

impl Default for LogWeight {
    fn default() -> Self {
        Self::one()
    }
}

impl LogWeight {
    pub fn one() -> Self {
        Self {
            log_value: 0.0,
            zero_flag: false,
        }
    }

    #[inline]
    pub fn mul(&mut self, factor: f64) {
        debug_assert!(factor >= 0.0);
        if factor == 0.0 {
            self.zero_flag = true;
        } else {
            self.log_value += factor.ln();
        }
    }

    pub fn value(&self) -> f64 {
        if self.zero_flag {
            0.0
        } else {
            self.log_value.exp()
        }
    }

    /// Log-weight usable in sums (`-inf` for a zero weight).
    pub fn ln(&self) -> f64 {
        if self.zero_flag {
            f64::NEG_INFINITY
        } else {
            self.log_value
        }
    }
}

/// `M_n(beta) = prod_{j<n} (1 + E_j beta_{k_j}(Y_j))`, where the cookie is 0
/// once the site has been visited more than `m` times.
pub fn weight(traj: &Trajectory, env: &CookieEnvironment, n: usize) -> Result<LogWeight> {
    if n > traj.len() {
        return Err(invalid("n", format!("{n} exceeds the trajectory length {}", traj.len())));
    }
    let mut w = LogWeight::one();
    for j in 0..n {
        let e = traj.horiz_increments[j];
        if e != 0 {
            let b = env.beta(traj.position(j), traj.visit_index[j]);
            w.mul(1.0 + f64::from(e) * b);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub ess: f64,
}

/// Estimates `E_beta[f]` as the mean of `f_i * exp(w_i)` over samples drawn
/// under the symmetric law.
pub fn reweighted_expectation(samples: &[(f64, LogWeight)]) -> Result<WeightedEstimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: samples.len(),
        });
    }
    if samples.iter().all(|(_, w)| w.zero_flag) {
        return Err(Error::AllWeightsZero);
    }
    let n = samples.len() as f64;
    let values: Vec<f64> = samples.iter().map(|(f, w)| f * w.value()).collect();
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let logs: Vec<f64> = samples.iter().map(|(_, w)| w.ln()).collect();
    Ok(WeightedEstimate {
        estimate: mean,
        stderr: (ss / (n * (n - 1.0))).sqrt(),
        ess: effective_sample_size(&logs),
    })
}

/// Path functionals entering the derivative of the speed in the cookie
/// strength, over the prefix `[0, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeWeights {
    /// `d * #{j < T : cookie present, horizontal step}`.
    pub n: f64,
    /// `sum_{j<T} E_j / (1 + beta E_j)` over steps with a cookie present.
    pub u: f64,
    pub m: LogWeight,
}

pub fn derivative_weights(traj: &Trajectory, env: &CookieEnvironment, t: Option<usize>) -> Result<DerivativeWeights> {
    let t = t.ok_or(Error::TruncatedCut)?;
    if t > traj.len() {
        return Err(invalid("t", format!("{t} exceeds the trajectory length {}", traj.len())));
    }
    let d = traj.dim() as f64;
    let count = env.count();
    let mut out = DerivativeWeights {
        n: 0.0,
        u: 0.0,
        m: LogWeight::one(),
    };
    for j in 0..t {
        let e = traj.horiz_increments[j];
        let k = traj.visit_index[j];
        if e == 0 || !count.covers(k) {
            continue;
        }
        let b = env.beta(traj.position(j), k);
        let factor = 1.0 + f64::from(e) * b;
        if factor == 0.0 {
            return Err(invalid("beta", "derivative weights need |beta| < 1"));
        }
        out.n += d;
        out.u += f64::from(e) / factor;
        out.m.mul(factor);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::CookieCount;
    use crate::lattice::Direction;
    use crate::rng::SeedSpec;
    use crate::walker::simulate_direct;

    #[test]
    fn symmetric_cookies_give_unit_weight() {
        let zero = CookieEnvironment::constant(0.0, CookieCount::Finite(3)).unwrap();
        let traj = simulate_direct(&zero, 3, 100, SeedSpec::new(1, 2)).unwrap();
        assert_eq!(weight(&traj, &zero, 100).unwrap(), LogWeight::one());
    }

    #[test]
    fn single_step_factor() {
        let env = CookieEnvironment::constant(0.5, CookieCount::Finite(1)).unwrap();
        let traj = Trajectory::from_moves(2, &[Direction::new(0, 1)], Some(&env));
        assert!((weight(&traj, &env, 1).unwrap().value() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn log_space_matches_product() {
        let env = CookieEnvironment::constant(0.3, CookieCount::Finite(2)).unwrap();
        let zero = CookieEnvironment::constant(0.0, CookieCount::Finite(2)).unwrap();
        let traj = simulate_direct(&zero, 2, 10_000, SeedSpec::new(3, 3)).unwrap();
        let w = weight(&traj, &env, 10_000).unwrap();
        let mut direct = 1.0f64;
        let mut scale = 0i64;
        for j in 0..traj.len() {
            let e = f64::from(traj.horiz_increments[j]);
            direct *= 1.0 + e * env.beta(traj.position(j), traj.visit_index[j]);
            while direct.abs() > 2.0 {
                direct /= 2.0;
                scale += 1;
            }
            while direct.abs() < 0.5 {
                direct *= 2.0;
                scale -= 1;
            }
        }
        let log_direct = direct.ln() + scale as f64 * std::f64::consts::LN_2;
        assert!((w.log_value - log_direct).abs() < 1e-12 * log_direct.abs().max(1.0));
    }

    #[test]
    fn full_cookie_gives_zero_flag() {
        let env = CookieEnvironment::constant(1.0, CookieCount::Finite(1)).unwrap();
        let traj = Trajectory::from_moves(2, &[Direction::new(0, -1)], Some(&env));
        let w = weight(&traj, &env, 1).unwrap();
        assert!(w.zero_flag);
        assert_eq!(w.value(), 0.0);
    }

    #[test]
    fn unweighted_samples_give_plain_mean() {
        let s: Vec<(f64, LogWeight)> = [1.0, 2.0, 3.0].iter().map(|&f| (f, LogWeight::one())).collect();
        let e = reweighted_expectation(&s).unwrap();
        assert_eq!(e.estimate, 2.0);
        assert!((e.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((e.ess - 3.0).abs() < 1e-12);
        let zero = LogWeight {
            log_value: 0.0,
            zero_flag: true,
        };
        assert_eq!(reweighted_expectation(&[(1.0, zero), (1.0, zero)]), Err(Error::AllWeightsZero));
        assert!(reweighted_expectation(&s[..1]).is_err());
    }

    #[test]
    fn derivative_weights_collapse_at_zero() {
        let zero = CookieEnvironment::constant(0.0, CookieCount::Infinite).unwrap();
        let traj = simulate_direct(&zero, 4, 200, SeedSpec::new(5, 5)).unwrap();
        let dw = derivative_weights(&traj, &zero, Some(200)).unwrap();
        let horizontal: u32 = traj.move_flags.iter().map(|&f| u32::from(f)).sum();
        assert_eq!(dw.u, f64::from(traj.horizontal(200)));
        assert_eq!(dw.n, 4.0 * f64::from(horizontal));
        assert_eq!(derivative_weights(&traj, &zero, None), Err(Error::TruncatedCut));
    }

    #[test]
    fn u_is_bounded() {
        let beta = 0.6;
        let env = CookieEnvironment::constant(beta, CookieCount::Finite(2)).unwrap();
        let zero = CookieEnvironment::constant(0.0, CookieCount::Finite(2)).unwrap();
        for s in 0..2000 {
            let traj = simulate_direct(&zero, 3, 30, SeedSpec::new(8, s)).unwrap();
            let dw = derivative_weights(&traj, &env, Some(30)).unwrap();
            assert!(dw.u.abs() <= 30.0 / (1.0 - beta));
            assert!(dw.n >= 0.0 && dw.n <= 3.0 * 30.0);
        }
    }
}
