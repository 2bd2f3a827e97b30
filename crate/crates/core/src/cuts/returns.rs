//! Return probabilities `P(Z^eps_n = 0)` of the lazy walk on `Z^k`.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnMethod {
    Convolution,
    Quadrature,
}

/// Largest instance handled by the convolution method.
const CONVOLUTION_MAX_DIM: usize = 4;
const CONVOLUTION_MAX_N: usize = 30;

fn check(dim: usize, eps: f64) -> Result<()> {
    if dim == 0 {
        return Err(invalid("dim", "need dim >= 1"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid("eps", format!("{eps} is not in (0, 1]")));
    }
    Ok(())
}

/// Exact `P(Z_n = 0)`, by convolution when small enough and by quadrature
/// otherwise. Returns the value and the method used.
pub fn return_probability(dim: usize, eps: f64, n: usize) -> Result<(f64, ReturnMethod)> {
    if dim <= CONVOLUTION_MAX_DIM && n <= CONVOLUTION_MAX_N {
        Ok((return_probability_convolution(dim, eps, n)?, ReturnMethod::Convolution))
    } else {
        Ok((return_probability_quadrature(dim, eps, n)?, ReturnMethod::Quadrature))
    }
}

/// `n`-fold convolution of the one-step kernel on the box of radius
/// `ceil(n/2)`. Mass that leaves the box can no longer return by time `n`,
/// so dropping it is exact.
pub fn return_probability_convolution(dim: usize, eps: f64, n: usize) -> Result<f64> {
    check(dim, eps)?;
    if dim > CONVOLUTION_MAX_DIM || n > CONVOLUTION_MAX_N {
        return Err(Error::InstanceTooLarge(format!(
            "convolution supports dim <= {CONVOLUTION_MAX_DIM} and n <= {CONVOLUTION_MAX_N}"
        )));
    }
    let r = n.div_ceil(2);
    let side = 2 * r + 1;
    let cells = side.pow(dim as u32);
    let strides: Vec<usize> = (0..dim).map(|i| side.pow(i as u32)).collect();
    let centre: usize = strides.iter().map(|s| s * r).sum();
    let hold = 1.0 - eps;
    let jump = eps / (2 * dim) as f64;
    let mut p = vec![0.0f64; cells];
    let mut q = vec![0.0f64; cells];
    p[centre] = 1.0;
    let mut coord = vec![0usize; dim];
    for _ in 0..n {
        q.iter_mut().for_each(|x| *x = 0.0);
        coord.iter_mut().for_each(|c| *c = 0);
        for (idx, &mass) in p.iter().enumerate() {
            if idx > 0 {
                // Odometer increment of the coordinate vector.
                for c in coord.iter_mut() {
                    *c += 1;
                    if *c < side {
                        break;
                    }
                    *c = 0;
                }
            }
            if mass == 0.0 {
                continue;
            }
            q[idx] += hold * mass;
            for (axis, &stride) in strides.iter().enumerate() {
                if coord[axis] + 1 < side {
                    q[idx + stride] += jump * mass;
                }
                if coord[axis] > 0 {
                    q[idx - stride] += jump * mass;
                }
            }
        }
        std::mem::swap(&mut p, &mut q);
    }
    Ok(p[centre])
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Characteristic-function form
/// `(2 pi)^-k ∫ (eps/k * sum_i cos t_i + 1 - eps)^n dt` on the torus, with a
/// 64-node Gauss-Legendre rule per axis.
///
/// The tensor rule applied to this polynomial in the cosines equals the
/// binomial expansion in the one-dimensional moments `c_j = (2 pi)^-1 ∫ cos^j`
/// computed with the same 64 nodes, which keeps the cost polynomial in `k`.
pub fn return_probability_quadrature(dim: usize, eps: f64, n: usize) -> Result<f64> {
    check(dim, eps)?;
    if n > 400 {
        return Err(Error::InstanceTooLarge("quadrature supports n <= 400".into()));
    }
    let (nodes, weights) = gauss_legendre(64);
    let pi = std::f64::consts::PI;
    // c_j for j = 0..=n.
    let moments: Vec<f64> = (0..=n)
        .map(|j| {
            nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * (pi * x).cos().powi(j as i32))
                .sum::<f64>()
                / 2.0
        })
        .collect();
    // Moments of S = sum of `dim` independent cosines via exponential
    // generating functions: E S^k = k! [x^k] (sum_j c_j x^j / j!)^dim.
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let single: Vec<f64> = (0..=n).map(|j| moments[j] / fact[j]).collect();
    let mut egf = single.clone();
    for _ in 1..dim {
        let mut next = vec![0.0; n + 1];
        for (i, a) in egf.iter().enumerate() {
            for (j, b) in single.iter().enumerate().take(n + 1 - i) {
                next[i + j] += a * b;
            }
        }
        egf = next;
    }
    let a = eps / dim as f64;
    let b = 1.0 - eps;
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            binom *= (n - k + 1) as f64 / k as f64;
        }
        let sk = egf[k] * fact[k];
        total += binom * a.powi(k as i32) * b.powi((n - k) as i32) * sk;
    }
    Ok(total)
}
