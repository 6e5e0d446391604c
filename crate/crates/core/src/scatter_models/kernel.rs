//! Scatter potential `f_{α,β}(d) = -d^α (log d)^β` and the Gaussian-pair kernel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Radiograph, Result};

/// Lower clamp applied to `d` before taking its logarithm.
pub const LOG_CLAMP: f64 = 1e-8;

/// Real part of the principal power `l^β`.
fn real_power(l: f64, beta: f64) -> f64 {
    if l < 0.0 {
        (-l).powf(beta) * (std::f64::consts::PI * beta).cos()
    } else {
        l.powf(beta)
    }
}

fn real_power_dbeta(l: f64, beta: f64) -> f64 {
    use std::f64::consts::PI;
    if l < 0.0 {
        let m = -l;
        m.powf(beta) * (m.ln() * (PI * beta).cos() - PI * (PI * beta).sin())
    } else if l > 0.0 {
        l.powf(beta) * l.ln()
    } else {
        0.0
    }
}

pub fn potential(d: f64, alpha: f64, beta: f64) -> f64 {
    let u = d.max(LOG_CLAMP);
    -u.powf(alpha) * real_power(u.ln(), beta)
}

/// `(f, ∂f/∂α, ∂f/∂β)` at one pixel.
pub fn potential_partials(d: f64, alpha: f64, beta: f64) -> (f64, f64, f64) {
    let u = d.max(LOG_CLAMP);
    let l = u.ln();
    let ua = u.powf(alpha);
    let f = -ua * real_power(l, beta);
    (f, l * f, -ua * real_power_dbeta(l, beta))
}

pub fn nonlinearity_array(d: &Array2<f64>, alpha: f64, beta: f64) -> Array2<f64> {
    d.mapv(|v| potential(v, alpha, beta))
}

pub fn nonlinearity(d: &Radiograph, alpha: f64, beta: f64) -> Result<Radiograph> {
    d.map(|v| potential(v, alpha, beta))
}

/// Parameters of one Gaussian-pair kernel and its scatter potential.
/// Widths are in coarse-grid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub a: f64,
    pub b: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, sigma1: 4.0, sigma2: 64.0, alpha: 1.0, beta: 0.0 }
    }
}

fn gaussian(r2: f64, sigma: f64) -> f64 {
    (-r2 / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn gaussian_pair_kernel(
    a: f64,
    b: f64,
    sigma1: f64,
    sigma2: f64,
    size: usize,
    center: (usize, usize),
) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(i, j)| {
        let r2 = squared_radius(i, j, center);
        a * gaussian(r2, sigma1) + b * gaussian(r2, sigma2)
    })
}

fn squared_radius(i: usize, j: usize, center: (usize, usize)) -> f64 {
    let di = i as f64 - center.0 as f64;
    let dj = j as f64 - center.1 as f64;
    di * di + dj * dj
}

/// Kernel of `p` with its partial derivatives with respect to
/// `(A, B, ln σ1, ln σ2)`.
pub(crate) struct KernelWithPartials {
    pub kernel: Array2<f64>,
    pub partials: [Array2<f64>; 4],
}

pub(crate) fn kernel_with_partials(p: &KernelParams, size: usize) -> KernelWithPartials {
    let c = size / 2;
    let g1 = Array2::from_shape_fn((size, size), |(i, j)| gaussian(squared_radius(i, j, (c, c)), p.sigma1));
    let g2 = Array2::from_shape_fn((size, size), |(i, j)| gaussian(squared_radius(i, j, (c, c)), p.sigma2));
    let dlog = |g: &Array2<f64>, amp: f64, sigma: f64| {
        Array2::from_shape_fn((size, size), |(i, j)| {
            amp * g[[i, j]] * (squared_radius(i, j, (c, c)) / (sigma * sigma) - 1.0)
        })
    };
    let d1 = dlog(&g1, p.a, p.sigma1);
    let d2 = dlog(&g2, p.b, p.sigma2);
    let kernel = &g1 * p.a + &g2 * p.b;
    KernelWithPartials { kernel, partials: [g1, g2, d1, d2] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nonlinearity_examples() {
        let e1 = (-1.0f64).exp();
        assert!((potential(e1, 1.0, 1.0) - e1).abs() < 1e-15);
        assert_eq!(potential(1.0, 1.0, 1.0), 0.0);
        assert_eq!(potential(0.25, 1.0, 0.0), -0.25);
        assert!(potential(0.0, 1.0, 1.0).is_finite());
    }

    #[test]
    fn integer_beta_matches_plain_power() {
        for &d in &[0.01, 0.3, 0.9] {
            let l: f64 = f64::ln(d);
            assert!((potential(d, 0.7, 2.0) + d.powf(0.7) * l * l).abs() < 1e-12);
            assert!((potential(d, 0.7, 3.0) + d.powf(0.7) * l * l * l).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_examples() {
        let k = gaussian_pair_kernel(1.0, 1.0, 4.0, 64.0, 129, (64, 64));
        let expected =
            1.0 / (4.0 * (2.0 * std::f64::consts::PI).sqrt()) + 1.0 / (64.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((k[[64, 64]] - expected).abs() < 1e-15);
        assert!((k[[64, 64]] - 0.105970).abs() < 1e-6);
        assert!(gaussian_pair_kernel(0.0, 0.0, 4.0, 64.0, 33, (16, 16)).iter().all(|&v| v == 0.0));
        for j in 0..64 {
            assert_eq!(k[[64 + j, 64]], k[[64, 64 + j]]);
        }
        assert!(k.iter().all(|&v| v <= k[[64, 64]]));
    }

    #[test]
    fn partials_match_finite_differences() {
        let p = KernelParams { a: 1.3, b: 0.4, sigma1: 2.0, sigma2: 7.0, alpha: 1.0, beta: 0.0 };
        let kp = kernel_with_partials(&p, 21);
        let h = 1e-6;
        let shifted = |i: usize, s: f64| {
            let mut q = p;
            match i {
                0 => q.a += s,
                1 => q.b += s,
                2 => q.sigma1 *= s.exp(),
                _ => q.sigma2 *= s.exp(),
            }
            kernel_with_partials(&q, 21).kernel
        };
        for i in 0..4 {
            let fd = (shifted(i, h) - shifted(i, -h)) / (2.0 * h);
            for (a, b) in fd.iter().zip(&kp.partials[i]) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn potential_partials_match_finite_differences(d in 0.001f64..0.999, alpha in 0.2f64..2.0, beta in -0.5f64..2.5) {
            let h = 1e-6;
            let (f, fa, fb) = potential_partials(d, alpha, beta);
            prop_assert!((f - potential(d, alpha, beta)).abs() < 1e-14);
            let fda = (potential(d, alpha + h, beta) - potential(d, alpha - h, beta)) / (2.0 * h);
            let fdb = (potential(d, alpha, beta + h) - potential(d, alpha, beta - h)) / (2.0 * h);
            prop_assert!((fa - fda).abs() <= 1e-6 * (1.0 + fa.abs()));
            prop_assert!((fb - fdb).abs() <= 1e-6 * (1.0 + fb.abs()));
        }
    }
}
