//! Synthetic ground-truth scatter generator.
//!
//! Scatter is a spatially invariant blur of a per-pixel potential
//! `d^α·(-ln d)^β`, where the region (and so the kernel and exponents) is
//! selected by thresholds on `-ln d`. A global amplitude grows with total
//! object mass and kernel widths grow with the peak areal density, so no
//! single convolutional model is exact over a dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Radiograph, Result};

const TRUNCATION_SIGMAS: f64 = 5.0;
const MIN_JITTER_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRegion {
    pub a: f64,
    pub b: f64,
    /// Narrow Gaussian standard deviation, cm.
    pub sigma1: f64,
    /// Wide Gaussian standard deviation, cm.
    pub sigma2: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterOracleParams {
    pub regions: Vec<OracleRegion>,
    /// Strictly increasing bounds on `-ln d`; one fewer than `regions`.
    pub thresholds: Vec<f64>,
    pub amplitude: f64,
    /// Object mass (g) at which the amplitude factor is one.
    pub reference_mass: f64,
    pub mass_exponent: f64,
    /// Peak areal density (g/cm²) at which the width factor is one.
    pub reference_peak: f64,
    pub width_exponent: f64,
    /// Relative standard deviation of per-object kernel perturbations.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ScatterOracleParams {
    fn default() -> Self {
        let region = |a, b, sigma1, sigma2, alpha, beta| OracleRegion { a, b, sigma1, sigma2, alpha, beta };
        Self {
            regions: vec![
                region(1.0, 0.6, 1.6, 4.5, 1.0, 0.8),
                region(1.2, 0.7, 2.0, 5.25, 0.9, 1.0),
                region(1.4, 0.8, 2.6, 6.0, 0.8, 1.2),
                region(1.6, 1.0, 3.2, 6.75, 0.7, 1.4),
            ],
            thresholds: vec![0.5, 1.5, 3.0],
            amplitude: 0.022,
            reference_mass: 4.0 / 3.0 * std::f64::consts::PI * 125.0 * 6.0,
            reference_peak: 60.0,
            mass_exponent: 0.5,
            width_exponent: 0.6,
            jitter: 0.02,
            seed: 0x5ca7,
        }
    }
}

impl ScatterOracleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("scatter oracle: {msg}")));
        if self.regions.is_empty() || self.thresholds.len() + 1 != self.regions.len() {
            return bad("need one more region than thresholds");
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) || self.thresholds.iter().any(|t| !t.is_finite()) {
            return bad("thresholds must be finite and strictly increasing");
        }
        for r in &self.regions {
            let finite = [r.a, r.b, r.alpha, r.beta].iter().all(|v| v.is_finite());
            if !finite
                || r.a < 0.0
                || r.b < 0.0
                || !(r.sigma1 > 0.0)
                || !(r.sigma2 > 0.0)
                || r.alpha < 0.0
                || r.beta < 0.0
            {
                return bad("region parameters must be finite, non-negative, with positive widths");
            }
        }
        let positive = [self.amplitude, self.reference_mass, self.reference_peak];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.jitter >= 0.0) {
            return bad("amplitude and reference values must be positive, jitter non-negative");
        }
        if !self.mass_exponent.is_finite() || !self.width_exponent.is_finite() {
            return bad("exponents must be finite");
        }
        Ok(())
    }

    /// Amplitude factor for an object of total mass `mass`.
    pub fn amplitude_scale(&self, mass: f64) -> f64 {
        self.amplitude * (mass / self.reference_mass).max(0.0).powf(self.mass_exponent)
    }

    pub fn width_scale(&self, peak: f64) -> f64 {
        (peak / self.reference_peak).max(0.0).powf(self.width_exponent)
    }

    fn region_of(&self, attenuation: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= attenuation)
    }
}

fn potential(d: f64, alpha: f64, beta: f64) -> f64 {
    if d <= 0.0 || d >= 1.0 {
        return 0.0;
    }
    d.powf(alpha) * (-d.ln()).powf(beta)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Ground-truth scatter for a direct radiograph `direct` of an object with
/// areal density `areal`.
pub fn simulate_scatter(direct: &Radiograph, areal: &Radiograph, params: &ScatterOracleParams) -> Result<Radiograph> {
    params.validate()?;
    direct.check_same_grid(areal)?;
    let n = direct.size();
    let pitch = direct.pixel_pitch();
    let mass = areal.data().sum() * pitch * pitch;
    let peak = areal.data().fold(0.0f64, |m, &v| m.max(v));
    let amp = params.amplitude_scale(mass);
    let widen = params.width_scale(peak);

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
        params.seed ^ splitmix64(mass.to_bits()) ^ splitmix64(peak.to_bits()).rotate_left(17),
    ));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut perturb = || (1.0 + params.jitter * normal.sample(&mut rng)).max(MIN_JITTER_FACTOR);

    let d: Vec<f64> = direct.data().iter().copied().collect();
    let mut total = vec![0.0; n * n];
    for (k, region) in params.regions.iter().enumerate() {
        let jitter = [perturb(), perturb(), perturb(), perturb()];
        let source: Vec<f64> = d
            .iter()
            .map(|&v| {
                let in_region = v > 0.0 && v < 1.0 && params.region_of(-v.ln()) == k;
                if in_region {
                    potential(v, region.alpha, region.beta)
                } else {
                    0.0
                }
            })
            .collect();
        if source.iter().all(|&v| v == 0.0) {
            continue;
        }
        let lobes = [
            (region.a * jitter[0], region.sigma1 * widen * jitter[2]),
            (region.b * jitter[1], region.sigma2 * widen * jitter[3]),
        ];
        for (weight, sigma) in lobes {
            let blurred = gaussian_blur(&source, n, sigma / pitch);
            for (t, b) in total.iter_mut().zip(&blurred) {
                *t += weight * b;
            }
        }
    }
    let data =
        ndarray::Array2::from_shape_vec((n, n), total.into_iter().map(|v| amp * v).collect()).expect("shape matches");
    direct.with_data(data)
}

/// Separable blur with a sampled unit-area 2D Gaussian of width `sigma_px`.
fn gaussian_blur(src: &[f64], n: usize, sigma_px: f64) -> Vec<f64> {
    let reach = ((TRUNCATION_SIGMAS * sigma_px).ceil() as usize).min(n - 1);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma_px);
    let taps: Vec<f64> = (0..=reach).map(|o| norm * (-((o * o) as f64) / (2.0 * sigma_px * sigma_px)).exp()).collect();
    let rows = blur_rows(src, n, &taps);
    let cols = blur_rows(&transpose(&rows, n), n, &taps);
    transpose(&cols, n)
}

fn blur_rows(src: &[f64], n: usize, taps: &[f64]) -> Vec<f64> {
    let reach = taps.len() as isize - 1;
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).zip(src.par_chunks(n)).for_each(|(dst, row)| {
        for (j, slot) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for o in -reach..=reach {
                let idx = j as isize + o;
                if idx >= 0 && (idx as usize) < n {
                    acc += taps[o.unsigned_abs()] * row[idx as usize];
                }
            }
            *slot = acc;
        }
    });
    out
}

fn transpose(src: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = src[i * n + j];
        }
    }
    out
}

/// Largest `s/d` inside the ROI where `d > 0`.
pub fn max_scatter_to_direct(scatter: &Radiograph, direct: &Radiograph) -> Result<f64> {
    scatter.check_same_grid(direct)?;
    let mut best = 0.0f64;
    for ((&s, &d), &inside) in scatter.data().iter().zip(direct.data()).zip(direct.roi_mask()) {
        if inside && d > 0.0 {
            best = best.max(s / d);
        }
    }
    Ok(best)
}
