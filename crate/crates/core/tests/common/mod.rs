#![allow(dead_code)]

use descatter_core::phantom::{generate_dataset, project_phantom, Geometry, DEFAULT_PALETTE};
use descatter_core::physics::direct_mono;
use descatter_core::scatter_models::{CoarseGrid, CoarseInput, CoarsePair, NormalizationConstants};
use descatter_core::Radiograph;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const XI: f64 = 0.05;

/// Mono direct radiographs of `count` random shell phantoms.
pub fn directs(grid: usize, count: usize, seed: u64) -> Vec<Radiograph> {
    let geom = Geometry::new(grid, 5.0).unwrap();
    generate_dataset(seed, count, &DEFAULT_PALETTE, &geom)
        .unwrap()
        .iter()
        .map(|p| direct_mono(&project_phantom(p, &geom).unwrap(), XI).unwrap())
        .collect()
}

pub fn unit_norms() -> NormalizationConstants {
    NormalizationConstants::new(1.0, 1.0).unwrap()
}

/// Coarse pairs whose scatter is produced by `scatter_of` on the coarse input.
pub fn coarse_pairs(
    directs: &[Radiograph],
    norms: &NormalizationConstants,
    mut scatter_of: impl FnMut(&CoarseInput) -> Array2<f64>,
) -> (CoarseGrid, Vec<CoarsePair>) {
    let grid = CoarseGrid::new(&directs[0]).unwrap();
    let pairs = directs
        .iter()
        .map(|d| {
            let input = CoarseInput::new(d, norms).unwrap();
            let scatter = scatter_of(&input);
            CoarsePair { input, scatter }
        })
        .collect();
    (grid, pairs)
}

pub fn random_array(n: usize, seed: u64, scale: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, n), |_| rng.random_range(-scale..scale))
}

/// Masked NMSE `‖mask ⊙ (a − b)‖² / ‖mask ⊙ b‖²`.
pub fn masked_nmse(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((x, y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    num / den
}

/// Relative L2 error of the three-point inversion of the analytic projection
/// of a random sum of three Gaussians sampled at `samples` radii on `[0, 1]`.
pub fn abel_gaussian_oracle(samples: usize, seed: u64) -> f64 {
    use descatter_core::recon::AbelOperator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.5..2.0), rng.random_range(0.05..0.15))).collect();
    let spacing = 1.0 / (samples - 1) as f64;
    let radius = |i: usize| i as f64 * spacing;
    let profile: Vec<f64> = (0..samples)
        .map(|i| terms.iter().map(|&(a, s)| a * (-radius(i).powi(2) / (2.0 * s * s)).exp()).sum())
        .collect();
    let projection: Vec<f64> = (0..samples)
        .map(|i| {
            terms
                .iter()
                .map(|&(a, s)| a * s * (2.0 * std::f64::consts::PI).sqrt() * (-radius(i).powi(2) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let recon = AbelOperator::new(samples).unwrap().apply(&projection, spacing).unwrap();
    let num: f64 = recon.iter().zip(&profile).map(|(r, p)| (r - p).powi(2)).sum();
    let den: f64 = profile.iter().map(|p| p * p).sum();
    (num / den).sqrt()
}
