//! Density reconstruction: transmission inversion to areal density, inverse
//! Abel transform to a central-plane slice, and the MADE score.

mod abel;
mod lut;

pub use abel::{cached_operator, inverse_abel, inverse_abel_cached, AbelOperator};
pub use lut::{
    build_poly_lut, invert_poly, invert_poly_with_nuisance, NuisanceLut, PolyLut, DEFAULT_LUT_SIZE,
    DEFAULT_NUISANCE_LEVELS,
};

use crate::physics::{AttenuationTable, Spectrum};
use crate::{stats, Error, Radiograph, Result};

pub const MIN_TRANSMISSION: f64 = 1e-12;
pub const RHO_MAX_FACTOR: f64 = 1.25;

fn check_xi(xi: f64) -> Result<()> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("mass attenuation {xi} must be > 0")))
    }
}

/// `-ln(d)/ξ` with `d` clamped to `[1e-12, 1]`.
pub fn invert_mono(d: &Radiograph, xi: f64) -> Result<Radiograph> {
    check_xi(xi)?;
    d.map(|v| -v.clamp(MIN_TRANSMISSION, 1.0).ln() / xi)
}

/// Monoenergetic inversion with a known nuisance areal density removed from
/// the exponent. The result is clamped at zero.
pub fn invert_mono_with_nuisance(
    d: &Radiograph,
    xi: f64,
    nuisance: &Radiograph,
    nuisance_xi: f64,
) -> Result<Radiograph> {
    check_xi(xi)?;
    check_xi(nuisance_xi)?;
    d.check_same_grid(nuisance)?;
    let data = ndarray::Zip::from(d.data())
        .and(nuisance.data())
        .map_collect(|&v, &eta| ((-v.clamp(MIN_TRANSMISSION, 1.0).ln() - nuisance_xi * eta) / xi).max(0.0));
    d.with_data(data)
}

/// Default table range for a dataset whose largest projected areal density
/// is `max_areal`.
pub fn default_rho_max(max_areal: f64) -> f64 {
    RHO_MAX_FACTOR * max_areal
}

/// Transmission model used to invert a direct radiograph.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconConfig {
    Mono { xi: f64 },
    Poly { lut: PolyLut },
    MonoNuisance { xi: f64, nuisance_xi: f64, nuisance: Radiograph },
    PolyNuisance { lut: NuisanceLut, nuisance: Radiograph },
}

impl ReconConfig {
    pub fn mono(xi: f64) -> Result<Self> {
        check_xi(xi)?;
        Ok(Self::Mono { xi })
    }

    pub fn poly(spectrum: &Spectrum, atten: &AttenuationTable, rho_max: f64) -> Result<Self> {
        Ok(Self::Poly { lut: build_poly_lut(spectrum, atten, rho_max, DEFAULT_LUT_SIZE)? })
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub areal: Radiograph,
    pub slice: Radiograph,
    /// Pixels clamped to the top of the lookup table.
    pub clamped: usize,
}

/// Areal density map, zeroed outside the region of interest.
pub fn invert_transmission(d: &Radiograph, config: &ReconConfig) -> Result<(Radiograph, usize)> {
    let (areal, clamped) = match config {
        ReconConfig::Mono { xi } => (invert_mono(d, *xi)?, 0),
        ReconConfig::Poly { lut } => invert_poly(d, lut)?,
        ReconConfig::MonoNuisance { xi, nuisance_xi, nuisance } => {
            (invert_mono_with_nuisance(d, *xi, nuisance, *nuisance_xi)?, 0)
        }
        ReconConfig::PolyNuisance { lut, nuisance } => invert_poly_with_nuisance(d, nuisance, lut)?,
    };
    let mut data = areal.data().clone();
    ndarray::Zip::from(&mut data).and(d.roi_mask()).for_each(|v, &inside| {
        if !inside {
            *v = 0.0;
        }
    });
    Ok((areal.with_data(data)?, clamped))
}

pub fn reconstruct(d: &Radiograph, config: &ReconConfig) -> Result<Reconstruction> {
    let (areal, clamped) = invert_transmission(d, config)?;
    let slice = inverse_abel_cached(&areal)?;
    Ok(Reconstruction { areal, slice, clamped })
}

/// Lower median of `|recon - truth|` over the nonzero support of `truth`.
pub fn made(recon: &Radiograph, truth: &Radiograph) -> Result<f64> {
    recon.check_same_grid(truth)?;
    let errors: Vec<f64> =
        recon.data().iter().zip(truth.data()).filter(|(_, &t)| t != 0.0).map(|(r, t)| (r - t).abs()).collect();
    if errors.is_empty() {
        return Err(Error::EmptySupport);
    }
    stats::lower_median(&errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{project_phantom, rasterize_central_slice, Geometry, ShellPhantom};
    use crate::physics::direct_mono;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;

    fn grid(values: Array2<f64>) -> Radiograph {
        Radiograph::new(values, 1.0, 100.0).unwrap()
    }

    #[test]
    fn mono_examples() {
        let d = grid(arr2(&[[1.0, (-2.3f64).exp(), 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]));
        let a = invert_mono(&d, 0.05).unwrap();
        assert_eq!(a.data()[[0, 0]], 0.0);
        assert!((a.data()[[0, 1]] - 46.0).abs() < 1e-12);
        assert!(invert_mono(&d, 0.0).is_err());
        let zero = grid(Array2::zeros((3, 3)));
        assert!((invert_mono(&zero, 0.05).unwrap().data()[[1, 1]] - 1e-12f64.ln().abs() / 0.05).abs() < 1e-9);
    }

    #[test]
    fn mono_nuisance_reduces_to_mono() {
        let areal = grid(Array2::from_shape_fn((5, 5), |(i, j)| (i * 5 + j) as f64));
        let eta = grid(Array2::from_elem((5, 5), 3.0));
        let d = areal.map(|r| (-0.05 * r - 0.2 * 3.0f64).exp()).unwrap();
        let back = invert_mono_with_nuisance(&d, 0.05, &eta, 0.2).unwrap();
        for (a, b) in back.data().iter().zip(areal.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn made_examples() {
        let truth = Radiograph::new(arr2(&[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), 1.0, 100.0).unwrap();
        let recon = truth.with_data(arr2(&[[1.1, 1.5, 1.2], [9.0, 9.0, 9.0], [9.0, 9.0, 9.0]])).unwrap();
        assert!((made(&recon, &truth).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(made(&truth, &truth).unwrap(), 0.0);
        let shifted = truth.map(|v| if v != 0.0 { v + 0.3 } else { v }).unwrap();
        assert!((made(&shifted, &truth).unwrap() - 0.3).abs() < 1e-12);
        let empty = grid(Array2::zeros((3, 3)));
        assert!(matches!(made(&recon, &empty), Err(Error::EmptySupport)));
    }

    #[test]
    fn lower_median_for_even_support() {
        let truth = Radiograph::new(Array2::from_elem((3, 3), 1.0), 1.0, 100.0).unwrap();
        let mut r = Array2::from_elem((3, 3), 1.0);
        r[[0, 0]] = 0.0;
        let truth2 = truth.with_data(r).unwrap();
        let recon = truth2.with_data(arr2(&[[5.0, 1.1, 1.2], [1.3, 1.4, 1.5], [1.6, 1.7, 1.8]])).unwrap();
        // support has 8 pixels; lower median of 0.1..0.8 is 0.4
        assert!((made(&recon, &truth2).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_map_gives_zero_slice() {
        let zero = Radiograph::constant(33, 0.0, 0.25, 4.0).unwrap();
        assert!(inverse_abel_cached(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(inverse_abel(&zero, &AbelOperator::new(5).unwrap()).is_err());
    }

    #[test]
    fn uniform_sphere_interior() {
        let geom = Geometry::new(257, 5.0).unwrap();
        let sphere = ShellPhantom::uniform(4.0, 2.0, "m").unwrap();
        let areal = project_phantom(&sphere, &geom).unwrap();
        let slice = inverse_abel_cached(&areal).unwrap();
        let c = geom.center();
        let mut checked = 0;
        for m in 0..geom.grid_size {
            for n in 0..geom.grid_size {
                if geom.radius_at(m, n) < 0.9 * 4.0 {
                    let v = slice.data()[[m, n]];
                    assert!((v - 2.0).abs() < 0.04, "({m}, {n}) {v}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
        assert!((slice.data()[[c, c]] - 2.0).abs() < 0.04);
    }

    #[test]
    fn mono_reconstruction_of_shell_phantom() {
        let geom = Geometry::new(257, 5.0).unwrap();
        let phantom = ShellPhantom::new(vec![1.5, 3.0, 4.0], vec![8.0, 4.0, 1.0], "m").unwrap();
        let areal = project_phantom(&phantom, &geom).unwrap();
        let truth = rasterize_central_slice(&phantom, &geom).unwrap();
        let d = direct_mono(&areal, 0.05).unwrap();
        let r = reconstruct(&d, &ReconConfig::mono(0.05).unwrap()).unwrap();
        assert!(made(&r.slice, &truth).unwrap() < 0.02);
    }

    #[test]
    fn single_bin_poly_matches_mono() {
        let geom = Geometry::new(129, 5.0).unwrap();
        let phantom = ShellPhantom::new(vec![2.0, 4.0], vec![5.0, 2.0], "m").unwrap();
        let areal = project_phantom(&phantom, &geom).unwrap();
        let d = direct_mono(&areal, 0.05).unwrap();
        let spectrum = Spectrum::monoenergetic(1.5).unwrap();
        let atten = AttenuationTable::new("m", vec![1.5], vec![0.05]).unwrap();
        let max = areal.data().iter().cloned().fold(0.0, f64::max);
        let poly = reconstruct(&d, &ReconConfig::poly(&spectrum, &atten, default_rho_max(max)).unwrap()).unwrap();
        let mono = reconstruct(&d, &ReconConfig::mono(0.05).unwrap()).unwrap();
        assert_eq!(poly.clamped, 0);
        for (a, b) in poly.slice.data().iter().zip(mono.slice.data()) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    proptest! {
        #[test]
        fn mono_round_trip(values in proptest::collection::vec(0.0f64..200.0, 25)) {
            let areal = grid(Array2::from_shape_vec((5, 5), values).unwrap());
            let back = invert_mono(&direct_mono(&areal, 0.05).unwrap(), 0.05).unwrap();
            for (a, b) in back.data().iter().zip(areal.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn made_permutation_invariant(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<f64> = (0..25).map(|i| (i % 3) as f64).collect();
            let recon: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut order: Vec<usize> = (0..25).collect();
            order.shuffle(&mut rng);
            let a = made(&grid(Array2::from_shape_vec((5, 5), recon.clone()).unwrap()),
                         &grid(Array2::from_shape_vec((5, 5), truth.clone()).unwrap())).unwrap();
            let pr: Vec<f64> = order.iter().map(|&k| recon[k]).collect();
            let pt: Vec<f64> = order.iter().map(|&k| truth[k]).collect();
            let b = made(&grid(Array2::from_shape_vec((5, 5), pr).unwrap()),
                         &grid(Array2::from_shape_vec((5, 5), pt).unwrap())).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
