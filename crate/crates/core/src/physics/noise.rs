use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Radiograph, Result};

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
///
/// Negative results are kept; only the descattering loop clamps.
pub fn add_awgn(r: &Radiograph, sigma: f64, seed: u64) -> Result<Radiograph> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(r.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = r.data().mapv(|v| v + normal.sample(&mut rng));
    r.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let r = Radiograph::constant(9, 0.5, 1.0, 3.0).unwrap();
        assert_eq!(add_awgn(&r, 0.0, 4).unwrap(), r);
        assert!(add_awgn(&r, -1.0, 4).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let r = Radiograph::constant(9, 0.5, 1.0, 3.0).unwrap();
        assert_eq!(add_awgn(&r, 0.1, 7).unwrap(), add_awgn(&r, 0.1, 7).unwrap());
        assert_ne!(add_awgn(&r, 0.1, 7).unwrap(), add_awgn(&r, 0.1, 8).unwrap());
    }

    #[test]
    fn sample_std_matches_sigma() {
        let r = Radiograph::constant(257, 0.5, 1.0, 3.0).unwrap();
        let sigma = 0.01;
        let out = add_awgn(&r, sigma, 11).unwrap();
        let diffs: Vec<f64> = out.data().iter().zip(r.data()).map(|(a, b)| a - b).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - sigma).abs() / sigma < 0.02);
    }
}
