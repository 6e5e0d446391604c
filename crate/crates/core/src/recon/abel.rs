//! Three-point (Dasch) inverse Abel transform.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::{Error, Radiograph, Result};

/// Unit-spacing three-point operator: `f(r_i) = (1/Δ) Σ_j D[i, j] P(r_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbelOperator {
    matrix: Array2<f64>,
}

fn i0(i: usize, j: usize) -> f64 {
    if j < i || (j == i && i == 0) {
        return 0.0;
    }
    let (fi, fj) = (i as f64, j as f64);
    let outer = ((2.0 * fj + 1.0).powi(2) - 4.0 * fi * fi).sqrt() + 2.0 * fj + 1.0;
    let inner = if j == i { 2.0 * fj } else { ((2.0 * fj - 1.0).powi(2) - 4.0 * fi * fi).sqrt() + 2.0 * fj - 1.0 };
    (outer / inner).ln() / (2.0 * PI)
}

fn i1(i: usize, j: usize) -> f64 {
    if j < i {
        return 0.0;
    }
    let (fi, fj) = (i as f64, j as f64);
    let outer = ((2.0 * fj + 1.0).powi(2) - 4.0 * fi * fi).sqrt();
    let inner = if j == i { 0.0 } else { ((2.0 * fj - 1.0).powi(2) - 4.0 * fi * fi).sqrt() };
    (outer - inner) / (2.0 * PI) - 2.0 * fj * i0(i, j)
}

impl AbelOperator {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput("Abel operator needs at least two radial samples".into()));
        }
        let matrix = Array2::from_shape_fn((size, size), |(i, j)| {
            if j + 1 < i {
                0.0
            } else if j + 1 == i {
                i0(i, j + 1) - i1(i, j + 1)
            } else if j == i {
                i0(i, j + 1) - i1(i, j + 1) + 2.0 * i1(i, j)
            } else if i == 0 && j == 1 {
                i0(0, 2) - i1(0, 2) + 2.0 * i1(0, 1) - 2.0 * i1(0, 0)
            } else {
                i0(i, j + 1) - i1(i, j + 1) + 2.0 * i1(i, j) - i0(i, j - 1) - i1(i, j - 1)
            }
        });
        Ok(Self { matrix })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Radial profile from projection samples `p` taken at spacing `spacing`.
    pub fn apply(&self, p: &[f64], spacing: f64) -> Result<Vec<f64>> {
        if p.len() != self.size() {
            return Err(Error::GridMismatch { expected: self.size().to_string(), found: p.len().to_string() });
        }
        let v = self.matrix.dot(&Array1::from(p.to_vec()));
        Ok(v.iter().map(|x| x / spacing).collect())
    }
}

/// Operator for `size` radial samples, built once per size per process.
pub fn cached_operator(size: usize) -> Result<Arc<AbelOperator>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<AbelOperator>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(op) = cache.lock().expect("Abel cache poisoned").get(&size) {
        return Ok(Arc::clone(op));
    }
    let op = Arc::new(AbelOperator::new(size)?);
    Ok(Arc::clone(cache.lock().expect("Abel cache poisoned").entry(size).or_insert(op)))
}

/// Central-plane density from an areal-density map, inverting each row about
/// the centre column. Both half-rows are inverted and averaged, so the
/// result is mirror symmetric in every row.
pub fn inverse_abel(areal: &Radiograph, op: &AbelOperator) -> Result<Radiograph> {
    let n = areal.size();
    let c = areal.center();
    if op.size() != c + 1 {
        return Err(Error::GridMismatch { expected: (c + 1).to_string(), found: op.size().to_string() });
    }
    let pitch = areal.pixel_pitch();
    let data = areal.data();
    let rows = (0..n)
        .into_par_iter()
        .map(|m| {
            let right: Vec<f64> = (0..=c).map(|j| data[[m, c + j]]).collect();
            let left: Vec<f64> = (0..=c).map(|j| data[[m, c - j]]).collect();
            let fr = op.apply(&right, pitch)?;
            let fl = op.apply(&left, pitch)?;
            Ok(fr.iter().zip(&fl).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Array2::from_shape_fn((n, n), |(m, k)| rows[m][k.abs_diff(c)]);
    areal.with_data(out)
}

pub fn inverse_abel_cached(areal: &Radiograph) -> Result<Radiograph> {
    inverse_abel(areal, cached_operator(areal.center() + 1)?.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_triangular_band() {
        let op = AbelOperator::new(6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if j + 1 < i {
                    assert_eq!(op.matrix()[[i, j]], 0.0);
                }
            }
        }
        assert!(op.apply(&[0.0; 5], 1.0).is_err());
    }

    #[test]
    fn cache_returns_same_operator() {
        let a = cached_operator(17).unwrap();
        let b = cached_operator(17).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn uniform_disc_profile() {
        // chord of a unit-density disc of radius 40 samples
        let radius = 40.0f64;
        let p: Vec<f64> = (0..64).map(|j| 2.0 * (radius * radius - (j * j) as f64).max(0.0).sqrt()).collect();
        let f = AbelOperator::new(64).unwrap().apply(&p, 1.0).unwrap();
        for (j, v) in f.iter().enumerate().take(36) {
            assert!((v - 1.0).abs() < 0.02, "sample {j}: {v}");
        }
    }
}
