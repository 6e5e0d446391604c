//! Lookup-table inversion of the polyenergetic transmission `g(ρ_A)`.

use serde::{Deserialize, Serialize};

use crate::physics::{transmission, AttenuationTable, Spectrum};
use crate::{Error, Radiograph, Result};

pub const DEFAULT_LUT_SIZE: usize = 4096;
pub const DEFAULT_NUISANCE_LEVELS: usize = 64;

/// `g` sampled at `L` evenly spaced areal densities on `[0, rho_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyLut {
    pub rho_max: f64,
    pub g: Vec<f64>,
}

impl PolyLut {
    fn from_values(rho_max: f64, g: Vec<f64>) -> Result<Self> {
        if g.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::NonMonotone);
        }
        Ok(Self { rho_max, g })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.rho_max / (self.g.len() - 1) as f64
    }

    pub fn rho_at(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    /// Areal density for transmission `d`; `None` when `d` lies below the table.
    pub fn invert(&self, d: f64) -> Option<f64> {
        invert_decreasing(self.g.len(), |k| self.g[k], d, self.spacing())
    }
}

/// Binary search on a strictly decreasing positive table, interpolating
/// linearly in `ln g` between the bracketing entries (exact for one line).
fn invert_decreasing(len: usize, g: impl Fn(usize) -> f64, d: f64, spacing: f64) -> Option<f64> {
    if d >= g(0) {
        return Some(0.0);
    }
    if d < g(len - 1) {
        return None;
    }
    let (mut lo, mut hi) = (0, len - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if g(mid) >= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (llo, lhi) = (g(lo).ln(), g(hi).ln());
    Some((lo as f64 + (llo - d.ln()) / (llo - lhi)) * spacing)
}

fn check_table_args(rho_max: f64, size: usize) -> Result<()> {
    if !(rho_max > 0.0 && rho_max.is_finite()) || size < 2 {
        return Err(Error::InvalidInput("lookup table needs rho_max > 0 and at least two samples".into()));
    }
    Ok(())
}

pub fn build_poly_lut(spectrum: &Spectrum, atten: &AttenuationTable, rho_max: f64, size: usize) -> Result<PolyLut> {
    check_table_args(rho_max, size)?;
    let lines = atten.lines(spectrum)?;
    let spacing = rho_max / (size - 1) as f64;
    PolyLut::from_values(rho_max, (0..size).map(|k| transmission(&lines, k as f64 * spacing)).collect())
}

/// One table per evenly spaced nuisance areal-density level on
/// `[0, nuisance_max]`; lookups interpolate bilinearly in both densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceLut {
    pub nuisance_max: f64,
    pub levels: Vec<PolyLut>,
}

impl NuisanceLut {
    pub fn build(
        spectrum: &Spectrum,
        atten: &AttenuationTable,
        rho_max: f64,
        size: usize,
        nuisance_atten: &AttenuationTable,
        nuisance_max: f64,
        levels: usize,
    ) -> Result<Self> {
        check_table_args(rho_max, size)?;
        if !(nuisance_max >= 0.0 && nuisance_max.is_finite()) || levels < 2 {
            return Err(Error::InvalidInput("nuisance table needs nuisance_max >= 0 and at least two levels".into()));
        }
        let lines = atten.lines(spectrum)?;
        let nuisance_lines = nuisance_atten.lines(spectrum)?;
        let spacing = rho_max / (size - 1) as f64;
        let tables = (0..levels)
            .map(|q| {
                let eta = nuisance_max * q as f64 / (levels - 1) as f64;
                let g = (0..size)
                    .map(|k| {
                        let rho = k as f64 * spacing;
                        lines
                            .iter()
                            .zip(&nuisance_lines)
                            .fold(0.0, |acc, (&(w, xi), &(_, xe))| acc + w * (-xi * rho - xe * eta).exp())
                    })
                    .collect();
                PolyLut::from_values(rho_max, g)
            })
            .collect::<Result<_>>()?;
        Ok(Self { nuisance_max, levels: tables })
    }

    pub fn invert(&self, d: f64, eta: f64) -> Option<f64> {
        let q_max = self.levels.len() - 1;
        let pos = if self.nuisance_max > 0.0 { (eta / self.nuisance_max).clamp(0.0, 1.0) * q_max as f64 } else { 0.0 };
        let q = (pos.floor() as usize).min(q_max - 1);
        let w = pos - q as f64;
        let (a, b) = (&self.levels[q].g, &self.levels[q + 1].g);
        let first = &self.levels[0];
        invert_decreasing(first.len(), |k| (1.0 - w) * a[k] + w * b[k], d, first.spacing())
    }
}

/// Areal density map and the number of pixels clamped to `rho_max`.
pub fn invert_poly(d: &Radiograph, lut: &PolyLut) -> Result<(Radiograph, usize)> {
    let mut clamped = 0;
    let out = d.data().mapv(|v| {
        lut.invert(v).unwrap_or_else(|| {
            clamped += 1;
            lut.rho_max
        })
    });
    if clamped > 0 {
        log::warn!("{clamped} pixels fell below the lookup table and were clamped to rho_max");
    }
    Ok((d.with_data(out)?, clamped))
}

pub fn invert_poly_with_nuisance(
    d: &Radiograph,
    nuisance: &Radiograph,
    lut: &NuisanceLut,
) -> Result<(Radiograph, usize)> {
    d.check_same_grid(nuisance)?;
    let mut clamped = 0;
    let rho_max = lut.levels[0].rho_max;
    let out = ndarray::Zip::from(d.data()).and(nuisance.data()).map_collect(|&v, &eta| {
        lut.invert(v, eta).unwrap_or_else(|| {
            clamped += 1;
            rho_max
        })
    });
    if clamped > 0 {
        log::warn!("{clamped} pixels fell below the lookup table and were clamped to rho_max");
    }
    Ok((d.with_data(out)?, clamped))
}
