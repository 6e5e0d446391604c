//! Forward radiographic models: mono- and polyenergetic Beer-Lambert
//! attenuation of flat-field-normalised beams, the synthetic scatter oracle
//! and additive noise.

mod noise;
mod oracle;
mod tables;

pub use noise::add_awgn;
pub use oracle::{max_scatter_to_direct, simulate_scatter, OracleRegion, ScatterOracleParams};
pub use tables::{read_table_csv, write_table_csv};

use serde::{Deserialize, Serialize};

use crate::{Error, Radiograph, Result};

/// Bremsstrahlung endpoint of the default spectrum, MeV.
pub const DEFAULT_ENDPOINT_MEV: f64 = 19.4;
/// Energy of the default monoenergetic source, MeV.
pub const DEFAULT_MONO_ENERGY_MEV: f64 = 1.5;
/// Mass attenuation at the monoenergetic source energy, cm²/g.
pub const DEFAULT_MONO_XI: f64 = 0.05;

const WEIGHT_SUM_TOL: f64 = 1e-9;
const ENERGY_MATCH_TOL: f64 = 1e-9;

/// Discrete source spectrum: energies in MeV and probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    energies: Vec<f64>,
    weights: Vec<f64>,
}

impl Spectrum {
    pub fn new(energies: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_energies(&energies)?;
        if weights.len() != energies.len() {
            return Err(Error::InvalidInput("spectrum needs one weight per energy".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("spectrum weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("spectrum weights sum to {sum}, expected 1")));
        }
        Ok(Self { energies, weights })
    }

    /// Normalises arbitrary non-negative weights to sum to one.
    pub fn from_unnormalized(energies: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidInput("spectrum weights must have a positive sum".into()));
        }
        Self::new(energies, weights.iter().map(|w| w / sum).collect())
    }

    pub fn monoenergetic(energy: f64) -> Result<Self> {
        Self::new(vec![energy], vec![1.0])
    }

    /// Eight-bin triangular profile falling linearly to zero at the endpoint.
    pub fn bremsstrahlung(endpoint: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(endpoint > 0.0) {
            return Err(Error::InvalidInput("bremsstrahlung needs bins >= 1 and endpoint > 0".into()));
        }
        let width = endpoint / bins as f64;
        let energies: Vec<f64> = (0..bins).map(|e| (e as f64 + 0.5) * width).collect();
        let weights = energies.iter().map(|e| endpoint - e).collect();
        Self::from_unnormalized(energies, weights)
    }

    pub fn default_bremsstrahlung() -> Self {
        Self::bremsstrahlung(DEFAULT_ENDPOINT_MEV, 8).expect("default spectrum is valid")
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

/// Mass attenuation coefficients ξ(E) of one material, cm²/g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationTable {
    pub material_id: String,
    energies: Vec<f64>,
    xi: Vec<f64>,
}

impl AttenuationTable {
    pub fn new(material_id: impl Into<String>, energies: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        check_energies(&energies)?;
        if xi.len() != energies.len() {
            return Err(Error::InvalidInput("attenuation table needs one value per energy".into()));
        }
        if xi.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("mass attenuation coefficients must be positive".into()));
        }
        Ok(Self { material_id: material_id.into(), energies, xi })
    }

    /// Smooth stand-in for tabulated data: ξ(E) = a·E^-0.6 + c with
    /// ξ(1.5 MeV) = 0.05 cm²/g.
    pub fn synthetic(material_id: impl Into<String>, energies: &[f64]) -> Result<Self> {
        let xi = energies.iter().map(|&e| synthetic_xi(e)).collect();
        Self::new(material_id, energies.to_vec(), xi)
    }

    /// Copy with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.material_id.clone(), self.energies.clone(), self.xi.iter().map(|x| x * factor).collect())
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn values(&self) -> &[f64] {
        &self.xi
    }

    /// Coefficient at exactly `energy`; no interpolation or extrapolation.
    pub fn xi_at(&self, energy: f64) -> Result<f64> {
        self.energies
            .iter()
            .position(|&e| (e - energy).abs() <= ENERGY_MATCH_TOL * energy.abs().max(1.0))
            .map(|i| self.xi[i])
            .ok_or(Error::EnergyMismatch(energy))
    }

    /// `(weight, ξ)` for every energy bin of `spectrum`.
    pub fn lines(&self, spectrum: &Spectrum) -> Result<Vec<(f64, f64)>> {
        spectrum.energies.iter().zip(&spectrum.weights).map(|(&e, &w)| Ok((w, self.xi_at(e)?))).collect()
    }
}

pub fn synthetic_xi(energy: f64) -> f64 {
    const OFFSET: f64 = 0.02;
    let scale = (DEFAULT_MONO_XI - OFFSET) * DEFAULT_MONO_ENERGY_MEV.powf(0.6);
    scale * energy.powf(-0.6) + OFFSET
}

fn check_energies(energies: &[f64]) -> Result<()> {
    if energies.is_empty() {
        return Err(Error::InvalidInput("energy grid is empty".into()));
    }
    if energies.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidInput("energies must be positive".into()));
    }
    if energies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("energies must be strictly increasing".into()));
    }
    Ok(())
}

/// Spectrum-weighted transmission Σ_e w_e·exp(-ξ_e·ρ_A).
pub fn transmission(lines: &[(f64, f64)], areal: f64) -> f64 {
    lines.iter().fold(0.0, |acc, &(w, xi)| acc + w * (-xi * areal).exp())
}

/// Normalised monoenergetic direct radiograph exp(-ξ·ρ_A).
pub fn direct_mono(areal: &Radiograph, xi: f64) -> Result<Radiograph> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidInput(format!("mass attenuation {xi} must be > 0")));
    }
    areal.map(|rho| (-xi * rho).exp())
}

/// Normalised polyenergetic direct radiograph.
pub fn direct_poly(areal: &Radiograph, spectrum: &Spectrum, atten: &AttenuationTable) -> Result<Radiograph> {
    let lines = atten.lines(spectrum)?;
    areal.map(|rho| transmission(&lines, rho))
}

/// Polyenergetic direct radiograph through the object and a known nuisance
/// object (for example a collimator) with its own attenuation table.
pub fn direct_poly_with_nuisance(
    areal: &Radiograph,
    nuisance_areal: &Radiograph,
    spectrum: &Spectrum,
    atten: &AttenuationTable,
    nuisance_atten: &AttenuationTable,
) -> Result<Radiograph> {
    areal.check_same_grid(nuisance_areal)?;
    let lines = atten.lines(spectrum)?;
    let nuisance_lines = nuisance_atten.lines(spectrum)?;
    let data = ndarray::Zip::from(areal.data()).and(nuisance_areal.data()).map_collect(|&rho, &eta| {
        lines
            .iter()
            .zip(&nuisance_lines)
            .fold(0.0, |acc, (&(w, xi), &(_, xi_eta))| acc + w * (-xi * rho - xi_eta * eta).exp())
    });
    areal.with_data(data)
}
