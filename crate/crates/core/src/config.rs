//! Declarative run configuration shared by every pipeline command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descatter::{DescatterOptions, Mode};
use crate::phantom::{Geometry, DEFAULT_OBJECT_RADIUS, DEFAULT_PALETTE};
use crate::physics::{
    read_table_csv, AttenuationTable, ScatterOracleParams, Spectrum, DEFAULT_MONO_ENERGY_MEV, DEFAULT_MONO_XI,
};
use crate::scatter_models::{FitOptions, ModelClass};
use crate::{Error, Result};

/// Source model.
///
/// Parsed from `mono:<xi>`, `poly:default`, or `poly:<spectrum.csv>,<attenuation.csv>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SpectrumSpec {
    Mono { xi: f64 },
    PolyDefault,
    PolyFiles { spectrum: PathBuf, attenuation: PathBuf },
}

impl std::str::FromStr for SpectrumSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::Config(format!("spectrum '{s}' is not mono:<xi>, poly:default or poly:<spectrum>,<attenuation>"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "mono" => {
                let xi: f64 = rest.parse().map_err(|_| bad())?;
                if !(xi > 0.0 && xi.is_finite()) {
                    return Err(bad());
                }
                Ok(Self::Mono { xi })
            }
            "poly" if rest == "default" => Ok(Self::PolyDefault),
            "poly" => {
                let (a, b) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::PolyFiles { spectrum: a.into(), attenuation: b.into() })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for SpectrumSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SpectrumSpec> for String {
    fn from(s: SpectrumSpec) -> String {
        s.to_string()
    }
}

impl std::fmt::Display for SpectrumSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Mono { xi } => write!(f, "mono:{xi}"),
            Self::PolyDefault => write!(f, "poly:default"),
            Self::PolyFiles { spectrum, attenuation } => {
                write!(f, "poly:{},{}", spectrum.display(), attenuation.display())
            }
        }
    }
}

impl SpectrumSpec {
    /// Spectrum and matching attenuation table; mono sources use a one-line table.
    pub fn load(&self) -> Result<(Spectrum, AttenuationTable)> {
        match self {
            Self::Mono { xi } => Ok((
                Spectrum::monoenergetic(DEFAULT_MONO_ENERGY_MEV)?,
                AttenuationTable::new("object", vec![DEFAULT_MONO_ENERGY_MEV], vec![*xi])?,
            )),
            Self::PolyDefault => {
                let s = Spectrum::default_bremsstrahlung();
                let a = AttenuationTable::synthetic("object", s.energies())?;
                Ok((s, a))
            }
            Self::PolyFiles { spectrum, attenuation } => {
                let (e, w) = read_table_csv(spectrum)?;
                let (ae, xi) = read_table_csv(attenuation)?;
                Ok((Spectrum::from_unnormalized(e, w)?, AttenuationTable::new("object", ae, xi)?))
            }
        }
    }

    pub fn mono_xi(&self) -> Option<f64> {
        match self {
            Self::Mono { xi } => Some(*xi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub dataset: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { dataset: 2024, noise: 17 }
    }
}

/// Train/test partition of the generated dataset; the test pairs are the last `test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

impl Default for Split {
    fn default() -> Self {
        Self { train: 89, test: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid_size: usize,
    pub roi_radius: f64,
    /// Pixel pitch in cm; framed automatically when absent.
    pub pixel_pitch: Option<f64>,
    pub palette: Vec<f64>,
    pub spectrum: SpectrumSpec,
    /// JSON file with scatter oracle parameters; built-in defaults when absent.
    pub oracle: Option<PathBuf>,
    pub model_class: ModelClass,
    pub mode: Mode,
    pub iterations: usize,
    pub nn_mask: bool,
    pub seeds: Seeds,
    pub split: Split,
    pub output: PathBuf,
    pub lut_size: usize,
    pub fit: FitOptions,
    pub neighbor_counts: Vec<usize>,
    pub noise_sigmas: Vec<f64>,
    pub scatter_scales: Vec<f64>,
    /// Shell density offsets (g/cm³) for the scatter-scale training set.
    pub density_offsets: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_size: 65,
            roi_radius: DEFAULT_OBJECT_RADIUS,
            pixel_pitch: None,
            palette: DEFAULT_PALETTE.to_vec(),
            spectrum: SpectrumSpec::Mono { xi: DEFAULT_MONO_XI },
            oracle: None,
            model_class: ModelClass::Convolutional,
            mode: Mode::Local { g: 3 },
            iterations: 10,
            nn_mask: true,
            seeds: Seeds::default(),
            split: Split::default(),
            output: PathBuf::from("out"),
            lut_size: crate::recon::DEFAULT_LUT_SIZE,
            fit: FitOptions::default(),
            neighbor_counts: vec![1, 2, 3, 4, 5],
            noise_sigmas: vec![0.002, 0.005, 0.01, 0.02, 0.05],
            scatter_scales: vec![1.0, 1.5, 2.0],
            density_offsets: vec![-2.0, -1.0, 1.0, 2.0],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dataset_size(&self) -> usize {
        self.split.train + self.split.test
    }

    pub fn geometry(&self) -> Result<Geometry> {
        match self.pixel_pitch {
            Some(p) => Geometry::with_pitch(self.grid_size, p, self.roi_radius),
            None => Geometry::new(self.grid_size, self.roi_radius),
        }
    }

    pub fn oracle_params(&self) -> Result<ScatterOracleParams> {
        let params = match &self.oracle {
            None => ScatterOracleParams::default(),
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        params.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(params)
    }

    pub fn descatter_options(&self) -> DescatterOptions {
        DescatterOptions {
            iterations: self.iterations,
            mode: self.mode,
            nn_mask: self.nn_mask,
            fit: self.fit,
            ..Default::default()
        }
    }

    /// Checks every field and that referenced files exist. Errors are [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid_size % 4 != 1 {
            return bad(format!("grid size {} must be 1 mod 4", self.grid_size));
        }
        self.geometry().map_err(|e| Error::Config(e.to_string()))?;
        if self.split.train == 0 || self.split.test == 0 {
            return bad("train and test splits must both be non-empty".into());
        }
        if self.palette.is_empty() || self.palette.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("palette must hold positive densities".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if let Mode::Local { g } = self.mode {
            if g == 0 || g > self.split.train {
                return bad(format!("local mode needs 1 <= G <= {} training pairs", self.split.train));
            }
        }
        if self.neighbor_counts.contains(&0) {
            return bad("neighbour counts must be >= 1".into());
        }
        if self.lut_size < 2 {
            return bad("lut_size must be >= 2".into());
        }
        if self.noise_sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if self.scatter_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("scatter scales must be positive".into());
        }
        if self.density_offsets.iter().any(|s| !s.is_finite()) {
            return bad("density offsets must be finite".into());
        }
        if let SpectrumSpec::PolyFiles { spectrum, attenuation } = &self.spectrum {
            for p in [spectrum, attenuation] {
                if !p.is_file() {
                    return bad(format!("{} does not exist", p.display()));
                }
            }
        }
        self.spectrum.load().map_err(|e| Error::Config(e.to_string()))?;
        self.oracle_params()?;
        Ok(())
    }

    /// SHA-256 (hex) of the canonical JSON form plus the resolved oracle
    /// parameters. The output directory is excluded, so reruns into another
    /// directory carry the same hash.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self { output: PathBuf::new(), ..self.clone() };
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&canonical)?.as_bytes());
        h.update(serde_json::to_string(&self.oracle_params()?)?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}
