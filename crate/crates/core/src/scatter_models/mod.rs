//! Scatter model classes: single field, free-form convolutional, parametric
//! Gaussian-pair kernel and multikernel. Models live on the 4× downsampled
//! grid and work on inputs normalised by training-set Frobenius norms.

mod conv;
mod fit;
mod io;
mod kernel;
mod kernel_fit;
pub mod lbfgs;
mod resample;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use conv::{convolve_direct, Conv2d};
pub use fit::{fit_convolutional, fit_single_field, CgOptions, CgReport};
pub use io::{load_model, save_model};
pub use kernel::{gaussian_pair_kernel, nonlinearity, nonlinearity_array, potential, KernelParams, LOG_CLAMP};
pub use kernel_fit::{
    fit_multikernel, fit_parametric, params_to_theta, partition_thresholds, region_of, theta_to_params, KernelObjective,
};
pub use lbfgs::{LbfgsOptions, LbfgsReport};
pub use resample::{
    coarse_mask, coarse_size, downsample4, downsample4_array, downsample4_masked, upsample_bilinear,
    upsample_bilinear_array,
};

use crate::{Error, Radiograph, Result};

/// Overall sign applied to Gaussian-pair kernel terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSign {
    /// `s = -k ∗ f(d)`; with `β = 0` this predicts `k ∗ d^α ≥ 0`.
    #[default]
    Negative,
    Positive,
}

impl KernelSign {
    pub fn factor(self) -> f64 {
        match self {
            Self::Negative => -1.0,
            Self::Positive => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScatterModel {
    /// Normalised coarse scatter returned for every input.
    SingleField {
        s_hat: Array2<f64>,
    },
    /// `(2m-1) × (2m-1)` kernel applied to `f_{1,1}(d)`.
    Convolutional {
        kernel: Array2<f64>,
    },
    Parametric {
        params: KernelParams,
        sign: KernelSign,
    },
    /// Region `k` holds pixels with `thresholds[k-1] <= -ln d < thresholds[k]`.
    MultiKernel {
        thresholds: Vec<f64>,
        regions: Vec<KernelParams>,
        sign: KernelSign,
    },
}

impl ScatterModel {
    pub fn class(&self) -> ModelClass {
        match self {
            Self::SingleField { .. } => ModelClass::SingleField,
            Self::Convolutional { .. } => ModelClass::Convolutional,
            Self::Parametric { .. } => ModelClass::Parametric,
            Self::MultiKernel { .. } => ModelClass::MultiKernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    SingleField,
    Convolutional,
    Parametric,
    MultiKernel,
}

impl ModelClass {
    pub const ALL: [ModelClass; 4] = [Self::SingleField, Self::Convolutional, Self::Parametric, Self::MultiKernel];

    pub fn name(self) -> &'static str {
        match self {
            Self::SingleField => "single_field",
            Self::Convolutional => "convolutional",
            Self::Parametric => "parametric",
            Self::MultiKernel => "multikernel",
        }
    }
}

impl std::fmt::Display for ModelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s || (s == "multi_kernel" && *c == Self::MultiKernel))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model class '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub cg: CgOptions,
    pub lbfgs: LbfgsOptions,
    /// Number of multikernel regions.
    pub kernels: usize,
    pub sign: KernelSign,
    pub init: KernelParams,
    /// Rescale kernel parameters by the square root of the Gauss-Newton
    /// diagonal at the initial point before running L-BFGS.
    pub scale_variables: bool,
    /// Replace the initial amplitudes `A, B` by their least squares optimum
    /// for the initial widths and exponents before running L-BFGS.
    pub prefit_amplitudes: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            cg: CgOptions::default(),
            lbfgs: LbfgsOptions::default(),
            kernels: 3,
            sign: KernelSign::Negative,
            init: KernelParams::default(),
            scale_variables: true,
            prefit_amplitudes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub direct_norm: f64,
    pub scatter_norm: f64,
}

impl NormalizationConstants {
    pub fn new(direct_norm: f64, scatter_norm: f64) -> Result<Self> {
        for v in [direct_norm, scatter_norm] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("normalisation constant {v} must be finite and > 0")));
            }
        }
        Ok(Self { direct_norm, scatter_norm })
    }

    /// Frobenius norms over every pixel of every image; a zero norm maps to 1.
    pub fn from_pairs(pairs: &[(Radiograph, Radiograph)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let norm = |sq: f64| if sq > 0.0 { sq.sqrt() } else { 1.0 };
        let direct: f64 = pairs.iter().map(|(d, _)| d.squared_norm(false)).sum();
        let scatter: f64 = pairs.iter().map(|(_, s)| s.squared_norm(false)).sum();
        Self::new(norm(direct), norm(scatter))
    }
}

/// Coarse grid shared by all inputs of a fit: size, ROI mask and FFT plans.
#[derive(Debug)]
pub struct CoarseGrid {
    fine_size: usize,
    size: usize,
    mask: Array2<bool>,
    conv: Conv2d,
}

impl CoarseGrid {
    pub fn new(fine: &Radiograph) -> Result<Self> {
        let size = coarse_size(fine.size())?;
        Ok(Self {
            fine_size: fine.size(),
            size,
            mask: resample::coarse_mask(fine.roi_mask())?,
            conv: Conv2d::new(size),
        })
    }

    pub fn fine_size(&self) -> usize {
        self.fine_size
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn masked_sq_norm(&self, a: &Array2<f64>) -> f64 {
        a.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum()
    }
}

/// A direct radiograph on the coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseInput {
    /// Downsampled direct divided by the direct normalisation constant.
    pub direct: Array2<f64>,
    /// `-ln` of the downsampled, unnormalised direct.
    pub attenuation: Array2<f64>,
}

impl CoarseInput {
    pub fn new(d: &Radiograph, norms: &NormalizationConstants) -> Result<Self> {
        let raw = downsample4_array(d.data())?;
        let direct = downsample4_array(&d.data().mapv(|v| v / norms.direct_norm))?;
        Ok(Self { direct, attenuation: raw.mapv(|v| -v.max(LOG_CLAMP).ln()) })
    }
}

/// A training pair on the coarse grid; scatter is ROI-masked before decimation.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePair {
    pub input: CoarseInput,
    pub scatter: Array2<f64>,
}

impl CoarsePair {
    pub fn new(d: &Radiograph, s: &Radiograph, norms: &NormalizationConstants) -> Result<Self> {
        d.check_same_grid(s)?;
        let scatter = downsample4_masked(&s.data().mapv(|v| v / norms.scatter_norm), d.roi_mask())?;
        Ok(Self { input: CoarseInput::new(d, norms)?, scatter })
    }
}

/// The pairs a model is fitted on.
#[derive(Debug, Clone)]
pub struct FitData<'a> {
    pub grid: &'a CoarseGrid,
    pub pairs: Vec<&'a CoarsePair>,
}

impl<'a> FitData<'a> {
    pub fn new(grid: &'a CoarseGrid, pairs: Vec<&'a CoarsePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if pairs.iter().any(|p| p.scatter.nrows() != grid.size() || p.input.direct.nrows() != grid.size()) {
            return Err(Error::GridMismatch {
                expected: grid.size().to_string(),
                found: "pair of another size".into(),
            });
        }
        Ok(Self { grid, pairs })
    }
}

pub fn fit_model(class: ModelClass, data: &FitData<'_>, opts: &FitOptions) -> Result<ScatterModel> {
    Ok(match class {
        ModelClass::SingleField => fit_single_field(data)?,
        ModelClass::Convolutional => fit_convolutional(data, &opts.cg)?.0,
        ModelClass::Parametric => fit_parametric(data, opts)?.0,
        ModelClass::MultiKernel => fit_multikernel(data, opts.kernels, opts)?.0,
    })
}

/// Normalised scatter predicted on the coarse grid.
pub fn predict_coarse(model: &ScatterModel, grid: &CoarseGrid, input: &CoarseInput) -> Result<Array2<f64>> {
    let m = grid.size();
    let mismatch = |found: usize| Error::GridMismatch { expected: m.to_string(), found: found.to_string() };
    if input.direct.nrows() != m {
        return Err(mismatch(input.direct.nrows()));
    }
    match model {
        ScatterModel::SingleField { s_hat } => {
            if s_hat.nrows() != m {
                return Err(mismatch(s_hat.nrows()));
            }
            Ok(s_hat.clone())
        }
        ScatterModel::Convolutional { kernel } => {
            if kernel.nrows() != 2 * m - 1 {
                return Err(mismatch(kernel.nrows().div_ceil(2)));
            }
            Ok(grid.conv().convolve(kernel, &nonlinearity_array(&input.direct, 1.0, 1.0)))
        }
        ScatterModel::Parametric { params, sign } => Ok(kernel_fit::predict(grid, input, &[], &[*params], *sign)),
        ScatterModel::MultiKernel { thresholds, regions, sign } => {
            Ok(kernel_fit::predict(grid, input, thresholds, regions, *sign))
        }
    }
}

/// Full-resolution scatter estimate for direct radiograph `d`.
pub fn apply_model(model: &ScatterModel, d: &Radiograph, norms: &NormalizationConstants) -> Result<Radiograph> {
    let grid = CoarseGrid::new(d)?;
    apply_model_on(model, &grid, d, norms)
}

/// As [`apply_model`] with a prebuilt grid for `d`'s geometry.
pub fn apply_model_on(
    model: &ScatterModel,
    grid: &CoarseGrid,
    d: &Radiograph,
    norms: &NormalizationConstants,
) -> Result<Radiograph> {
    if d.size() != grid.fine_size() {
        return Err(Error::GridMismatch { expected: grid.fine_size().to_string(), found: d.size().to_string() });
    }
    let coarse = predict_coarse(model, grid, &CoarseInput::new(d, norms)?)?;
    let fine = upsample_bilinear_array(&coarse.mapv(|v| v * norms.scatter_norm), d.size())?;
    d.with_data(fine)
}
