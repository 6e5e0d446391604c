//! JSON model files; array-valued models reference a raw `f32` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KernelParams, KernelSign, ScatterModel};
use crate::container::{read_raw_f32, write_raw_f32};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ModelFile {
    SingleField {
        size: usize,
        data_file: String,
    },
    Convolutional {
        size: usize,
        kernel_file: String,
    },
    Parametric {
        sign: KernelSign,
        params: KernelParams,
    },
    #[serde(rename = "multikernel")]
    MultiKernel {
        sign: KernelSign,
        thresholds: Vec<f64>,
        regions: Vec<KernelParams>,
    },
}

/// Writes `<dir>/<stem>.json` (and `<stem>.f32` when needed); returns the JSON path.
pub fn save_model(model: &ScatterModel, dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let payload = format!("{stem}.f32");
    let file = match model {
        ScatterModel::SingleField { s_hat } => {
            write_raw_f32(&dir.join(&payload), s_hat)?;
            ModelFile::SingleField { size: s_hat.nrows(), data_file: payload }
        }
        ScatterModel::Convolutional { kernel } => {
            write_raw_f32(&dir.join(&payload), kernel)?;
            ModelFile::Convolutional { size: kernel.nrows(), kernel_file: payload }
        }
        ScatterModel::Parametric { params, sign } => ModelFile::Parametric { sign: *sign, params: *params },
        ScatterModel::MultiKernel { thresholds, regions, sign } => {
            ModelFile::MultiKernel { sign: *sign, thresholds: thresholds.clone(), regions: regions.clone() }
        }
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    Ok(path)
}

pub fn load_model(path: &Path) -> Result<ScatterModel> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(match file {
        ModelFile::SingleField { size, data_file } => {
            ScatterModel::SingleField { s_hat: read_raw_f32(&dir.join(data_file), size, size)? }
        }
        ModelFile::Convolutional { size, kernel_file } => {
            ScatterModel::Convolutional { kernel: read_raw_f32(&dir.join(kernel_file), size, size)? }
        }
        ModelFile::Parametric { sign, params } => ScatterModel::Parametric { params, sign },
        ModelFile::MultiKernel { sign, thresholds, regions } => {
            if regions.len() != thresholds.len() + 1 || thresholds.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidInput("multikernel file has inconsistent thresholds".into()));
            }
            ScatterModel::MultiKernel { thresholds, regions, sign }
        }
    })
}
