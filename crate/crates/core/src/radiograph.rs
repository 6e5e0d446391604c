use ndarray::{Array2, Zip};

use crate::{Error, Result};

/// A square, odd-sized image on the detector grid.
///
/// The same type carries direct, scatter and total radiographs, areal density
/// maps and reconstructed density slices. `pixel_pitch` is in cm in the object
/// plane and the region-of-interest mask marks pixels whose centre lies within
/// `roi_radius` of the central pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Radiograph {
    data: Array2<f64>,
    pixel_pitch: f64,
    roi_radius: f64,
    roi_mask: Array2<bool>,
}

impl Radiograph {
    pub fn new(data: Array2<f64>, pixel_pitch: f64, roi_radius: f64) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols || rows % 2 == 0 {
            return Err(Error::InvalidInput(format!("radiograph must be square and odd-sized, got {rows}x{cols}")));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(Error::InvalidInput(format!("pixel pitch {pixel_pitch} must be > 0")));
        }
        if !(roi_radius > 0.0 && roi_radius.is_finite()) {
            return Err(Error::InvalidInput(format!("roi radius {roi_radius} must be > 0")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("radiograph contains non-finite pixels".into()));
        }
        let roi_mask = roi_mask(rows, pixel_pitch, roi_radius);
        Ok(Self { data, pixel_pitch, roi_radius, roi_mask })
    }

    pub fn constant(size: usize, value: f64, pixel_pitch: f64, roi_radius: f64) -> Result<Self> {
        Self::new(Array2::from_elem((size, size), value), pixel_pitch, roi_radius)
    }

    /// A radiograph on the same grid with new pixel values.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::GridMismatch {
                expected: format!("{:?}", self.data.dim()),
                found: format!("{:?}", data.dim()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("radiograph contains non-finite pixels".into()));
        }
        Ok(Self { data, pixel_pitch: self.pixel_pitch, roi_radius: self.roi_radius, roi_mask: self.roi_mask.clone() })
    }

    /// Pixelwise map onto the same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.mapv(f))
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn center(&self) -> usize {
        self.size() / 2
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn roi_radius(&self) -> f64 {
        self.roi_radius
    }

    pub fn roi_mask(&self) -> &Array2<bool> {
        &self.roi_mask
    }

    pub fn same_grid(&self, other: &Radiograph) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub(crate) fn check_same_grid(&self, other: &Radiograph) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: format!("{:?}", self.data.dim()),
                found: format!("{:?}", other.data.dim()),
            })
        }
    }

    /// Squared Frobenius distance, optionally restricted to the ROI mask.
    pub fn squared_distance(&self, other: &Radiograph, masked: bool) -> f64 {
        let mut acc = 0.0;
        Zip::from(&self.data).and(&other.data).and(&self.roi_mask).for_each(|&a, &b, &m| {
            if m || !masked {
                let d = a - b;
                acc += d * d;
            }
        });
        acc
    }

    pub fn squared_norm(&self, masked: bool) -> f64 {
        let mut acc = 0.0;
        Zip::from(&self.data).and(&self.roi_mask).for_each(|&a, &m| {
            if m || !masked {
                acc += a * a;
            }
        });
        acc
    }

    /// Round every pixel through `f32`, the precision of the on-disk container.
    pub fn quantized_f32(&self) -> Self {
        let data = self.data.mapv(|v| v as f32 as f64);
        Self { data, pixel_pitch: self.pixel_pitch, roi_radius: self.roi_radius, roi_mask: self.roi_mask.clone() }
    }
}

/// Pixels whose centre lies within `roi_radius` (cm) of the central pixel.
pub fn roi_mask(size: usize, pixel_pitch: f64, roi_radius: f64) -> Array2<bool> {
    let c = (size / 2) as f64;
    Array2::from_shape_fn((size, size), |(i, j)| {
        let di = i as f64 - c;
        let dj = j as f64 - c;
        pixel_pitch * (di * di + dj * dj).sqrt() <= roi_radius
    })
}
