//! 4× decimation and corner-aligned bilinear interpolation.

use ndarray::Array2;

use crate::{Error, Radiograph, Result};

pub const FACTOR: usize = 4;

/// Width-4 box centred on the kept sample: half weight on the outer taps.
const TAPS: [f64; 5] = [0.125, 0.25, 0.25, 0.25, 0.125];

pub fn coarse_size(fine: usize) -> Result<usize> {
    if fine < 5 || fine % FACTOR != 1 {
        return Err(Error::NotDownsamplable(fine));
    }
    Ok((fine - 1) / FACTOR + 1)
}

/// Keeps samples 0, 4, 8, … after the box prefilter; taps falling off the
/// image are dropped and the rest renormalised.
pub fn downsample4_array(data: &Array2<f64>) -> Result<Array2<f64>> {
    decimate(data, None)
}

/// Coarse pixels whose prefilter window touches `fine_mask`: exactly those
/// whose masked decimation depends only on masked fine pixels.
pub fn coarse_mask(fine_mask: &Array2<bool>) -> Result<Array2<bool>> {
    let (rows, cols) = fine_mask.dim();
    let m = coarse_size(rows)?;
    Ok(Array2::from_shape_fn((m, m), |(ci, cj)| {
        let span = |c: usize, len: usize| (FACTOR * c).saturating_sub(2)..(FACTOR * c + 3).min(len);
        span(ci, rows).any(|i| span(cj, cols).any(|j| fine_mask[[i, j]]))
    }))
}

/// As [`downsample4_array`] but only taps with `mask` set contribute.
///
/// A partially masked window is summarised by the weighted least-squares
/// plane through its masked taps, evaluated at the kept sample, so the coarse
/// value stays centred on its own pixel at the mask rim. A fully masked window
/// gives exactly the box average. Windows whose masked taps are collinear use
/// their weighted mean, and windows with no masked taps the unmasked average.
pub fn downsample4_masked(data: &Array2<f64>, mask: &Array2<bool>) -> Result<Array2<f64>> {
    decimate(data, Some(mask))
}

fn decimate(data: &Array2<f64>, mask: Option<&Array2<bool>>) -> Result<Array2<f64>> {
    let (rows, cols) = data.dim();
    if rows != cols {
        return Err(Error::InvalidInput("downsampling needs a square image".into()));
    }
    let m = coarse_size(rows)?;
    let mut out = Array2::zeros((m, m));
    for ci in 0..m {
        for cj in 0..m {
            let mut all = Moments::default();
            let mut masked = Moments::default();
            for (a, wa) in TAPS.iter().enumerate() {
                let Some(i) = (FACTOR * ci + a).checked_sub(2).filter(|&i| i < rows) else { continue };
                for (b, wb) in TAPS.iter().enumerate() {
                    let Some(j) = (FACTOR * cj + b).checked_sub(2).filter(|&j| j < cols) else { continue };
                    let (x, y, v) = (a as f64 - 2.0, b as f64 - 2.0, data[[i, j]]);
                    all.add(wa * wb, x, y, v);
                    if mask.is_none_or(|m| m[[i, j]]) {
                        masked.add(wa * wb, x, y, v);
                    }
                }
            }
            out[[ci, cj]] = match mask {
                None => all.mean(),
                Some(_) if masked.w == 0.0 => all.mean(),
                Some(_) => masked.plane_at_origin(),
            };
        }
    }
    Ok(out)
}

/// Weighted sums for a first-order fit `v ≈ c + gx·x + gy·y` over taps at
/// offsets `(x, y)` from the kept sample.
#[derive(Default)]
struct Moments {
    w: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
    v: f64,
    xv: f64,
    yv: f64,
}

impl Moments {
    fn add(&mut self, w: f64, x: f64, y: f64, v: f64) {
        self.w += w;
        self.x += w * x;
        self.y += w * y;
        self.xx += w * x * x;
        self.xy += w * x * y;
        self.yy += w * y * y;
        self.v += w * v;
        self.xv += w * x * v;
        self.yv += w * y * v;
    }

    fn mean(&self) -> f64 {
        self.v / self.w
    }

    /// Intercept of the weighted plane fit; the mean when the taps do not span a plane.
    fn plane_at_origin(&self) -> f64 {
        let a = [[self.w, self.x, self.y], [self.x, self.xx, self.xy], [self.y, self.xy, self.yy]];
        let det = det3(&a);
        if det.abs() <= 1e-9 * self.w.powi(3) {
            return self.mean();
        }
        // Cramer's rule for the intercept only.
        let num = det3(&[[self.v, self.x, self.y], [self.xv, self.xx, self.xy], [self.yv, self.xy, self.yy]]);
        num / det
    }
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Corner-aligned bilinear interpolation onto a `target × target` grid.
pub fn upsample_bilinear_array(data: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    let (m, cols) = data.dim();
    if m != cols || m < 2 || target < 2 {
        return Err(Error::InvalidInput("bilinear upsampling needs square grids of size >= 2".into()));
    }
    let scale = (m - 1) as f64 / (target - 1) as f64;
    let locate = |x: usize| {
        let pos = x as f64 * scale;
        let lo = (pos.floor() as usize).min(m - 2);
        (lo, pos - lo as f64)
    };
    let axis: Vec<(usize, f64)> = (0..target).map(locate).collect();
    Ok(Array2::from_shape_fn((target, target), |(i, j)| {
        let (i0, fi) = axis[i];
        let (j0, fj) = axis[j];
        let top = data[[i0, j0]] + fj * (data[[i0, j0 + 1]] - data[[i0, j0]]);
        let bottom = data[[i0 + 1, j0]] + fj * (data[[i0 + 1, j0 + 1]] - data[[i0 + 1, j0]]);
        top + fi * (bottom - top)
    }))
}

pub fn downsample4(r: &Radiograph) -> Result<Radiograph> {
    Radiograph::new(downsample4_array(r.data())?, r.pixel_pitch() * FACTOR as f64, r.roi_radius())
}

pub fn upsample_bilinear(r: &Radiograph, target: usize) -> Result<Radiograph> {
    let pitch = r.pixel_pitch() * (r.size() - 1) as f64 / (target - 1).max(1) as f64;
    Radiograph::new(upsample_bilinear_array(r.data(), target)?, pitch, r.roi_radius())
}
