use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{nonlinearity_array, FitData, ScatterModel};
use crate::{Error, Result};

/// Pixelwise mean of the normalised coarse scatter images.
pub fn fit_single_field(data: &FitData<'_>) -> Result<ScatterModel> {
    let m = data.grid.size();
    let mut sum = Array2::zeros((m, m));
    for p in &data.pairs {
        sum += &p.scatter;
    }
    Ok(ScatterModel::SingleField { s_hat: sum / data.pairs.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgOptions {
    pub iterations: usize,
    /// Floor, relative to its peak, of the power spectrum inverted by the
    /// kernel-space preconditioner; `None` runs plain CGLS.
    pub preconditioner_floor: Option<f64>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { iterations: 40, preconditioner_floor: Some(1e-3) }
    }
}

/// Masked objective `Σ_t ‖mask ⊙ (k ∗ x_t − s_t)‖²` at every CG iterate,
/// starting from `k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub objective: Vec<f64>,
}

fn apply_mask(a: &mut Array2<f64>, mask: &Array2<bool>) {
    a.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = 0.0;
        }
    });
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares kernel by preconditioned conjugate gradients on the normal
/// equations, starting from the zero kernel.
///
/// The preconditioner is the kernel-window restriction of a circulant filter
/// inverting the summed power spectrum of the inputs, so it is symmetric
/// positive semidefinite and the residual norm is nonincreasing.
pub fn fit_convolutional(data: &FitData<'_>, opts: &CgOptions) -> Result<(ScatterModel, CgReport)> {
    let grid = data.grid;
    let conv = grid.conv();
    let mask = grid.mask();
    let spectra: Vec<Vec<Complex64>> =
        data.pairs.par_iter().map(|p| conv.image_spectrum(&nonlinearity_array(&p.input.direct, 1.0, 1.0))).collect();

    let filter: Option<Vec<f64>> = opts.preconditioner_floor.map(|floor| {
        let mut power = vec![0.0; spectra[0].len()];
        for xs in &spectra {
            power.iter_mut().zip(xs).for_each(|(p, x)| *p += x.norm_sqr());
        }
        let peak = power.iter().fold(0.0f64, |m, v| m.max(*v));
        power.iter().map(|p| 1.0 / (p + floor * peak)).collect()
    });
    let precondition = |g: &Array2<f64>| -> Array2<f64> {
        match &filter {
            None => g.clone(),
            Some(h) => {
                let mut spec = conv.kernel_spectrum(g);
                spec.iter_mut().zip(h).for_each(|(a, w)| *a *= w);
                conv.kernel_from_spectrum(spec)
            }
        }
    };
    let forward = |k: &Array2<f64>| -> Vec<Array2<f64>> {
        let ks = conv.kernel_spectrum(k);
        spectra
            .par_iter()
            .map(|xs| {
                let prod = xs.iter().zip(&ks).map(|(a, b)| a * b).collect();
                let mut out = conv.output_from_spectrum(prod);
                apply_mask(&mut out, mask);
                out
            })
            .collect()
    };
    let adjoint = |rs: &[Array2<f64>]| -> Array2<f64> {
        let parts: Vec<Vec<Complex64>> = rs
            .par_iter()
            .zip(&spectra)
            .map(|(r, xs)| {
                let mut spec = conv.residual_spectrum(r);
                spec.iter_mut().zip(xs).for_each(|(a, b)| *a *= b.conj());
                spec
            })
            .collect();
        let mut total = parts[0].clone();
        for part in &parts[1..] {
            total.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        conv.kernel_from_spectrum(total)
    };

    let ksize = conv.kernel_size();
    let mut kernel = Array2::zeros((ksize, ksize));
    let mut residual: Vec<Array2<f64>> = data
        .pairs
        .iter()
        .map(|p| {
            let mut s = p.scatter.clone();
            apply_mask(&mut s, mask);
            s
        })
        .collect();
    let mut objective = vec![residual.iter().map(sq).sum::<f64>()];
    if objective[0] == 0.0 {
        return Ok((ScatterModel::Convolutional { kernel }, CgReport { objective }));
    }
    let mut s = adjoint(&residual);
    if sq(&s) == 0.0 {
        return Err(Error::Singular("convolutional fit: scatter potential vanishes on every training input".into()));
    }
    let mut z = precondition(&s);
    let mut gamma = dot(&s, &z);
    let mut p = z.clone();
    for _ in 0..opts.iterations {
        if !(gamma > 0.0) {
            break;
        }
        let q = forward(&p);
        let qq: f64 = q.iter().map(sq).sum();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        kernel.scaled_add(alpha, &p);
        for (r, qi) in residual.iter_mut().zip(&q) {
            r.scaled_add(-alpha, qi);
        }
        objective.push(residual.iter().map(sq).sum());
        s = adjoint(&residual);
        z = precondition(&s);
        let gamma_new = dot(&s, &z);
        p = &z + &(p * (gamma_new / gamma));
        gamma = gamma_new;
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("convolutional kernel".into()));
    }
    Ok((ScatterModel::Convolutional { kernel }, CgReport { objective }))
}
