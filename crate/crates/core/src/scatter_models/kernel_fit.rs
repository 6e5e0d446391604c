//! Gaussian-pair kernel models. The parametric model is the one-region case
//! of the multikernel model and shares its code path.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::kernel::{kernel_with_partials, potential_partials, KernelWithPartials};
use super::lbfgs::{minimize, LbfgsReport};
use super::{CoarseGrid, CoarseInput, CoarsePair, FitData, FitOptions, KernelParams, KernelSign, ScatterModel};
use crate::stats::quantile_sorted;
use crate::Result;

/// Entries per region in the optimisation vector: `[A, B, ln σ1, ln σ2, α, β]`.
pub const PARAMS_PER_REGION: usize = 6;

pub fn params_to_theta(regions: &[KernelParams]) -> Vec<f64> {
    regions.iter().flat_map(|p| [p.a, p.b, p.sigma1.ln(), p.sigma2.ln(), p.alpha, p.beta]).collect()
}

pub fn theta_to_params(theta: &[f64]) -> Vec<KernelParams> {
    theta
        .chunks_exact(PARAMS_PER_REGION)
        .map(|c| KernelParams { a: c[0], b: c[1], sigma1: c[2].exp(), sigma2: c[3].exp(), alpha: c[4], beta: c[5] })
        .collect()
}

/// 0-based region of a pixel with attenuation `-ln d`.
pub fn region_of(thresholds: &[f64], attenuation: f64) -> usize {
    thresholds.partition_point(|&t| t <= attenuation)
}

/// Quantiles `k/K` of the attenuation over ROI pixels of all pairs, made
/// non-negative and strictly increasing.
pub fn partition_thresholds(data: &FitData<'_>, regions: usize) -> Vec<f64> {
    if regions <= 1 {
        return Vec::new();
    }
    let mask = data.grid.mask();
    let mut values: Vec<f64> = data
        .pairs
        .iter()
        .flat_map(|p| p.input.attenuation.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v))
        .collect();
    values.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(regions - 1);
    for k in 1..regions {
        let mut t = quantile_sorted(&values, k as f64 / regions as f64).max(0.0);
        if let Some(&prev) = out.last() {
            if t <= prev {
                t = prev + 1e-12 * prev.abs().max(1.0);
            }
        }
        out.push(t);
    }
    out
}

fn region_map(attenuation: &Array2<f64>, thresholds: &[f64]) -> Array2<usize> {
    attenuation.mapv(|a| region_of(thresholds, a))
}

/// Masked squared error of a multikernel prediction as a function of the
/// stacked region parameters, with its analytic gradient.
pub struct KernelObjective<'a> {
    grid: &'a CoarseGrid,
    pairs: Vec<&'a CoarsePair>,
    regions_of: Vec<Array2<usize>>,
    regions: usize,
    sign: f64,
}

struct PairTerms {
    value: f64,
    gradient: Vec<f64>,
}

impl<'a> KernelObjective<'a> {
    pub fn new(data: &FitData<'a>, thresholds: &[f64], sign: KernelSign) -> Self {
        let regions_of = data.pairs.iter().map(|p| region_map(&p.input.attenuation, thresholds)).collect();
        Self {
            grid: data.grid,
            pairs: data.pairs.clone(),
            regions_of,
            regions: thresholds.len() + 1,
            sign: sign.factor(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.regions * PARAMS_PER_REGION
    }

    /// Number of ROI pixels per region over all pairs.
    pub fn region_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.regions];
        for map in &self.regions_of {
            for (&k, &m) in map.iter().zip(self.grid.mask()) {
                if m {
                    counts[k] += 1;
                }
            }
        }
        counts
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_and_gradient(theta).0
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.dimension(), "parameter vector length");
        let params = theta_to_params(theta);
        let conv = self.grid.conv();
        let kernels: Vec<KernelWithPartials> =
            params.iter().map(|p| kernel_with_partials(p, conv.kernel_size())).collect();
        let kernel_spectra: Vec<Vec<Complex64>> = kernels.iter().map(|k| conv.kernel_spectrum(&k.kernel)).collect();

        let terms: Vec<PairTerms> = self
            .pairs
            .par_iter()
            .zip(&self.regions_of)
            .map(|(pair, map)| self.pair_terms(pair, map, &params, &kernels, &kernel_spectra))
            .collect();
        let mut value = 0.0;
        let mut gradient = vec![0.0; self.dimension()];
        for t in &terms {
            value += t.value;
            gradient.iter_mut().zip(&t.gradient).for_each(|(g, v)| *g += v);
        }
        (value, gradient)
    }

    /// Squared masked norms of the prediction's partial derivatives, the
    /// diagonal of the Gauss-Newton matrix `JᵀJ`.
    pub fn gauss_newton_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        let params = theta_to_params(theta);
        let conv = self.grid.conv();
        let m = self.grid.size();
        let spectra: Vec<(Vec<Complex64>, Vec<Vec<Complex64>>)> = params
            .iter()
            .map(|p| {
                let k = kernel_with_partials(p, conv.kernel_size());
                (conv.kernel_spectrum(&k.kernel), k.partials.iter().map(|q| conv.kernel_spectrum(q)).collect())
            })
            .collect();
        let column_norm = |ks: &[Complex64], xs: &[Complex64]| {
            let prod = ks.iter().zip(xs).map(|(a, b)| a * b).collect();
            self.grid.masked_sq_norm(&conv.output_from_spectrum(prod))
        };
        let per_pair: Vec<Vec<f64>> = self
            .pairs
            .par_iter()
            .zip(&self.regions_of)
            .map(|(pair, map)| {
                let mut diag = vec![0.0; self.dimension()];
                for (k, p) in params.iter().enumerate() {
                    if !map.iter().any(|&r| r == k) {
                        continue;
                    }
                    let mut f = Array2::zeros((m, m));
                    let mut fa = Array2::zeros((m, m));
                    let mut fb = Array2::zeros((m, m));
                    for ((ix, &d), &r) in pair.input.direct.indexed_iter().zip(map) {
                        if r == k {
                            let (v, da, db) = potential_partials(d, p.alpha, p.beta);
                            f[ix] = v;
                            fa[ix] = da;
                            fb[ix] = db;
                        }
                    }
                    let (kernel_spec, partial_specs) = &spectra[k];
                    let xs = conv.image_spectrum(&f);
                    let slots = &mut diag[k * PARAMS_PER_REGION..(k + 1) * PARAMS_PER_REGION];
                    for (slot, ps) in slots.iter_mut().zip(partial_specs) {
                        *slot = column_norm(ps, &xs);
                    }
                    slots[4] = column_norm(kernel_spec, &conv.image_spectrum(&fa));
                    slots[5] = column_norm(kernel_spec, &conv.image_spectrum(&fb));
                }
                diag
            })
            .collect();
        let mut diag = vec![0.0; self.dimension()];
        for d in &per_pair {
            diag.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        diag
    }

    fn pair_terms(
        &self,
        pair: &CoarsePair,
        map: &Array2<usize>,
        params: &[KernelParams],
        kernels: &[KernelWithPartials],
        kernel_spectra: &[Vec<Complex64>],
    ) -> PairTerms {
        let conv = self.grid.conv();
        let m = self.grid.size();
        let mut sources = Vec::with_capacity(self.regions);
        let mut pred_spec = vec![Complex64::default(); kernel_spectra[0].len()];
        for (k, p) in params.iter().enumerate() {
            if !map.iter().any(|&r| r == k) {
                sources.push(None);
                continue;
            }
            let mut f = Array2::zeros((m, m));
            let mut fa = Array2::zeros((m, m));
            let mut fb = Array2::zeros((m, m));
            for ((ix, &d), &r) in pair.input.direct.indexed_iter().zip(map) {
                if r == k {
                    let (v, da, db) = potential_partials(d, p.alpha, p.beta);
                    f[ix] = v;
                    fa[ix] = da;
                    fb[ix] = db;
                }
            }
            let spec = conv.image_spectrum(&f);
            pred_spec.iter_mut().zip(&spec).zip(&kernel_spectra[k]).for_each(|((acc, x), kk)| *acc += x * kk);
            sources.push(Some((spec, fa, fb)));
        }
        let mut residual = conv.output_from_spectrum(pred_spec);
        let mask = self.grid.mask();
        let mut value = 0.0;
        residual.zip_mut_with(&pair.scatter, |r, &s| *r = self.sign * *r - s);
        residual.zip_mut_with(mask, |r, &inside| {
            if inside {
                value += *r * *r;
            } else {
                *r = 0.0;
            }
        });
        let residual_spec = conv.residual_spectrum(&(residual * (2.0 * self.sign)));

        let mut gradient = vec![0.0; self.dimension()];
        for (k, source) in sources.iter().enumerate() {
            let Some((spec, fa, fb)) = source else { continue };
            let g = &mut gradient[k * PARAMS_PER_REGION..(k + 1) * PARAMS_PER_REGION];
            let corr: Vec<Complex64> = residual_spec.iter().zip(spec).map(|(r, x)| r * x.conj()).collect();
            let kernel_grad = conv.kernel_from_spectrum(corr);
            for (slot, partial) in g.iter_mut().zip(&kernels[k].partials) {
                *slot = kernel_grad.iter().zip(partial).map(|(a, b)| a * b).sum();
            }
            let corr: Vec<Complex64> =
                residual_spec.iter().zip(&kernel_spectra[k]).map(|(r, x)| r * x.conj()).collect();
            let image_grad = conv.image_from_spectrum(corr);
            g[4] = image_grad.iter().zip(fa).map(|(a, b)| a * b).sum();
            g[5] = image_grad.iter().zip(fb).map(|(a, b)| a * b).sum();
        }
        PairTerms { value, gradient }
    }
}

/// Normalised coarse prediction `sign · Σ_k k_k ∗ (1_k ⊙ f_k(d))`.
pub(crate) fn predict(
    grid: &CoarseGrid,
    input: &CoarseInput,
    thresholds: &[f64],
    regions: &[KernelParams],
    sign: KernelSign,
) -> Array2<f64> {
    let conv = grid.conv();
    let map = region_map(&input.attenuation, thresholds);
    let m = grid.size();
    let mut spec_sum: Option<Vec<Complex64>> = None;
    for (k, p) in regions.iter().enumerate() {
        let mut f = Array2::zeros((m, m));
        let mut any = false;
        for ((ix, &d), &r) in input.direct.indexed_iter().zip(&map) {
            if r == k {
                f[ix] = super::potential(d, p.alpha, p.beta);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let kernel = kernel_with_partials(p, conv.kernel_size()).kernel;
        let ks = conv.kernel_spectrum(&kernel);
        let xs = conv.image_spectrum(&f);
        let acc = spec_sum.get_or_insert_with(|| vec![Complex64::default(); xs.len()]);
        acc.iter_mut().zip(xs.iter().zip(&ks)).for_each(|(a, (x, kk))| *a += x * kk);
    }
    match spec_sum {
        Some(spec) => conv.output_from_spectrum(spec) * sign.factor(),
        None => Array2::zeros((m, m)),
    }
}

fn fit_regions(
    data: &FitData<'_>,
    thresholds: Vec<f64>,
    opts: &FitOptions,
) -> Result<(Vec<KernelParams>, LbfgsReport)> {
    let objective = KernelObjective::new(data, &thresholds, opts.sign);
    for (k, count) in objective.region_counts().iter().enumerate() {
        if *count == 0 {
            log::warn!("multikernel region {k} has no training pixels; keeping initial parameters");
        }
    }
    let mut theta0 = params_to_theta(&vec![opts.init; thresholds.len() + 1]);
    if opts.prefit_amplitudes {
        if let Some(better) = prefit_amplitudes(data, &thresholds, opts.sign, &theta0) {
            if objective.value(&better) < objective.value(&theta0) {
                theta0 = better;
            }
        }
    }
    let scale: Vec<f64> = if opts.scale_variables {
        objective
            .gauss_newton_diagonal(&theta0)
            .iter()
            .map(|&v| if v > 0.0 && v.is_finite() { v.sqrt() } else { 1.0 })
            .collect()
    } else {
        vec![1.0; theta0.len()]
    };
    let z0: Vec<f64> = theta0.iter().zip(&scale).map(|(t, s)| t * s).collect();
    let unscale = |z: &[f64]| -> Vec<f64> { z.iter().zip(&scale).map(|(v, s)| v / s).collect() };
    let mut report = minimize(
        |z| {
            let (f, g) = objective.value_and_gradient(&unscale(z));
            (f, g.iter().zip(&scale).map(|(gi, s)| gi / s).collect())
        },
        z0,
        &opts.lbfgs,
    )?;
    report.x = unscale(&report.x);
    Ok((theta_to_params(&report.x), report))
}

/// `theta` with every region's `(A, B)` replaced by the linear least squares
/// optimum for its widths and exponents; `None` when that system is singular.
fn prefit_amplitudes(data: &FitData<'_>, thresholds: &[f64], sign: KernelSign, theta: &[f64]) -> Option<Vec<f64>> {
    let params = theta_to_params(theta);
    let n = 2 * params.len();
    let basis_params = |j: usize| -> Vec<KernelParams> {
        params
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let on = |slot| if j == 2 * k + slot { 1.0 } else { 0.0 };
                KernelParams { a: on(0), b: on(1), ..*p }
            })
            .collect()
    };
    let mask = data.grid.mask();
    let masked_dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter().zip(b).zip(mask).filter(|(_, &m)| m).map(|((x, y), _)| x * y).sum()
    };
    let per_pair: Vec<(Vec<f64>, Vec<f64>)> = data
        .pairs
        .par_iter()
        .map(|pair| {
            let basis: Vec<Array2<f64>> =
                (0..n).map(|j| predict(data.grid, &pair.input, thresholds, &basis_params(j), sign)).collect();
            let mut gram = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = masked_dot(&basis[i], &basis[j]);
                    gram[i * n + j] = v;
                    gram[j * n + i] = v;
                }
            }
            let rhs = basis.iter().map(|b| masked_dot(b, &pair.scatter)).collect();
            (gram, rhs)
        })
        .collect();
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (g, r) in &per_pair {
        gram.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        rhs.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let amplitudes = solve_symmetric(gram, rhs)?;
    let mut out = theta.to_vec();
    for (k, chunk) in out.chunks_exact_mut(PARAMS_PER_REGION).enumerate() {
        chunk[0] = amplitudes[2 * k];
        chunk[1] = amplitudes[2 * k + 1];
    }
    Some(out)
}

/// Gaussian elimination with partial pivoting; `None` on a (near) singular matrix.
fn solve_symmetric(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        for j in 0..n {
            a.swap(col * n + j, pivot * n + j);
        }
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|j| a[row * n + j] * x[j]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn fit_parametric(data: &FitData<'_>, opts: &FitOptions) -> Result<(ScatterModel, LbfgsReport)> {
    let (params, report) = fit_regions(data, Vec::new(), opts)?;
    Ok((ScatterModel::Parametric { params: params[0], sign: opts.sign }, report))
}

pub fn fit_multikernel(data: &FitData<'_>, regions: usize, opts: &FitOptions) -> Result<(ScatterModel, LbfgsReport)> {
    if regions == 0 {
        return Err(crate::Error::InvalidInput("multikernel needs at least one region".into()));
    }
    let thresholds = partition_thresholds(data, regions);
    let (params, report) = fit_regions(data, thresholds.clone(), opts)?;
    Ok((ScatterModel::MultiKernel { thresholds, regions: params, sign: opts.sign }, report))
}
