//! Zero-padded linear convolution of an `m × m` image with a
//! `(2m-1) × (2m-1)` kernel centred at `(m-1, m-1)`, cropped back to `m × m`,
//! together with the two adjoints needed for least squares fitting.
//!
//! Circular convolution on a `P × P` grid is alias-free on the cropped window
//! whenever `P >= 2m-1`.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub type Spectrum2 = Vec<Complex64>;

pub struct Conv2d {
    m: usize,
    p: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Conv2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Conv2d").field("m", &self.m).field("p", &self.p).finish()
    }
}

fn smooth_size(min: usize) -> usize {
    (min..)
        .find(|&n| {
            let mut r = n;
            for f in [2, 3, 5] {
                while r % f == 0 {
                    r /= f;
                }
            }
            r == 1
        })
        .expect("5-smooth numbers are unbounded")
}

impl Conv2d {
    pub fn new(m: usize) -> Self {
        let p = smooth_size(2 * m - 1);
        let mut planner = FftPlanner::new();
        Self { m, p, forward: planner.plan_fft_forward(p), inverse: planner.plan_fft_inverse(p) }
    }

    pub fn image_size(&self) -> usize {
        self.m
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.m - 1
    }

    fn transform(&self, buf: &mut [Complex64], fft: &dyn Fft<f64>) {
        let p = self.p;
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(buf, &mut scratch);
        let mut column = vec![Complex64::default(); p];
        for j in 0..p {
            for i in 0..p {
                column[i] = buf[i * p + j];
            }
            fft.process_with_scratch(&mut column, &mut scratch);
            for i in 0..p {
                buf[i * p + j] = column[i];
            }
        }
    }

    fn embed(&self, src: &Array2<f64>, offset: usize) -> Spectrum2 {
        let p = self.p;
        let mut buf = vec![Complex64::default(); p * p];
        for ((i, j), &v) in src.indexed_iter() {
            buf[(i + offset) * p + j + offset] = Complex64::new(v, 0.0);
        }
        self.transform(&mut buf, self.forward.as_ref());
        buf
    }

    fn extract(&self, mut spec: Spectrum2, offset: usize, size: usize) -> Array2<f64> {
        let p = self.p;
        self.transform(&mut spec, self.inverse.as_ref());
        let scale = 1.0 / (p * p) as f64;
        Array2::from_shape_fn((size, size), |(i, j)| spec[(i + offset) * p + j + offset].re * scale)
    }

    /// Spectrum of an `m × m` image.
    pub fn image_spectrum(&self, x: &Array2<f64>) -> Spectrum2 {
        debug_assert_eq!(x.dim(), (self.m, self.m));
        self.embed(x, 0)
    }

    /// Spectrum of a `(2m-1) × (2m-1)` kernel.
    pub fn kernel_spectrum(&self, k: &Array2<f64>) -> Spectrum2 {
        debug_assert_eq!(k.dim(), (self.kernel_size(), self.kernel_size()));
        self.embed(k, 0)
    }

    /// Spectrum of an `m × m` output-space residual, positioned so that
    /// correlations against image or kernel spectra yield the adjoints.
    pub fn residual_spectrum(&self, r: &Array2<f64>) -> Spectrum2 {
        self.embed(r, self.m - 1)
    }

    /// Cropped convolution from a product of image and kernel spectra.
    pub fn output_from_spectrum(&self, spec: Spectrum2) -> Array2<f64> {
        self.extract(spec, self.m - 1, self.m)
    }

    /// Kernel-space adjoint from `Σ R̃·conj(X)`.
    pub fn kernel_from_spectrum(&self, spec: Spectrum2) -> Array2<f64> {
        self.extract(spec, 0, self.kernel_size())
    }

    /// Image-space adjoint from `R̃·conj(K)`.
    pub fn image_from_spectrum(&self, spec: Spectrum2) -> Array2<f64> {
        self.extract(spec, 0, self.m)
    }

    pub fn convolve(&self, kernel: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
        let k = self.kernel_spectrum(kernel);
        let mut s = self.image_spectrum(x);
        for (a, b) in s.iter_mut().zip(&k) {
            *a *= b;
        }
        self.output_from_spectrum(s)
    }

    /// Adjoint of `k ↦ k ∗ x` applied to `r`.
    pub fn kernel_adjoint(&self, r: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
        let mut rs = self.residual_spectrum(r);
        let xs = self.image_spectrum(x);
        for (a, b) in rs.iter_mut().zip(&xs) {
            *a *= b.conj();
        }
        self.kernel_from_spectrum(rs)
    }

    /// Adjoint of `x ↦ k ∗ x` applied to `r`.
    pub fn image_adjoint(&self, r: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
        let mut rs = self.residual_spectrum(r);
        let ks = self.kernel_spectrum(kernel);
        for (a, b) in rs.iter_mut().zip(&ks) {
            *a *= b.conj();
        }
        self.image_from_spectrum(rs)
    }
}

/// Space-domain definition of the cropped linear convolution.
pub fn convolve_direct(kernel: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let m = x.nrows();
    let c = m as isize - 1;
    Array2::from_shape_fn((m, m), |(i, j)| {
        let mut acc = 0.0;
        for ((p, q), &k) in kernel.indexed_iter() {
            let u = i as isize + c - p as isize;
            let v = j as isize + c - q as isize;
            if u >= 0 && v >= 0 && (u as usize) < m && (v as usize) < m {
                acc += k * x[[u as usize, v as usize]];
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
    }

    fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn padded_sizes_are_smooth() {
        assert_eq!(Conv2d::new(17).p, 36);
        assert_eq!(Conv2d::new(65).p, 135);
        assert_eq!(smooth_size(7), 8);
    }

    #[test]
    fn fft_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [5, 9, 17] {
            let conv = Conv2d::new(m);
            let k = random(2 * m - 1, &mut rng);
            let x = random(m, &mut rng);
            let fast = conv.convolve(&k, &x);
            let slow = convolve_direct(&k, &x);
            let scale = slow.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-10 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let m = 9;
        let conv = Conv2d::new(m);
        let mut k = Array2::zeros((2 * m - 1, 2 * m - 1));
        k[[m - 1, m - 1]] = 1.0;
        let x = random(m, &mut ChaCha8Rng::seed_from_u64(2));
        for (a, b) in conv.convolve(&k, &x).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 11;
        let conv = Conv2d::new(m);
        let k = random(2 * m - 1, &mut rng);
        let x = random(m, &mut rng);
        let r = random(m, &mut rng);
        let lhs = dot(&conv.convolve(&k, &x), &r);
        assert!((lhs - dot(&k, &conv.kernel_adjoint(&r, &x))).abs() < 1e-9);
        assert!((lhs - dot(&x, &conv.image_adjoint(&r, &k))).abs() < 1e-9);
    }
}
