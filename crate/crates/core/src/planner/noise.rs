//! Power-law ("colored") Gaussian noise along the planning horizon.
//!
//! Spectral synthesis: Gaussian Fourier coefficients scaled by `f^(-beta/2)`
//! are inverted with a real FFT and divided by the analytic standard
//! deviation of the result, so each column has PSD proportional to
//! `f^-beta` and unit marginal variance in expectation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// `count` independent `horizon x dim` noise matrices.
pub fn colored_noise_batch(
    beta: f64,
    horizon: usize,
    dim: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<DMatrix<f64>> {
    assert!(horizon >= 1, "colored noise needs horizon >= 1");
    if horizon == 1 || beta == 0.0 {
        return (0..count).map(|_| DMatrix::from_fn(horizon, dim, |_, _| StandardNormal.sample(rng))).collect();
    }
    let n = horizon;
    let half = n / 2;
    let fmin = 1.0 / n as f64;
    let scale: Vec<f64> = (0..=half).map(|k| (k as f64 / n as f64).max(fmin).powf(-beta / 2.0)).collect();
    // Expected variance of the synthesized series, DC and Nyquist included.
    let mut energy = scale[0] * scale[0];
    for (k, s) in scale.iter().enumerate().skip(1) {
        energy += if n.is_multiple_of(2) && k == half { s * s } else { 2.0 * s * s };
    }
    let sigma = (2.0 * energy).sqrt() / n as f64;

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut m = DMatrix::zeros(n, dim);
        for col in 0..dim {
            for k in 0..=half {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let mut c = Complex64::new(re * scale[k], im * scale[k]);
                if k == 0 || (n.is_multiple_of(2) && k == half) {
                    c = Complex64::new(c.re * std::f64::consts::SQRT_2, 0.0);
                }
                buf[k] = c;
                if k != 0 && k != n - k {
                    buf[n - k] = c.conj();
                }
            }
            ifft.process(&mut buf);
            for t in 0..n {
                m[(t, col)] = buf[t].re / n as f64 / sigma;
            }
        }
        out.push(m);
    }
    out
}

/// One `horizon x dim` matrix of colored noise with exponent `beta`.
pub fn colored_noise(beta: f64, horizon: usize, dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    colored_noise_batch(beta, horizon, dim, 1, rng).pop().unwrap()
}
