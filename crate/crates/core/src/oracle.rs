//! Reference computations that deliberately avoid the production code paths.
//!
//! These are slow, textbook versions (explicit Gauss-Jordan inverse, Jacobi
//! eigenvalues, fixed-step RK4, direct DFT) used by the self-test and the
//! test suites to cross-check the fast implementations.

use nalgebra::DMatrix;

use crate::statmodel::{kernel_eval, KernelSpec};

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// GP posterior mean (per output) and latent variance at `z`, computed with
/// an explicit inverse of `K + s^2 I`.
pub fn gp_posterior_direct(
    kernel: &KernelSpec,
    noise_sigma: f64,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    z: &[f64],
) -> (Vec<f64>, f64) {
    let n = inputs.len();
    let prior = kernel_eval(kernel, z, z).unwrap();
    let dout = targets.first().map_or(0, |t| t.len());
    if n == 0 {
        return (vec![0.0; dout], prior);
    }
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = kernel_eval(kernel, &inputs[i], &inputs[j]).unwrap();
        }
        k[i][i] += noise_sigma * noise_sigma;
    }
    let kinv = gauss_jordan_inverse(&k).expect("singular oracle matrix");
    let kz: Vec<f64> = inputs.iter().map(|x| kernel_eval(kernel, x, z).unwrap()).collect();
    let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * kz[j]).sum()).collect();
    let mean = (0..dout).map(|o| (0..n).map(|i| w[i] * targets[i][o]).sum()).collect();
    let var = prior - (0..n).map(|i| w[i] * kz[i]).sum::<f64>();
    (mean, var)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

/// `0.5 log det(I + s^-2 K)` from the eigenvalues of `K`.
pub fn half_log_det_identity_plus_eig(k: &DMatrix<f64>, noise_sigma: f64) -> f64 {
    let s2 = noise_sigma * noise_sigma;
    jacobi_eigenvalues(k).into_iter().map(|l| 0.5 * (1.0 + l.max(0.0) / s2).ln()).sum()
}

/// Integrates `dy/dt = f(y)` over `t` with `steps` classical RK4 steps.
pub fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let h = t / steps as f64;
    let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(yi, ki)| yi + a * ki).collect() };
    let mut y = y0.to_vec();
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&axpy(&y, &k1, h / 2.0));
        let k3 = f(&axpy(&y, &k2, h / 2.0));
        let k4 = f(&axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Periodogram `|X_k|^2 / N` for `k = 0..=N/2` by direct DFT.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Least-squares slope of `log P(f)` against `log f`, skipping DC and Nyquist.
pub fn log_log_slope(psd: &[f64], n: usize) -> f64 {
    let pts: Vec<(f64, f64)> =
        (1..psd.len()).filter(|&k| 2 * k != n).map(|k| ((k as f64 / n as f64).ln(), psd[k].ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let a = vec![vec![4.0, 7.0], vec![2.0, 6.0]];
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!((inv[0][0] - 0.6).abs() < 1e-12);
        assert!((inv[0][1] + 0.7).abs() < 1e-12);
        assert!((inv[1][0] + 0.2).abs() < 1e-12);
        assert!((inv[1][1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn jacobi_finds_eigenvalues() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let mut e = jacobi_eigenvalues(&a);
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
        assert!((e[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_exponential() {
        let y = rk4(|y| vec![y[0]], &[1.0], 1.0, 100);
        assert!((y[0] - 1f64.exp()).abs() < 1e-8);
    }
}
