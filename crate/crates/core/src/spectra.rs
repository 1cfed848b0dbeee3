//! Convolution kernel matrices, eigenvalue spectra and the spectral lower
//! bound on the variance part of the excess risk of gradient-flow kernel
//! regression.

use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::activations::McEstimate;
use crate::error::{check_dim, invalid, Result};
use crate::estimators::{excess_risk, KernelSystem};
use crate::kernels::{cross_kernel_matrix, KernelSpec};
use crate::linalg::Points;
use crate::seeding::{stream_rng, Stream};
use crate::synthdata::{redraw_labels, sample_sphere_with, Dataset};

pub use crate::linalg::eigenvalues_sym;

/// Default number of Monte Carlo samples for convolution kernels.
pub const DEFAULT_MC_SAMPLES: usize = 10_000;

/// A distribution on input space that can be sampled with a seeded RNG.
pub trait PointSampler {
    /// Dimension of the sampled vectors.
    fn ambient_dim(&self) -> usize;

    fn sample(&self, rng: &mut ChaCha20Rng, count: usize) -> Points;
}

/// Uniform distribution on `S^d ⊂ R^{d+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformSphere {
    pub d: usize,
}

impl PointSampler for UniformSphere {
    fn ambient_dim(&self) -> usize {
        self.d + 1
    }

    fn sample(&self, rng: &mut ChaCha20Rng, count: usize) -> Points {
        sample_sphere_with(rng, self.d, count)
    }
}

/// Entrywise Monte Carlo estimate of a convolution kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionEstimate {
    pub mean: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub samples: usize,
}

fn cross_with_sample(
    spec: &KernelSpec,
    x: &Points,
    sampler: &dyn PointSampler,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if samples < 100 {
        return Err(invalid(format!("need at least 100 Monte Carlo samples, got {samples}")));
    }
    check_dim(sampler.ambient_dim(), x.dim())?;
    let z = sampler.sample(&mut stream_rng(Stream::MonteCarlo, seed), samples);
    cross_kernel_matrix(spec, x, &z)
}

/// `K*_{ij} = (1/M) Σ_m k(x_i, z_m) k(z_m, x_j)` over one shared sample
/// `z_1..z_M`, so the estimate is a Gram matrix and hence PSD.
pub fn convolution_kernel_matrix(
    spec: &KernelSpec,
    x: &Points,
    sampler: &dyn PointSampler,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let c = cross_with_sample(spec, x, sampler, samples, seed)?;
    Ok(&c * c.transpose() / samples as f64)
}

/// Same estimate as [`convolution_kernel_matrix`] with entrywise standard errors.
pub fn convolution_kernel_estimate(
    spec: &KernelSpec,
    x: &Points,
    sampler: &dyn PointSampler,
    samples: usize,
    seed: u64,
) -> Result<ConvolutionEstimate> {
    let c = cross_with_sample(spec, x, sampler, samples, seed)?;
    let m = samples as f64;
    let mean = &c * c.transpose() / m;
    let sq = c.component_mul(&c);
    let second = &sq * sq.transpose() / m;
    let std_err = DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
        let var = (second[(i, j)] - mean[(i, j)].powi(2)).max(0.0) * m / (m - 1.0);
        (var / m).sqrt()
    });
    Ok(ConvolutionEstimate { mean, std_err, samples })
}

/// Eigenvalue spectra and the resulting lower bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Descending eigenvalues of `K/n`.
    pub lambda_k: Vec<f64>,
    /// Descending eigenvalues of `K*/n`.
    pub lambda_kstar: Vec<f64>,
    pub bound: f64,
    /// `None` encodes `t = ∞`.
    pub t: Option<f64>,
    pub rho: f64,
    pub noise_variance: f64,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
}

impl SpectralReport {
    pub fn with_provenance(mut self, mc_samples: usize, seed: u64) -> Self {
        self.mc_samples = Some(mc_samples);
        self.seed = Some(seed);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// `(1 - e^{-2 t s})^2 / s^2` with `s = λ + ρ`, its `t = ∞` limit `1/s^2`,
/// and 0 on numerically null directions when `ρ = 0`.
fn spectral_filter_sq(lambda: f64, t: f64, rho: f64, null_tol: f64) -> f64 {
    if rho == 0.0 && lambda <= null_tol {
        return 0.0;
    }
    let s = lambda + rho;
    let g = if t.is_infinite() { 1.0 / s } else { -(-2.0 * t * s).exp_m1() / s };
    g * g
}

/// Lower bound `σ²/n Σ_i λ_i(K*/n) (1 - e^{-2t(λ_i(K/n)+ρ)})² / (λ_i(K/n)+ρ)²`
/// with both spectra sorted in descending order.
///
/// The filter is nonincreasing in `λ`, so the `i`-th largest eigenvalue of
/// `K/n` gives the `i`-th smallest eigenvalue of the squared filter matrix.
/// Pairing it with the `i`-th largest eigenvalue of `K*/n` is the minimizing
/// arrangement of the trace inequality.
pub fn spectral_lower_bound(
    k: &DMatrix<f64>,
    kstar: &DMatrix<f64>,
    t: f64,
    rho: f64,
    noise_variance: f64,
) -> Result<SpectralReport> {
    if !k.is_square() || !kstar.is_square() {
        return Err(invalid("kernel matrices must be square"));
    }
    check_dim(k.nrows(), kstar.nrows())?;
    let n = k.nrows();
    if n == 0 {
        return Err(invalid("empty kernel matrix"));
    }
    if t.is_nan() || t < 0.0 {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid(format!("rho must be >= 0, got {rho}")));
    }
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(invalid(format!("noise variance must be > 0, got {noise_variance}")));
    }
    let nf = n as f64;
    let lambda_k: Vec<f64> = eigenvalues_sym(k)?.iter().map(|v| v / nf).collect();
    let lambda_kstar: Vec<f64> = eigenvalues_sym(kstar)?.iter().map(|v| v / nf).collect();
    let null_tol = nf * lambda_k[0].abs() * f64::EPSILON;
    let sum: f64 = lambda_kstar
        .iter()
        .zip(&lambda_k)
        .map(|(ls, l)| ls.max(0.0) * spectral_filter_sq(*l, t, rho, null_tol))
        .sum();
    Ok(SpectralReport {
        lambda_k,
        lambda_kstar,
        bound: noise_variance / nf * sum,
        t: t.is_finite().then_some(t),
        rho,
        noise_variance,
        mc_samples: None,
        seed: None,
    })
}

/// Monte Carlo estimate of `E_ε[R(f_{t,ρ})] - R*` with the training inputs
/// held fixed: labels are redrawn `redraws` times around `train.f_star` and the
/// excess risk of each fit is measured on `test`.
pub fn simulate_excess_risk(
    spec: &KernelSpec,
    train: &Dataset,
    test: &Dataset,
    t: f64,
    rho: f64,
    redraws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if redraws < 2 {
        return Err(invalid("need at least two label redraws"));
    }
    let system = KernelSystem::new(spec, &train.x)?;
    let mut rng = stream_rng(Stream::LabelNoise, seed);
    let mut risks = Vec::with_capacity(redraws);
    for _ in 0..redraws {
        let data = redraw_labels(train, &mut rng)?;
        let sol = system.fit_gradient_flow(&data.y, t, rho)?;
        risks.push(excess_risk(&sol, &test.x, &test.f_star, None)?.excess_risk);
    }
    let r = redraws as f64;
    let mean = risks.iter().sum::<f64>() / r;
    let var = risks.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_err: (var / r).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kernel_matrix;
    use crate::synthdata::sample_sphere;

    #[test]
    fn constant_kernel_convolution() {
        let x = sample_sphere(1, 5, 1).unwrap();
        let k = convolution_kernel_matrix(&KernelSpec::gaussian(1e6), &x, &UniformSphere { d: 1 }, 1000, 2).unwrap();
        for v in k.iter() {
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn single_point_within_bounds() {
        let x = sample_sphere(1, 1, 3).unwrap();
        let k = convolution_kernel_matrix(&KernelSpec::laplace(0.3), &x, &UniformSphere { d: 1 }, 500, 2).unwrap();
        assert!(k[(0, 0)] > 0.0 && k[(0, 0)] <= 1.0);
    }

    #[test]
    fn convolution_is_symmetric_psd() {
        let x = sample_sphere(1, 12, 4).unwrap();
        let k = convolution_kernel_matrix(&KernelSpec::laplace(0.2), &x, &UniformSphere { d: 1 }, 2000, 5).unwrap();
        assert_eq!(k, k.transpose());
        let ev = eigenvalues_sym(&k).unwrap();
        assert!(ev[ev.len() - 1] > -1e-12 * ev[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = sample_sphere(1, 3, 4).unwrap();
        let sampler = UniformSphere { d: 1 };
        assert!(convolution_kernel_matrix(&KernelSpec::laplace(0.2), &x, &sampler, 10, 5).is_err());
        assert!(convolution_kernel_matrix(&KernelSpec::laplace(0.2), &x, &UniformSphere { d: 2 }, 200, 5).is_err());
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::<f64>::identity(3, 3);
        assert!(spectral_lower_bound(&a, &b, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn zero_time_bound_vanishes() {
        let x = sample_sphere(1, 10, 4).unwrap();
        let k = kernel_matrix(&KernelSpec::laplace(0.5), &x).unwrap().entries;
        let ks = convolution_kernel_matrix(&KernelSpec::laplace(0.5), &x, &UniformSphere { d: 1 }, 500, 5).unwrap();
        assert_eq!(spectral_lower_bound(&k, &ks, 0.0, 0.0, 0.3).unwrap().bound, 0.0);
    }

    #[test]
    fn single_term_formula() {
        let (n, lambda, c, s2) = (1.0, 0.7, 0.4, 0.25);
        let k = DMatrix::from_element(1, 1, n * lambda);
        let ks = DMatrix::from_element(1, 1, n * c);
        let r = spectral_lower_bound(&k, &ks, f64::INFINITY, 0.0, s2).unwrap();
        assert!((r.bound - s2 * c / (lambda * lambda)).abs() < 1e-15);
        assert_eq!(r.t, None);
    }

    #[test]
    fn null_directions_contribute_nothing() {
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]));
        let ks = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0]));
        let r = spectral_lower_bound(&k, &ks, f64::INFINITY, 0.0, 1.0).unwrap();
        // λ(K/n) = (1, 0), λ(K*/n) = (0.5, 0.5): only the first pair counts.
        assert!((r.bound - 0.5 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn same_index_pairing() {
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 2.0]));
        let ks = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![6.0, 2.0]));
        let r = spectral_lower_bound(&k, &ks, f64::INFINITY, 0.0, 2.0).unwrap();
        // (σ²/n) (3/2² + 1/1²) with σ² = 2, n = 2
        assert!((r.bound - (0.75 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn standard_errors_are_reported() {
        let x = sample_sphere(1, 4, 8).unwrap();
        let est =
            convolution_kernel_estimate(&KernelSpec::gaussian_dot(0.5), &x, &UniformSphere { d: 1 }, 1000, 1).unwrap();
        let plain =
            convolution_kernel_matrix(&KernelSpec::gaussian_dot(0.5), &x, &UniformSphere { d: 1 }, 1000, 1).unwrap();
        assert_eq!(est.mean, plain);
        assert!(est.std_err.iter().all(|s| *s > 0.0 && *s < 0.1));
    }

    #[test]
    fn report_serializes() {
        let k = DMatrix::<f64>::identity(2, 2);
        let json = spectral_lower_bound(&k, &k, 1.0, 0.1, 1.0)
            .unwrap()
            .with_provenance(100, 7)
            .to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["mc_samples"], 100);
        assert_eq!(v["lambda_k"].as_array().unwrap().len(), 2);
    }
}
