//! Activation functions induced by dot-product kernels.
//!
//! A dot-product kernel `κ(<x,x'>) = Σ b_i <x,x'>^i` on the sphere is the
//! NNGP kernel of a two-layer network with activation
//! `Σ s_i sqrt(b_i) h_i(x)` and its NTK with activation
//! `Σ s_i sqrt(b_i / (i+1)) h_i(x)`, where `h_i` are the orthonormal
//! probabilists' Hermite polynomials and `s_i ∈ {±1}` are free signs.
//!
//! Coefficients of small-bandwidth Gaussians peak around `i ≈ 2/γ`, so
//! series are truncated at `⌈4/γ⌉` by default and evaluated with the
//! normalized three-term recurrence, which stays bounded where the
//! monomial form of `He_i` would overflow.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{taylor_coefficients, taylor_tail, KernelSpec};
use crate::seeding::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nngp,
    Ntk,
}

impl Mode {
    fn weight(self, i: usize) -> f64 {
        match self {
            Self::Nngp => 1.0,
            Self::Ntk => 1.0 / (i as f64 + 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignScheme {
    AllPlus,
    /// `s_i = (-1)^i`; mirrors the all-plus activation, `φ(x) ↦ φ(-x)`.
    Alternating,
    /// `s_i = +1` iff `⌊i/2⌋` is even.
    BiAlternating,
    /// i.i.d. uniform signs from the seeded sign stream.
    Random { seed: u64 },
}

impl SignScheme {
    pub fn signs(&self, count: usize) -> Vec<i8> {
        match self {
            Self::AllPlus => vec![1; count],
            Self::Alternating => (0..count).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect(),
            Self::BiAlternating => (0..count).map(|i| if (i / 2) % 2 == 0 { 1 } else { -1 }).collect(),
            Self::Random { seed } => {
                let mut rng = stream_rng(Stream::SignScheme, *seed);
                (0..count).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// `⌈4/γ_min⌉` for the smallest bandwidth in the kernel.
    Auto,
    Order(usize),
}

/// Orthonormal Hermite values `h_0(x)..=h_{i_max}(x)`.
pub fn hermite_values(i_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(i_max + 1);
    out.push(1.0);
    if i_max >= 1 {
        out.push(x);
    }
    for i in 1..i_max {
        let next = (x * out[i] - (i as f64).sqrt() * out[i - 1]) / ((i + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Evaluates `Σ_i c_i h_i(x)` in one pass of the recurrence.
fn hermite_series(coeffs: &[f64], x: f64) -> f64 {
    let Some((&c0, rest)) = coeffs.split_first() else {
        return 0.0;
    };
    let mut sum = c0;
    let (mut prev, mut cur) = (1.0, x);
    for (i, c) in rest.iter().enumerate() {
        // `cur` holds h_{i+1}
        sum += c * cur;
        let k = (i + 1) as f64;
        let next = (x * cur - k.sqrt() * prev) / (k + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    sum
}

/// Truncated Hermite series `φ(x) = Σ_{i≤I} a_i h_i(x)` induced by a
/// dot-product kernel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HermiteActivation {
    coeffs: Vec<f64>,
    kernel_coeffs: Vec<f64>,
    signs: Vec<i8>,
    mode: Mode,
    scheme: SignScheme,
    source: KernelSpec,
    tail_mass: f64,
}

pub fn synthesize_activation(
    spec: &KernelSpec,
    mode: Mode,
    scheme: SignScheme,
    truncation: Truncation,
) -> Result<HermiteActivation> {
    let order = match truncation {
        Truncation::Order(i) => i,
        Truncation::Auto => match (spec.min_bandwidth(), spec) {
            (Some(gamma), _) => (4.0 / gamma).ceil() as usize,
            (None, KernelSpec::TaylorDotProduct { coefficients }) => coefficients.len().saturating_sub(1),
            (None, _) => return Err(invalid("automatic truncation needs a bandwidth")),
        },
    };
    let b = taylor_coefficients(spec, order)?;
    let tail_mass = taylor_tail(spec, order)?;
    let signs = scheme.signs(order + 1);
    let coeffs = b
        .iter()
        .zip(&signs)
        .enumerate()
        .map(|(i, (bi, s))| f64::from(*s) * (bi * mode.weight(i)).sqrt())
        .collect();
    Ok(HermiteActivation {
        coeffs,
        kernel_coeffs: b,
        signs,
        mode,
        scheme,
        source: spec.clone(),
        tail_mass,
    })
}

impl HermiteActivation {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Taylor coefficients `b_i` of the source kernel.
    pub fn kernel_coeffs(&self) -> &[f64] {
        &self.kernel_coeffs
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn scheme(&self) -> SignScheme {
        self.scheme
    }

    pub fn source(&self) -> &KernelSpec {
        &self.source
    }

    /// Truncation index `I`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Kernel coefficient mass `Σ_{i>I} b_i` dropped by the truncation.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Accuracy is only guaranteed for `|x| ≤ 8`.
    pub fn eval(&self, x: f64) -> f64 {
        hermite_series(&self.coeffs, x)
    }

    /// `φ'(x) = Σ_i a_{i+1} sqrt(i+1) h_i(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        let shifted: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, a)| a * (i as f64).sqrt())
            .collect();
        hermite_series(&shifted, x)
    }

    /// `L_2(N(0,1))` norm, `sqrt(Σ a_i^2)`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Index of the largest coefficient magnitude.
    pub fn peak_index(&self) -> usize {
        self.coeffs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// CSV table of `(i, b_i, s_i, a_i)` preceded by `#` header lines naming
    /// the mode, kernel and truncation.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mode = match self.mode {
            Mode::Nngp => "nngp",
            Mode::Ntk => "ntk",
        };
        writeln!(out, "# mode={mode}")?;
        writeln!(out, "# spec={}", self.source)?;
        writeln!(out, "# signs={:?}", self.scheme)?;
        writeln!(out, "# truncation={}", self.order())?;
        writeln!(out, "# tail_mass={:e}", self.tail_mass)?;
        writeln!(out, "i,b_i,s_i,a_i")?;
        for (i, ((b, s), a)) in self.kernel_coeffs.iter().zip(&self.signs).zip(&self.coeffs).enumerate() {
            writeln!(out, "{i},{b:e},{s},{a:e}")?;
        }
        Ok(())
    }
}

pub fn eval_activation(act: &HermiteActivation, x: f64) -> f64 {
    act.eval(x)
}

pub fn l2_norm(act: &HermiteActivation) -> f64 {
    act.l2_norm()
}

/// Shifted sine `A sin(sqrt(2/γ) x + π/4)` with `A = sqrt(2)` (NNGP) or
/// `A = sqrt(γ)` (NTK).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineFluctuation {
    pub mode: Mode,
    pub bandwidth: f64,
}

impl SineFluctuation {
    pub fn new(mode: Mode, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { mode, bandwidth })
    }

    pub fn amplitude(&self) -> f64 {
        match self.mode {
            Mode::Nngp => std::f64::consts::SQRT_2,
            Mode::Ntk => self.bandwidth.sqrt(),
        }
    }

    pub fn frequency(&self) -> f64 {
        (2.0 / self.bandwidth).sqrt()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude() * (self.frequency() * x + FRAC_PI_4).sin()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.amplitude() * self.frequency() * (self.frequency() * x + FRAC_PI_4).cos()
    }
}

pub fn sine_fluctuation(mode: Mode, gamma: f64, x: f64) -> Result<f64> {
    Ok(SineFluctuation::new(mode, gamma)?.eval(x))
}

/// `max_x |φ(x) - ω(x; γ)|` over `grid`, with `ω` in the activation's mode.
pub fn sine_fit_error(act: &HermiteActivation, gamma: f64, grid: &[f64]) -> Result<f64> {
    let sine = SineFluctuation::new(act.mode, gamma)?;
    Ok(grid
        .iter()
        .map(|&x| (act.eval(x) - sine.eval(x)).abs())
        .fold(0.0, f64::max))
}

/// Squared `L_2` error of the additive split `φ^k ≈ φ^{k̃} + sqrt(ρ) φ^{ǩ}`
/// next to its closed-form upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecompositionError {
    pub lhs: f64,
    pub bound: f64,
}

impl DecompositionError {
    pub fn holds(&self) -> bool {
        self.lhs <= self.bound
    }
}

/// `Σ_i (a^k_i - a^{k̃}_i - sqrt(ρ) a^{ǩ}_i)^2`, which equals the squared
/// `L_2(N(0,1))` distance because the `h_i` are orthonormal. All three
/// activations must share mode and signs.
pub fn decomposition_error(
    full: &HermiteActivation,
    smooth: &HermiteActivation,
    spike: &HermiteActivation,
    rho: f64,
) -> Result<f64> {
    if full.mode != smooth.mode || full.mode != spike.mode {
        return Err(invalid("activations were synthesized in different modes"));
    }
    let len = full.coeffs.len();
    if smooth.coeffs.len() != len || spike.coeffs.len() != len {
        return Err(invalid("activations have different truncations"));
    }
    if full.signs != smooth.signs || full.signs != spike.signs {
        return Err(invalid("activations must use identical signs"));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid(format!("rho must be nonnegative, got {rho}")));
    }
    let root = rho.sqrt();
    Ok((0..len)
        .map(|i| (full.coeffs[i] - smooth.coeffs[i] - root * spike.coeffs[i]).powi(2))
        .sum())
}

/// Closed-form bound on the squared additive-split error for Gaussian
/// components of bandwidths `smooth_bw` (`γ̃`) and `spike_bw` (`γ`).
pub fn decomposition_bound(smooth_bw: f64, spike_bw: f64, rho: f64, mode: Mode) -> f64 {
    let (gt, g) = (smooth_bw, spike_bw);
    let pi = std::f64::consts::PI;
    match mode {
        Mode::Ntk => 2f64.sqrt() * rho * g.powf(1.5) * (-1.0 / g).exp() + 4.0 * pi * g * (1.0 + gt) / gt,
        Mode::Nngp => {
            2f64.powf(1.5) * rho * g.sqrt() * (-1.0 / g).exp() + 8.0 * pi * g * (1.0 + gt) / (gt * gt)
        }
    }
}

/// Evaluates the additive-split error in coefficient space for Gaussian
/// components. The series is taken to at least `min_order` and far enough
/// past `2/γ` that the omitted coefficients are below double precision.
pub fn approx_decomposition_error(
    smooth_bw: f64,
    spike_bw: f64,
    rho: f64,
    mode: Mode,
    min_order: usize,
) -> Result<DecompositionError> {
    let smooth = KernelSpec::gaussian_dot(smooth_bw);
    let spike = KernelSpec::gaussian_dot(spike_bw);
    let full = KernelSpec::spiky_smooth(smooth.clone(), spike.clone(), rho);
    full.validate()?;
    let mean = 2.0 / smooth_bw.min(spike_bw);
    let order = min_order.max((mean + 40.0 * mean.sqrt() + 50.0).ceil() as usize);
    let synth = |s: &KernelSpec| synthesize_activation(s, mode, SignScheme::AllPlus, Truncation::Order(order));
    let lhs = decomposition_error(&synth(&full)?, &synth(&smooth)?, &synth(&spike)?, rho)?;
    Ok(DecompositionError {
        lhs,
        bound: decomposition_bound(smooth_bw, spike_bw, rho, mode),
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_err: f64,
}

/// Estimates `E[φ(u) φ(v)]` for standard normal `u, v` with correlation `z`.
/// For an NNGP activation this reconstructs `Σ a_i^2 z^i ≈ κ(z)`.
pub fn reconstruct_kernel_mc(act: &HermiteActivation, z: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    if act.mode != Mode::Nngp {
        return Err(Error::Unsupported(
            "kernel reconstruction by sampling applies to NNGP activations".into(),
        ));
    }
    if z.is_nan() || z.abs() > 1.0 {
        return Err(invalid(format!("correlation must lie in [-1, 1], got {z}")));
    }
    if samples < 100 {
        return Err(invalid(format!("need at least 100 samples, got {samples}")));
    }
    let mut rng = stream_rng(Stream::MonteCarlo, seed);
    let ortho = (1.0 - z * z).max(0.0).sqrt();
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..samples {
        let u: f64 = rng.sample(rand_distr::StandardNormal);
        let w: f64 = rng.sample(rand_distr::StandardNormal);
        let v = z * u + ortho * w;
        let val = act.eval(u) * act.eval(v);
        // Welford update
        let delta = val - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (val - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(McEstimate {
        estimate: mean,
        std_err: (var / samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_closed_forms() {
        assert_eq!(hermite_values(0, 5.0), vec![1.0]);
        assert_eq!(hermite_values(1, 3.0)[1], 3.0);
        assert!((hermite_values(2, 0.0)[2] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let h4 = hermite_values(4, 1.0)[4];
        assert!((h4 + 2.0 / 24f64.sqrt()).abs() < 1e-15);
        for x in [-2.5, -0.3, 0.0, 1.7] {
            let h = hermite_values(5, x);
            let he5 = x.powi(5) - 10.0 * x.powi(3) + 15.0 * x;
            assert!((h[5] - he5 / 120f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn series_matches_values() {
        let act = synthesize_activation(
            &KernelSpec::gaussian_dot(0.3),
            Mode::Ntk,
            SignScheme::BiAlternating,
            Truncation::Auto,
        )
        .unwrap();
        let x = 0.7;
        let h = hermite_values(act.order(), x);
        let direct: f64 = act.coeffs().iter().zip(&h).map(|(a, h)| a * h).sum();
        assert!((act.eval(x) - direct).abs() < 1e-14);
    }

    #[test]
    fn auto_truncation() {
        let act = synthesize_activation(&KernelSpec::gaussian_dot(0.1), Mode::Nngp, SignScheme::AllPlus, Truncation::Auto)
            .unwrap();
        assert_eq!(act.order(), 40);
        let sp = KernelSpec::spiky_smooth(KernelSpec::gaussian_dot(1.0), KernelSpec::gaussian_dot(0.05), 1.0);
        let act = synthesize_activation(&sp, Mode::Ntk, SignScheme::AllPlus, Truncation::Auto).unwrap();
        assert_eq!(act.order(), 80);
        assert!(matches!(
            synthesize_activation(&KernelSpec::laplace(1.0), Mode::Ntk, SignScheme::AllPlus, Truncation::Order(5)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn nngp_coefficients_square_to_kernel_coefficients() {
        for scheme in [SignScheme::AllPlus, SignScheme::BiAlternating, SignScheme::Random { seed: 3 }] {
            let act = synthesize_activation(&KernelSpec::gaussian_dot(0.2), Mode::Nngp, scheme, Truncation::Auto).unwrap();
            let sq: f64 = act.coeffs().iter().map(|a| a * a).sum();
            let b: f64 = act.kernel_coeffs().iter().sum();
            assert!((sq - b).abs() < 1e-12);
            for (a, s) in act.coeffs().iter().zip(act.signs()) {
                assert!(*a == 0.0 || a.signum() == f64::from(*s));
            }
        }
    }

    #[test]
    fn ntk_coefficient_ratio() {
        let gamma = 0.5;
        let act = synthesize_activation(&KernelSpec::gaussian_dot(gamma), Mode::Ntk, SignScheme::AllPlus, Truncation::Order(20))
            .unwrap();
        let a = act.coeffs();
        for i in 0..20 {
            let ratio = a[i + 1].powi(2) * (i + 2) as f64 / (a[i].powi(2) * (i + 1) as f64);
            assert!((ratio - (2.0 / gamma) / (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bi_alternating_signs() {
        assert_eq!(SignScheme::BiAlternating.signs(6), vec![1, 1, -1, -1, 1, 1]);
        assert_eq!(SignScheme::Alternating.signs(3), vec![1, -1, 1]);
        assert_eq!(
            SignScheme::Random { seed: 5 }.signs(64),
            SignScheme::Random { seed: 5 }.signs(64)
        );
    }

    #[test]
    fn constant_activation() {
        let act = synthesize_activation(&KernelSpec::taylor(vec![0.25]), Mode::Nngp, SignScheme::AllPlus, Truncation::Order(0))
            .unwrap();
        assert_eq!(act.eval(-3.0), 0.5);
        assert_eq!(act.eval(2.0), 0.5);
        assert_eq!(act.l2_norm(), 0.5);
    }

    #[test]
    fn sine_values() {
        assert!((sine_fluctuation(Mode::Nngp, 0.3, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let g = 0.2;
        assert!((sine_fluctuation(Mode::Ntk, g, 0.0).unwrap() - (g / 2.0).sqrt()).abs() < 1e-15);
        for x in [-0.4, 0.0, 0.013, 0.5] {
            let w = sine_fluctuation(Mode::Ntk, 1.0 / 5000.0, x).unwrap();
            let expected = 0.01 * ((100.0 * x).sin() + (100.0 * x).cos());
            assert!((w - expected).abs() < 1e-13, "{x}");
        }
        assert!(sine_fluctuation(Mode::Ntk, 0.0, 1.0).is_err());
    }

    #[test]
    fn sine_fluctuation_derivative() {
        let s = SineFluctuation::new(Mode::Ntk, 0.01).unwrap();
        let (x, h) = (0.37, 1e-6);
        let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
        assert!((s.derivative(x) - fd).abs() < 1e-6);
    }

    #[test]
    fn hermite_derivative() {
        let act = synthesize_activation(&KernelSpec::gaussian_dot(0.5), Mode::Ntk, SignScheme::BiAlternating, Truncation::Order(30))
            .unwrap();
        let (x, h) = (0.4, 1e-5);
        let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
        assert!((act.derivative(x) - fd).abs() < 1e-8);
    }

    #[test]
    fn sine_fit_error_single_point() {
        let g = 0.1;
        let act = synthesize_activation(&KernelSpec::gaussian_dot(g), Mode::Ntk, SignScheme::BiAlternating, Truncation::Auto)
            .unwrap();
        let err = sine_fit_error(&act, g, &[0.0]).unwrap();
        assert_eq!(err, (act.eval(0.0) - (g / 2.0).sqrt()).abs());
    }

    #[test]
    fn decomposition_trivial_and_bound_arithmetic() {
        let r = approx_decomposition_error(1.0, 0.05, 0.0, Mode::Ntk, 10).unwrap();
        assert_eq!(r.lhs, 0.0);
        let r = approx_decomposition_error(1.0, 0.02, 1.0, Mode::Ntk, 0).unwrap();
        assert!((r.bound - 4.0 * std::f64::consts::PI * 2.0 * 0.02).abs() < 1e-12);
        assert!(r.holds());
    }

    #[test]
    fn decomposition_rejects_mismatched_signs() {
        let full_spec = KernelSpec::spiky_smooth(KernelSpec::gaussian_dot(1.0), KernelSpec::gaussian_dot(0.1), 1.0);
        let t = Truncation::Order(60);
        let full = synthesize_activation(&full_spec, Mode::Ntk, SignScheme::AllPlus, t).unwrap();
        let smooth = synthesize_activation(&KernelSpec::gaussian_dot(1.0), Mode::Ntk, SignScheme::BiAlternating, t).unwrap();
        let spike = synthesize_activation(&KernelSpec::gaussian_dot(0.1), Mode::Ntk, SignScheme::AllPlus, t).unwrap();
        assert!(matches!(decomposition_error(&full, &smooth, &spike, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reconstruction_input_checks() {
        let act = synthesize_activation(&KernelSpec::gaussian_dot(0.5), Mode::Nngp, SignScheme::AllPlus, Truncation::Order(30))
            .unwrap();
        assert!(reconstruct_kernel_mc(&act, 1.5, 1000, 0).is_err());
        assert!(reconstruct_kernel_mc(&act, 0.5, 10, 0).is_err());
        let ntk = synthesize_activation(&KernelSpec::gaussian_dot(0.5), Mode::Ntk, SignScheme::AllPlus, Truncation::Order(30))
            .unwrap();
        assert!(matches!(reconstruct_kernel_mc(&ntk, 0.5, 1000, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn csv_table() {
        let act = synthesize_activation(&KernelSpec::gaussian_dot(0.5), Mode::Ntk, SignScheme::BiAlternating, Truncation::Order(3))
            .unwrap();
        let mut buf = Vec::new();
        act.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "i,b_i,s_i,a_i");
        assert_eq!(rows.len(), 5);
        assert!(rows[3].starts_with("2,") && rows[3].contains(",-1,"));
    }
}
