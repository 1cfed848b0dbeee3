//! Kernel families, kernel matrices and dot-product Taylor coefficients.
//!
//! Translation-invariant families use the Euclidean distance in ambient
//! coordinates, so points on `S^d` are passed as unit vectors in `R^{d+1}`.
//! The Gaussian kernel exists twice on purpose: [`KernelSpec::Gaussian`] is
//! `exp(-|x-y|^2 / γ)` and [`KernelSpec::GaussianDotProduct`] is
//! `exp(2(<x,y> - 1) / γ)`. The two agree on the unit sphere only.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{dot, squared_distance, Points};

/// Declarative description of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `exp(-|x - y| / γ)`
    Laplace { bandwidth: f64 },
    /// `exp(-|x - y|^2 / γ)`
    Gaussian { bandwidth: f64 },
    /// `κ(<x,y>)` with `κ(z) = exp(2(z - 1) / γ)`
    GaussianDotProduct { bandwidth: f64 },
    /// `κ(<x,y>)` with `κ(z) = Σ b_i z^i`
    TaylorDotProduct { coefficients: Vec<f64> },
    /// `k̃(x,y) + ρ·ǩ(x,y)`
    SpikySmooth {
        smooth: Box<KernelSpec>,
        spike: Box<KernelSpec>,
        rho: f64,
    },
}

impl KernelSpec {
    pub fn laplace(bandwidth: f64) -> Self {
        Self::Laplace { bandwidth }
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        Self::Gaussian { bandwidth }
    }

    pub fn gaussian_dot(bandwidth: f64) -> Self {
        Self::GaussianDotProduct { bandwidth }
    }

    pub fn taylor(coefficients: Vec<f64>) -> Self {
        Self::TaylorDotProduct { coefficients }
    }

    pub fn spiky_smooth(smooth: KernelSpec, spike: KernelSpec, rho: f64) -> Self {
        Self::SpikySmooth {
            smooth: Box::new(smooth),
            spike: Box::new(spike),
            rho,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Laplace { .. } => "laplace",
            Self::Gaussian { .. } => "gaussian",
            Self::GaussianDotProduct { .. } => "gaussian-dot",
            Self::TaylorDotProduct { .. } => "taylor",
            Self::SpikySmooth { .. } => "spiky-smooth",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Laplace { bandwidth }
            | Self::Gaussian { bandwidth }
            | Self::GaussianDotProduct { bandwidth } => {
                if !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
                }
                Ok(())
            }
            Self::TaylorDotProduct { coefficients } => {
                if let Some(b) = coefficients.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
                    return Err(invalid(format!(
                        "Taylor coefficients must be finite and nonnegative, got {b}"
                    )));
                }
                Ok(())
            }
            Self::SpikySmooth { smooth, spike, rho } => {
                if !(rho.is_finite() && *rho >= 0.0) {
                    return Err(invalid(format!("rho must be nonnegative, got {rho}")));
                }
                for part in [smooth, spike] {
                    if part.is_composite() {
                        return Err(invalid("spiky-smooth components must not be composite"));
                    }
                    part.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, Self::SpikySmooth { .. })
    }

    /// Smallest bandwidth appearing in the spec, if any.
    pub fn min_bandwidth(&self) -> Option<f64> {
        match self {
            Self::Laplace { bandwidth }
            | Self::Gaussian { bandwidth }
            | Self::GaussianDotProduct { bandwidth } => Some(*bandwidth),
            Self::TaylorDotProduct { .. } => None,
            Self::SpikySmooth { smooth, spike, .. } => {
                match (smooth.min_bandwidth(), spike.min_bandwidth()) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    /// Kernel value without dimension checks.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::Laplace { bandwidth } => (-squared_distance(x, y).sqrt() / bandwidth).exp(),
            Self::Gaussian { bandwidth } => (-squared_distance(x, y) / bandwidth).exp(),
            Self::GaussianDotProduct { bandwidth } => (2.0 * (dot(x, y) - 1.0) / bandwidth).exp(),
            Self::TaylorDotProduct { coefficients } => {
                let z = dot(x, y);
                coefficients.iter().rev().fold(0.0, |acc, b| acc * z + b)
            }
            Self::SpikySmooth { smooth, spike, rho } => {
                smooth.eval_unchecked(x, y) + rho * spike.eval_unchecked(x, y)
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Flat key-value record used by the CLI config files.
    ///
    /// Keys: `kernel` (family name), `bandwidth`, `coefficients`
    /// (comma-separated), and for spiky-smooth kernels `smooth`,
    /// `smooth_bandwidth`, `spike`, `spike_bandwidth`, `rho`.
    pub fn to_record(&self) -> BTreeMap<String, String> {
        let mut rec = BTreeMap::new();
        rec.insert("kernel".to_string(), self.family_name().to_string());
        match self {
            Self::Laplace { bandwidth }
            | Self::Gaussian { bandwidth }
            | Self::GaussianDotProduct { bandwidth } => {
                rec.insert("bandwidth".into(), bandwidth.to_string());
            }
            Self::TaylorDotProduct { coefficients } => {
                let joined: Vec<String> = coefficients.iter().map(f64::to_string).collect();
                rec.insert("coefficients".into(), joined.join(","));
            }
            Self::SpikySmooth { smooth, spike, rho } => {
                for (prefix, part) in [("smooth", smooth), ("spike", spike)] {
                    for (k, v) in part.to_record() {
                        let key = if k == "kernel" {
                            prefix.to_string()
                        } else {
                            format!("{prefix}_{k}")
                        };
                        rec.insert(key, v);
                    }
                }
                rec.insert("rho".into(), rho.to_string());
            }
        }
        rec
    }

    pub fn from_record(rec: &BTreeMap<String, String>) -> Result<Self> {
        Self::from_record_prefixed(rec, "")
    }

    fn from_record_prefixed(rec: &BTreeMap<String, String>, prefix: &str) -> Result<Self> {
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}_{k}")
            }
        };
        let family_key = if prefix.is_empty() {
            "kernel".to_string()
        } else {
            prefix.to_string()
        };
        let family = rec
            .get(&family_key)
            .ok_or_else(|| invalid(format!("missing key `{family_key}`")))?;
        let number = |k: &str| -> Result<f64> {
            let k = key(k);
            let raw = rec.get(&k).ok_or_else(|| invalid(format!("missing key `{k}`")))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("`{k}` is not a number: {raw}")))
        };
        let spec = match family.trim() {
            "laplace" => Self::laplace(number("bandwidth")?),
            "gaussian" => Self::gaussian(number("bandwidth")?),
            "gaussian-dot" => Self::gaussian_dot(number("bandwidth")?),
            "taylor" => {
                let k = key("coefficients");
                let raw = rec.get(&k).ok_or_else(|| invalid(format!("missing key `{k}`")))?;
                let coefficients = raw
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("bad coefficient {s}"))))
                    .collect::<Result<Vec<_>>>()?;
                Self::taylor(coefficients)
            }
            "spiky-smooth" if prefix.is_empty() => Self::spiky_smooth(
                Self::from_record_prefixed(rec, "smooth")?,
                Self::from_record_prefixed(rec, "spike")?,
                number("rho")?,
            ),
            other => return Err(invalid(format!("unknown kernel family `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Laplace { bandwidth } => write!(f, "laplace({bandwidth})"),
            Self::Gaussian { bandwidth } => write!(f, "gaussian({bandwidth})"),
            Self::GaussianDotProduct { bandwidth } => write!(f, "gaussian-dot({bandwidth})"),
            Self::TaylorDotProduct { coefficients } => {
                write!(f, "taylor[{} coefficients]", coefficients.len())
            }
            Self::SpikySmooth { smooth, spike, rho } => {
                write!(f, "spiky-smooth({smooth} + {rho}*{spike})")
            }
        }
    }
}

/// Kernel matrix `k(X, X)` together with the spec and points it came from.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub spec: KernelSpec,
    pub points: Points,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// Builds `k(X, X)`. Only the upper triangle is evaluated and mirrored, so
/// the result is exactly symmetric.
pub fn kernel_matrix(spec: &KernelSpec, points: &Points) -> Result<KernelMatrix> {
    spec.validate()?;
    if points.is_empty() {
        return Err(invalid("kernel matrix needs at least one point"));
    }
    let n = points.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(points.row(i), points.row(j));
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        entries,
        spec: spec.clone(),
        points: points.clone(),
    })
}

/// Rectangular matrix `k(rows, cols)`.
pub fn cross_kernel_matrix(spec: &KernelSpec, rows: &Points, cols: &Points) -> Result<DMatrix<f64>> {
    if !rows.is_empty() && !cols.is_empty() {
        check_dim(cols.dim(), rows.dim())?;
    }
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        spec.eval_unchecked(rows.row(i), cols.row(j))
    }))
}

/// Taylor coefficients of `exp(2(z-1)/γ)`, `b_i = e^{-2/γ} (2/γ)^i / i!`.
///
/// Evaluated as a running sum of logarithms so neither `(2/γ)^i`, `i!` nor
/// `e^{-2/γ}` is ever formed on its own.
fn gaussian_dot_coefficients(bandwidth: f64, count: usize) -> Vec<f64> {
    let log_ratio = (2.0 / bandwidth).ln();
    let mut log_b = -2.0 / bandwidth;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            log_b += log_ratio - (i as f64).ln();
        }
        out.push(log_b.exp());
    }
    out
}

/// Taylor coefficients `b_0..=b_{i_max}` of a dot-product kernel.
///
/// Supported: [`KernelSpec::GaussianDotProduct`], [`KernelSpec::TaylorDotProduct`]
/// (zero padded) and spiky-smooth combinations of those.
pub fn taylor_coefficients(spec: &KernelSpec, i_max: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let count = i_max + 1;
    match spec {
        KernelSpec::GaussianDotProduct { bandwidth } => Ok(gaussian_dot_coefficients(*bandwidth, count)),
        KernelSpec::TaylorDotProduct { coefficients } => {
            let mut out = coefficients.clone();
            out.resize(count, 0.0);
            Ok(out)
        }
        KernelSpec::SpikySmooth { smooth, spike, rho } => {
            let smooth = taylor_coefficients(smooth, i_max)?;
            let spike = taylor_coefficients(spike, i_max)?;
            Ok(smooth.iter().zip(&spike).map(|(a, b)| a + rho * b).collect())
        }
        other => Err(Error::Unsupported(format!(
            "{} is not a dot-product kernel with known Taylor coefficients",
            other.family_name()
        ))),
    }
}

/// Tail mass `Σ_{i > i_max} b_i` of the Taylor series.
pub fn taylor_tail(spec: &KernelSpec, i_max: usize) -> Result<f64> {
    spec.validate()?;
    match spec {
        KernelSpec::GaussianDotProduct { bandwidth } => {
            // Terms are Poisson(2/γ) weights; past the mode they decay faster
            // than geometrically, so sum until they stop contributing.
            let log_ratio = (2.0 / bandwidth).ln();
            let mode = 2.0 / bandwidth;
            let mut log_b = -2.0 / bandwidth;
            for i in 1..=i_max {
                log_b += log_ratio - (i as f64).ln();
            }
            let mut tail = 0.0;
            let mut i = i_max + 1;
            loop {
                log_b += log_ratio - (i as f64).ln();
                let term = log_b.exp();
                tail += term;
                if (i as f64) > mode && (term == 0.0 || term < tail * 1e-18) {
                    break;
                }
                i += 1;
            }
            Ok(tail)
        }
        KernelSpec::TaylorDotProduct { coefficients } => {
            Ok(coefficients.iter().skip(i_max + 1).sum())
        }
        KernelSpec::SpikySmooth { smooth, spike, rho } => {
            Ok(taylor_tail(smooth, i_max)? + rho * taylor_tail(spike, i_max)?)
        }
        other => Err(Error::Unsupported(format!(
            "{} is not a dot-product kernel with known Taylor coefficients",
            other.family_name()
        ))),
    }
}

/// Off-diagonal structure of a spike kernel matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpikeDiagnostics {
    pub min_pairwise_distance: f64,
    pub max_offdiag: f64,
    /// `(n - 1) * max_offdiag`; every eigenvalue of the spike matrix lies
    /// within this radius of 1 when the diagonal is 1.
    pub gershgorin_radius: f64,
}

pub fn spike_matrix_diagnostics(spike: &KernelSpec, points: &Points) -> Result<SpikeDiagnostics> {
    spike.validate()?;
    let n = points.len();
    if n < 2 {
        return Err(invalid("spike diagnostics need at least two points"));
    }
    let mut min_dist = f64::INFINITY;
    let mut max_offdiag = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points.row(i), points.row(j));
            min_dist = min_dist.min(squared_distance(a, b).sqrt());
            max_offdiag = max_offdiag.max(spike.eval_unchecked(a, b).abs());
        }
    }
    Ok(SpikeDiagnostics {
        min_pairwise_distance: min_dist,
        max_offdiag,
        gershgorin_radius: (n - 1) as f64 * max_offdiag,
    })
}
