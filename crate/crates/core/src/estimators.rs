//! Kernel gradient flow, ridge and ridgeless regression.
//!
//! All estimators share the form `f(x) = k(x, X) α`. Gradient flow on the
//! regularized least-squares loss started at zero gives
//!
//! ```text
//! α(t, ρ) = (I - exp(-(2t/n)(K + ρnI))) (K + ρnI)^{-1} y
//! ```
//!
//! which is evaluated through the eigendecomposition of `K`. `t = ∞` gives
//! kernel ridge regression, and `t = ∞, ρ = 0` the minimum-norm interpolant
//! `K^+ y`.
//!
//! For spiky-smooth kernels the ridgeless fit solves `(K̃ + ρ̌Ǩ) α = y`, where
//! `ρ̌` is the weight inside the kernel. That weight carries no factor of `n`,
//! unlike the gradient-flow ridge `ρ` above.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{kernel_matrix, KernelMatrix, KernelSpec};
use crate::linalg::{Points, SymEigen};

/// Kernel matrix of a training set with a lazily cached eigendecomposition,
/// shared by every fit on the same points.
#[derive(Debug)]
pub struct KernelSystem {
    gram: KernelMatrix,
    eigen: OnceLock<SymEigen>,
}

impl KernelSystem {
    pub fn new(spec: &KernelSpec, x: &Points) -> Result<Arc<Self>> {
        Ok(Arc::new(Self {
            gram: kernel_matrix(spec, x)?,
            eigen: OnceLock::new(),
        }))
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.gram.spec
    }

    pub fn points(&self) -> &Points {
        &self.gram.points
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram.entries
    }

    pub fn n(&self) -> usize {
        self.gram.n()
    }

    pub fn eigen(&self) -> &SymEigen {
        self.eigen
            .get_or_init(|| SymEigen::new(&self.gram.entries).expect("kernel matrices are symmetric"))
    }

    /// Largest admissible constant gradient-descent step,
    /// `1 / (2(ρ + λ_max(K)/n))`.
    pub fn max_stable_step(&self, rho: f64) -> f64 {
        1.0 / (2.0 * (rho + self.eigen().max_value() / self.n() as f64))
    }

    fn check_labels(&self, y: &[f64]) -> Result<()> {
        check_dim(self.n(), y.len())?;
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("labels must be finite, got {bad}")));
        }
        Ok(())
    }

    /// Gradient flow (`t` may be `f64::INFINITY`) with ridge `ρ ≥ 0`.
    pub fn fit_gradient_flow(self: &Arc<Self>, y: &[f64], t: f64, rho: f64) -> Result<FitSolution> {
        self.check_labels(y)?;
        check_time_and_ridge(t, rho)?;
        let n = self.n();
        if t == 0.0 {
            return Ok(self.solution(DVector::zeros(n), t, rho));
        }
        let eig = self.eigen();
        let tol = eig.rank_tolerance();
        let y = DVector::from_column_slice(y);
        let mut coeffs = eig.vectors.tr_mul(&y);
        for (c, &lambda) in coeffs.iter_mut().zip(eig.values.iter()) {
            *c *= spectral_filter(if lambda > tol { lambda } else { 0.0 }, n, t, rho);
        }
        let alpha = &eig.vectors * coeffs;
        Ok(self.solution(alpha, t, rho))
    }

    /// `steps` iterations of `α ← α + η (2/n)(y - (K + ρnI) α)` from `α = 0`.
    pub fn fit_gradient_descent(
        self: &Arc<Self>,
        y: &[f64],
        steps: usize,
        eta: f64,
        rho: f64,
    ) -> Result<FitSolution> {
        self.check_labels(y)?;
        if !(eta.is_finite() && eta > 0.0) {
            return Err(invalid(format!("step size must be positive, got {eta}")));
        }
        check_time_and_ridge(steps as f64, rho)?;
        let n = self.n();
        let nf = n as f64;
        let y = DVector::from_column_slice(y);
        let mut alpha = DVector::zeros(n);
        for _ in 0..steps {
            let resid = &y - (self.gram() * &alpha + &alpha * (rho * nf));
            alpha += resid * (2.0 * eta / nf);
        }
        // GD time is measured in steps; the record keeps the step count.
        Ok(self.solution(alpha, steps as f64, rho))
    }

    fn solution(self: &Arc<Self>, alpha: DVector<f64>, t: f64, rho: f64) -> FitSolution {
        FitSolution {
            alpha,
            system: Arc::clone(self),
            t,
            rho,
        }
    }
}

fn check_time_and_ridge(t: f64, rho: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(invalid(format!("training time must be >= 0, got {t}")));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid(format!("ridge must be finite and >= 0, got {rho}")));
    }
    Ok(())
}

/// `g(λ) = (1 - e^{-(2t/n)(λ + ρn)}) / (λ + ρn)` with its limits: `1/(λ+ρn)`
/// at `t = ∞`, `0` on the null space at `t = ∞, ρ = 0`, and `2t/n` when
/// `λ + ρn = 0` at finite `t`.
fn spectral_filter(lambda: f64, n: usize, t: f64, rho: f64) -> f64 {
    let nf = n as f64;
    let shifted = lambda + rho * nf;
    if t.is_infinite() {
        return if shifted > 0.0 { 1.0 / shifted } else { 0.0 };
    }
    if shifted == 0.0 {
        return 2.0 * t / nf;
    }
    -(-2.0 * t / nf * shifted).exp_m1() / shifted
}

/// A fitted kernel predictor `f(x) = Σ_i α_i k(x, x_i)`.
#[derive(Clone, Debug)]
pub struct FitSolution {
    pub alpha: DVector<f64>,
    system: Arc<KernelSystem>,
    /// Gradient-flow time (`f64::INFINITY` for the limit), or the number of
    /// steps for gradient descent.
    pub t: f64,
    pub rho: f64,
}

impl FitSolution {
    pub fn spec(&self) -> &KernelSpec {
        self.system.spec()
    }

    pub fn train_points(&self) -> &Points {
        self.system.points()
    }

    pub fn system(&self) -> &Arc<KernelSystem> {
        &self.system
    }

    /// Cached eigendecomposition of the training kernel matrix.
    pub fn eig_cache(&self) -> Option<&SymEigen> {
        self.system.eigen.get()
    }

    pub fn record(&self) -> SolutionRecord {
        SolutionRecord {
            alpha: self.alpha.iter().copied().collect(),
            spec: self.spec().clone(),
            t: self.t.is_finite().then_some(self.t),
            rho: self.rho,
            n: self.alpha.len(),
            train_hash: self.train_points().content_hash(),
        }
    }
}

/// Provenance record of a fit. `t = None` stands for `t = ∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub alpha: Vec<f64>,
    pub spec: KernelSpec,
    pub t: Option<f64>,
    pub rho: f64,
    pub n: usize,
    pub train_hash: String,
}

pub fn fit_gradient_flow(spec: &KernelSpec, x: &Points, y: &[f64], t: f64, rho: f64) -> Result<FitSolution> {
    KernelSystem::new(spec, x)?.fit_gradient_flow(y, t, rho)
}

pub fn fit_gradient_descent(
    spec: &KernelSpec,
    x: &Points,
    y: &[f64],
    steps: usize,
    eta: f64,
    rho: f64,
) -> Result<FitSolution> {
    KernelSystem::new(spec, x)?.fit_gradient_descent(y, steps, eta, rho)
}

/// RKHS norm `sqrt(α^T K α)`.
pub fn rkhs_norm(sol: &FitSolution) -> f64 {
    let k_alpha = sol.system.gram() * &sol.alpha;
    sol.alpha.dot(&k_alpha).max(0.0).sqrt()
}

pub fn predict(sol: &FitSolution, x_test: &Points) -> Result<Vec<f64>> {
    predict_with(sol.spec(), sol.train_points(), &sol.alpha, x_test)
}

fn predict_with(spec: &KernelSpec, train: &Points, alpha: &DVector<f64>, x_test: &Points) -> Result<Vec<f64>> {
    if x_test.is_empty() {
        return Ok(Vec::new());
    }
    check_dim(train.dim(), x_test.dim())?;
    Ok(x_test
        .rows()
        .map(|x| {
            train
                .rows()
                .zip(alpha.iter())
                .map(|(xi, a)| a * spec.eval_unchecked(x, xi))
                .sum()
        })
        .collect())
}

/// Excess risk estimate on held-out points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskEstimate {
    /// `mean_j (f(x_j) - f*(x_j))^2`
    pub excess_risk: f64,
    /// `mean_j (f(x_j) - y_j)^2` when noisy test labels were supplied.
    pub test_mse: Option<f64>,
    pub n_test: usize,
}

/// Monte Carlo excess risk over `x_test`, which should be disjoint from the
/// training points (not checked).
pub fn excess_risk(
    sol: &FitSolution,
    x_test: &Points,
    f_star: &[f64],
    y_test: Option<&[f64]>,
) -> Result<RiskEstimate> {
    check_dim(x_test.len(), f_star.len())?;
    if let Some(y) = y_test {
        check_dim(x_test.len(), y.len())?;
    }
    if x_test.is_empty() {
        return Err(invalid("excess risk needs at least one test point"));
    }
    let pred = predict(sol, x_test)?;
    let mean_sq = |target: &[f64]| {
        pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
    };
    Ok(RiskEstimate {
        excess_risk: mean_sq(f_star),
        test_mse: y_test.map(mean_sq),
        n_test: pred.len(),
    })
}

/// The smooth and spike parts of a spiky-smooth predictor, sharing its `α`:
/// `signal(x) = k̃(x, X) α`, `spike(x) = ρ̌ ǩ(x, X) α`.
#[derive(Clone, Debug)]
pub struct SpikySmoothParts {
    smooth: KernelSpec,
    spike: KernelSpec,
    rho: f64,
    alpha: DVector<f64>,
    train: Points,
}

impl SpikySmoothParts {
    pub fn signal(&self, x: &Points) -> Result<Vec<f64>> {
        predict_with(&self.smooth, &self.train, &self.alpha, x)
    }

    pub fn spike(&self, x: &Points) -> Result<Vec<f64>> {
        if self.rho == 0.0 {
            check_dim(self.train.dim(), x.dim())?;
            return Ok(vec![0.0; x.len()]);
        }
        let raw = predict_with(&self.spike, &self.train, &self.alpha, x)?;
        Ok(raw.into_iter().map(|v| self.rho * v).collect())
    }
}

/// Splits a spiky-smooth fit into signal and spike components. Meant for the
/// ridgeless fit (`t = ∞`, `ρ = 0`), where the split reads
/// `(K̃ + ρ̌Ǩ)^{-1} y` through each kernel separately.
pub fn decompose_spiky_smooth(sol: &FitSolution) -> Result<SpikySmoothParts> {
    match sol.spec() {
        KernelSpec::SpikySmooth { smooth, spike, rho } => Ok(SpikySmoothParts {
            smooth: (**smooth).clone(),
            spike: (**spike).clone(),
            rho: *rho,
            alpha: sol.alpha.clone(),
            train: sol.train_points().clone(),
        }),
        other => Err(Error::Unsupported(format!(
            "signal/spike decomposition needs a spiky-smooth kernel, got {}",
            other.family_name()
        ))),
    }
}
