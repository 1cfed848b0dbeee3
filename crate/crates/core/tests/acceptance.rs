//! Acceptance suite. Each test prints one `ACCEPTANCE <id> PASS|FAIL` line to
//! stderr (bypassing the harness capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use spiky_core::activations::{
    approx_decomposition_error, reconstruct_kernel_mc, synthesize_activation, Mode, SignScheme, Truncation,
};
use spiky_core::estimators::{excess_risk, predict, rkhs_norm, KernelSystem};
use spiky_core::experiments::{best_per_gamma, sweep_cells, Family, SweepConfig};
use spiky_core::kernels::{kernel_matrix, spike_matrix_diagnostics};
use spiky_core::linalg::eigenvalues_sym;
use spiky_core::networks::{init_network, train, Activation, Batch, TrainConfig};
use spiky_core::spectra::{convolution_kernel_matrix, simulate_excess_risk, spectral_lower_bound, UniformSphere};
use spiky_core::synthdata::{gen_fig1, generate, sample_sphere, Split, Target};
use spiky_core::KernelSpec;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    let line = format!(
        "ACCEPTANCE {id:02} {verdict} {name}: {detail} [{:.2}s, budget {}s]\n",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} over its time budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn a01_analytic_activation_oracle() {
    let start = Instant::now();
    let gamma = 0.5;
    let act = synthesize_activation(&KernelSpec::gaussian_dot(gamma), Mode::Nngp, SignScheme::AllPlus, Truncation::Order(60))
        .unwrap();
    let worst = (0..=80)
        .map(|j| {
            let x = -2.0 + 0.05 * j as f64;
            (act.eval(x) - ((2.0 / gamma).sqrt() * x - 2.0 / gamma).exp()).abs()
        })
        .fold(0.0, f64::max);
    report(1, "analytic activation oracle", worst < 1e-8, start.elapsed(), secs(1), &format!("max deviation {worst:.3e}"));
}

#[test]
fn a02_activation_norms() {
    let start = Instant::now();
    let mut worst = 0f64;
    for gamma in [0.2f64, 0.1, 0.05] {
        let order = (4.0 / gamma).ceil() as usize + 20;
        let spec = KernelSpec::gaussian_dot(gamma);
        for (mode, expected) in [(Mode::Nngp, 1.0), (Mode::Ntk, gamma / 2.0 * (1.0 - (-2.0 / gamma).exp()))] {
            let act = synthesize_activation(&spec, mode, SignScheme::AllPlus, Truncation::Order(order)).unwrap();
            worst = worst.max((act.l2_norm().powi(2) - expected).abs());
        }
    }
    report(2, "activation norms", worst < 1e-10, start.elapsed(), secs(1), &format!("max deviation {worst:.3e}"));
}

#[test]
fn a03_hermite_coefficient_peak() {
    let start = Instant::now();
    let mut offsets = Vec::new();
    for gamma in [0.2, 0.1, 0.05] {
        let act =
            synthesize_activation(&KernelSpec::gaussian_dot(gamma), Mode::Ntk, SignScheme::AllPlus, Truncation::Auto).unwrap();
        offsets.push(act.peak_index() as f64 - 2.0 / gamma);
    }
    let pass = offsets.iter().all(|o| o.abs() <= 5.0);
    report(3, "hermite coefficient peak", pass, start.elapsed(), secs(1), &format!("peak - 2/gamma = {offsets:?}"));
}

#[test]
fn a04_kernel_reconstruction() {
    let start = Instant::now();
    let gamma = 0.5;
    let act = synthesize_activation(&KernelSpec::gaussian_dot(gamma), Mode::Nngp, SignScheme::AllPlus, Truncation::Order(60))
        .unwrap();
    let mut zscores = Vec::new();
    for (k, z) in [0.0, 0.5, 0.9].into_iter().enumerate() {
        let est = reconstruct_kernel_mc(&act, z, 100_000, 100 + k as u64).unwrap();
        let exact = (2.0 * (z - 1.0) / gamma).exp();
        zscores.push((est.estimate - exact) / est.std_err);
    }
    let pass = zscores.iter().all(|s| s.abs() <= 4.0);
    report(4, "kernel reconstruction", pass, start.elapsed(), secs(10), &format!("z-scores {zscores:.2?}"));
}

#[test]
fn a05_additive_decomposition_bound() {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut pass = true;
    for gamma in [0.05, 0.02, 0.01] {
        for mode in [Mode::Ntk, Mode::Nngp] {
            let e = approx_decomposition_error(1.0, gamma, 1.0, mode, 0).unwrap();
            pass &= e.holds();
            rows.push(format!("{gamma}/{mode:?}: {:.2e}<={:.2e}", e.lhs, e.bound));
        }
    }
    report(5, "additive decomposition bound", pass, start.elapsed(), secs(5), &rows.join(", "));
}

#[test]
fn a06_estimator_identities() {
    let start = Instant::now();
    let spec = KernelSpec::laplace(1.0);
    let (mut resid, mut ridge_rel, mut violations) = (0f64, 0f64, 0);
    for seed in 0..20 {
        let data = generate(Target::FirstCoordinate, 2, 8, 0.25, seed, Split::Train).unwrap();
        let system = KernelSystem::new(&spec, &data.x).unwrap();
        let interp = system.fit_gradient_flow(&data.y, f64::INFINITY, 0.0).unwrap();
        let fitted = predict(&interp, &data.x).unwrap();
        resid = resid.max(fitted.iter().zip(&data.y).map(|(f, y)| (f - y).abs()).fold(0.0, f64::max));
        let bound = rkhs_norm(&interp);
        for rho in [0.0, 0.01, 1.0] {
            let mut last = 0.0;
            for t in [0.1, 1.0, 10.0, 100.0, f64::INFINITY] {
                let norm = rkhs_norm(&system.fit_gradient_flow(&data.y, t, rho).unwrap());
                if norm < last * (1.0 - 1e-12) || norm > bound * (1.0 + 1e-10) {
                    violations += 1;
                }
                last = norm;
            }
            if rho > 0.0 {
                let alpha = system.fit_gradient_flow(&data.y, f64::INFINITY, rho).unwrap().alpha;
                let lhs = system.gram() + DMatrix::<f64>::identity(8, 8) * (rho * 8.0);
                let direct = lhs.lu().solve(&DVector::from_column_slice(&data.y)).unwrap();
                ridge_rel = ridge_rel.max((&alpha - &direct).norm() / direct.norm());
            }
        }
    }
    let pass = resid < 1e-6 && ridge_rel < 1e-8 && violations == 0;
    let detail = format!("residual {resid:.2e}, ridge rel {ridge_rel:.2e}, norm violations {violations}");
    report(6, "estimator identities", pass, start.elapsed(), secs(5), &detail);
}

#[test]
fn a07_gradient_check() {
    let start = Instant::now();
    let data = gen_fig1(6, 0.25, 5).unwrap();
    let mut net = init_network(4, 2, 8, false, Activation::spiky_relu(1.0 / 5000.0).unwrap()).unwrap();
    let (_, grad) = net.loss_and_gradient(&data).unwrap();
    let theta = net.params_flat();
    let mut worst = 0f64;
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1e-3);
        let mut p = theta.clone();
        p[k] = theta[k] + h;
        net.set_params_flat(&p).unwrap();
        let up = net.mse(&data).unwrap();
        p[k] = theta[k] - h;
        net.set_params_flat(&p).unwrap();
        let down = net.mse(&data).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-8));
    }
    let detail = format!("{} parameters, max relative error {worst:.2e}", theta.len());
    report(7, "gradient check", worst < 1e-4, start.elapsed(), secs(5), &detail);
}

#[test]
fn a08_fig1_kernel_replica() {
    let start = Instant::now();
    let laplace = KernelSpec::laplace(0.4);
    let spiky = KernelSpec::spiky_smooth(KernelSpec::laplace(1.0), KernelSpec::laplace(0.01), 1.0);
    let (mut wins, mut resid) = (0, 0f64);
    for seed in 0..10 {
        let data = gen_fig1(15, 0.25, seed).unwrap();
        let test = generate(Target::FirstCoordinate, 1, 10_000, 0.25, seed, Split::Test).unwrap();
        let risk = |spec: &KernelSpec| {
            let sol = KernelSystem::new(spec, &data.x).unwrap().fit_gradient_flow(&data.y, f64::INFINITY, 0.0).unwrap();
            let r = excess_risk(&sol, &test.x, &test.f_star, None).unwrap().excess_risk;
            (r, sol)
        };
        let (r_lap, _) = risk(&laplace);
        let (r_spiky, sol) = risk(&spiky);
        let fitted = predict(&sol, &data.x).unwrap();
        resid = resid.max(fitted.iter().zip(&data.y).map(|(f, y)| (f - y).abs()).fold(0.0, f64::max));
        wins += usize::from(r_spiky < r_lap);
    }
    let pass = wins >= 7 && resid < 1e-4;
    let detail = format!("spiky-smooth wins {wins}/10, max train residual {resid:.2e}");
    report(8, "fig-1 kernel replica", pass, start.elapsed(), secs(30), &detail);
}

#[test]
fn a09_fig1_network_replica() {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let runs: Vec<(f64, f64, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let data = gen_fig1(15, 0.25, seed).unwrap();
                    let test = generate(Target::FirstCoordinate, 1, 2000, 0.25, seed, Split::Test).unwrap();
                    let cfg = TrainConfig {
                        lr: 0.04,
                        epochs: 2500,
                        batch: Batch::Stochastic(1),
                        seed,
                        record_every: 500,
                    };
                    let mut finals = Vec::new();
                    for act in [Activation::relu(), Activation::spiky_relu(1.0 / 5000.0).unwrap()] {
                        let mut net = init_network(1024, 2, seed, true, act).unwrap();
                        let trace = train(&mut net, &data, &cfg, &test).unwrap();
                        finals.push(*trace.last().unwrap());
                    }
                    (finals[1].train_mse, finals[1].test_mse, finals[0].test_mse)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let good = runs.iter().filter(|(tr, spiky, relu)| *tr < 0.02 && spiky < relu).count();
    let detail = runs
        .iter()
        .map(|(tr, s, r)| format!("train {tr:.4} test {s:.3} vs relu {r:.3}"))
        .collect::<Vec<_>>()
        .join("; ");
    report(9, "fig-1 network replica", good >= 4, start.elapsed(), secs(600), &format!("{good}/5 seeds: {detail}"));
}

#[test]
fn a10_spectral_bound_validity() {
    let start = Instant::now();
    let spec = KernelSpec::laplace(1.0);
    let (noise, seed) = (0.25, 3);
    let train_set = gen_fig1(30, noise, seed).unwrap();
    let test = generate(Target::FirstCoordinate, 1, 2000, noise, seed, Split::Test).unwrap();
    let k = kernel_matrix(&spec, &train_set.x).unwrap().entries;
    let ks = convolution_kernel_matrix(&spec, &train_set.x, &UniformSphere { d: 1 }, 10_000, seed).unwrap();
    let bound = |t: f64| spectral_lower_bound(&k, &ks, t, 0.0, noise).unwrap().bound;
    let sim = simulate_excess_risk(&spec, &train_set, &test, f64::INFINITY, 0.0, 50, seed).unwrap();
    let b_inf = bound(f64::INFINITY);
    let series: Vec<f64> = [0.1, 1.0, 10.0, f64::INFINITY].into_iter().map(bound).collect();
    let monotone = series.windows(2).all(|w| w[0] <= w[1]);
    let pass = b_inf <= sim.estimate + 2.0 * sim.std_err && bound(0.0) == 0.0 && monotone;
    let detail = format!(
        "bound {b_inf:.4} vs simulated {:.4} +- {:.4}, bound(0) {}, bounds over t {series:.4?}",
        sim.estimate,
        sim.std_err,
        bound(0.0)
    );
    report(10, "spectral bound validity", pass, start.elapsed(), secs(60), &detail);
}

#[test]
fn a11_gershgorin_spike_diagnostic() {
    let start = Instant::now();
    let spike = KernelSpec::laplace(0.01);
    let x = sample_sphere(1, 20, 17).unwrap();
    let diag = spike_matrix_diagnostics(&spike, &x).unwrap();
    let ev = eigenvalues_sym(&kernel_matrix(&spike, &x).unwrap().entries).unwrap();
    let radius = 19.0 * diag.max_offdiag;
    let pass = ev.iter().all(|l| (l - 1.0).abs() <= radius) && (diag.gershgorin_radius - radius).abs() <= 1e-15;
    let detail = format!(
        "eigenvalues in [{:.6}, {:.6}], interval 1 +- {radius:.3e}",
        ev[ev.len() - 1],
        ev[0]
    );
    report(11, "gershgorin spike diagnostic", pass, start.elapsed(), secs(1), &detail);
}

#[test]
fn a12_hyperparameter_sweep_trend() {
    let start = Instant::now();
    let cfg = SweepConfig {
        n: 300,
        d: 2,
        noise_variance: 0.5,
        smooth_bandwidth: 1.0,
        gammas: vec![0.5, 0.1, 0.02],
        families: vec![Family::Laplace],
        ..SweepConfig::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cells = sweep_cells(&cfg, 0, jobs).unwrap();
    let best = best_per_gamma(&cells);
    let risks: Vec<f64> = best.iter().map(|b| b.excess_risk).collect();
    let pass = best.len() == 3 && risks.windows(2).all(|w| w[1] <= w[0]);
    let detail = best
        .iter()
        .map(|b| format!("gamma {} best {:.4} at rho {}", b.gamma, b.excess_risk, b.rho))
        .collect::<Vec<_>>()
        .join("; ");
    report(12, "hyperparameter sweep trend", pass, start.elapsed(), secs(120), &detail);
}
