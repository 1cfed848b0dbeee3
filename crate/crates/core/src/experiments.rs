//! Experiment drivers: each subcommand reads a flat key-value config, runs
//! one experiment and returns its tables (CSV), documents (JSON) and a summary.
//! Nothing here touches the filesystem; the CLI owns all output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use serde_json::{json, Value};

use crate::activations::{sine_fit_error, synthesize_activation, Mode, SignScheme, Truncation};
use crate::error::{invalid, Error, Result};
use crate::estimators::{decompose_spiky_smooth, excess_risk, predict, rkhs_norm, FitSolution, KernelSystem};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::Points;
use crate::networks::{decompose_network, init_network, train, Activation, Batch, TrainConfig};
use crate::spectra::{convolution_kernel_matrix, simulate_excess_risk, spectral_lower_bound, UniformSphere};
use crate::synthdata::{generate, BenchmarkVariant, Dataset, Split, Target};

/// A CSV table held in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Everything an experiment produces.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    /// `(stem, table)`; written as `<stem>.csv`.
    pub tables: Vec<(String, Table)>,
    /// `(stem, document)`; written as `<stem>.json`.
    pub documents: Vec<(String, Value)>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

impl ExperimentOutput {
    fn table(&mut self, stem: impl Into<String>, table: Table) {
        self.tables.push((stem.into(), table));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Fig1Kernel,
    Fig1Nn,
    HyperparamSweep,
    SpectralBound,
    ActivationTable,
    SineFit,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Self::Fig1Kernel,
        Self::Fig1Nn,
        Self::HyperparamSweep,
        Self::SpectralBound,
        Self::ActivationTable,
        Self::SineFit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1Kernel => "fig1-kernel",
            Self::Fig1Nn => "fig1-nn",
            Self::HyperparamSweep => "hyperparam-sweep",
            Self::SpectralBound => "spectral-bound",
            Self::ActivationTable => "activation-table",
            Self::SineFit => "sine-fit",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown subcommand `{s}`")))
    }
}

/// A validated configuration for one subcommand.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Configured {
    Fig1Kernel(Fig1KernelConfig),
    Fig1Nn(Fig1NnConfig),
    HyperparamSweep(SweepConfig),
    SpectralBound(SpectralConfig),
    ActivationTable(ActivationTableConfig),
    SineFit(SineFitConfig),
}

impl Configured {
    /// Applies `params` over the defaults of `sub`. Unknown keys and
    /// unparsable values are errors.
    pub fn new(sub: Subcommand, params: &BTreeMap<String, String>) -> Result<Self> {
        Ok(match sub {
            Subcommand::Fig1Kernel => Self::Fig1Kernel(configure(params)?),
            Subcommand::Fig1Nn => Self::Fig1Nn(configure(params)?),
            Subcommand::HyperparamSweep => Self::HyperparamSweep(configure(params)?),
            Subcommand::SpectralBound => Self::SpectralBound(configure(params)?),
            Subcommand::ActivationTable => Self::ActivationTable(configure(params)?),
            Subcommand::SineFit => Self::SineFit(configure(params)?),
        })
    }

    /// Fully resolved configuration, defaults included.
    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("configs are serializable")
    }

    pub fn run(&self, seed: u64, jobs: usize) -> Result<ExperimentOutput> {
        let jobs = jobs.max(1);
        match self {
            Self::Fig1Kernel(c) => run_fig1_kernel(c, seed, jobs),
            Self::Fig1Nn(c) => run_fig1_nn(c, seed, jobs),
            Self::HyperparamSweep(c) => run_hyperparam_sweep(c, seed, jobs),
            Self::SpectralBound(c) => run_spectral_bound(c, seed),
            Self::ActivationTable(c) => run_activation_table(c),
            Self::SineFit(c) => run_sine_fit(c),
        }
    }
}

/// Shared behaviour of the per-subcommand configs.
pub trait ExperimentConfig: Default + Serialize {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

pub fn configure<C: ExperimentConfig>(params: &BTreeMap<String, String>) -> Result<C> {
    let mut cfg = C::default();
    for (k, v) in params {
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("cannot parse `{key}` from `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(format!("`{key}` must be true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn unknown_key(key: &str) -> Error {
    invalid(format!("unknown config key `{key}`"))
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn ser_f64_strings<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(values.iter().map(|v| num(*v)))
}

/// Radial kernel family used for both parts of a spiky-smooth kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Laplace,
    Gaussian,
}

impl Family {
    pub fn kernel(self, bandwidth: f64) -> KernelSpec {
        match self {
            Self::Laplace => KernelSpec::laplace(bandwidth),
            Self::Gaussian => KernelSpec::gaussian(bandwidth),
        }
    }

    pub fn spiky_smooth(self, smooth_bw: f64, spike_bw: f64, rho: f64) -> KernelSpec {
        KernelSpec::spiky_smooth(self.kernel(smooth_bw), self.kernel(spike_bw), rho)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Self::Laplace),
            "gaussian" => Ok(Self::Gaussian),
            _ => Err(invalid(format!("unknown kernel family `{s}`"))),
        }
    }
}

fn parse_mode(value: &str) -> Result<Mode> {
    match value {
        "ntk" => Ok(Mode::Ntk),
        "nngp" => Ok(Mode::Nngp),
        _ => Err(invalid(format!("`mode` must be ntk or nngp, got `{value}`"))),
    }
}

fn parse_signs(value: &str, seed: u64) -> Result<SignScheme> {
    match value {
        "all-plus" => Ok(SignScheme::AllPlus),
        "alternating" => Ok(SignScheme::Alternating),
        "bi-alternating" => Ok(SignScheme::BiAlternating),
        "random" => Ok(SignScheme::Random { seed }),
        _ => Err(invalid(format!(
            "`signs` must be all-plus, alternating, bi-alternating or random, got `{value}`"
        ))),
    }
}

fn parse_truncation(value: &str) -> Result<Truncation> {
    if value == "auto" {
        Ok(Truncation::Auto)
    } else {
        Ok(Truncation::Order(parse("order", value)?))
    }
}

fn truncation_label(t: Truncation) -> String {
    match t {
        Truncation::Auto => "auto".into(),
        Truncation::Order(i) => i.to_string(),
    }
}

/// Runs `f` over `items` on up to `jobs` threads, keeping the input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let workers = jobs.min(items.len());
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

/// `count` equispaced angles on `[0, 2π)` and the matching points on `S^1`.
pub fn circle_grid(count: usize) -> (Vec<f64>, Points) {
    let theta: Vec<f64> = (0..count).map(|j| 2.0 * PI * j as f64 / count as f64).collect();
    let data = theta.iter().flat_map(|t| [t.cos(), t.sin()]).collect();
    (theta, Points::new(2, data).expect("two coordinates per angle"))
}

fn angle(x: &[f64]) -> f64 {
    x[1].atan2(x[0]).rem_euclid(2.0 * PI)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn max_residual(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max)
}

fn singular_warning(label: &str, seed: u64, sol: &FitSolution) -> Option<String> {
    let eig = sol.system().eigen();
    let tol = eig.rank_tolerance();
    let dropped = eig.values.iter().filter(|v| **v <= tol).count();
    (dropped > 0).then(|| {
        format!("seed {seed}: {label} kernel matrix is numerically singular, pseudoinverse dropped {dropped} directions")
    })
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig1KernelConfig {
    pub n: usize,
    pub noise_variance: f64,
    pub kernel: Family,
    pub baseline_bandwidth: f64,
    pub smooth_bandwidth: f64,
    pub spike_bandwidth: f64,
    pub rho: f64,
    pub grid: usize,
    pub test_points: usize,
    pub repeats: usize,
}

impl Default for Fig1KernelConfig {
    fn default() -> Self {
        Self {
            n: 15,
            noise_variance: 0.25,
            kernel: Family::Laplace,
            baseline_bandwidth: 0.4,
            smooth_bandwidth: 1.0,
            spike_bandwidth: 0.01,
            rho: 1.0,
            grid: 512,
            test_points: 10_000,
            repeats: 1,
        }
    }
}

impl ExperimentConfig for Fig1KernelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "kernel" => self.kernel = value.parse()?,
            "baseline_bandwidth" => self.baseline_bandwidth = parse(key, value)?,
            "smooth_bandwidth" => self.smooth_bandwidth = parse(key, value)?,
            "spike_bandwidth" => self.spike_bandwidth = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "test_points" => self.test_points = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        require(self.n >= 1, "`n` must be >= 1")?;
        require(self.noise_variance >= 0.0, "`noise_variance` must be >= 0")?;
        require(self.grid >= 1 && self.test_points >= 1, "`grid` and `test_points` must be >= 1")?;
        require(self.repeats >= 1, "`repeats` must be >= 1")?;
        self.kernel.kernel(self.baseline_bandwidth).validate()?;
        self.kernel
            .spiky_smooth(self.smooth_bandwidth, self.spike_bandwidth, self.rho)
            .validate()
    }
}

struct Fig1KernelRun {
    seed: u64,
    data: Dataset,
    baseline: FitSolution,
    spiky: FitSolution,
    risks: [(f64, Option<f64>, f64, f64); 2],
}

fn fig1_kernel_single(c: &Fig1KernelConfig, seed: u64) -> Result<Fig1KernelRun> {
    let data = generate(Target::FirstCoordinate, 1, c.n, c.noise_variance, seed, Split::Train)?;
    let test = generate(Target::FirstCoordinate, 1, c.test_points, c.noise_variance, seed, Split::Test)?;
    let specs = [
        c.kernel.kernel(c.baseline_bandwidth),
        c.kernel.spiky_smooth(c.smooth_bandwidth, c.spike_bandwidth, c.rho),
    ];
    let mut fits = Vec::new();
    let mut risks = [(0.0, None, 0.0, 0.0); 2];
    for (spec, slot) in specs.iter().zip(risks.iter_mut()) {
        let sol = KernelSystem::new(spec, &data.x)?.fit_gradient_flow(&data.y, f64::INFINITY, 0.0)?;
        let risk = excess_risk(&sol, &test.x, &test.f_star, Some(&test.y))?;
        let resid = max_residual(&predict(&sol, &data.x)?, &data.y);
        *slot = (risk.excess_risk, risk.test_mse, resid, rkhs_norm(&sol));
        fits.push(sol);
    }
    let spiky = fits.pop().expect("two fits");
    let baseline = fits.pop().expect("two fits");
    Ok(Fig1KernelRun {
        seed,
        data,
        baseline,
        spiky,
        risks,
    })
}

/// Ridgeless regression with a plain kernel and with a spiky-smooth kernel
/// on noisy samples of `x ↦ x_1` on the circle.
pub fn run_fig1_kernel(c: &Fig1KernelConfig, seed: u64, jobs: usize) -> Result<ExperimentOutput> {
    let seeds: Vec<u64> = (0..c.repeats as u64).map(|r| seed + r).collect();
    let runs = par_map(&seeds, jobs, |s| fig1_kernel_single(c, *s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut out = ExperimentOutput::default();

    let mut risks = Table::new(&["seed", "estimator", "excess_risk", "test_mse", "max_train_residual", "rkhs_norm"]);
    let mut wins = 0;
    let mut means = [0.0; 2];
    for run in &runs {
        for (label, sol, r) in [("baseline", &run.baseline, run.risks[0]), ("spiky-smooth", &run.spiky, run.risks[1])] {
            risks.push(vec![
                run.seed.to_string(),
                label.into(),
                num(r.0),
                num(r.1.unwrap_or(f64::NAN)),
                num(r.2),
                num(r.3),
            ]);
            out.warnings.extend(singular_warning(label, run.seed, sol));
        }
        wins += usize::from(run.risks[1].0 < run.risks[0].0);
        means[0] += run.risks[0].0 / runs.len() as f64;
        means[1] += run.risks[1].0 / runs.len() as f64;
    }
    out.table("risks", risks);

    let first = &runs[0];
    let (theta, grid) = circle_grid(c.grid);
    let base_curve = predict(&first.baseline, &grid)?;
    let spiky_curve = predict(&first.spiky, &grid)?;
    let parts = decompose_spiky_smooth(&first.spiky)?;
    let (signal, spike) = (parts.signal(&grid)?, parts.spike(&grid)?);
    let mut curves = Table::new(&["theta", "x1", "x2", "f_star", "baseline", "spiky_smooth", "signal", "spike"]);
    for (j, x) in grid.rows().enumerate() {
        curves.push(vec![
            num(theta[j]),
            num(x[0]),
            num(x[1]),
            num(Target::FirstCoordinate.eval(x)),
            num(base_curve[j]),
            num(spiky_curve[j]),
            num(signal[j]),
            num(spike[j]),
        ]);
    }
    out.table("grid", curves);

    let mut train_table = Table::new(&["theta", "x1", "x2", "y", "f_star", "noise"]);
    for (i, x) in first.data.x.rows().enumerate() {
        let (y, f) = (first.data.y[i], first.data.f_star[i]);
        train_table.push(vec![num(angle(x)), num(x[0]), num(x[1]), num(y), num(f), num(y - f)]);
    }
    out.table("train", train_table);

    out.summary = json!({
        "seeds": seeds,
        "mean_excess_risk": {"baseline": means[0], "spiky_smooth": means[1]},
        "spiky_smooth_wins": wins,
        "max_train_residual_spiky_smooth": runs.iter().map(|r| r.risks[1].2).fold(0.0, f64::max),
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig1NnConfig {
    pub n: usize,
    pub noise_variance: f64,
    pub width: usize,
    pub antisymmetric: bool,
    pub lr: f64,
    pub epochs: usize,
    /// Minibatch size; 0 means full-batch gradient descent.
    pub batch: usize,
    pub spike_bandwidth: f64,
    pub record_every: usize,
    pub test_points: usize,
    pub grid: usize,
    pub repeats: usize,
}

impl Default for Fig1NnConfig {
    fn default() -> Self {
        Self {
            n: 15,
            noise_variance: 0.25,
            width: 1024,
            antisymmetric: true,
            lr: 0.04,
            epochs: 2500,
            batch: 1,
            spike_bandwidth: 1.0 / 5000.0,
            record_every: 50,
            test_points: 2000,
            grid: 512,
            repeats: 1,
        }
    }
}

impl ExperimentConfig for Fig1NnConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "antisymmetric" => self.antisymmetric = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "spike_bandwidth" => self.spike_bandwidth = parse(key, value)?,
            "record_every" => self.record_every = parse(key, value)?,
            "test_points" => self.test_points = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        require(self.n >= 1 && self.width >= 1, "`n` and `width` must be >= 1")?;
        require(self.noise_variance >= 0.0, "`noise_variance` must be >= 0")?;
        require(self.lr >= 0.0, "`lr` must be >= 0")?;
        require(self.epochs >= 1 && self.record_every >= 1, "`epochs` and `record_every` must be >= 1")?;
        require(self.spike_bandwidth > 0.0, "`spike_bandwidth` must be > 0")?;
        require(self.grid >= 1 && self.test_points >= 1, "`grid` and `test_points` must be >= 1")?;
        require(self.repeats >= 1, "`repeats` must be >= 1")
    }
}

/// Trains a pure-ReLU network and a ReLU network with a sine fluctuation on
/// identical data, initial weights and SGD order.
pub fn run_fig1_nn(c: &Fig1NnConfig, seed: u64, jobs: usize) -> Result<ExperimentOutput> {
    let seeds: Vec<u64> = (0..c.repeats as u64).map(|r| seed + r).collect();
    let tasks: Vec<(u64, bool)> = seeds.iter().flat_map(|s| [(*s, false), (*s, true)]).collect();
    let cfg_for = |s: u64| TrainConfig {
        lr: c.lr,
        epochs: c.epochs,
        batch: if c.batch == 0 { Batch::Full } else { Batch::Stochastic(c.batch) },
        seed: s,
        record_every: c.record_every,
    };
    let results = par_map(&tasks, jobs, |&(s, spiky)| -> Result<_> {
        let data = generate(Target::FirstCoordinate, 1, c.n, c.noise_variance, s, Split::Train)?;
        let test = generate(Target::FirstCoordinate, 1, c.test_points, c.noise_variance, s, Split::Test)?;
        let act = if spiky {
            Activation::spiky_relu(c.spike_bandwidth)?
        } else {
            Activation::relu()
        };
        let mut net = init_network(c.width, 2, s, c.antisymmetric, act)?;
        let trace = train(&mut net, &data, &cfg_for(s), &test)?;
        Ok((data, net, trace))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::default();
    let mut finals = Table::new(&["seed", "network", "train_mse", "test_mse", "spike_noise_correlation"]);
    let mut wins = 0;
    let mut spiky_train_ok = 0;
    for (pair, s) in results.chunks(2).zip(&seeds) {
        let mut test_mse = [0.0; 2];
        for (k, (data, net, trace)) in pair.iter().enumerate() {
            let label = if k == 0 { "relu" } else { "spiky" };
            let mut table = Table::new(&["epoch", "train_mse", "test_mse"]);
            for row in &trace.steps {
                table.push(vec![row.epoch.to_string(), num(row.train_mse), num(row.test_mse)]);
            }
            out.table(format!("trace_{label}_seed{s}"), table);
            let last = trace.last().expect("trace has the epoch-0 row");
            test_mse[k] = last.test_mse;
            let corr = if k == 1 {
                let parts = decompose_network(net)?;
                let spikes = data.x.rows().map(|x| parts.spike(x)).collect::<Result<Vec<_>>>()?;
                spiky_train_ok += usize::from(last.train_mse < 0.02);
                pearson(&spikes, &data.noise())
            } else {
                f64::NAN
            };
            finals.push(vec![s.to_string(), label.into(), num(last.train_mse), num(last.test_mse), num(corr)]);
        }
        wins += usize::from(test_mse[1] < test_mse[0]);
    }
    out.table("finals", finals);

    let (data, relu_net, _) = &results[0];
    let (_, spiky_net, _) = &results[1];
    let parts = decompose_network(spiky_net)?;
    let (theta, grid) = circle_grid(c.grid);
    let mut curves = Table::new(&["theta", "x1", "x2", "f_star", "relu", "spiky", "spiky_relu_part", "spiky_spike_part"]);
    for (j, x) in grid.rows().enumerate() {
        curves.push(vec![
            num(theta[j]),
            num(x[0]),
            num(x[1]),
            num(Target::FirstCoordinate.eval(x)),
            num(relu_net.forward(x)?),
            num(spiky_net.forward(x)?),
            num(parts.base(x)?),
            num(parts.spike(x)?),
        ]);
    }
    out.table("grid", curves);
    let mut train_table = Table::new(&["theta", "x1", "x2", "y", "noise", "spike_part"]);
    for (i, x) in data.x.rows().enumerate() {
        train_table.push(vec![
            num(angle(x)),
            num(x[0]),
            num(x[1]),
            num(data.y[i]),
            num(data.y[i] - data.f_star[i]),
            num(parts.spike(x)?),
        ]);
    }
    out.table("train", train_table);

    out.summary = json!({
        "seeds": seeds,
        "spiky_wins": wins,
        "spiky_train_mse_below_0.02": spiky_train_ok,
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub n: usize,
    pub d: usize,
    pub noise_variance: f64,
    pub smooth_bandwidth: f64,
    #[serde(serialize_with = "ser_f64_strings")]
    pub gammas: Vec<f64>,
    #[serde(serialize_with = "ser_f64_strings")]
    pub rhos: Vec<f64>,
    pub families: Vec<Family>,
    pub variant: BenchmarkVariant,
    pub test_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: 2,
            noise_variance: 0.5,
            smooth_bandwidth: 1.0,
            gammas: vec![0.5, 0.1, 0.02],
            rhos: vec![0.001, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            families: vec![Family::Laplace, Family::Gaussian],
            variant: BenchmarkVariant::A,
            test_points: 2000,
        }
    }
}

impl ExperimentConfig for SweepConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "smooth_bandwidth" => self.smooth_bandwidth = parse(key, value)?,
            "gammas" => self.gammas = parse_list(key, value)?,
            "rhos" => self.rhos = parse_list(key, value)?,
            "families" => self.families = parse_list(key, value)?,
            "variant" => {
                self.variant = match value {
                    "A" | "a" => BenchmarkVariant::A,
                    "B" | "b" => BenchmarkVariant::B,
                    _ => return Err(invalid(format!("`variant` must be A or B, got `{value}`"))),
                }
            }
            "test_points" => self.test_points = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        require(self.n >= 1 && self.test_points >= 1, "`n` and `test_points` must be >= 1")?;
        require(self.d >= 2, "`d` must be >= 2 for the benchmark targets")?;
        require(self.noise_variance >= 0.0, "`noise_variance` must be >= 0")?;
        require(!self.gammas.is_empty() && !self.rhos.is_empty(), "`gammas` and `rhos` must be nonempty")?;
        require(!self.families.is_empty(), "`families` must be nonempty")?;
        require(self.smooth_bandwidth > 0.0, "`smooth_bandwidth` must be > 0")?;
        require(self.gammas.iter().all(|g| *g > 0.0), "`gammas` must be > 0")?;
        require(self.rhos.iter().all(|r| *r >= 0.0), "`rhos` must be >= 0")
    }
}

/// One sweep cell result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub family: Family,
    pub gamma: f64,
    pub rho: f64,
    pub excess_risk: std::result::Result<f64, String>,
}

/// Best cell per `(family, γ)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepBest {
    pub family: Family,
    pub gamma: f64,
    pub rho: f64,
    pub excess_risk: f64,
}

/// Excess risk of ridgeless spiky-smooth regression over a `γ × ρ` grid.
/// Failed cells are recorded and skipped.
pub fn sweep_cells(c: &SweepConfig, seed: u64, jobs: usize) -> Result<Vec<SweepCell>> {
    let data = generate(c.variant.target(), c.d, c.n, c.noise_variance, seed, Split::Train)?;
    let test = generate(c.variant.target(), c.d, c.test_points, c.noise_variance, seed, Split::Test)?;
    let cells: Vec<(Family, f64, f64)> = c
        .families
        .iter()
        .flat_map(|f| c.gammas.iter().flat_map(move |g| c.rhos.iter().map(move |r| (*f, *g, *r))))
        .collect();
    Ok(par_map(&cells, jobs, |&(family, gamma, rho)| {
        let risk = (|| -> Result<f64> {
            let spec = family.spiky_smooth(c.smooth_bandwidth, gamma, rho);
            let sol = KernelSystem::new(&spec, &data.x)?.fit_gradient_flow(&data.y, f64::INFINITY, 0.0)?;
            let r = excess_risk(&sol, &test.x, &test.f_star, None)?.excess_risk;
            if r.is_finite() {
                Ok(r)
            } else {
                Err(invalid("non-finite excess risk"))
            }
        })();
        SweepCell {
            family,
            gamma,
            rho,
            excess_risk: risk.map_err(|e| e.to_string()),
        }
    }))
}

pub fn best_per_gamma(cells: &[SweepCell]) -> Vec<SweepBest> {
    let mut best: Vec<SweepBest> = Vec::new();
    for cell in cells {
        let Ok(risk) = cell.excess_risk else { continue };
        match best.iter_mut().find(|b| b.family == cell.family && b.gamma == cell.gamma) {
            Some(b) if risk < b.excess_risk => {
                b.rho = cell.rho;
                b.excess_risk = risk;
            }
            Some(_) => {}
            None => best.push(SweepBest {
                family: cell.family,
                gamma: cell.gamma,
                rho: cell.rho,
                excess_risk: risk,
            }),
        }
    }
    best
}

pub fn run_hyperparam_sweep(c: &SweepConfig, seed: u64, jobs: usize) -> Result<ExperimentOutput> {
    let cells = sweep_cells(c, seed, jobs)?;
    let mut out = ExperimentOutput::default();
    let mut heat = Table::new(&["family", "gamma", "rho", "excess_risk", "status"]);
    for cell in &cells {
        let family = serde_json::to_value(cell.family).expect("family serializes");
        let family = family.as_str().unwrap_or_default().to_string();
        let (risk, status) = match &cell.excess_risk {
            Ok(r) => (num(*r), "ok".to_string()),
            Err(e) => {
                out.warnings
                    .push(format!("cell {family} gamma={} rho={} failed: {e}", cell.gamma, cell.rho));
                ("NaN".to_string(), format!("error: {}", e.replace([',', '\n'], ";")))
            }
        };
        heat.push(vec![family, num(cell.gamma), num(cell.rho), risk, status]);
    }
    out.table("heatmap", heat);

    let best = best_per_gamma(&cells);
    let mut best_table = Table::new(&["family", "gamma", "best_rho", "best_excess_risk"]);
    let mut trend = serde_json::Map::new();
    for family in &c.families {
        let mut rows: Vec<&SweepBest> = best.iter().filter(|b| b.family == *family).collect();
        rows.sort_by(|a, b| b.gamma.total_cmp(&a.gamma));
        let monotone = rows.windows(2).all(|w| w[1].excess_risk <= w[0].excess_risk);
        let name = serde_json::to_value(family).expect("family serializes");
        let name = name.as_str().unwrap_or_default().to_string();
        for b in &rows {
            best_table.push(vec![name.clone(), num(b.gamma), num(b.rho), num(b.excess_risk)]);
        }
        trend.insert(name, json!({"best_risk_nonincreasing_as_gamma_shrinks": monotone}));
    }
    out.table("best", best_table);
    out.summary = json!({
        "cells": cells.len(),
        "failed_cells": cells.iter().filter(|c| c.excess_risk.is_err()).count(),
        "families": trend,
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

fn kernel_fields_default(family: &str, bandwidth: f64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("kernel".to_string(), family.to_string()),
        ("bandwidth".to_string(), num(bandwidth)),
    ])
}

const KERNEL_KEYS: [&str; 8] = [
    "kernel",
    "bandwidth",
    "coefficients",
    "smooth",
    "smooth_bandwidth",
    "spike",
    "spike_bandwidth",
    "rho",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralConfig {
    /// Kernel description in the flat record form of [`KernelSpec::from_record`].
    pub kernel_fields: BTreeMap<String, String>,
    pub d: usize,
    pub n: usize,
    pub noise_variance: f64,
    /// Ridge parameter of the gradient-flow estimator.
    pub ridge: f64,
    #[serde(serialize_with = "ser_f64_strings")]
    pub times: Vec<f64>,
    pub mc_samples: usize,
    pub redraws: usize,
    pub test_points: usize,
    pub simulate: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            kernel_fields: kernel_fields_default("laplace", 1.0),
            d: 1,
            n: 30,
            noise_variance: 0.25,
            ridge: 0.0,
            times: vec![0.0, 0.1, 1.0, 10.0, f64::INFINITY],
            mc_samples: crate::spectra::DEFAULT_MC_SAMPLES,
            redraws: 50,
            test_points: 2000,
            simulate: true,
        }
    }
}

impl SpectralConfig {
    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::from_record(&self.kernel_fields)
    }
}

impl ExperimentConfig for SpectralConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            k if KERNEL_KEYS.contains(&k) => {
                self.kernel_fields.insert(k.to_string(), value.to_string());
            }
            "d" => self.d = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "ridge" => self.ridge = parse(key, value)?,
            "times" => self.times = parse_list(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "redraws" => self.redraws = parse(key, value)?,
            "test_points" => self.test_points = parse(key, value)?,
            "simulate" => self.simulate = parse_bool(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.kernel()?;
        require(self.d >= 1 && self.n >= 1, "`d` and `n` must be >= 1")?;
        require(self.noise_variance > 0.0, "`noise_variance` must be > 0")?;
        require(self.ridge >= 0.0, "`ridge` must be >= 0")?;
        require(!self.times.is_empty(), "`times` must be nonempty")?;
        require(self.times.iter().all(|t| *t >= 0.0), "`times` must be >= 0")?;
        require(self.mc_samples >= 100, "`mc_samples` must be >= 100")?;
        require(!self.simulate || self.redraws >= 2, "`redraws` must be >= 2")?;
        require(self.test_points >= 1, "`test_points` must be >= 1")
    }
}

/// Spectral lower bound over a time grid, next to a direct simulation of
/// the expected excess risk on the same training inputs.
pub fn run_spectral_bound(c: &SpectralConfig, seed: u64) -> Result<ExperimentOutput> {
    let spec = c.kernel()?;
    let train_set = generate(Target::FirstCoordinate, c.d, c.n, c.noise_variance, seed, Split::Train)?;
    let test = generate(Target::FirstCoordinate, c.d, c.test_points, c.noise_variance, seed, Split::Test)?;
    let k = kernel_matrix(&spec, &train_set.x)?.entries;
    let kstar = convolution_kernel_matrix(&spec, &train_set.x, &UniformSphere { d: c.d }, c.mc_samples, seed)?;

    let mut out = ExperimentOutput::default();
    let mut table = Table::new(&["t", "bound", "simulated_excess_risk", "simulated_std_err"]);
    let mut reports = Vec::new();
    for &t in &c.times {
        let report = spectral_lower_bound(&k, &kstar, t, c.ridge, c.noise_variance)?.with_provenance(c.mc_samples, seed);
        let (sim, se) = if c.simulate {
            let est = simulate_excess_risk(&spec, &train_set, &test, t, c.ridge, c.redraws, seed)?;
            (est.estimate, est.std_err)
        } else {
            (f64::NAN, f64::NAN)
        };
        if c.simulate && report.bound > sim + 2.0 * se {
            out.warnings
                .push(format!("t={t}: bound {} exceeds simulated risk {sim} + 2 SE", report.bound));
        }
        table.push(vec![num(t), num(report.bound), num(sim), num(se)]);
        reports.push(report);
    }
    out.table("bound", table);

    let last = reports.last().expect("times is nonempty");
    let mut spectra = Table::new(&["i", "lambda_k", "lambda_kstar"]);
    for (i, (a, b)) in last.lambda_k.iter().zip(&last.lambda_kstar).enumerate() {
        spectra.push(vec![(i + 1).to_string(), num(*a), num(*b)]);
    }
    out.table("spectra", spectra);
    out.documents.push((
        "report".into(),
        serde_json::to_value(last).expect("report serializes"),
    ));
    let bounds: Vec<f64> = reports.iter().map(|r| r.bound).collect();
    out.summary = json!({
        "kernel": spec.to_string(),
        "bounds": bounds.iter().map(|b| num(*b)).collect::<Vec<_>>(),
        "times": c.times.iter().map(|t| num(*t)).collect::<Vec<_>>(),
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivationTableConfig {
    pub kernel_fields: BTreeMap<String, String>,
    pub mode: Mode,
    pub signs: String,
    pub sign_seed: u64,
    pub order: String,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for ActivationTableConfig {
    fn default() -> Self {
        Self {
            kernel_fields: kernel_fields_default("gaussian-dot", 0.05),
            mode: Mode::Ntk,
            signs: "all-plus".into(),
            sign_seed: 0,
            order: "auto".into(),
            x_min: -3.0,
            x_max: 3.0,
            points: 601,
        }
    }
}

impl ActivationTableConfig {
    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::from_record(&self.kernel_fields)
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64)
        .collect()
}

impl ExperimentConfig for ActivationTableConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            k if KERNEL_KEYS.contains(&k) => {
                self.kernel_fields.insert(k.to_string(), value.to_string());
            }
            "mode" => self.mode = parse_mode(value)?,
            "signs" => {
                parse_signs(value, 0)?;
                self.signs = value.to_string();
            }
            "sign_seed" => self.sign_seed = parse(key, value)?,
            "order" => {
                parse_truncation(value)?;
                self.order = value.to_string();
            }
            "x_min" => self.x_min = parse(key, value)?,
            "x_max" => self.x_max = parse(key, value)?,
            "points" => self.points = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.kernel()?;
        require(self.points >= 1, "`points` must be >= 1")?;
        require(self.x_min <= self.x_max, "`x_min` must not exceed `x_max`")
    }
}

/// Hermite coefficients of the activation induced by a dot-product kernel,
/// plus the activation and its derivative on a grid.
pub fn run_activation_table(c: &ActivationTableConfig) -> Result<ExperimentOutput> {
    let spec = c.kernel()?;
    let act = synthesize_activation(
        &spec,
        c.mode,
        parse_signs(&c.signs, c.sign_seed)?,
        parse_truncation(&c.order)?,
    )?;
    let mut out = ExperimentOutput::default();
    let mut coeffs = Table::new(&["i", "b_i", "s_i", "a_i"]);
    for (i, ((b, s), a)) in act.kernel_coeffs().iter().zip(act.signs()).zip(act.coeffs()).enumerate() {
        coeffs.push(vec![i.to_string(), num(*b), s.to_string(), num(*a)]);
    }
    out.table("coefficients", coeffs);
    let mut values = Table::new(&["x", "phi", "phi_prime"]);
    for x in linspace(c.x_min, c.x_max, c.points) {
        values.push(vec![num(x), num(act.eval(x)), num(act.derivative(x))]);
    }
    out.table("values", values);
    let norm = act.l2_norm();
    out.summary = json!({
        "kernel": spec.to_string(),
        "order": act.order(),
        "peak_index": act.peak_index(),
        "l2_norm": norm,
        "l2_norm_squared": norm * norm,
        "tail_mass": act.tail_mass(),
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SineFitConfig {
    #[serde(serialize_with = "ser_f64_strings")]
    pub gammas: Vec<f64>,
    pub mode: Mode,
    pub signs: String,
    pub order: String,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for SineFitConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.2, 0.1, 0.05],
            mode: Mode::Ntk,
            signs: "bi-alternating".into(),
            order: "auto".into(),
            x_min: -2.0,
            x_max: 2.0,
            points: 401,
        }
    }
}

impl ExperimentConfig for SineFitConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gammas" => self.gammas = parse_list(key, value)?,
            "mode" => self.mode = parse_mode(value)?,
            "signs" => {
                parse_signs(value, 0)?;
                self.signs = value.to_string();
            }
            "order" => {
                parse_truncation(value)?;
                self.order = value.to_string();
            }
            "x_min" => self.x_min = parse(key, value)?,
            "x_max" => self.x_max = parse(key, value)?,
            "points" => self.points = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        require(!self.gammas.is_empty(), "`gammas` must be nonempty")?;
        require(self.gammas.iter().all(|g| *g > 0.0), "`gammas` must be > 0")?;
        require(self.points >= 1, "`points` must be >= 1")?;
        require(self.x_min <= self.x_max, "`x_min` must not exceed `x_max`")
    }
}

/// Uniform distance between Gaussian dot-product activations and their sine
/// approximations, per bandwidth.
pub fn run_sine_fit(c: &SineFitConfig) -> Result<ExperimentOutput> {
    let grid = linspace(c.x_min, c.x_max, c.points);
    let signs = parse_signs(&c.signs, 0)?;
    let truncation = parse_truncation(&c.order)?;
    let mut out = ExperimentOutput::default();
    let mut errors = Table::new(&["gamma", "order", "max_abs_error"]);
    let mut curves = Table::new(&["gamma", "x", "activation", "sine"]);
    let mut errs = Vec::new();
    for &gamma in &c.gammas {
        let act = synthesize_activation(&KernelSpec::gaussian_dot(gamma), c.mode, signs, truncation)?;
        let sine = crate::activations::SineFluctuation::new(c.mode, gamma)?;
        let err = sine_fit_error(&act, gamma, &grid)?;
        errors.push(vec![num(gamma), act.order().to_string(), num(err)]);
        for &x in &grid {
            curves.push(vec![num(gamma), num(x), num(act.eval(x)), num(sine.eval(x))]);
        }
        errs.push(err);
    }
    out.table("errors", errors);
    out.table("curves", curves);
    out.summary = json!({
        "truncation": truncation_label(truncation),
        "max_abs_errors": errs,
    });
    Ok(out)
}
