//! Two-layer fully connected networks in NTK parametrization,
//! `f(x) = (1/sqrt(m)) w2^T σ(W1 x + b1) + b2`, trained with (stochastic)
//! gradient descent on the mean squared error.
//!
//! The activation is additive, `σ = base + fluctuation`, so a network splits
//! exactly into a base part (which keeps `b2`) and a fluctuation part.
//! With antisymmetric initialization the hidden layer is duplicated with
//! negated output weights, which makes the initial function identically zero;
//! `m` then counts both halves in the output scaling.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::{synthesize_activation, HermiteActivation, Mode, SignScheme, SineFluctuation, Truncation};
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::seeding::{stream_rng, Stream};
use crate::synthdata::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseActivation {
    Relu,
    Identity,
}

impl BaseActivation {
    fn eval(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Identity => z,
        }
    }

    /// ReLU'(0) is taken to be 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fluctuation {
    Sine(SineFluctuation),
    Hermite(Box<HermiteActivation>),
}

impl Fluctuation {
    fn eval(&self, z: f64) -> f64 {
        match self {
            Self::Sine(s) => s.eval(z),
            Self::Hermite(h) => h.eval(z),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Self::Sine(s) => s.derivative(z),
            Self::Hermite(h) => h.derivative(z),
        }
    }
}

/// `σ(z) = base(z) + fluctuation(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Activation {
    pub base: BaseActivation,
    pub fluctuation: Option<Fluctuation>,
}

impl Activation {
    pub fn relu() -> Self {
        Self {
            base: BaseActivation::Relu,
            fluctuation: None,
        }
    }

    pub fn identity() -> Self {
        Self {
            base: BaseActivation::Identity,
            fluctuation: None,
        }
    }

    /// ReLU plus the NTK sine fluctuation of bandwidth `gamma`.
    pub fn spiky_relu(gamma: f64) -> Result<Self> {
        Ok(Self {
            base: BaseActivation::Relu,
            fluctuation: Some(Fluctuation::Sine(SineFluctuation::new(Mode::Ntk, gamma)?)),
        })
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.base.eval(z) + self.fluctuation.as_ref().map_or(0.0, |f| f.eval(z))
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.base.derivative(z) + self.fluctuation.as_ref().map_or(0.0, |f| f.derivative(z))
    }

    pub fn record(&self) -> ActivationRecord {
        ActivationRecord {
            base: self.base,
            fluctuation: self.fluctuation.as_ref().map(|f| match f {
                Fluctuation::Sine(s) => FluctuationRecord::Sine {
                    mode: s.mode,
                    bandwidth: s.bandwidth,
                },
                Fluctuation::Hermite(h) => FluctuationRecord::Hermite {
                    spec: h.source().clone(),
                    mode: h.mode(),
                    signs: h.scheme(),
                    order: h.order(),
                },
            }),
        }
    }
}

/// Serializable description of an [`Activation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub base: BaseActivation,
    pub fluctuation: Option<FluctuationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FluctuationRecord {
    Sine { mode: Mode, bandwidth: f64 },
    Hermite { spec: KernelSpec, mode: Mode, signs: SignScheme, order: usize },
}

impl ActivationRecord {
    pub fn build(&self) -> Result<Activation> {
        let fluctuation = match &self.fluctuation {
            None => None,
            Some(FluctuationRecord::Sine { mode, bandwidth }) => {
                Some(Fluctuation::Sine(SineFluctuation::new(*mode, *bandwidth)?))
            }
            Some(FluctuationRecord::Hermite { spec, mode, signs, order }) => Some(Fluctuation::Hermite(Box::new(
                synthesize_activation(spec, *mode, *signs, Truncation::Order(*order))?,
            ))),
        };
        Ok(Activation {
            base: self.base,
            fluctuation,
        })
    }
}

/// Weights of one hidden layer and its output head.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `m × d_in`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(std::iter::once(&self.b2))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    d_in: usize,
    width: usize,
    activation: Activation,
    primary: Layer,
    /// Antisymmetric twin; initialized as a copy with `w2` negated.
    twin: Option<Layer>,
}

/// Output of the two additive parts of the network at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitOutput {
    /// Base activation part, including the output biases.
    pub base: f64,
    /// Fluctuation part, without biases.
    pub fluctuation: f64,
}

impl SplitOutput {
    pub fn total(&self) -> f64 {
        self.base + self.fluctuation
    }
}

impl TwoLayerNet {
    /// Network with explicit weights for a single hidden layer of width `m`.
    pub fn from_weights(d_in: usize, activation: Activation, layer: Layer, twin: Option<Layer>) -> Result<Self> {
        let width = layer.b1.len();
        if width == 0 || d_in == 0 {
            return Err(invalid("network needs width >= 1 and input dimension >= 1"));
        }
        for l in std::iter::once(&layer).chain(twin.as_ref()) {
            check_dim(width * d_in, l.w1.len())?;
            check_dim(width, l.b1.len())?;
            check_dim(width, l.w2.len())?;
        }
        Ok(Self {
            d_in,
            width,
            activation,
            primary: layer,
            twin,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    /// Width of one hidden layer (the twin, if any, doubles it).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn total_width(&self) -> usize {
        self.width * if self.twin.is_some() { 2 } else { 1 }
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        std::iter::once(&self.primary).chain(self.twin.as_ref())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        std::iter::once(&mut self.primary).chain(self.twin.as_mut())
    }

    fn output_scale(&self) -> f64 {
        1.0 / (self.total_width() as f64).sqrt()
    }

    pub fn forward_split(&self, x: &[f64]) -> Result<SplitOutput> {
        check_dim(self.d_in, x.len())?;
        Ok(self.split_unchecked(x))
    }

    fn split_unchecked(&self, x: &[f64]) -> SplitOutput {
        let scale = self.output_scale();
        let mut out = SplitOutput {
            base: 0.0,
            fluctuation: 0.0,
        };
        for layer in self.layers() {
            let (mut base, mut fluct) = (0.0, 0.0);
            for j in 0..self.width {
                let z = preactivation(layer, j, x);
                base += layer.w2[j] * self.activation.base.eval(z);
                if let Some(f) = &self.activation.fluctuation {
                    fluct += layer.w2[j] * f.eval(z);
                }
            }
            out.base += scale * base + layer.b2;
            out.fluctuation += scale * fluct;
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_split(x)?.total())
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        self.split_unchecked(x).total()
    }

    /// Mean squared error over a dataset.
    pub fn mse(&self, data: &Dataset) -> Result<f64> {
        check_dim(self.d_in, data.x.dim())?;
        Ok(mean_squared_error(self, data))
    }

    /// All parameters in a fixed order: per layer `w1, b1, w2, b2`.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.params_flat().len(), params.len())?;
        let mut src = params.iter();
        for layer in self.layers_mut() {
            for p in layer.params_mut() {
                *p = *src.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// MSE `(1/n) Σ (f(x_i) - y_i)^2` and its gradient in the order of
    /// [`Self::params_flat`].
    pub fn loss_and_gradient(&self, data: &Dataset) -> Result<(f64, Vec<f64>)> {
        check_dim(self.d_in, data.x.dim())?;
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut grads: Vec<Layer> = self.layers().map(Layer::zeros_like).collect();
        let loss = self.accumulate_gradient(data, &idx, &mut grads);
        Ok((loss, grads.iter().flat_map(|l| l.params().copied()).collect()))
    }

    /// Adds the gradient of the batch MSE to `grads`, returns the batch MSE.
    fn accumulate_gradient(&self, data: &Dataset, batch: &[usize], grads: &mut [Layer]) -> f64 {
        let scale = self.output_scale();
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut z = vec![0.0; self.width];
        for &i in batch {
            let x = data.x.row(i);
            let resid = self.forward_unchecked(x) - data.y[i];
            loss += resid * resid * inv_b;
            let dl = 2.0 * resid * inv_b;
            for (layer, grad) in self.layers().zip(grads.iter_mut()) {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = preactivation(layer, j, x);
                }
                grad.b2 += dl;
                for (j, &zj) in z.iter().enumerate() {
                    grad.w2[j] += dl * scale * self.activation.eval(zj);
                    let dz = dl * scale * layer.w2[j] * self.activation.derivative(zj);
                    grad.b1[j] += dz;
                    let row = &mut grad.w1[j * self.d_in..(j + 1) * self.d_in];
                    for (g, xk) in row.iter_mut().zip(x) {
                        *g += dz * xk;
                    }
                }
            }
        }
        loss
    }
}

fn preactivation(layer: &Layer, j: usize, x: &[f64]) -> f64 {
    let d = x.len();
    layer.w1[j * d..(j + 1) * d]
        .iter()
        .zip(x)
        .map(|(w, xi)| w * xi)
        .sum::<f64>()
        + layer.b1[j]
}

fn mean_squared_error(net: &TwoLayerNet, data: &Dataset) -> f64 {
    data.x
        .rows()
        .zip(&data.y)
        .map(|(x, y)| (net.forward_unchecked(x) - y).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

/// He initialization: `W1 ~ N(0, 2/d_in)`, `w2 ~ N(0, 2)`, zero biases.
pub fn init_network(
    width: usize,
    d_in: usize,
    seed: u64,
    antisymmetric: bool,
    activation: Activation,
) -> Result<TwoLayerNet> {
    if width == 0 || d_in == 0 {
        return Err(invalid("network needs width >= 1 and input dimension >= 1"));
    }
    let mut rng = stream_rng(Stream::NetworkInit, seed);
    let first = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
    let second = Normal::new(0.0, 2f64.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let w1: Vec<f64> = (0..width * d_in).map(|_| first.sample(&mut rng)).collect();
    let w2: Vec<f64> = (0..width).map(|_| second.sample(&mut rng)).collect();
    let layer = Layer {
        w1,
        b1: vec![0.0; width],
        w2,
        b2: 0.0,
    };
    let twin = antisymmetric.then(|| Layer {
        w2: layer.w2.iter().map(|w| -w).collect(),
        ..layer.clone()
    });
    TwoLayerNet::from_weights(d_in, activation, layer, twin)
}

pub fn forward(net: &TwoLayerNet, x: &[f64]) -> Result<f64> {
    net.forward(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batch {
    Full,
    Stochastic(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: Batch,
    pub seed: u64,
    pub record_every: usize,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(invalid("need at least one epoch"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be >= 1"));
        }
        if self.batch == Batch::Stochastic(0) {
            return Err(invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub steps: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.steps.last()
    }

    /// CSV with columns `epoch,train_mse,test_mse`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_mse,test_mse")?;
        for r in &self.steps {
            writeln!(out, "{},{:e},{:e}", r.epoch, r.train_mse, r.test_mse)?;
        }
        Ok(())
    }
}

/// Trains all parameters (both halves of an antisymmetric net) by (S)GD on
/// the training MSE. Errors are recorded at epoch 0 and every
/// `record_every` epochs. SGD reshuffles every epoch from the seeded order
/// stream, so runs are reproducible bit for bit.
pub fn train(net: &mut TwoLayerNet, data: &Dataset, cfg: &TrainConfig, test: &Dataset) -> Result<TrainTrace> {
    cfg.validate()?;
    check_dim(net.d_in, data.x.dim())?;
    check_dim(net.d_in, test.x.dim())?;
    if data.is_empty() || test.is_empty() {
        return Err(invalid("training and test sets must be nonempty"));
    }
    let mut trace = TrainTrace::default();
    let mut record = |net: &TwoLayerNet, epoch: usize| -> Result<()> {
        let row = TraceRow {
            epoch,
            train_mse: mean_squared_error(net, data),
            test_mse: mean_squared_error(net, test),
        };
        if !(row.train_mse.is_finite() && row.test_mse.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        trace.steps.push(row);
        Ok(())
    };
    record(net, 0)?;

    let mut rng = stream_rng(Stream::SgdOrder, cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = match cfg.batch {
        Batch::Full => data.len(),
        Batch::Stochastic(b) => b.min(data.len()),
    };
    let mut grads: Vec<Layer> = net.layers().map(Layer::zeros_like).collect();
    for epoch in 1..=cfg.epochs {
        if matches!(cfg.batch, Batch::Stochastic(_)) {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(batch_size) {
            grads.iter_mut().for_each(|g| *g = g.zeros_like());
            let loss = net.accumulate_gradient(data, batch, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            for (layer, grad) in net.layers_mut().zip(&grads) {
                for (p, g) in layer.params_mut().zip(grad.params()) {
                    *p -= cfg.lr * g;
                }
            }
        }
        if epoch % cfg.record_every == 0 {
            record(net, epoch)?;
        }
    }
    Ok(trace)
}

/// Base and fluctuation components of a network with an additive activation.
#[derive(Clone, Copy, Debug)]
pub struct NetworkParts<'a> {
    net: &'a TwoLayerNet,
}

impl NetworkParts<'_> {
    /// Network evaluated with the base activation only, keeping `b2`.
    pub fn base(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward_split(x)?.base)
    }

    /// Network evaluated with the fluctuation only, without `b2`.
    pub fn spike(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward_split(x)?.fluctuation)
    }
}

pub fn decompose_network(net: &TwoLayerNet) -> Result<NetworkParts<'_>> {
    if net.activation.fluctuation.is_none() {
        return Err(Error::Unsupported(
            "network decomposition needs an activation with a fluctuation term".into(),
        ));
    }
    Ok(NetworkParts { net })
}

const WEIGHTS_MAGIC: &str = "# two-layer-net v1";

/// Text export: a magic line, a shape line `d_in <d> width <m> twin <0|1>`,
/// an `activation <json>` line, then per layer a `layer <k> b2 <v>` line
/// followed by `m` rows `b1 w2 w1_1 .. w1_d`.
pub fn write_weights(net: &TwoLayerNet, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{WEIGHTS_MAGIC}")?;
    writeln!(
        out,
        "d_in {} width {} twin {}",
        net.d_in,
        net.width,
        u8::from(net.twin.is_some())
    )?;
    let act = serde_json::to_string(&net.activation.record()).map_err(std::io::Error::other)?;
    writeln!(out, "activation {act}")?;
    for (k, layer) in net.layers().enumerate() {
        writeln!(out, "layer {k} b2 {:?}", layer.b2)?;
        for j in 0..net.width {
            let mut fields = vec![format!("{:?}", layer.b1[j]), format!("{:?}", layer.w2[j])];
            fields.extend(layer.w1[j * net.d_in..(j + 1) * net.d_in].iter().map(|w| format!("{w:?}")));
            writeln!(out, "{}", fields.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_weights(input: impl BufRead) -> Result<TwoLayerNet> {
    let mut lines = input.lines().map(|l| l.map_err(|e| invalid(e.to_string())));
    let mut next = || lines.next().unwrap_or_else(|| Err(invalid("unexpected end of weights file")));
    if next()?.trim() != WEIGHTS_MAGIC {
        return Err(invalid("not a two-layer-net weights file"));
    }
    let shape = next()?;
    let tok: Vec<&str> = shape.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| invalid(format!("bad integer `{s}`")));
    if tok.len() != 6 || tok[0] != "d_in" || tok[2] != "width" || tok[4] != "twin" {
        return Err(invalid(format!("bad shape line `{shape}`")));
    }
    let (d_in, width, twin) = (parse_usize(tok[1])?, parse_usize(tok[3])?, parse_usize(tok[5])? == 1);
    let act_line = next()?;
    let json = act_line
        .strip_prefix("activation ")
        .ok_or_else(|| invalid("missing activation line"))?;
    let record: ActivationRecord = serde_json::from_str(json).map_err(|e| invalid(e.to_string()))?;
    let activation = record.build()?;
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| invalid(format!("bad number `{s}`")));
    let mut layers = Vec::new();
    for _ in 0..(1 + usize::from(twin)) {
        let head = next()?;
        let b2 = head
            .split_whitespace()
            .nth(3)
            .ok_or_else(|| invalid(format!("bad layer line `{head}`")))
            .and_then(parse_f64)?;
        let mut layer = Layer {
            w1: Vec::with_capacity(width * d_in),
            b1: Vec::with_capacity(width),
            w2: Vec::with_capacity(width),
            b2,
        };
        for _ in 0..width {
            let row = next()?;
            let vals = row.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
            check_dim(d_in + 2, vals.len())?;
            layer.b1.push(vals[0]);
            layer.w2.push(vals[1]);
            layer.w1.extend_from_slice(&vals[2..]);
        }
        layers.push(layer);
    }
    let twin_layer = if twin { layers.pop() } else { None };
    let primary = layers.pop().expect("one layer parsed");
    TwoLayerNet::from_weights(d_in, activation, primary, twin_layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Points;
    use crate::synthdata::{gen_fig1, sample_sphere, GeneratorId, Split, Target};

    fn single_sample(x: f64, y: f64) -> Dataset {
        Dataset {
            x: Points::from_rows(&[[x]]).unwrap(),
            y: vec![y],
            f_star: vec![y],
            noise_variance: 0.0,
            generator: GeneratorId {
                target: Target::FirstCoordinate,
                split: Split::Train,
                seed: 0,
            },
        }
    }

    #[test]
    fn antisymmetric_init_is_zero() {
        let net = init_network(64, 2, 3, true, Activation::spiky_relu(1.0 / 5000.0).unwrap()).unwrap();
        for x in sample_sphere(1, 100, 4).unwrap().rows() {
            assert_eq!(net.forward(x).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_unit_net() {
        let layer = Layer {
            w1: vec![1.0],
            b1: vec![0.0],
            w2: vec![1.0],
            b2: 0.0,
        };
        let net = TwoLayerNet::from_weights(1, Activation::identity(), layer, None).unwrap();
        for x in [-2.0, 0.0, 3.5] {
            assert_eq!(net.forward(&[x]).unwrap(), x);
        }
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(16, 2, 9, false, Activation::relu()).unwrap();
        let b = init_network(16, 2, 9, false, Activation::relu()).unwrap();
        assert_eq!(a, b);
        let c = init_network(16, 2, 10, false, Activation::relu()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inactive_relu_returns_bias() {
        let layer = Layer {
            w1: vec![1.0, 1.0, -1.0, 2.0],
            b1: vec![-5.0, -5.0],
            w2: vec![0.7, -1.3],
            b2: 0.25,
        };
        let net = TwoLayerNet::from_weights(2, Activation::relu(), layer, None).unwrap();
        assert_eq!(net.forward(&[0.5, 0.5]).unwrap(), 0.25);
    }

    #[test]
    fn hand_computed_tiny_net() {
        // z = (0.5*1 - 1*2 + 0.1, 2*1 + 0*2 - 0.3) = (-1.4, 1.7)
        let layer = Layer {
            w1: vec![0.5, -1.0, 2.0, 0.0],
            b1: vec![0.1, -0.3],
            w2: vec![3.0, -2.0],
            b2: 0.5,
        };
        let net = TwoLayerNet::from_weights(2, Activation::relu(), layer, None).unwrap();
        let expected = (3.0 * 0.0 - 2.0 * 1.7) / 2f64.sqrt() + 0.5;
        assert!((net.forward(&[1.0, 2.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn fluctuation_adds_exactly() {
        let gamma = 1.0 / 5000.0;
        let spiky = init_network(8, 2, 1, false, Activation::spiky_relu(gamma).unwrap()).unwrap();
        let mut plain = spiky.clone();
        plain.activation = Activation::relu();
        let sine = SineFluctuation::new(Mode::Ntk, gamma).unwrap();
        let x = [0.6, -0.8];
        let layer = &spiky.primary;
        let extra: f64 = (0..8).map(|j| layer.w2[j] * sine.eval(preactivation(layer, j, &x))).sum::<f64>()
            / 8f64.sqrt();
        assert_eq!(spiky.forward(&x).unwrap(), plain.forward(&x).unwrap() + extra);
    }

    #[test]
    fn decomposition_is_exact() {
        let net = init_network(32, 2, 2, false, Activation::spiky_relu(0.01).unwrap()).unwrap();
        let parts = decompose_network(&net).unwrap();
        for x in sample_sphere(1, 100, 6).unwrap().rows() {
            assert_eq!(parts.base(x).unwrap() + parts.spike(x).unwrap(), net.forward(x).unwrap());
        }
        let plain = init_network(4, 2, 2, false, Activation::relu()).unwrap();
        assert!(matches!(decompose_network(&plain), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_amplitude_fluctuation() {
        let taylor = synthesize_activation(&KernelSpec::taylor(vec![0.0]), Mode::Ntk, SignScheme::AllPlus, Truncation::Order(0))
            .unwrap();
        let act = Activation {
            base: BaseActivation::Relu,
            fluctuation: Some(Fluctuation::Hermite(Box::new(taylor))),
        };
        let net = init_network(8, 2, 2, false, act).unwrap();
        let parts = decompose_network(&net).unwrap();
        assert_eq!(parts.spike(&[0.3, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn one_gd_step_matches_hand_gradient() {
        // f = w2 * (w1 x + b1) + b2, loss = (f - y)^2
        let (w1, b1, w2, b2) = (0.8, 0.1, -0.5, 0.2);
        let (x, y) = (1.5, 2.0);
        let layer = Layer {
            w1: vec![w1],
            b1: vec![b1],
            w2: vec![w2],
            b2,
        };
        let mut net = TwoLayerNet::from_weights(1, Activation::identity(), layer, None).unwrap();
        let data = single_sample(x, y);
        let lr = 0.1;
        let cfg = TrainConfig {
            lr,
            epochs: 1,
            batch: Batch::Full,
            seed: 0,
            record_every: 1,
        };
        train(&mut net, &data, &cfg, &data).unwrap();
        let z = w1 * x + b1;
        let r = w2 * z + b2 - y;
        let expected = [
            w1 - lr * 2.0 * r * w2 * x,
            b1 - lr * 2.0 * r * w2,
            w2 - lr * 2.0 * r * z,
            b2 - lr * 2.0 * r,
        ];
        for (got, want) in net.params_flat().iter().zip(expected) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let data = gen_fig1(10, 0.25, 1).unwrap();
        let mut net = init_network(16, 2, 1, true, Activation::relu()).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 10,
            batch: Batch::Stochastic(1),
            seed: 3,
            record_every: 5,
        };
        let trace = train(&mut net, &data, &cfg, &data).unwrap();
        assert_eq!(net, before);
        assert_eq!(trace.steps.len(), 3);
        assert!(trace.steps.iter().all(|r| r.train_mse == trace.steps[0].train_mse));
    }

    #[test]
    fn divergence_is_reported() {
        let data = gen_fig1(10, 0.25, 1).unwrap();
        let mut net = init_network(16, 2, 1, false, Activation::identity()).unwrap();
        let cfg = TrainConfig {
            lr: 1e6,
            epochs: 200,
            batch: Batch::Full,
            seed: 0,
            record_every: 1,
        };
        assert!(matches!(train(&mut net, &data, &cfg, &data), Err(Error::Diverged { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = gen_fig1(6, 0.25, 5).unwrap();
        let mut net = init_network(4, 2, 8, false, Activation::spiky_relu(1.0 / 5000.0).unwrap()).unwrap();
        let (_, grad) = net.loss_and_gradient(&data).unwrap();
        let theta = net.params_flat();
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
            let denom = grad[k].abs().max(fd.abs()).max(1e-8);
            assert!((grad[k] - fd).abs() / denom < 1e-4, "param {k}: {} vs {fd}", grad[k]);
        }
        net.set_params_flat(&theta).unwrap();
    }

    #[test]
    fn weights_round_trip() {
        let net = init_network(5, 2, 4, true, Activation::spiky_relu(0.01).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        let back = read_weights(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(read_weights("garbage\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_rows() {
        let trace = TrainTrace {
            steps: vec![
                TraceRow { epoch: 0, train_mse: 1.0, test_mse: 2.0 },
                TraceRow { epoch: 5, train_mse: 0.5, test_mse: 1.5 },
            ],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch,train_mse,test_mse");
        assert_eq!(text.lines().count(), 3);
    }
}
