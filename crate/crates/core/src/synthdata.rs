//! Synthetic regression data on spheres and the scaled stereographic
//! projection of sphere caps.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::Points;
use crate::seeding::{stream_rng, Stream, RNG_ALGORITHM};

/// Clean regression functions on `S^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// `f*(x) = x_1`
    FirstCoordinate,
    /// `x_1 + x_2^2 + sin(x_3) + Π x_i`
    BenchmarkA,
    /// `|x_1| + x_2^2 + sin(2π x_3) + Π x_i`
    BenchmarkB,
}

impl Target {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::FirstCoordinate => x[0],
            Self::BenchmarkA => x[0] + x[1] * x[1] + x[2].sin() + x.iter().product::<f64>(),
            Self::BenchmarkB => {
                x[0].abs()
                    + x[1] * x[1]
                    + (2.0 * std::f64::consts::PI * x[2]).sin()
                    + x.iter().product::<f64>()
            }
        }
    }

    fn min_sphere_dim(&self) -> usize {
        match self {
            Self::FirstCoordinate => 1,
            Self::BenchmarkA | Self::BenchmarkB => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream(self) -> Stream {
        match self {
            Self::Train => Stream::TrainData,
            Self::Test => Stream::TestData,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneratorId {
    pub target: Target,
    pub split: Split,
    pub seed: u64,
}

/// Noisy samples `y = f*(x) + ε`, `ε ~ N(0, σ²)`, with `x` uniform on `S^d`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Points,
    pub y: Vec<f64>,
    pub f_star: Vec<f64>,
    pub noise_variance: f64,
    pub generator: GeneratorId,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sphere dimension `d` (points live in `R^{d+1}`).
    pub fn sphere_dim(&self) -> usize {
        self.x.dim() - 1
    }

    /// Realized label noise `y_i - f*(x_i)`.
    pub fn noise(&self) -> Vec<f64> {
        self.y.iter().zip(&self.f_star).map(|(y, f)| y - f).collect()
    }

    /// CSV with columns `x1..x{d+1},y,f_star`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.x.dim())
            .map(|i| format!("x{i}"))
            .chain(["y".to_string(), "f_star".to_string()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (i, row) in self.x.rows().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            fields.push(format!("{:e}", self.y[i]));
            fields.push(format!("{:e}", self.f_star[i]));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "generator": self.generator,
            "noise_variance": self.noise_variance,
            "d": self.sphere_dim(),
            "n": self.len(),
            "rng": RNG_ALGORITHM,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(csv))?;
        let json = serde_json::to_string_pretty(&self.sidecar()).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)
    }
}

pub(crate) fn sample_sphere_with(rng: &mut impl Rng, d: usize, n: usize) -> Points {
    let dim = d + 1;
    let mut data = Vec::with_capacity(n * dim);
    let mut row = vec![0.0; dim];
    for _ in 0..n {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                data.extend(row.iter().map(|v| v / norm));
                break;
            }
        }
    }
    Points::new(dim, data).expect("rows have the sphere dimension")
}

/// `n` i.i.d. uniform points on `S^d ⊂ R^{d+1}` (normalized Gaussian vectors).
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<Points> {
    if d < 1 || n < 1 {
        return Err(invalid(format!("need d >= 1 and n >= 1, got d={d}, n={n}")));
    }
    Ok(sample_sphere_with(&mut stream_rng(Stream::Sphere, seed), d, n))
}

fn noise_sampler(noise_variance: f64) -> Result<Option<Normal<f64>>> {
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(invalid(format!("noise variance must be >= 0, got {noise_variance}")));
    }
    Ok(if noise_variance > 0.0 {
        Some(Normal::new(0.0, noise_variance.sqrt()).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    })
}

fn draw_labels(rng: &mut ChaCha20Rng, f_star: &[f64], noise: Option<&Normal<f64>>) -> Vec<f64> {
    f_star
        .iter()
        .map(|f| match noise {
            Some(dist) => f + dist.sample(rng),
            None => *f,
        })
        .collect()
}

/// Draws a dataset for `target` on `S^d`. Train and test splits come from
/// disjoint random streams.
pub fn generate(
    target: Target,
    d: usize,
    n: usize,
    noise_variance: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if d < target.min_sphere_dim() {
        return Err(invalid(format!(
            "{target:?} needs sphere dimension >= {}, got {d}",
            target.min_sphere_dim()
        )));
    }
    if n < 1 {
        return Err(invalid("need at least one sample"));
    }
    let noise = noise_sampler(noise_variance)?;
    let mut rng = stream_rng(split.stream(), seed);
    let x = sample_sphere_with(&mut rng, d, n);
    let f_star: Vec<f64> = x.rows().map(|r| target.eval(r)).collect();
    let y = draw_labels(&mut rng, &f_star, noise.as_ref());
    Ok(Dataset {
        x,
        y,
        f_star,
        noise_variance,
        generator: GeneratorId { target, split, seed },
    })
}

/// Two-dimensional toy problem: `x ~ U(S^1)`, `y = x_1 + ε`.
pub fn gen_fig1(n: usize, noise_variance: f64, seed: u64) -> Result<Dataset> {
    generate(Target::FirstCoordinate, 1, n, noise_variance, seed, Split::Train)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BenchmarkVariant {
    A,
    B,
}

impl BenchmarkVariant {
    pub fn target(self) -> Target {
        match self {
            Self::A => Target::BenchmarkA,
            Self::B => Target::BenchmarkB,
        }
    }
}

pub fn gen_benchmark(
    d: usize,
    n: usize,
    noise_variance: f64,
    variant: BenchmarkVariant,
    seed: u64,
) -> Result<Dataset> {
    generate(variant.target(), d, n, noise_variance, seed, Split::Train)
}

/// Redraws the labels of `data` with fresh noise from `rng`, keeping `x`.
pub fn redraw_labels(data: &Dataset, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    let noise = noise_sampler(data.noise_variance)?;
    Ok(Dataset {
        y: draw_labels(rng, &data.f_star, noise.as_ref()),
        ..data.clone()
    })
}

/// Scaled stereographic projection of the cap `{x ∈ S^d : x_{d+1} < v}` onto
/// the open unit ball in `R^d`, projecting from the north pole.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapProjection {
    v: f64,
    scale: f64,
}

impl CapProjection {
    pub fn new(v: f64) -> Result<Self> {
        if !(v > -1.0 && v < 1.0) {
            return Err(Error::Domain(format!("cap parameter must lie in (-1, 1), got {v}")));
        }
        Ok(Self {
            v,
            scale: ((1.0 - v) / (1.0 + v)).sqrt(),
        })
    }

    /// `c_v = sqrt((1 - v) / (1 + v))`
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (&last, head) = x
            .split_last()
            .ok_or_else(|| invalid("cannot project an empty point"))?;
        if head.is_empty() {
            return Err(invalid("points on S^d need d >= 1"));
        }
        if last.is_nan() || last >= self.v {
            return Err(Error::Domain(format!(
                "last coordinate {last} is not below the cap boundary {}",
                self.v
            )));
        }
        let denom = 1.0 - last;
        Ok(head.iter().map(|xi| self.scale * xi / denom).collect())
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.is_empty() {
            return Err(invalid("cannot invert an empty point"));
        }
        let norm2: f64 = y.iter().map(|v| v * v).sum();
        if norm2.is_nan() || norm2 >= 1.0 {
            return Err(Error::Domain(format!(
                "point with norm {} is outside the open unit ball",
                norm2.sqrt()
            )));
        }
        let s2 = norm2 / (self.scale * self.scale);
        let denom = s2 + 1.0;
        let mut out: Vec<f64> = y.iter().map(|yi| 2.0 * yi / self.scale / denom).collect();
        out.push((s2 - 1.0) / denom);
        Ok(out)
    }
}
