//! Synthetic multi-output tasks and evaluation metrics.
//!
//! Generators are pure functions of their config. Randomness comes from
//! ChaCha8 seeded with `seed`, one stream per quantity (stream 0: input
//! jitter, stream `k`: noise term `εk`), so the draws for one column never
//! depend on another.


use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MultiOutputDataset;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input range [{lo}, {hi}] leaves the domain: {reason}")]
    Domain {
        lo: f64,
        hi: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Functional,
    #[serde(rename = "noise-scheme-1")]
    NoiseScheme1,
    #[serde(rename = "noise-scheme-2")]
    NoiseScheme2,
    #[serde(rename = "noise-scheme-3")]
    NoiseScheme3,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "functional" => Ok(Task::Functional),
            "noise-scheme-1" | "1" => Ok(Task::NoiseScheme1),
            "noise-scheme-2" | "2" => Ok(Task::NoiseScheme2),
            "noise-scheme-3" | "3" => Ok(Task::NoiseScheme3),
            _ => Err(format!(
                "unknown task {s:?} (functional, noise-scheme-1, noise-scheme-2, noise-scheme-3)"
            )),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Functional => "functional",
            Task::NoiseScheme1 => "noise-scheme-1",
            Task::NoiseScheme2 => "noise-scheme-2",
            Task::NoiseScheme3 => "noise-scheme-3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub task: Task,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub theta: [f64; 4],
    /// Spread the inputs as `lo + (k + u_k)·h` with `u_k ~ U[0, 1)` rather
    /// than at cell midpoints.
    pub jitter: bool,
    /// Multiplies every `ε` term.
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            task: Task::Functional,
            n: 40,
            lo: 0.0,
            hi: 1.0,
            seed: 0,
            theta: [1.0, 5.0, 1.0, 3.0],
            jitter: true,
            noise_scale: 1.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n == 0 {
            return Err(SynthError::Config("n must be at least 1".into()));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(SynthError::Config(format!(
                "need finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(SynthError::Config(
                "noise_scale must be finite and non-negative".into(),
            ));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(SynthError::Config("theta must be finite".into()));
        }
        Ok(())
    }
}

/// A generated task: noisy observations plus the matching noise-free values.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub data: MultiOutputDataset,
    pub truth: MultiOutputDataset,
    /// The `ε` draws, `noise[k][i]` for term `k+1` at point `i`, already scaled.
    pub noise: Vec<Vec<f64>>,
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

fn normals(seed: u64, s: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = stream(seed, s);
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `n` increasing inputs, one per equal-width cell of `[lo, hi)`.
pub fn inputs(cfg: &SynthConfig) -> Vec<f64> {
    let h = (cfg.hi - cfg.lo) / cfg.n as f64;
    let mut rng = stream(cfg.seed, 0);
    (0..cfg.n)
        .map(|k| {
            let u = if cfg.jitter { rng.random::<f64>() } else { 0.5 };
            cfg.lo + (k as f64 + u) * h
        })
        .collect()
}

pub fn functional_f1(x: f64) -> f64 {
    -(10.0 * PI * (x + 1.0)).sin() * (2.0 * x + 1.0) - x.powi(4)
}

pub fn noise_f1(x: f64) -> f64 {
    -(10.0 * PI * (x + 1.0)).sin() / (2.0 * x + 1.0) - x.powi(4)
}

pub fn noise_f2(x: f64, theta: &[f64; 4]) -> f64 {
    0.2 * (2.0 * x).exp()
        * (theta[0] * (theta[1] * PI * x).cos() + theta[2] * (theta[3] * PI * x).cos())
        + (2.0 * x).sqrt()
}

/// The outputs as functions of `x` and the noise draws.
pub fn functional_outputs(x: f64, e: [f64; 3]) -> [f64; 3] {
    let y1 = functional_f1(x) + e[0];
    let y2 = y1.cos().powi(2) + (3.0 * x).sin() + e[1];
    let y3 = y2 * y1 * y1 + 3.0 * x + e[2];
    [y1, y2, y3]
}

/// Scheme-specific noise added to `f₂`.
pub fn scheme_noise(task: Task, x: f64, e1: f64, e2: f64) -> f64 {
    match task {
        Task::NoiseScheme1 => (2.0 * PI * x).sin().powi(2) * e1 + (2.0 * PI * x).cos().powi(2) * e2,
        Task::NoiseScheme2 => (PI * e1).sin() + e2,
        Task::NoiseScheme3 => (PI * x).sin() * e1 + e2,
        Task::Functional => unreachable!("not a noise scheme"),
    }
}

fn dataset(names: &[&str], xs: &[f64], rows: Vec<Vec<f64>>) -> MultiOutputDataset {
    MultiOutputDataset::new(
        vec!["x".into()],
        names.iter().map(|s| s.to_string()).collect(),
        xs.iter().map(|x| vec![*x]).collect(),
        rows.into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect(),
    )
    .expect("generated values are finite")
}

/// Three outputs, each a nonlinear function of `x` and the noisy outputs before it.
/// The truth columns are noise-free: `ε = 0` throughout the chain.
pub fn gen_functional(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let xs = inputs(cfg);
    let noise: Vec<Vec<f64>> = (1..=3)
        .map(|k| normals(cfg.seed, k, cfg.n, cfg.noise_scale))
        .collect();
    let mut obs = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for (i, &x) in xs.iter().enumerate() {
        obs.push(functional_outputs(x, [noise[0][i], noise[1][i], noise[2][i]]).to_vec());
        truth.push(functional_outputs(x, [0.0; 3]).to_vec());
    }
    let names = ["y1", "y2", "y3"];
    Ok(SynthData {
        data: dataset(&names, &xs, obs),
        truth: dataset(&names, &xs, truth),
        noise,
    })
}

/// Two outputs `y₁ = f₁ + ε₁`, `y₂ = f₂ + noise(ε₁, ε₂)` sharing the same `ε₁`.
pub fn gen_noise_scheme(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    if cfg.task == Task::Functional {
        return Err(SynthError::Config(
            "functional is not a noise scheme".into(),
        ));
    }
    if cfg.lo < 0.0 {
        return Err(SynthError::Domain {
            lo: cfg.lo,
            hi: cfg.hi,
            reason: "f2 needs x >= 0, f1 has a pole at x = -0.5",
        });
    }
    let xs = inputs(cfg);
    let noise: Vec<Vec<f64>> = (1..=2)
        .map(|k| normals(cfg.seed, k, cfg.n, cfg.noise_scale))
        .collect();
    let mut obs = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for (i, &x) in xs.iter().enumerate() {
        let (f1, f2) = (noise_f1(x), noise_f2(x, &cfg.theta));
        obs.push(vec![
            f1 + noise[0][i],
            f2 + scheme_noise(cfg.task, x, noise[0][i], noise[1][i]),
        ]);
        truth.push(vec![f1, f2]);
    }
    let names = ["y1", "y2"];
    Ok(SynthData {
        data: dataset(&names, &xs, obs),
        truth: dataset(&names, &xs, truth),
        noise,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    match cfg.task {
        Task::Functional => gen_functional(cfg),
        _ => gen_noise_scheme(cfg),
    }
}

/// Small smooth two-output chain for oracle trials: `y₁ = sin(2πx) + ε`,
/// `y₂ = a(x)·y₁ + b·y₁² + cos(πx) + ε` with noise sd `0.1`; `b = 0` when `linear`.
pub fn toy_chain(seed: u64, n: usize, linear: bool) -> MultiOutputDataset {
    let mut rng = stream(seed, 7);
    let a0: f64 = rng.random_range(0.5..1.5);
    let b = if linear {
        0.0
    } else {
        rng.random_range(0.3..1.0)
    };
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    xs.sort_by(f64::total_cmp);
    let rows = xs
        .iter()
        .map(|&x| {
            let y1 = (2.0 * PI * x).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal);
            let y2 = a0 * (1.0 + 0.5 * x) * y1
                + b * y1 * y1
                + (PI * x).cos()
                + 0.1 * rng.sample::<f64, _>(StandardNormal);
            vec![y1, y2]
        })
        .collect();
    dataset(&["y1", "y2"], &xs, rows)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions, {1} targets")]
    Length(usize, usize),
    #[error("no targets")]
    Empty,
    #[error("test targets have zero variance, SMSE undefined")]
    ZeroVariance,
    #[error("predictive variance at index {0} is not positive")]
    BadVariance(usize),
}

fn check(pred: usize, truth: usize) -> Result<(), MetricError> {
    if pred != truth {
        return Err(MetricError::Length(pred, truth));
    }
    if truth == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// `mean((y − μ)²) / var(y)`, population variance.
pub fn smse(mean: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(mean.len(), truth.len())?;
    let n = truth.len() as f64;
    let ybar = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(MetricError::ZeroVariance);
    }
    let mse = mean
        .iter()
        .zip(truth)
        .map(|(m, y)| (y - m).powi(2))
        .sum::<f64>()
        / n;
    Ok(mse / var)
}

pub fn mae(mean: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(mean.len(), truth.len())?;
    Ok(mean
        .iter()
        .zip(truth)
        .map(|(m, y)| (y - m).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

/// Mean negative log density of `truth` under `N(mean, var)`.
pub fn mll(mean: &[f64], var: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(mean.len(), truth.len())?;
    check(var.len(), truth.len())?;
    if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
        return Err(MetricError::BadVariance(i));
    }
    let total: f64 = mean
        .iter()
        .zip(var)
        .zip(truth)
        .map(|((m, v), y)| 0.5 * (2.0 * PI * v).ln() + 0.5 * (y - m).powi(2) / v)
        .sum();
    Ok(total / truth.len() as f64)
}

/// Pearson correlation; `NaN` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
