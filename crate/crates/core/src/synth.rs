//! Synthetic ground truths and sampled datasets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::Samples;
use crate::distribution::{DiscreteDistribution, Sampler};
use crate::error::{Error, Result};
use crate::grid_tree::GridShape;
use crate::heads::AxisEmbedding;

pub const PIECEWISE_BINS: usize = 1000;
pub const LATENT_BINS: usize = 128;
pub const LATENT_RANGE: (f64, f64) = (0.1, 10.0);
pub const CLASSES: usize = 10;
pub const FEATURE_NOISE: f64 = 0.1;

const MEAN_RANGE: (f64, f64) = (1.0, 7.0);
const SD_RANGE: (f64, f64) = (0.3, 2.0);
const RATE_RANGE: (f64, f64) = (0.25, 2.0);
const GMM_COMPONENTS: usize = 3;

/// Parameters a ground truth was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TruthParams {
    Piecewise,
    Gmm { means: Vec<f64>, sds: Vec<f64> },
    EdgeBiased(EdgeBiased),
}

/// Two boundary exponentials plus a Gaussian, equally weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeBiased {
    pub rate_left: f64,
    pub rate_right: f64,
    pub mean: f64,
    pub sd: f64,
}

impl EdgeBiased {
    /// Mirror point of the right exponential.
    pub const REFLECT_AT: f64 = 10.1;

    /// Unnormalized mixture density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        (exponential_pdf(x, self.rate_left)
            + exponential_pdf(Self::REFLECT_AT - x, self.rate_right)
            + normal_pdf(x, self.mean, self.sd))
            / 3.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mass: DiscreteDistribution,
    pub embedding: AxisEmbedding,
    pub params: TruthParams,
}

impl GroundTruth {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn shape(&self) -> &GridShape {
        self.mass.shape()
    }

    /// Real-valued location of every bin.
    pub fn points(&self) -> Vec<f64> {
        (0..self.bins()).map(|j| self.embedding.center(j)).collect()
    }
}

fn exponential_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        rate * (-rate * x).exp()
    }
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// Raw piecewise-linear logits over 1000 bins; entry `j` holds `E_{j+1}`.
pub fn piecewise_logits() -> Vec<f64> {
    let mut logits = Vec::with_capacity(PIECEWISE_BINS);
    let mut e = 0.5;
    logits.push(e);
    for i in 2..=PIECEWISE_BINS {
        e += match i {
            ..=300 => 0.5,
            301..=450 => -2.0,
            451..=750 => 0.9,
            751..=850 => 0.5,
            _ => -1.0,
        };
        logits.push(e);
    }
    logits
}

/// Softmax of the standardized piecewise-linear logits.
pub fn piecewise_marginal() -> GroundTruth {
    let raw = piecewise_logits();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let standardized: Vec<f64> = raw.iter().map(|e| (e - mean) / sd).collect();
    let shape = GridShape::line(PIECEWISE_BINS).expect("nonzero bins");
    GroundTruth {
        mass: DiscreteDistribution::from_log_weights(&standardized, shape).expect("finite logits"),
        embedding: AxisEmbedding::UNIT,
        params: TruthParams::Piecewise,
    }
}

fn latent_embedding() -> AxisEmbedding {
    AxisEmbedding::spanning(LATENT_RANGE.0, LATENT_RANGE.1, LATENT_BINS)
}

fn discretize(density: impl Fn(f64) -> f64, params: TruthParams) -> GroundTruth {
    let embedding = latent_embedding();
    let weights = (0..LATENT_BINS).map(|j| density(embedding.center(j))).collect();
    let shape = GridShape::line(LATENT_BINS).expect("nonzero bins");
    GroundTruth {
        mass: DiscreteDistribution::from_weights(weights, shape).expect("positive density on grid"),
        embedding,
        params,
    }
}

/// Equal-weight three-component Gaussian mixture on the 128-point grid.
pub fn gmm_truth<R: Rng + ?Sized>(rng: &mut R) -> GroundTruth {
    let mut means = Vec::with_capacity(GMM_COMPONENTS);
    let mut sds = Vec::with_capacity(GMM_COMPONENTS);
    for _ in 0..GMM_COMPONENTS {
        means.push(uniform(rng, MEAN_RANGE));
        sds.push(uniform(rng, SD_RANGE));
    }
    let density = |x: f64| {
        means
            .iter()
            .zip(&sds)
            .map(|(&m, &s)| normal_pdf(x, m, s))
            .sum::<f64>()
            / GMM_COMPONENTS as f64
    };
    let params = TruthParams::Gmm {
        means: means.clone(),
        sds: sds.clone(),
    };
    discretize(density, params)
}

/// Boundary-spiked mixture on the 128-point grid.
pub fn edge_biased_truth<R: Rng + ?Sized>(rng: &mut R) -> GroundTruth {
    let p = EdgeBiased {
        rate_left: uniform(rng, RATE_RANGE),
        rate_right: uniform(rng, RATE_RANGE),
        mean: uniform(rng, MEAN_RANGE),
        sd: uniform(rng, SD_RANGE),
    };
    discretize(|x| p.density(x), TruthParams::EdgeBiased(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthKind {
    Gmm,
    Edge,
}

impl TruthKind {
    pub const ALL: [TruthKind; 2] = [TruthKind::Gmm, TruthKind::Edge];

    pub fn name(self) -> &'static str {
        match self {
            TruthKind::Gmm => "gmm",
            TruthKind::Edge => "edge",
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> GroundTruth {
        match self {
            TruthKind::Gmm => gmm_truth(rng),
            TruthKind::Edge => edge_biased_truth(rng),
        }
    }
}

impl fmt::Display for TruthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TruthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmm" => Ok(TruthKind::Gmm),
            "edge" | "edge-biased" | "edge_biased" => Ok(TruthKind::Edge),
            other => Err(Error::config(format!("unknown truth kind '{other}'"))),
        }
    }
}

/// Class-conditional truths observed through noisy class indicators.
#[derive(Debug, Clone)]
pub struct LatentClassTask {
    truths: Vec<GroundTruth>,
    samplers: Vec<Sampler>,
    noise: f64,
}

impl LatentClassTask {
    pub fn new(truths: Vec<GroundTruth>) -> Result<Self> {
        let first = truths
            .first()
            .ok_or_else(|| Error::config("a latent task needs at least one class"))?;
        if truths.iter().any(|t| t.shape() != first.shape()) {
            return Err(Error::domain("class truths must share one grid"));
        }
        let samplers = truths.iter().map(|t| t.mass.sampler()).collect();
        Ok(LatentClassTask {
            truths,
            samplers,
            noise: FEATURE_NOISE,
        })
    }

    /// Ten independent truths of one family.
    pub fn generate<R: Rng + ?Sized>(kind: TruthKind, rng: &mut R) -> Self {
        let truths = (0..CLASSES).map(|_| kind.draw(rng)).collect();
        Self::new(truths).expect("nonempty class list")
    }

    pub fn classes(&self) -> usize {
        self.truths.len()
    }

    pub fn truths(&self) -> &[GroundTruth] {
        &self.truths
    }

    pub fn shape(&self) -> &GridShape {
        self.truths[0].shape()
    }

    pub fn embedding(&self) -> AxisEmbedding {
        self.truths[0].embedding
    }

    /// Noise-free indicator for `class`.
    pub fn clean_features(&self, class: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.classes()];
        x[class] = 1.0;
        x
    }
}

/// Sampled conditional dataset with the latent class of every row.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub samples: Samples,
    pub classes: Vec<usize>,
}

/// Draws `n` rows: uniform class, noisy one-hot features, label from the class truth.
pub fn make_task<R: Rng + ?Sized>(task: &LatentClassTask, n: usize, rng: &mut R) -> Result<SynthDataset> {
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let k = task.classes();
    let noise = Normal::new(0.0, task.noise).expect("positive noise scale");
    let mut features = Vec::with_capacity(n * k);
    let mut targets = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..k);
        for j in 0..k {
            let hot = if j == class { 1.0 } else { 0.0 };
            features.push(hot + noise.sample(rng));
        }
        targets.push(task.samplers[class].sample(rng));
        classes.push(class);
    }
    let samples = Samples::new(features, k, targets, task.shape().clone())?;
    Ok(SynthDataset { samples, classes })
}

/// Draws `n` labels from a marginal truth.
pub fn sample_marginal<R: Rng + ?Sized>(truth: &GroundTruth, n: usize, rng: &mut R) -> Result<Samples> {
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let sampler = truth.mass.sampler();
    let targets = (0..n).map(|_| sampler.sample(rng)).collect();
    Samples::marginal(targets, truth.shape().clone())
}
