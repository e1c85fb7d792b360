use rand::Rng;

use crate::error::{Error, Result};
use crate::grid_tree::GridShape;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Normalized probability mass over the flattened cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    mass: Vec<f64>,
    shape: GridShape,
}

impl DiscreteDistribution {
    /// Wraps an already normalized mass vector.
    pub fn new(mass: Vec<f64>, shape: GridShape) -> Result<Self> {
        if mass.len() != shape.total() {
            return Err(Error::domain(format!(
                "mass has {} entries for a grid of {}",
                mass.len(),
                shape.total()
            )));
        }
        if let Some(bad) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::domain(format!("invalid probability mass {bad}")));
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::domain(format!("mass sums to {sum}, not 1")));
        }
        Ok(DiscreteDistribution { mass, shape })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>, shape: GridShape) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::domain(format!("cannot normalize weights summing to {sum}")));
        }
        let mass = weights.into_iter().map(|w| w / sum).collect();
        Self::new(mass, shape)
    }

    /// Normalizes log-weights with a max shift.
    pub fn from_log_weights(log_weights: &[f64], shape: GridShape) -> Result<Self> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(weights, shape)
    }

    pub fn uniform(shape: GridShape) -> Self {
        let n = shape.total();
        DiscreteDistribution {
            mass: vec![1.0 / n as f64; n],
            shape,
        }
    }

    pub fn point(shape: GridShape, cell: usize) -> Result<Self> {
        let mut mass = vec![0.0; shape.total()];
        *mass
            .get_mut(cell)
            .ok_or_else(|| Error::domain(format!("cell {cell} outside grid")))? = 1.0;
        Ok(DiscreteDistribution { mass, shape })
    }

    /// Histogram of observed cells.
    pub fn empirical(shape: GridShape, cells: &[usize]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::domain("empirical distribution of zero samples"));
        }
        let mut counts = vec![0.0; shape.total()];
        for &c in cells {
            *counts
                .get_mut(c)
                .ok_or_else(|| Error::domain(format!("cell {c} outside grid")))? += 1.0;
        }
        Self::from_weights(counts, shape)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Per-dimension mean in grid coordinates.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.shape.ndim()];
        let mut coord = vec![0; self.shape.ndim()];
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            self.shape.unflatten_into(i, &mut coord);
            for (acc, &c) in mean.iter_mut().zip(&coord) {
                *acc += m * c as f64;
            }
        }
        mean
    }

    pub fn sampler(&self) -> Sampler {
        Sampler::new(&self.mass)
    }

    /// Inverse-CDF draw of a flat cell index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler().sample(rng)
    }
}

/// Precomputed cumulative mass for repeated inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(mass: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Sampler { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("sampler over empty support");
        let u = rng.random::<f64>() * total;
        let idx = self.cdf.partition_point(|&c| c <= u);
        // Guard against u landing on the final cumulative value through rounding,
        // and skip trailing zero-mass cells.
        let idx = idx.min(self.cdf.len() - 1);
        if idx > 0 && self.cdf[idx] == self.cdf[idx - 1] {
            return self.cdf.partition_point(|&c| c < self.cdf[idx]);
        }
        idx
    }
}
