//! Distribution heads: parameter vectors in, discrete log-masses out.
//!
//! Every head exposes the same contract: the log-mass of one cell, the full
//! distribution over the grid, and the analytic gradient of the log-mass
//! with respect to the parameters. Smoothed heads (SMN, SDP) additionally
//! add a windowed trend filtering penalty at training time; at evaluation
//! time SDP scores exactly like UDP.

mod gaussian;
mod logistic;
mod multinomial;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::grid_tree::{neighborhood, DyadicLayout, GridShape};
use crate::trend_filter::OperatorCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Plain multinomial over all cells.
    Mn,
    /// Mixture of Gaussians evaluated at bin centers.
    Gmm,
    /// Mixture of discretized logistics.
    Lmm,
    /// Unsmoothed dyadic partitioning.
    Udp,
    /// Multinomial with a trend filtering penalty on its logits.
    Smn,
    /// Smoothed dyadic partitioning.
    Sdp,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] = [
        HeadKind::Mn,
        HeadKind::Gmm,
        HeadKind::Lmm,
        HeadKind::Udp,
        HeadKind::Smn,
        HeadKind::Sdp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Mn => "mn",
            HeadKind::Gmm => "gmm",
            HeadKind::Lmm => "lmm",
            HeadKind::Udp => "udp",
            HeadKind::Smn => "smn",
            HeadKind::Sdp => "sdp",
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, HeadKind::Gmm | HeadKind::Lmm)
    }

    pub fn is_smoothed(self) -> bool {
        matches!(self, HeadKind::Smn | HeadKind::Sdp)
    }

    pub fn is_tree(self) -> bool {
        matches!(self, HeadKind::Udp | HeadKind::Sdp)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown head '{s}'")))
    }
}

/// Trend filtering hyperparameters for the smoothed heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub lambda: f64,
    pub order: usize,
    pub radius: usize,
}

/// Affine map from bin index to the real line: `center(j) = offset + step * j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisEmbedding {
    pub offset: f64,
    pub step: f64,
}

impl AxisEmbedding {
    /// Integer bin centers.
    pub const UNIT: AxisEmbedding = AxisEmbedding {
        offset: 0.0,
        step: 1.0,
    };

    /// `bins` evenly spaced points covering `[start, end]` inclusive.
    pub fn spanning(start: f64, end: f64, bins: usize) -> Self {
        let step = if bins > 1 {
            (end - start) / (bins - 1) as f64
        } else {
            1.0
        };
        AxisEmbedding {
            offset: start,
            step,
        }
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        self.offset + self.step * j as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub shape: GridShape,
    /// Mixture size `m`; ignored by non-mixture heads.
    pub components: usize,
    pub smoothing: Option<Smoothing>,
    /// One embedding per grid dimension, used by the mixture heads.
    pub embedding: Vec<AxisEmbedding>,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, shape: GridShape) -> Self {
        let embedding = vec![AxisEmbedding::UNIT; shape.ndim()];
        HeadSpec {
            kind,
            shape,
            components: 1,
            smoothing: None,
            embedding,
        }
    }

    pub fn with_components(mut self, m: usize) -> Self {
        self.components = m;
        self
    }

    pub fn with_smoothing(mut self, lambda: f64, order: usize, radius: usize) -> Self {
        self.smoothing = Some(Smoothing {
            lambda,
            order,
            radius,
        });
        self
    }

    pub fn with_embedding(mut self, embedding: Vec<AxisEmbedding>) -> Self {
        self.embedding = embedding;
        self
    }

    pub fn param_count(&self) -> usize {
        let total = self.shape.total();
        let d = self.shape.ndim();
        let m = self.components;
        match self.kind {
            HeadKind::Mn | HeadKind::Smn => total,
            HeadKind::Udp | HeadKind::Sdp => total - 1,
            HeadKind::Gmm => m * (1 + d + d * (d + 1) / 2),
            HeadKind::Lmm => m * (1 + 2 * d),
        }
    }

    /// λ of the smoothing penalty, 0 for unsmoothed heads.
    pub fn lambda(&self) -> f64 {
        match (self.kind.is_smoothed(), self.smoothing) {
            (true, Some(s)) => s.lambda,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding.len() != self.shape.ndim() {
            return Err(Error::config(format!(
                "embedding has {} axes for a {}-d grid",
                self.embedding.len(),
                self.shape.ndim()
            )));
        }
        if self.embedding.iter().any(|e| !(e.step > 0.0) || !e.offset.is_finite()) {
            return Err(Error::config("embedding steps must be positive and finite"));
        }
        if self.kind.is_mixture() && self.components == 0 {
            return Err(Error::config("mixture heads need at least one component"));
        }
        if self.kind.is_tree() && self.shape.total() < 2 {
            return Err(Error::config("dyadic heads need at least two cells"));
        }
        if self.kind.is_smoothed() {
            let s = self.smoothing.ok_or_else(|| {
                Error::config(format!("{} head needs smoothing parameters", self.kind))
            })?;
            if !(s.lambda >= 0.0) || !s.lambda.is_finite() {
                return Err(Error::config(format!("lambda must be >= 0, got {}", s.lambda)));
            }
            if !(1..=3).contains(&s.order) {
                return Err(Error::config(format!(
                    "trend filtering order must be 1, 2 or 3, got {}",
                    s.order
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample training loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleLoss {
    pub nll: f64,
    /// Unweighted window penalty `‖Δ z‖₁` (0 for unsmoothed heads).
    pub penalty: f64,
}

/// A head ready for evaluation: spec plus precomputed structure.
#[derive(Debug, Clone)]
pub struct Head {
    spec: HeadSpec,
    layout: Option<Arc<DyadicLayout>>,
    operators: Arc<OperatorCache>,
    /// Real-valued cell centers, `total × d`, for the Gaussian head.
    centers: Vec<f64>,
}

impl Head {
    pub fn new(spec: HeadSpec) -> Result<Self> {
        Self::with_cache(spec, Arc::new(OperatorCache::new()))
    }

    /// Builds a head that shares an operator cache with others.
    pub fn with_cache(spec: HeadSpec, operators: Arc<OperatorCache>) -> Result<Self> {
        spec.validate()?;
        let layout = spec
            .kind
            .is_tree()
            .then(|| Arc::new(DyadicLayout::new(&spec.shape)));
        let centers = if spec.kind == HeadKind::Gmm {
            gaussian::cell_centers(&spec)
        } else {
            Vec::new()
        };
        Ok(Head {
            spec,
            layout,
            operators,
            centers,
        })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn kind(&self) -> HeadKind {
        self.spec.kind
    }

    pub fn shape(&self) -> &GridShape {
        &self.spec.shape
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn layout(&self) -> Option<&DyadicLayout> {
        self.layout.as_deref()
    }

    fn tree(&self) -> &DyadicLayout {
        self.layout.as_deref().expect("tree head without layout")
    }

    fn check(&self, params: &[f64], y: usize) -> Result<()> {
        self.check_params(params)?;
        if y >= self.spec.shape.total() {
            return Err(Error::domain(format!(
                "cell {y} outside grid of {} cells",
                self.spec.shape.total()
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::domain(format!(
                "{} head expects {} parameters, got {}",
                self.spec.kind,
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    /// `log p(y)` for a flat cell index.
    pub fn log_prob(&self, params: &[f64], y: usize) -> Result<f64> {
        self.check(params, y)?;
        Ok(match self.spec.kind {
            HeadKind::Mn | HeadKind::Smn => multinomial::log_prob(params, y),
            HeadKind::Udp | HeadKind::Sdp => self.tree().log_prob_index(params, y)?,
            HeadKind::Gmm => gaussian::log_prob(&self.spec, &self.centers, params, y),
            HeadKind::Lmm => logistic::log_prob(&self.spec, params, y),
        })
    }

    pub fn full(&self, params: &[f64]) -> Result<DiscreteDistribution> {
        self.check_params(params)?;
        let mass = match self.spec.kind {
            HeadKind::Mn | HeadKind::Smn => multinomial::full(params),
            HeadKind::Udp | HeadKind::Sdp => self.tree().decode_full(params)?,
            HeadKind::Gmm => gaussian::full(&self.spec, &self.centers, params),
            HeadKind::Lmm => logistic::full(&self.spec, params),
        };
        DiscreteDistribution::new(mass, self.spec.shape.clone())
    }

    /// Dense gradient of `log p(y)` with respect to the parameters.
    pub fn grad(&self, params: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check(params, y)?;
        let mut grad = vec![0.0; params.len()];
        self.add_log_prob_grad(params, y, 1.0, &mut grad);
        Ok(grad)
    }

    /// Adds `scale * ∇ log p(y)` into `grad`; returns `log p(y)`.
    fn add_log_prob_grad(&self, params: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
        match self.spec.kind {
            HeadKind::Mn | HeadKind::Smn => multinomial::add_grad(params, y, scale, grad),
            HeadKind::Udp | HeadKind::Sdp => {
                let tree = self.tree();
                let mut scratch = vec![0; self.spec.shape.ndim()];
                tree.accumulate_log_prob_grad(params, y, scale, grad, &mut scratch);
                tree.log_prob_index(params, y).expect("checked by caller")
            }
            HeadKind::Gmm => gaussian::add_grad(&self.spec, &self.centers, params, y, scale, grad),
            HeadKind::Lmm => logistic::add_grad(&self.spec, params, y, scale, grad),
        }
    }

    /// Inverse-CDF draw from the head's full distribution.
    pub fn sample<R: Rng + ?Sized>(&self, params: &[f64], rng: &mut R) -> Result<usize> {
        Ok(self.full(params)?.sample(rng))
    }

    /// Windowed penalty `‖Δ z‖₁` around `y` (unweighted by λ).
    pub fn window_penalty(&self, params: &[f64], y: usize) -> Result<f64> {
        self.check(params, y)?;
        let Some(smoothing) = self.spec.smoothing.filter(|_| self.spec.kind.is_smoothed()) else {
            return Ok(0.0);
        };
        let (op, window) = self.window(y, smoothing)?;
        let z = match self.spec.kind {
            HeadKind::Sdp => self.tree().gather_window_logprobs(params, &window)?,
            _ => window.leaves.iter().map(|&i| params[i]).collect(),
        };
        op.penalty(&z)
    }

    fn window(
        &self,
        y: usize,
        smoothing: Smoothing,
    ) -> Result<(Arc<crate::trend_filter::PenaltyOperator>, crate::grid_tree::NeighborhoodWindow)>
    {
        let coord = self.spec.shape.unflatten(y);
        let window = neighborhood(&self.spec.shape, &coord, smoothing.radius)?;
        let op = self.operators.get(&window.dims(), smoothing.order)?;
        Ok((op, window))
    }

    /// Training loss for one sample: `−log p(y) + λ ‖Δ z‖₁`.
    ///
    /// Adds `scale * ∇loss` into `grad` and returns the two loss terms. The
    /// penalty is skipped entirely when λ = 0.
    pub fn loss_grad(
        &self,
        params: &[f64],
        y: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<SampleLoss> {
        self.check(params, y)?;
        if grad.len() != params.len() {
            return Err(Error::domain("gradient buffer length mismatch"));
        }
        let log_p = self.add_log_prob_grad(params, y, -scale, grad);
        let mut loss = SampleLoss {
            nll: -log_p,
            penalty: 0.0,
        };
        let lambda = self.spec.lambda();
        if lambda == 0.0 {
            return Ok(loss);
        }
        let smoothing = self.spec.smoothing.expect("validated");
        let (op, window) = self.window(y, smoothing)?;
        match self.spec.kind {
            HeadKind::Sdp => {
                let tree = self.tree();
                let z = tree.gather_window_logprobs(params, &window)?;
                let (value, sub) = op.penalty_and_subgrad(&z)?;
                tree.window_logprob_backward(params, &window, &sub, scale * lambda, grad)?;
                loss.penalty = value;
            }
            HeadKind::Smn => {
                let z: Vec<f64> = window.leaves.iter().map(|&i| params[i]).collect();
                let (value, sub) = op.penalty_and_subgrad(&z)?;
                for (&cell, g) in window.leaves.iter().zip(&sub) {
                    grad[cell] += scale * lambda * g;
                }
                loss.penalty = value;
            }
            _ => unreachable!("lambda is zero for unsmoothed heads"),
        }
        Ok(loss)
    }
}
