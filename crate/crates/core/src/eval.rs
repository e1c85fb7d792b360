//! Metrics and validation-driven model selection.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Samples;
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::heads::{Head, HeadSpec};
use crate::nnet::Model;
use crate::synth::LatentClassTask;

/// Total variation distance, `½ Σ |p_i − q_i|`.
pub fn tv(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::domain(format!(
            "cannot compare distributions over {:?} and {:?}",
            p.shape().dims(),
            q.shape().dims()
        )));
    }
    Ok(0.5 * p.mass().iter().zip(q.mass()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Mean held-out `log p(y | x)`.
pub fn mean_log_prob(model: &Model, head: &Head, data: &Samples) -> Result<f64> {
    Ok(-model.mean_nll(head, data)?)
}

/// Summed held-out `log p(y | x)`.
pub fn summed_log_prob(model: &Model, head: &Head, data: &Samples) -> Result<f64> {
    Ok(mean_log_prob(model, head, data)? * data.len() as f64)
}

/// RMSE of the predicted distribution mean against the observed cell, in
/// grid coordinates.
pub fn rmse(model: &Model, head: &Head, data: &Samples) -> Result<f64> {
    rmse_scaled(model, head, data, &vec![1.0; head.shape().ndim()])
}

/// As [`rmse`], with per-dimension errors multiplied by `scale` first (e.g.
/// bin widths, to report in the original target units).
pub fn rmse_scaled(model: &Model, head: &Head, data: &Samples, scale: &[f64]) -> Result<f64> {
    let shape = head.shape();
    if scale.len() != shape.ndim() {
        return Err(Error::domain(format!(
            "{} scale factors for a {}-d grid",
            scale.len(),
            shape.ndim()
        )));
    }
    if data.is_empty() {
        return Err(Error::config("cannot score an empty sample set"));
    }
    let marginal = match model {
        Model::Marginal { params } => Some(head.full(params)?.mean()),
        Model::Network(_) => None,
    };
    let mut total = 0.0;
    for i in 0..data.len() {
        let mean = match &marginal {
            Some(m) => m.clone(),
            None => model.predict(head, data.x(i))?.mean(),
        };
        let truth = shape.unflatten(data.y(i));
        total += mean
            .iter()
            .zip(&truth)
            .zip(scale)
            .map(|((m, &t), s)| ((m - t as f64) * s).powi(2))
            .sum::<f64>();
    }
    Ok((total / data.len() as f64).sqrt())
}

/// TV between predicted and true class distributions, evaluated at each
/// class's noise-free indicator and averaged over classes.
pub fn mean_class_tv(model: &Model, head: &Head, task: &LatentClassTask) -> Result<f64> {
    let mut total = 0.0;
    for (class, truth) in task.truths().iter().enumerate() {
        let predicted = model.predict(head, &task.clean_features(class))?;
        total += tv(&predicted, &truth.mass)?;
    }
    Ok(total / task.classes() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub fold: usize,
    pub summed_log_prob: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tv: Option<f64>,
    pub mean_log_prob: f64,
    pub rmse: f64,
    pub folds: Vec<FoldMetric>,
    pub selected_lambda: Option<f64>,
    pub selected_components: Option<usize>,
    pub selected_order: Option<usize>,
}

impl MetricReport {
    /// Pools fold metrics: log-probs are summed, RMSE is pooled over rows.
    pub fn from_folds(folds: Vec<FoldMetric>) -> Result<Self> {
        let n: usize = folds.iter().map(|f| f.n).sum();
        if n == 0 {
            return Err(Error::config("no folds to aggregate"));
        }
        let summed: f64 = folds.iter().map(|f| f.summed_log_prob).sum();
        let sq: f64 = folds.iter().map(|f| f.rmse * f.rmse * f.n as f64).sum();
        Ok(MetricReport {
            tv: None,
            mean_log_prob: summed / n as f64,
            rmse: (sq / n as f64).sqrt(),
            folds,
            selected_lambda: None,
            selected_components: None,
            selected_order: None,
        })
    }
}

/// Outcome of fitting one grid cell.
#[derive(Debug, Clone)]
pub struct CellFit {
    pub model: Model,
    /// Mean validation log-probability of the restored model.
    pub val_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub index: usize,
    pub val_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub spec: HeadSpec,
    pub model: Model,
    pub val_log_prob: f64,
    pub scores: Vec<CellScore>,
}

/// Higher validation log-prob wins; ties go to larger λ, then fewer
/// components, lower order, smaller radius.
fn preference(a: (&HeadSpec, f64), b: (&HeadSpec, f64)) -> Ordering {
    let key = |s: &HeadSpec| {
        let (k, r) = s.smoothing.map_or((0, 0), |sm| (sm.order, sm.radius));
        (s.components, k, r, s.kind as usize)
    };
    b.1.total_cmp(&a.1)
        .then_with(|| b.0.lambda().total_cmp(&a.0.lambda()))
        .then_with(|| key(a.0).cmp(&key(b.0)))
}

/// Fits every cell with `fit` on a pool of `workers` threads and keeps the
/// preferred one. Cells are fitted independently, so callers should give
/// every cell the same seed to make selection independent of cell order.
pub fn grid_search<F>(cells: &[HeadSpec], workers: usize, fit: F) -> Result<Selection>
where
    F: Fn(&HeadSpec) -> Result<CellFit> + Sync,
{
    if cells.is_empty() {
        return Err(Error::config("hyperparameter grid is empty"));
    }
    let run = || cells.par_iter().map(&fit).collect::<Vec<_>>();
    let fits = if workers <= 1 {
        cells.iter().map(&fit).collect::<Vec<_>>()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?
            .install(run)
    };
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(bad) = fits.iter().position(|f| f.val_log_prob.is_nan()) {
        return Err(Error::domain(format!("grid cell {bad} produced a NaN validation score")));
    }
    let scores = fits
        .iter()
        .enumerate()
        .map(|(index, f)| CellScore {
            index,
            val_log_prob: f.val_log_prob,
        })
        .collect();
    let best = (0..cells.len())
        .min_by(|&a, &b| {
            preference((&cells[a], fits[a].val_log_prob), (&cells[b], fits[b].val_log_prob))
                .then(a.cmp(&b))
        })
        .expect("nonempty grid");
    let CellFit { model, val_log_prob } = fits.into_iter().nth(best).expect("index in range");
    Ok(Selection {
        index: best,
        spec: cells[best].clone(),
        model,
        val_log_prob,
        scores,
    })
}
