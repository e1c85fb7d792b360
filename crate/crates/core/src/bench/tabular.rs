use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{derive_seed, fit_cell, shared_cache, write_manifest, write_rows, HeadGrid, NetworkSettings, OptimizerSettings, Timing};
use crate::dataio::{kfold, load_csv, trial_split, Schema, Standardizer};
use crate::error::{Error, Result};
use crate::eval::{grid_search, rmse_scaled, summed_log_prob};
use crate::heads::{AxisEmbedding, Head, HeadKind};
use crate::nnet::{LrSchedule, TrainConfig, Validation};

pub const FOLDS_FILE: &str = "tabular_folds.csv";
pub const AGGREGATE_FOLD: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSettings {
    /// Label written into every row.
    pub name: String,
    pub data: Option<PathBuf>,
    pub features: Vec<String>,
    pub targets: Vec<String>,
    /// Bins per target dimension; omit for integer targets.
    pub bins: Option<Vec<usize>>,
    pub folds: usize,
    pub heads: Vec<HeadKind>,
    pub grid: HeadGrid,
    pub network: NetworkSettings,
    pub optimizer: OptimizerSettings,
    pub min_lr: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TabularSettings {
    fn default() -> Self {
        TabularSettings {
            name: "dataset".into(),
            data: None,
            features: Vec::new(),
            targets: Vec::new(),
            bins: None,
            folds: 10,
            heads: HeadKind::ALL.to_vec(),
            grid: HeadGrid::default(),
            network: NetworkSettings {
                hidden: vec![256, 128, 64],
                keep_prob: 0.9,
                weight_decay: 1e-4,
            },
            optimizer: OptimizerSettings {
                lr: 1e-3,
                ..OptimizerSettings::default()
            },
            min_lr: 1e-4,
            decay_factor: 0.25,
            patience: 10,
            max_epochs: 1000,
            batch_size: 32,
            validation_fraction: 0.2,
            seed: 0,
            workers: 1,
        }
    }
}

impl TabularSettings {
    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() {
            return Err(Error::config("tabular runs need a data file"));
        }
        if self.features.is_empty() || self.targets.is_empty() {
            return Err(Error::config("name at least one feature and one target column"));
        }
        if self.heads.is_empty() {
            return Err(Error::config("head list is empty"));
        }
        if let Some(bins) = &self.bins {
            if bins.len() != self.targets.len() {
                return Err(Error::config(format!(
                    "{} bin counts for {} target columns",
                    bins.len(),
                    self.targets.len()
                )));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::config("epoch limit must be positive"));
        }
        self.grid.validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: self.optimizer.adam(),
            batch_size: self.batch_size,
            max_steps: None,
            max_epochs: Some(self.max_epochs),
            validation: Validation::EveryEpoch,
            validation_fraction: self.validation_fraction,
            stale_limit: None,
            schedule: Some(LrSchedule {
                min_lr: self.min_lr,
                factor: self.decay_factor,
                patience_epochs: self.patience,
            }),
            restore_best: true,
            log_every: 0,
            seed,
        }
    }
}

/// Held-out metrics of the selected model for one fold, or their mean over
/// folds when `fold` is `"all"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRow {
    pub dataset: String,
    pub head: HeadKind,
    pub fold: String,
    pub n_test: usize,
    pub summed_log_prob: f64,
    /// In target units, using each dimension's bin width.
    pub rmse: f64,
    pub components: Option<usize>,
    pub lambda: Option<f64>,
    pub order: Option<usize>,
    pub radius: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TabularReport {
    pub rows: Vec<TabularRow>,
    pub timings: Vec<Timing>,
}

impl TabularReport {
    pub fn aggregate(&self, head: HeadKind) -> Option<&TabularRow> {
        self.rows
            .iter()
            .find(|r| r.head == head && r.fold == AGGREGATE_FOLD)
    }
}

/// K-fold benchmark on a CSV dataset: per fold and head, grid-search on the
/// validation rows, then score the test fold.
pub fn cmd_tabular(settings: &TabularSettings, out: Option<&Path>) -> Result<TabularReport> {
    settings.validate()?;
    let path = settings.data.as_ref().expect("validated");
    let schema = Schema {
        features: settings.features.clone(),
        targets: settings.targets.clone(),
        bins: settings.bins.clone(),
    };
    let data = load_csv(path, &schema)?;
    let fold_ids = kfold(data.len(), settings.folds, derive_seed(settings.seed, &[0]))?;
    let widths: Vec<f64> = data.binning.iter().map(|b| b.width()).collect();
    let embedding = vec![AxisEmbedding::UNIT; data.shape.ndim()];
    let cache = shared_cache();

    let mut per_head: Vec<Vec<TabularRow>> = vec![Vec::new(); settings.heads.len()];
    let mut timings = Vec::new();
    for fold in 0..settings.folds {
        let seed = derive_seed(settings.seed, &[1, fold as u64]);
        let split = trial_split(&fold_ids, fold, settings.validation_fraction, seed)?;
        let standardizer = Standardizer::fit(&data, &split.train)?;
        let train = data.samples(&split.train, &standardizer)?;
        let valid = data.samples(&split.validation, &standardizer)?;
        let test = data.samples(&split.test, &standardizer)?;
        let config = settings.train_config(derive_seed(seed, &[2]));
        for (hi, &kind) in settings.heads.iter().enumerate() {
            let start = Instant::now();
            let cells = settings.grid.cells(kind, &data.shape, &embedding);
            let selection = grid_search(&cells, settings.workers, |spec| {
                fit_cell(spec, &cache, &settings.network, &train, &valid, &config)
            })?;
            let head = Head::with_cache(selection.spec.clone(), cache.clone())?;
            let smoothing = selection.spec.smoothing;
            per_head[hi].push(TabularRow {
                dataset: settings.name.clone(),
                head: kind,
                fold: fold.to_string(),
                n_test: test.len(),
                summed_log_prob: summed_log_prob(&selection.model, &head, &test)?,
                rmse: rmse_scaled(&selection.model, &head, &test, &widths)?,
                components: kind.is_mixture().then_some(selection.spec.components),
                lambda: smoothing.map(|s| s.lambda),
                order: smoothing.map(|s| s.order),
                radius: smoothing.map(|s| s.radius),
                seed,
            });
            timings.push(Timing {
                label: format!("fold={fold} head={kind} cells={}", cells.len()),
                secs: start.elapsed().as_secs_f64(),
            });
        }
    }

    let mut rows = Vec::new();
    for (&kind, folds) in settings.heads.iter().zip(per_head) {
        let k = folds.len() as f64;
        let aggregate = TabularRow {
            dataset: settings.name.clone(),
            head: kind,
            fold: AGGREGATE_FOLD.into(),
            n_test: folds.iter().map(|r| r.n_test).sum(),
            summed_log_prob: folds.iter().map(|r| r.summed_log_prob).sum::<f64>() / k,
            rmse: folds.iter().map(|r| r.rmse).sum::<f64>() / k,
            components: None,
            lambda: None,
            order: None,
            radius: None,
            seed: settings.seed,
        };
        rows.extend(folds);
        rows.push(aggregate);
    }

    if let Some(out) = out {
        write_rows(&out.join(FOLDS_FILE), &rows)?;
        write_manifest(out, "tabular", settings, &timings)?;
    }
    Ok(TabularReport { rows, timings })
}
