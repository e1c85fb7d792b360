use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, fit_cell, shared_cache, write_manifest, write_rows, HeadGrid, NetworkSettings, OptimizerSettings, Timing};
use crate::error::{Error, Result};
use crate::eval::{grid_search, mean_class_tv};
use crate::heads::{Head, HeadKind};
use crate::nnet::{TrainConfig, Validation};
use crate::synth::{make_task, LatentClassTask, TruthKind};

pub const SCORES_FILE: &str = "synth_scores.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub truths: Vec<TruthKind>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub heads: Vec<HeadKind>,
    pub grid: HeadGrid,
    pub network: NetworkSettings,
    pub optimizer: OptimizerSettings,
    pub batch_size: usize,
    pub max_steps: usize,
    pub validate_every: usize,
    /// Stop after this many validations without improvement (0: never).
    pub stale_limit: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            truths: TruthKind::ALL.to_vec(),
            sizes: vec![500, 1000, 3000, 5000, 10_000, 15_000, 30_000, 60_000],
            trials: 10,
            heads: HeadKind::ALL.to_vec(),
            grid: HeadGrid::default(),
            network: NetworkSettings::default(),
            optimizer: OptimizerSettings {
                lr: 2e-3,
                ..OptimizerSettings::default()
            },
            batch_size: 50,
            max_steps: 8000,
            validate_every: 100,
            stale_limit: 5,
            validation_fraction: 0.2,
            seed: 0,
            workers: 1,
        }
    }
}

impl SynthSettings {
    pub fn validate(&self) -> Result<()> {
        if self.truths.is_empty() || self.sizes.is_empty() || self.heads.is_empty() {
            return Err(Error::config("truths, sizes and heads must be non-empty"));
        }
        if self.trials == 0 || self.max_steps == 0 || self.validate_every == 0 {
            return Err(Error::config("trials, steps and validation cadence must be positive"));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 5) {
            return Err(Error::config(format!("sample size {n} too small to split")));
        }
        self.grid.validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: self.optimizer.adam(),
            batch_size: self.batch_size,
            max_steps: Some(self.max_steps),
            max_epochs: None,
            validation: Validation::EverySteps(self.validate_every),
            validation_fraction: self.validation_fraction,
            stale_limit: (self.stale_limit > 0).then_some(self.stale_limit),
            schedule: None,
            restore_best: true,
            log_every: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRow {
    pub truth: TruthKind,
    pub size: usize,
    pub trial: usize,
    pub head: HeadKind,
    /// TV to the class truths, averaged over classes.
    pub tv: f64,
    pub val_log_prob: f64,
    pub components: Option<usize>,
    pub lambda: Option<f64>,
    pub order: Option<usize>,
    pub radius: Option<usize>,
    /// Seed shared by the task draw and every fit in this cell.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub rows: Vec<SynthRow>,
    pub timings: Vec<Timing>,
}

impl SynthReport {
    pub fn rows_for(&self, truth: TruthKind, size: usize, head: HeadKind) -> impl Iterator<Item = &SynthRow> {
        self.rows
            .iter()
            .filter(move |r| r.truth == truth && r.size == size && r.head == head)
    }

    /// Mean TV over trials.
    pub fn mean_tv(&self, truth: TruthKind, size: usize, head: HeadKind) -> Option<f64> {
        let tvs: Vec<f64> = self.rows_for(truth, size, head).map(|r| r.tv).collect();
        (!tvs.is_empty()).then(|| tvs.iter().sum::<f64>() / tvs.len() as f64)
    }
}

/// Latent-class benchmark: for every truth family, sample size, trial and
/// head, grid-search the head's hyperparameters on validation and report TV
/// of the selected model to the class truths.
pub fn cmd_synth(settings: &SynthSettings, out: Option<&Path>) -> Result<SynthReport> {
    settings.validate()?;
    let cache = shared_cache();
    let mut rows = Vec::new();
    let mut timings = Vec::new();

    for &truth in &settings.truths {
        for trial in 0..settings.trials {
            let task_seed = derive_seed(settings.seed, &[truth as u64, trial as u64]);
            let task = LatentClassTask::generate(truth, &mut ChaCha8Rng::seed_from_u64(task_seed));
            let embedding = vec![task.embedding()];
            for &size in &settings.sizes {
                let seed = derive_seed(task_seed, &[size as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = make_task(&task, size, &mut rng)?;
                let (train, valid) = data
                    .samples
                    .split_validation(settings.validation_fraction, derive_seed(seed, &[1]))?;
                let config = settings.train_config(derive_seed(seed, &[2]));
                for &kind in &settings.heads {
                    let start = Instant::now();
                    let cells = settings.grid.cells(kind, task.shape(), &embedding);
                    let selection = grid_search(&cells, settings.workers, |spec| {
                        fit_cell(spec, &cache, &settings.network, &train, &valid, &config)
                    })?;
                    let head = Head::with_cache(selection.spec.clone(), cache.clone())?;
                    let tv = mean_class_tv(&selection.model, &head, &task)?;
                    let smoothing = selection.spec.smoothing;
                    rows.push(SynthRow {
                        truth,
                        size,
                        trial,
                        head: kind,
                        tv,
                        val_log_prob: selection.val_log_prob,
                        components: kind.is_mixture().then_some(selection.spec.components),
                        lambda: smoothing.map(|s| s.lambda),
                        order: smoothing.map(|s| s.order),
                        radius: smoothing.map(|s| s.radius),
                        seed,
                    });
                    timings.push(Timing {
                        label: format!("truth={truth} size={size} trial={trial} head={kind} cells={}", cells.len()),
                        secs: start.elapsed().as_secs_f64(),
                    });
                }
            }
        }
    }

    if let Some(out) = out {
        write_rows(&out.join(SCORES_FILE), &rows)?;
        write_manifest(out, "synth", settings, &timings)?;
    }
    Ok(SynthReport { rows, timings })
}
