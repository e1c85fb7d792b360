//! Benchmark drivers behind the `sdp-bench` binary.
//!
//! Each command reads a resolved settings struct, writes plain CSV tables to
//! its output directory and a `manifest.json` sidecar holding the config
//! echo and wall-clock timings. The CSV tables depend only on the settings
//! and seed.

mod config;
mod marginal;
mod synth;
mod tabular;

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heads::{AxisEmbedding, HeadKind, HeadSpec};
use crate::grid_tree::GridShape;
use crate::nnet::AdamConfig;

pub use config::{parse_bins, parse_heads, parse_truths, Command, FileConfig, Overrides, RunConfig};
pub use marginal::{cmd_marginal, MarginalCurveRow, MarginalReport, MarginalSettings, MarginalSummaryRow};
pub use synth::{cmd_synth, SynthReport, SynthRow, SynthSettings};
pub use tabular::{cmd_tabular, TabularReport, TabularRow, TabularSettings};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Deterministic seed derivation (SplitMix64 finalizer over the parts).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Hyperparameter values searched per head.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadGrid {
    pub components: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub orders: Vec<usize>,
    pub radius: usize,
}

impl Default for HeadGrid {
    fn default() -> Self {
        HeadGrid {
            components: vec![1, 3, 5, 10, 20],
            lambdas: vec![0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0],
            orders: vec![1, 2],
            radius: 5,
        }
    }
}

impl HeadGrid {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.lambdas.is_empty() || self.orders.is_empty() {
            return Err(Error::config("head grid lists must be non-empty"));
        }
        if self.components.contains(&0) {
            return Err(Error::config("mixture sizes must be positive"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::config(format!("invalid penalty weight {l}")));
        }
        if let Some(k) = self.orders.iter().find(|k| !(1..=3).contains(*k)) {
            return Err(Error::config(format!("trend filtering order {k} outside 1..=3")));
        }
        if self.radius == 0 && self.lambdas.iter().any(|&l| l > 0.0) {
            return Err(Error::config("radius 0 leaves nothing to smooth; use a radius of at least 1"));
        }
        Ok(())
    }

    /// Every spec searched for `kind`.
    pub fn cells(&self, kind: HeadKind, shape: &GridShape, embedding: &[AxisEmbedding]) -> Vec<HeadSpec> {
        let base = HeadSpec::new(kind, shape.clone()).with_embedding(embedding.to_vec());
        if kind.is_mixture() {
            self.components
                .iter()
                .map(|&m| base.clone().with_components(m))
                .collect()
        } else if kind.is_smoothed() {
            let mut cells = Vec::new();
            for &k in &self.orders {
                for &l in &self.lambdas {
                    cells.push(base.clone().with_smoothing(l, k, self.radius));
                }
            }
            cells
        } else {
            vec![base]
        }
    }
}

/// Adam settings as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl OptimizerSettings {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerSettings {
            lr: a.lr,
            eps: a.eps,
            beta1: a.beta1,
            beta2: a.beta2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub secs: f64,
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    command: &'a str,
    version: &'a str,
    settings: &'a S,
    timings: &'a [Timing],
}

pub(crate) fn write_manifest<S: Serialize>(out: &Path, command: &str, settings: &S, timings: &[Timing]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        settings,
        timings,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))?;
    crate::dataio::write_text(&out.join(MANIFEST_FILE), &text)
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(io)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let path = path.display().to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path, source },
        other => Error::data(format!("{path}: {other:?}")),
    }
}

pub(crate) fn shared_cache() -> Arc<crate::trend_filter::OperatorCache> {
    Arc::new(crate::trend_filter::OperatorCache::new())
}

/// Runs `f` over `jobs` on a pool of `workers` threads, keeping job order.
pub(crate) fn run_pool<J, T, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return jobs.iter().map(f).collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?
        .install(|| jobs.par_iter().map(&f).collect())
}

/// Conditioning network shape shared by the conditional commands.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub hidden: Vec<usize>,
    pub keep_prob: f64,
    pub weight_decay: f64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            hidden: Vec::new(),
            keep_prob: 1.0,
            weight_decay: 0.0,
        }
    }
}

/// Trains one grid cell from a fresh network seeded with `config.seed`.
pub(crate) fn fit_cell(
    spec: &HeadSpec,
    cache: &Arc<crate::trend_filter::OperatorCache>,
    net: &NetworkSettings,
    train: &crate::dataio::Samples,
    valid: &crate::dataio::Samples,
    config: &crate::nnet::TrainConfig,
) -> Result<crate::eval::CellFit> {
    use rand::SeedableRng;
    let head = crate::heads::Head::with_cache(spec.clone(), cache.clone())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mlp = crate::nnet::MlpSpec::new(train.n_features(), &net.hidden, head.param_count())
        .with_dropout(net.keep_prob)
        .with_weight_decay(net.weight_decay);
    let mut model = crate::nnet::Model::network(mlp, &head, &mut rng)?;
    let log = crate::nnet::fit(&mut model, &head, train, valid, config)?;
    let val_nll = match log.best_val_nll {
        Some(v) => v,
        None => model.mean_nll(&head, valid)?,
    };
    Ok(crate::eval::CellFit {
        model,
        val_log_prob: -val_nll,
    })
}
