use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_pool, shared_cache, write_manifest, write_rows, OptimizerSettings, Timing};
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::eval::tv;
use crate::heads::{Head, HeadKind, HeadSpec};
use crate::nnet::{fit_observed, Model, TrainConfig, Validation};
use crate::synth::{piecewise_marginal, sample_marginal};

pub const CURVES_FILE: &str = "marginal_curves.csv";
pub const SUMMARY_FILE: &str = "marginal_summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalSettings {
    pub samples: usize,
    pub radii: Vec<usize>,
    pub lambda: f64,
    pub order: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    pub trials: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for MarginalSettings {
    fn default() -> Self {
        MarginalSettings {
            samples: 5000,
            radii: vec![1, 3, 5, 10, 25],
            lambda: 0.02,
            order: 1,
            steps: 50_000,
            eval_every: 100,
            batch_size: 10,
            optimizer: OptimizerSettings {
                lr: 1e-2,
                eps: 0.1,
                ..OptimizerSettings::default()
            },
            trials: 1,
            seed: 0,
            workers: 1,
        }
    }
}

impl MarginalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.steps == 0 || self.trials == 0 {
            return Err(Error::config("samples, steps and trials must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("evaluation cadence must be positive"));
        }
        if self.radii.contains(&0) && self.lambda > 0.0 {
            return Err(Error::config(
                "radius 0 gives a one-cell window with no differences to penalize; use a radius of at least 1",
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("invalid penalty weight {}", self.lambda)));
        }
        if !(1..=3).contains(&self.order) {
            return Err(Error::config(format!("trend filtering order {} outside 1..=3", self.order)));
        }
        Ok(())
    }
}

/// TV to the truth at one logged step. The empirical reference appears once
/// per trial with step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurveRow {
    pub trial: usize,
    pub method: String,
    pub radius: usize,
    pub step: usize,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummaryRow {
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub radius: usize,
    pub best_tv: f64,
    pub best_step: usize,
    pub final_tv: f64,
    pub empirical_tv: f64,
}

#[derive(Debug, Clone)]
pub struct MarginalReport {
    pub curves: Vec<MarginalCurveRow>,
    pub summary: Vec<MarginalSummaryRow>,
    pub timings: Vec<Timing>,
}

impl MarginalReport {
    pub fn summary_for(&self, trial: usize, method: &str, radius: usize) -> Option<&MarginalSummaryRow> {
        self.summary
            .iter()
            .find(|r| r.trial == trial && r.method == method && r.radius == radius)
    }
}

struct Job {
    trial: usize,
    kind: HeadKind,
    radius: usize,
}

/// Fits UDP and SDP at every radius to samples from the piecewise-linear
/// marginal, logging TV to the truth every `eval_every` steps.
pub fn cmd_marginal(settings: &MarginalSettings, out: Option<&Path>) -> Result<MarginalReport> {
    settings.validate()?;
    let truth = piecewise_marginal();
    let shape = truth.shape().clone();
    let cache = shared_cache();

    let mut jobs = Vec::new();
    for trial in 0..settings.trials {
        jobs.push(Job {
            trial,
            kind: HeadKind::Udp,
            radius: 0,
        });
        for &radius in &settings.radii {
            jobs.push(Job {
                trial,
                kind: HeadKind::Sdp,
                radius,
            });
        }
    }

    let data: Vec<_> = (0..settings.trials)
        .map(|trial| {
            let seed = derive_seed(settings.seed, &[trial as u64, 0]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = sample_marginal(&truth, settings.samples, &mut rng)?;
            let empirical = DiscreteDistribution::empirical(shape.clone(), samples.targets())?;
            let empirical_tv = tv(&empirical, &truth.mass)?;
            Ok((samples, empirical_tv))
        })
        .collect::<Result<_>>()?;

    let empty = crate::dataio::Samples::marginal(Vec::new(), shape.clone())?;
    let results = run_pool(settings.workers, &jobs, |job| {
        let mut spec = HeadSpec::new(job.kind, shape.clone());
        if job.kind == HeadKind::Sdp {
            spec = spec.with_smoothing(settings.lambda, settings.order, job.radius);
        }
        let head = Head::with_cache(spec, cache.clone())?;
        let mut model = Model::marginal(&head);
        let train_seed = derive_seed(settings.seed, &[job.trial as u64, 1]);
        let config = TrainConfig {
            adam: settings.optimizer.adam(),
            batch_size: settings.batch_size,
            max_steps: Some(settings.steps),
            max_epochs: None,
            validation: Validation::Off,
            stale_limit: None,
            schedule: None,
            restore_best: false,
            log_every: settings.eval_every,
            seed: train_seed,
            ..TrainConfig::default()
        };
        let mut curve = vec![(0, tv(&head.full(model.params())?, &truth.mass)?)];
        let mut failure = None;
        let start = Instant::now();
        fit_observed(&mut model, &head, &data[job.trial].0, &empty, &config, |row, m| {
            if failure.is_some() {
                return;
            }
            match head.full(m.params()).and_then(|d| tv(&d, &truth.mass)) {
                Ok(v) => curve.push((row.step, v)),
                Err(e) => failure = Some(e),
            }
        })?;
        let secs = start.elapsed().as_secs_f64();
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((curve, secs))
    })?;

    let mut curves = Vec::new();
    let mut summary = Vec::new();
    let mut timings = Vec::new();
    for trial in 0..settings.trials {
        curves.push(MarginalCurveRow {
            trial,
            method: "empirical".into(),
            radius: 0,
            step: 0,
            tv: data[trial].1,
        });
    }
    for (job, (curve, secs)) in jobs.iter().zip(results) {
        let method = job.kind.name().to_string();
        let (best_step, best_tv) = curve
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("curve has the initial point");
        let final_tv = curve.last().expect("nonempty").1;
        summary.push(MarginalSummaryRow {
            trial: job.trial,
            seed: derive_seed(settings.seed, &[job.trial as u64, 1]),
            method: method.clone(),
            radius: job.radius,
            best_tv,
            best_step,
            final_tv,
            empirical_tv: data[job.trial].1,
        });
        timings.push(Timing {
            label: format!("trial={} method={} radius={}", job.trial, method, job.radius),
            secs,
        });
        curves.extend(curve.into_iter().map(|(step, tv)| MarginalCurveRow {
            trial: job.trial,
            method: method.clone(),
            radius: job.radius,
            step,
            tv,
        }));
    }

    if let Some(out) = out {
        write_rows(&out.join(CURVES_FILE), &curves)?;
        write_rows(&out.join(SUMMARY_FILE), &summary)?;
        write_manifest(out, "marginal", settings, &timings)?;
    }
    Ok(MarginalReport {
        curves,
        summary,
        timings,
    })
}
