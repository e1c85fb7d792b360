use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::mlp::{Mlp, MlpSpec, Mode};
use crate::dataio::Samples;
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::heads::Head;

/// What produces the head parameters for a sample.
#[derive(Debug, Clone)]
pub enum Model {
    /// Head parameters trained directly, with no covariates.
    Marginal { params: Vec<f64> },
    Network(Mlp),
}

impl Model {
    /// Zero-initialized free head parameters.
    pub fn marginal(head: &Head) -> Self {
        Model::Marginal {
            params: vec![0.0; head.param_count()],
        }
    }

    pub fn network<R: Rng + ?Sized>(spec: MlpSpec, head: &Head, rng: &mut R) -> Result<Self> {
        if spec.output() != head.param_count() {
            return Err(Error::config(format!(
                "network output width {} does not match {} head parameters",
                spec.output(),
                head.param_count()
            )));
        }
        Ok(Model::Network(Mlp::new(spec, rng)?))
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Marginal { params } => params,
            Model::Network(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Marginal { params } => params,
            Model::Network(net) => net.params_mut(),
        }
    }

    fn weight_decay(&self) -> Option<(Vec<bool>, f64)> {
        match self {
            Model::Marginal { .. } => None,
            Model::Network(net) => {
                let wd = net.spec().weight_decay;
                (wd > 0.0).then(|| (net.decay_mask(), wd))
            }
        }
    }

    /// Head parameters for features `x` (eval mode).
    pub fn head_params(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Marginal { params } => Ok(params.clone()),
            Model::Network(net) => net.predict(x),
        }
    }

    /// Predicted distribution for features `x`.
    pub fn predict(&self, head: &Head, x: &[f64]) -> Result<DiscreteDistribution> {
        head.full(&self.head_params(x)?)
    }

    /// Mean `−log p(y | x)` over `data` in eval mode.
    pub fn mean_nll(&self, head: &Head, data: &Samples) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("cannot score an empty sample set"));
        }
        let total = match self {
            Model::Marginal { params } => {
                let mass = head.full(params)?;
                data.targets().iter().map(|&y| -mass.mass()[y].ln()).sum::<f64>()
            }
            Model::Network(net) => {
                let mut total = 0.0;
                for i in 0..data.len() {
                    let hp = net.predict(data.x(i))?;
                    total -= head.log_prob(&hp, data.y(i))?;
                }
                total
            }
        };
        Ok(total / data.len() as f64)
    }
}

/// Per-sample objective `−log p(y|x) + λ‖Δz‖₁` and its gradient with respect
/// to every model parameter, in eval mode.
pub fn sample_objective(model: &Model, head: &Head, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params().len()];
    let loss = match model {
        Model::Marginal { params } => head.loss_grad(params, y, 1.0, &mut grad)?,
        Model::Network(net) => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (hp, cache) = net.forward(x, Mode::Eval, &mut rng)?;
            let mut hg = vec![0.0; hp.len()];
            let loss = head.loss_grad(&hp, y, 1.0, &mut hg)?;
            net.accumulate_backward(&cache, &hg, &mut grad)?;
            loss
        }
    };
    Ok((loss.nll + head.spec().lambda() * loss.penalty, grad))
}

/// Plateau-driven learning-rate decay, checked once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub min_lr: f64,
    /// Multiplier applied on each decay, in (0, 1).
    pub factor: f64,
    /// Epochs without validation improvement before a decay.
    pub patience_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validation {
    Off,
    EverySteps(usize),
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
    pub max_epochs: Option<usize>,
    pub validation: Validation,
    /// Fraction of the training rows callers hold out for validation.
    pub validation_fraction: f64,
    /// Stop after this many consecutive validations without improvement.
    pub stale_limit: Option<usize>,
    pub schedule: Option<LrSchedule>,
    /// Restore the parameters with the best validation NLL when done.
    pub restore_best: bool,
    /// Emit a log row every this many steps (0: only at validations).
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 50,
            max_steps: Some(1000),
            max_epochs: None,
            validation: Validation::EverySteps(100),
            validation_fraction: 0.2,
            stale_limit: None,
            schedule: None,
            restore_best: true,
            log_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.max_steps.is_none() && self.max_epochs.is_none() && self.schedule.is_none() {
            return Err(Error::config("training needs a step limit, epoch limit, or schedule"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation fraction must be in (0, 1)"));
        }
        if let Some(s) = &self.schedule {
            if !(s.factor > 0.0 && s.factor < 1.0) {
                return Err(Error::config(format!(
                    "decay factor must be in (0, 1), got {}",
                    s.factor
                )));
            }
            if !(s.min_lr > 0.0) {
                return Err(Error::config("minimum learning rate must be positive"));
            }
        }
        if let Validation::EverySteps(0) = self.validation {
            return Err(Error::config("validation cadence must be positive"));
        }
        if !(self.adam.lr > 0.0) || !(self.adam.eps > 0.0) {
            return Err(Error::config("learning rate and epsilon must be positive"));
        }
        Ok(())
    }

    fn needs_validation(&self) -> bool {
        self.validation != Validation::Off || self.schedule.is_some() || self.stale_limit.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch NLL since the previous row.
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub best_val_nll: Option<f64>,
    /// Mean unweighted window penalty since the previous row.
    pub penalty: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxSteps,
    MaxEpochs,
    MinLearningRate,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub best_val_nll: Option<f64>,
    pub best_step: Option<usize>,
    pub steps: usize,
    pub epochs: usize,
    pub stop: StopReason,
    /// Learning rate in force after each decay, starting with the initial rate.
    pub lr_history: Vec<f64>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "step,epoch,lr,train_nll,val_nll,best_val_nll,penalty,wall_secs";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step,
                r.epoch,
                r.lr,
                r.train_nll,
                opt(r.val_nll),
                opt(r.best_val_nll),
                r.penalty,
                r.wall_secs
            ));
        }
        out
    }
}

pub fn fit(model: &mut Model, head: &Head, train: &Samples, valid: &Samples, config: &TrainConfig) -> Result<TrainLog> {
    fit_observed(model, head, train, valid, config, |_, _| {})
}

/// Mini-batch Adam on the mean per-sample loss. `on_log` sees every log row
/// together with the current (not restored) model.
pub fn fit_observed<F>(
    model: &mut Model,
    head: &Head,
    train: &Samples,
    valid: &Samples,
    config: &TrainConfig,
    mut on_log: F,
) -> Result<TrainLog>
where
    F: FnMut(&LogRow, &Model),
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("empty training split"));
    }
    if config.needs_validation() && valid.is_empty() {
        return Err(Error::config("empty validation split"));
    }
    if let Model::Network(net) = model {
        if net.spec().input() != train.n_features() {
            return Err(Error::config(format!(
                "network expects {} features, data has {}",
                net.spec().input(),
                train.n_features()
            )));
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_params = model.params().len();
    let mut adam = Adam::new(n_params, config.adam);
    let decay = model.weight_decay();
    let n_head = head.param_count();

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut lr = config.adam.lr;
    let mut lr_history = vec![lr];
    let mut grad = vec![0.0; n_params];
    let mut head_grad = vec![0.0; n_head];
    let mut targets = Vec::with_capacity(config.batch_size);

    let mut step = 0usize;
    let mut epoch = 0usize;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut stale_validations = 0usize;
    let mut stale_epochs = 0usize;
    let mut rows = Vec::new();
    let (mut acc_nll, mut acc_pen, mut acc_batches) = (0.0, 0.0, 0usize);

    // Validates, updates best-so-far, returns (val_nll, improved).
    let validate = |model: &Model, step: usize, best: &mut Option<(f64, usize, Vec<f64>)>| -> Result<(f64, bool)> {
        let v = model.mean_nll(head, valid)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
        if improved {
            *best = Some((v, step, model.params().to_vec()));
        }
        Ok((v, improved))
    };

    let stop = loop {
        if config.max_steps.is_some_and(|m| step >= m) {
            break StopReason::MaxSteps;
        }

        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mut batch_nll, mut batch_pen) = (0.0, 0.0);
        match model {
            Model::Marginal { params } => {
                // Shared parameters: one evaluation per distinct target,
                // weighted by its count in the batch.
                targets.clear();
                targets.extend(batch.iter().map(|&i| train.y(i)));
                targets.sort_unstable();
                for run in targets.chunk_by(|a, b| a == b) {
                    let w = scale * run.len() as f64;
                    let loss = head.loss_grad(params, run[0], w, &mut grad)?;
                    batch_nll += loss.nll * w;
                    batch_pen += loss.penalty * w;
                }
            }
            Model::Network(net) => {
                for &i in batch {
                    let (hp, cache) = net.forward(train.x(i), Mode::Train, &mut rng)?;
                    head_grad.iter_mut().for_each(|g| *g = 0.0);
                    let loss = head.loss_grad(&hp, train.y(i), scale, &mut head_grad)?;
                    net.accumulate_backward(&cache, &head_grad, &mut grad)?;
                    batch_nll += loss.nll * scale;
                    batch_pen += loss.penalty * scale;
                }
            }
        }
        let mask = decay.as_ref().map(|(m, wd)| (m.as_slice(), *wd));
        adam.step(model.params_mut(), &grad, lr, mask);
        step += 1;
        acc_nll += batch_nll;
        acc_pen += batch_pen;
        acc_batches += 1;

        cursor = end;
        let epoch_done = cursor >= order.len();
        if epoch_done {
            epoch += 1;
            cursor = 0;
            order.shuffle(&mut rng);
        }

        let step_validation = matches!(config.validation, Validation::EverySteps(k) if step.is_multiple_of(k));
        let epoch_validation =
            epoch_done && (config.validation == Validation::EveryEpoch || config.schedule.is_some());
        let mut val_nll = None;
        let mut stop_now = None;
        if step_validation || epoch_validation {
            let (v, improved) = validate(model, step, &mut best)?;
            val_nll = Some(v);
            if improved {
                stale_validations = 0;
            } else {
                stale_validations += 1;
                if config.stale_limit.is_some_and(|limit| stale_validations >= limit) {
                    stop_now = Some(StopReason::Stale);
                }
            }
            if epoch_done {
                if let Some(s) = &config.schedule {
                    if improved {
                        stale_epochs = 0;
                    } else {
                        stale_epochs += 1;
                        if stale_epochs >= s.patience_epochs {
                            lr *= s.factor;
                            lr_history.push(lr);
                            stale_epochs = 0;
                            if lr < s.min_lr {
                                stop_now = stop_now.or(Some(StopReason::MinLearningRate));
                            }
                        }
                    }
                }
            }
        }
        if epoch_done && config.max_epochs.is_some_and(|m| epoch >= m) {
            stop_now = stop_now.or(Some(StopReason::MaxEpochs));
        }

        let log_due = config.log_every > 0 && step.is_multiple_of(config.log_every);
        if val_nll.is_some() || log_due || stop_now.is_some() {
            let row = LogRow {
                step,
                epoch,
                lr,
                train_nll: acc_nll / acc_batches.max(1) as f64,
                val_nll,
                best_val_nll: best.as_ref().map(|b| b.0),
                penalty: acc_pen / acc_batches.max(1) as f64,
                wall_secs: start.elapsed().as_secs_f64(),
            };
            on_log(&row, model);
            rows.push(row);
            acc_nll = 0.0;
            acc_pen = 0.0;
            acc_batches = 0;
        }
        if let Some(reason) = stop_now {
            break reason;
        }
    };

    let (best_val_nll, best_step) = match best {
        Some((v, s, params)) => {
            if config.restore_best {
                model.params_mut().copy_from_slice(&params);
            }
            (Some(v), Some(s))
        }
        None => (None, None),
    };

    Ok(TrainLog {
        rows,
        best_val_nll,
        best_step,
        steps: step,
        epochs: epoch,
        stop,
        lr_history,
    })
}
