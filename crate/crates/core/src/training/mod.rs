//! Supervised fitting of the surrogate: MSE loss, Adam with L2 weight decay,
//! reduce-on-plateau scheduling and best-validation checkpointing.

pub mod adam;
pub mod scheduler;

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use scheduler::{plateau_lr, PlateauEvent, PlateauScheduler};

use crate::dataset::{split_indices, LabeledDataset};
use crate::error::{Error, Result};
use crate::surrogate::{Mlp, Mode};

/// Mean of squared residuals.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("mse of an empty batch".into()));
    }
    let s: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / preds.len() as f64)
}

/// d(mse)/d(pred_i) = 2 (pred_i − target_i) / N.
pub fn mse_grad(preds: &[f64], targets: &[f64]) -> Vec<f64> {
    let scale = 2.0 / preds.len() as f64;
    preds.iter().zip(targets).map(|(p, t)| scale * (p - t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Coupled L2 coefficient added to every gradient.
    pub weight_decay: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_threshold: f64,
    pub min_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Denominator guard; used as the Adam epsilon.
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            scheduler_factor: scheduler::DEFAULT_FACTOR,
            scheduler_patience: scheduler::DEFAULT_PATIENCE,
            scheduler_threshold: scheduler::DEFAULT_THRESHOLD,
            min_learning_rate: scheduler::DEFAULT_MIN_LR,
            batch_size: 256,
            max_epochs: 200,
            train_fraction: 0.8,
            seed: 0,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad("scheduler factor must be in (0, 1)");
        }
        if self.scheduler_patience == 0 {
            return bad("scheduler patience must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must be in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrEvent {
    pub epoch: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    /// Ran the full epoch budget.
    Completed,
    /// Learning rate reached its floor and the loss plateaued again.
    EarlyStopped,
    /// A batch loss became non-finite; the best model so far is returned.
    Diverged,
}

pub const REPORT_FORMAT: &str = "cvsurrogate-training-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub format: String,
    pub version: u32,
    pub status: TrainStatus,
    pub cv: String,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub final_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Seconds; left out of the file unless timing is requested, so reruns
    /// stay byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub config: TrainConfig,
    pub lr_events: Vec<LrEvent>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serialises")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidArgument(format!("training report: {e}")))
    }
}

fn gather(ds: &LabeledDataset, idx: &[usize]) -> (Array2<f64>, Vec<f64>) {
    let d = ds.dim();
    let mut x = Vec::with_capacity(idx.len() * d);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(ds.input(i));
        y.push(ds.value(i));
    }
    (Array2::from_shape_vec((idx.len(), d), x).expect("gathered shape"), y)
}

/// Eval-mode MSE over `idx`, in fixed-size chunks.
pub fn eval_loss(model: &Mlp, ds: &LabeledDataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sse = 0.0;
    for chunk in idx.chunks(4096) {
        let (x, y) = gather(ds, chunk);
        let p = model.predict_batch(x.view())?;
        sse += p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sse / idx.len() as f64)
}

/// Fit `model` to `dataset` and return the best-validation parameters.
pub fn train(model: Mlp, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<(Mlp, TrainingReport)> {
    cfg.validate()?;
    if dataset.dim() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: dataset.dim(),
        });
    }
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("need at least two rows to split".into()));
    }
    let start = Instant::now();
    let split = split_indices(dataset.len(), cfg.train_fraction, cfg.seed);
    let mut train_idx = split.train;
    let val_idx = split.test;

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.tensors().iter().map(|t| t.len())).with_eps(cfg.epsilon);
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler_factor, cfg.scheduler_patience)
        .with_threshold(cfg.scheduler_threshold)
        .with_min_lr(cfg.min_learning_rate);

    let initial_val_loss = eval_loss(&model, dataset, &val_idx)?;
    let mut best = model.clone();
    let mut best_val = initial_val_loss;
    let mut best_epoch = None;
    let mut epochs = Vec::new();
    let mut lr_events = Vec::new();
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let lr = sched.lr();
        let mut sse = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let (x, y) = gather(dataset, batch);
            let (pred, tape) = model.forward_batch(x.view(), Mode::Train(&mut rng))?;
            let loss = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                log::error!("epoch {epoch}: non-finite training loss, aborting");
                status = TrainStatus::Diverged;
                break 'epochs;
            }
            sse += loss * batch.len() as f64;
            let grads = model.backward_weights(&tape, &mse_grad(&pred, &y))?;
            let g = grads.tensors();
            if let Err(e) = adam_step(&mut model.tensors_mut(), &g, &mut adam, lr, cfg.weight_decay, Mlp::tensor_name) {
                log::error!("epoch {epoch}: {e}");
                status = TrainStatus::Diverged;
                break 'epochs;
            }
        }
        let train_loss = sse / train_idx.len() as f64;
        let val_loss = eval_loss(&model, dataset, &val_idx)?;
        if !val_loss.is_finite() {
            status = TrainStatus::Diverged;
            epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                lr,
            });
            break;
        }
        if val_loss < best_val || best_epoch.is_none() {
            best_val = val_loss;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        let event = sched.step(val_loss);
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} lr {lr:.3e}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if event.reduced {
            log::info!("epoch {epoch}: lr {lr:.3e} -> {:.3e}", sched.lr());
            lr_events.push(LrEvent {
                epoch,
                from: lr,
                to: sched.lr(),
            });
        }
        if event.exhausted {
            status = TrainStatus::EarlyStopped;
            break;
        }
    }

    let report = TrainingReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        status,
        cv: model.cv_name().to_string(),
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        epochs_run: epochs.len(),
        best_epoch,
        best_val_loss: best_val,
        initial_val_loss,
        final_lr: sched.lr(),
        adam_beta1: adam.beta1,
        adam_beta2: adam.beta2,
        wall_time_s: Some(start.elapsed().as_secs_f64()),
        config: cfg.clone(),
        lr_events,
        epochs,
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests;
