use alloc::vec::Vec;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::data::{batch_iter, MixtureTriple, DEFAULT_CROP};
use crate::error::{Error, Result};
use crate::masking::{EnhancementPipeline, LIFTING_PREFIX, MASK_PREFIX};
use crate::numerics::Rng;
use crate::objective::{sdr_loss, si_sdr_improvement, LossConfig};
use crate::params::{accumulate, zeros_like};

/// Which parameter groups the optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Trainable {
    Transform,
    Mask,
    #[default]
    Both,
    /// Nothing is updated; useful as a control run.
    Frozen,
}

impl Trainable {
    pub fn includes(self, name: &str) -> bool {
        let group = name.split('/').next().unwrap_or("");
        match self {
            Trainable::Transform => group == LIFTING_PREFIX,
            Trainable::Mask => group == MASK_PREFIX,
            Trainable::Both => group == LIFTING_PREFIX || group == MASK_PREFIX,
            Trainable::Frozen => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub trainable: Trainable,
    pub validation_fraction: f64,
    /// Training crop length; `None` uses whole utterances.
    pub crop: Option<usize>,
    /// Power iterations per step for spectrally normalized layers.
    pub spectral_iters: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 1,
            max_steps: None,
            seed: 0,
            trainable: Trainable::default(),
            validation_fraction: 0.1,
            crop: Some(DEFAULT_CROP),
            spectral_iters: 1,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must lie in [0, 1)"));
        }
        if self.crop == Some(0) {
            return Err(Error::config("crop must be positive"));
        }
        self.adam.validate()?;
        self.loss.validate()
    }
}

/// Runs independent work items, returning results in input order.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_si_sdr_imp: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Per-step mean batch loss.
    pub step_losses: Vec<f64>,
    /// Parameters after the epoch with the lowest validation loss (the last
    /// epoch when there is no validation set).
    pub best: EnhancementPipeline,
    pub best_epoch: usize,
}

/// Seeded split into `(train, validation)`.
pub fn split_validation(dataset: &[MixtureTriple], fraction: f64, seed: u64) -> (Vec<MixtureTriple>, Vec<MixtureTriple>) {
    let n = dataset.len();
    let mut n_val = (fraction * n as f64 + 0.5) as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = n_val.min(n.saturating_sub(1));
    }
    let order = Rng::new(seed).fork(0x5eed_0a11).permutation(n);
    let val = order[..n_val].iter().map(|&i| dataset[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| dataset[i].clone()).collect();
    (train, val)
}

/// Mean loss of `items`, summed in input order.
pub fn evaluate_loss<E: Executor>(
    pipeline: &EnhancementPipeline,
    items: &[MixtureTriple],
    loss: &LossConfig,
    exec: &E,
) -> Result<f64> {
    let losses = exec.map(items, |m| {
        let (s_hat, _) = pipeline.enhance(&m.x)?;
        sdr_loss(&s_hat, &m.s, &m.x, &m.n, loss)
    });
    mean(losses)
}

/// Mean SI-SDR improvement of `items`.
pub fn evaluate_improvement<E: Executor>(pipeline: &EnhancementPipeline, items: &[MixtureTriple], exec: &E) -> Result<f64> {
    let imps = exec.map(items, |m| {
        let (s_hat, _) = pipeline.enhance(&m.x)?;
        si_sdr_improvement(&m.s, &s_hat, &m.x)
    });
    mean(imps)
}

fn mean(values: Vec<Result<f64>>) -> Result<f64> {
    if values.is_empty() {
        return Ok(f64::NAN);
    }
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(sum / n)
}

/// Mean loss and mean gradient of one batch. Per-item gradients are summed
/// in batch order, so the result does not depend on the executor.
pub fn batch_gradient<E: Executor>(
    pipeline: &EnhancementPipeline,
    batch: &[MixtureTriple],
    loss: &LossConfig,
    exec: &E,
) -> Result<(f64, EnhancementPipeline)> {
    let parts = exec.map(batch, |m| {
        let mut g = zeros_like(pipeline);
        let (l, _) = pipeline.loss_and_grad(&m.x, &m.s, &m.n, loss, &mut g)?;
        Ok::<_, Error>((l, g))
    });
    let scale = 1.0 / batch.len() as f64;
    let mut total = zeros_like(pipeline);
    let mut loss_sum = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss_sum += l;
        accumulate(&mut total, &g, scale)?;
    }
    Ok((loss_sum * scale, total))
}

/// Mini-batch Adam training. Deterministic for a fixed seed, config and
/// dataset, whatever the executor. `on_epoch` sees each record as soon as
/// it is complete.
pub fn train<E: Executor>(
    pipeline: &mut EnhancementPipeline,
    dataset: &[MixtureTriple],
    cfg: &TrainConfig,
    exec: &E,
    mut on_epoch: impl FnMut(&EpochRecord, &EnhancementPipeline),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_set, val_set) = split_validation(dataset, cfg.validation_fraction, cfg.seed);
    let mut adam = AdamState::new(cfg.adam, pipeline);
    let mut rng = Rng::new(cfg.seed).fork(1);
    let filter = |name: &str| cfg.trainable.includes(name);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut best = pipeline.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut step = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = batch_iter(&train_set, cfg.batch_size, cfg.crop, &mut rng)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in &batches {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let (loss, grads) = batch_gradient(pipeline, batch, &cfg.loss, exec)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            adam_step(&mut adam, pipeline, &grads, filter)?;
            if cfg.trainable != Trainable::Frozen {
                pipeline.refresh_spectral(cfg.spectral_iters);
            }
            step_losses.push(loss);
            sum += loss;
            count += 1;
        }
        if count == 0 {
            break 'epochs;
        }
        let val_loss = evaluate_loss(pipeline, &val_set, &cfg.loss, exec)?;
        let val_si_sdr_imp = evaluate_improvement(pipeline, &val_set, exec)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            train_loss: sum / count as f64,
            val_loss,
            val_si_sdr_imp,
        };
        // with no validation set every epoch counts as the newest best
        if val_set.is_empty() || val_loss < best_val {
            best_val = val_loss;
            best = pipeline.clone();
            best_epoch = epoch;
        }
        on_epoch(&record, pipeline);
        history.push(record);
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        step_losses,
        best,
        best_epoch,
    })
}
