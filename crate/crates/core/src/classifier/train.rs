//! Mini-batch Adam training with L2 on weights and best-validation
//! checkpointing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{ParamKind, Tensor};
use super::CnnModel;
use crate::bank::{DatasetEntry, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::noise::{mix_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_coefficient: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_coefficient: 1e-4,
            batch_size: 32,
            seed: 7,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.l2_coefficient >= 0.0) {
            return Err(invalid("l2 coefficient must be non-negative"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(invalid("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss (cross-entropy plus L2 term) over the epoch's batches.
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub initial_val_accuracy: f64,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Adam state for the learnable tensors of one model layout.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &CnnModel, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = model
            .tensors()
            .iter()
            .filter(|(_, k, _)| *k != ParamKind::Buffer)
            .map(|(_, _, t)| t.len())
            .collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut CnnModel, grads: &CnnModel) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let learnable = model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .filter(|((_, k, _), _)| *k != ParamKind::Buffer);
        for (i, ((_, _, w), (_, _, g))) in learnable.enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Stack the frames of `entries[idx]` into a `(batch, 1, len)` tensor.
pub fn batch_tensor(entries: &[DatasetEntry], idx: &[usize]) -> Result<Tensor> {
    let len = idx
        .first()
        .map(|&i| entries[i].frame.len())
        .ok_or_else(|| invalid("empty batch"))?;
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        let f = &entries[i].frame;
        if f.len() != len {
            return Err(invalid("frames of unequal length in one batch"));
        }
        data.extend(f.iter().map(|&v| f64::from(v)));
    }
    Tensor::from_vec(idx.len(), 1, len, data)
}

const EVAL_BATCH: usize = 64;

fn predictions(model: &CnnModel, entries: &[DatasetEntry]) -> Result<Vec<usize>> {
    let classes = model.config.num_classes;
    let mut out = Vec::with_capacity(entries.len());
    let all: Vec<usize> = (0..entries.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let logits = model.forward_infer(&batch_tensor(entries, chunk)?)?;
        for b in 0..chunk.len() {
            let z = &logits.data[b * classes..(b + 1) * classes];
            let mut best = 0;
            for (k, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of entries whose prediction equals the label.
pub fn accuracy(model: &CnnModel, entries: &[DatasetEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    let p = predictions(model, entries)?;
    let hits = p
        .iter()
        .zip(entries)
        .filter(|(&p, e)| p == usize::from(e.label))
        .count();
    Ok(hits as f64 / entries.len() as f64)
}

/// `m[true][predicted]` counts.
pub fn confusion_matrix(model: &CnnModel, entries: &[DatasetEntry]) -> Result<Vec<Vec<usize>>> {
    let k = model.config.num_classes;
    let mut m = vec![vec![0; k]; k];
    for (p, e) in predictions(model, entries)?.into_iter().zip(entries) {
        let t = usize::from(e.label);
        if t >= k {
            return Err(invalid(format!("label {t} outside {k} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Test-split accuracy and confusion matrix.
pub fn evaluate(model: &CnnModel, dataset: &LabeledDataset) -> Result<(f64, Vec<Vec<usize>>)> {
    let test = dataset.test();
    Ok((accuracy(model, test)?, confusion_matrix(model, test)?))
}

/// Train on the dataset's train split, selecting by validation accuracy.
pub fn train(
    model: CnnModel,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    progress: impl FnMut(&EpochMetrics),
) -> Result<(CnnModel, TrainReport)> {
    train_entries(model, dataset.train(), dataset.validation(), config, progress)
}

/// Train on `train_set`; the returned model is the one with the best
/// validation accuracy seen, starting from the initial model itself.
pub fn train_entries(
    mut model: CnnModel,
    train_set: &[DatasetEntry],
    val_set: &[DatasetEntry],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<(CnnModel, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    let classes = model.config.num_classes;
    if let Some(e) = train_set.iter().find(|e| usize::from(e.label) >= classes) {
        return Err(invalid(format!("label {} outside {classes} classes", e.label)));
    }

    let initial_val_accuracy = accuracy(&model, val_set)?;
    let mut best = (model.clone(), 0, initial_val_accuracy);
    let mut adam = Adam::new(&model, config);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng(mix_seed(config.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = batch_tensor(train_set, idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| usize::from(train_set[i].label)).collect();
            let diverged = || Error::TrainingDiverged { epoch, batch };
            let (loss, grads, cache) = model
                .loss_and_gradients(&x, &labels, config.l2_coefficient)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => diverged(),
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(diverged());
            }
            model.update_running_stats(&cache);
            adam.step(&mut model, &grads);
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = accuracy(&model, val_set)?;
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / batches as f64,
            val_accuracy,
        };
        progress(&m);
        epochs.push(m);
        if val_accuracy > best.2 {
            best = (model.clone(), epoch, val_accuracy);
        }
    }

    let (best_model, best_epoch, best_val_accuracy) = best;
    Ok((
        best_model,
        TrainReport {
            epochs,
            initial_val_accuracy,
            best_epoch,
            best_val_accuracy,
        },
    ))
}
