//! Euclidean loss and mini-batch SGD with momentum.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Tensor;
use super::network::{Gradients, InputNorm, Network, INPUT_SHAPE};
use super::scalar::Scalar;
use super::Model;
use crate::error::{Error, Result};
use crate::featex::FeatureImage;

/// `(1/2N) Σ (q_i − p_i)²`.
pub fn euclidean_loss(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::Cnn(format!(
            "loss needs equal non-empty batches, got {} and {}",
            pred.len(),
            labels.len()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(labels)
        .map(|(p, q)| (q - p) * (q - p))
        .sum::<f64>()
        / (2.0 * n))
}

/// Derivative of [`euclidean_loss`] with respect to each prediction.
pub fn euclidean_loss_grad<T: Scalar>(pred: &[T], labels: &[T]) -> Vec<T> {
    let n = T::of(pred.len() as f64);
    pred.iter().zip(labels).map(|(p, q)| (*p - *q) / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub base_lr: f64,
    /// Learning rate is multiplied by `lr_gamma` every `lr_step` iterations.
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dropout_keep: f64,
    pub val_fraction: f64,
    /// Validation loss is evaluated every this many iterations and after
    /// the last one.
    pub val_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            max_iterations: 15_000,
            base_lr: 0.01,
            lr_gamma: 0.1,
            lr_step: 5_000,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            dropout_keep: 0.4,
            val_fraction: 0.1,
            val_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Cnn("batch size must be at least 1".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Cnn(format!("dropout keep {} not in (0, 1]", self.dropout_keep)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Cnn(format!("validation fraction {} not in [0, 1)", self.val_fraction)));
        }
        if self.lr_step == 0 || self.val_interval == 0 {
            return Err(Error::Cnn("lr_step and val_interval must be positive".into()));
        }
        if !(self.base_lr >= 0.0) {
            return Err(Error::Cnn("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.base_lr * self.lr_gamma.powi((iteration / self.lr_step) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss (the final model when no
    /// validation split is used).
    pub model: Model,
    pub final_model: Model,
    pub log: Vec<TrainLogRow>,
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
}

pub fn format_train_log(log: &[TrainLogRow]) -> String {
    let mut s = String::from("iteration,train_loss,val_loss\n");
    for r in log {
        let v = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{v}\n", r.iteration, r.train_loss));
    }
    s
}

fn set_dropout_keep<T: Scalar>(net: &mut Network<T>, keep: f64) {
    for l in &mut net.layers {
        if let super::layers::Layer::Dropout(d) = l {
            d.keep = keep;
        }
    }
}

/// Seeded split of `n` indices into (train, validation).
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n > 1 {
        k = k.clamp(1, n - 1);
    } else {
        k = k.min(n);
    }
    let held = idx.split_off(n - k);
    (idx, held)
}

struct Prepared {
    inputs: Vec<Vec<f32>>,
    targets: Vec<f32>,
}

fn prepare(model: &Model, data: &[(FeatureImage, f64)], idx: &[usize]) -> Prepared {
    let mut inputs = Vec::with_capacity(idx.len());
    let mut targets = Vec::with_capacity(idx.len());
    for &i in idx {
        let mut v = Vec::with_capacity(INPUT_SHAPE.size());
        model.input_norm.apply(&data[i].0.to_hwc(), &mut v);
        inputs.push(v);
        targets.push(model.label_norm.normalize(data[i].1) as f32);
    }
    Prepared { inputs, targets }
}

fn batch_tensor(p: &Prepared, idx: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * INPUT_SHAPE.size());
    for &i in idx {
        data.extend_from_slice(&p.inputs[i]);
    }
    Tensor::from_vec(idx.len(), INPUT_SHAPE, data)
}

fn validation_loss(model: &Model, p: &Prepared) -> Result<f64> {
    let mut preds = Vec::with_capacity(p.targets.len());
    let all: Vec<usize> = (0..p.targets.len()).collect();
    for chunk in all.chunks(64) {
        preds.extend(model.forward_infer(batch_tensor(p, chunk))?.into_iter().map(f64::from));
    }
    let labels: Vec<f64> = p.targets.iter().map(|&t| f64::from(t)).collect();
    euclidean_loss(&preds, &labels)
}

fn sgd_step(model: &mut Model, grads: &Gradients<f32>, velocity: &mut Gradients<f32>, lr: f64, cfg: &TrainConfig) {
    let lr = lr as f32;
    let mom = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;
    for ((layer, lg), lv) in model.layers.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((p, g), v) in layer.params_mut().into_iter().zip(lg).zip(lv.iter_mut()) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mom * *vi - lr * (*gi + wd * *pi);
                *pi += *vi;
            }
        }
    }
}

/// Train on `(feature image, label bpm)` pairs. The input normalization is
/// fitted on the training part of the split and stored in the model.
pub fn train(mut model: Model, data: &[(FeatureImage, f64)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Cnn("training set is empty".into()));
    }
    set_dropout_keep(&mut model, cfg.dropout_keep);

    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed ^ 0x5eed_0001);
    let hwc: Vec<Vec<f64>> = train_idx.iter().map(|&i| data[i].0.to_hwc()).collect();
    model.input_norm = InputNorm::fit(hwc.iter().map(Vec::as_slice));
    drop(hwc);

    let train_set = prepare(&model, data, &train_idx);
    let val_set = prepare(&model, data, &val_idx);
    info!(
        "training on {} samples, validating on {}, {} iterations",
        train_set.targets.len(),
        val_set.targets.len(),
        cfg.max_iterations
    );

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train_set.targets.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let mut velocity = model.zero_grads();
    let mut log = Vec::with_capacity(cfg.max_iterations);
    let mut best: Option<(f64, usize, Model)> = None;

    for it in 0..cfg.max_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let x = batch_tensor(&train_set, &batch);
        let labels: Vec<f32> = batch.iter().map(|&i| train_set.targets[i]).collect();
        let (pred, cache) = model.forward_train(x, &mut dropout_rng)?;
        let pred64: Vec<f64> = pred.iter().map(|&p| f64::from(p)).collect();
        let lab64: Vec<f64> = labels.iter().map(|&p| f64::from(p)).collect();
        let loss = euclidean_loss(&pred64, &lab64)?;
        let lr = cfg.learning_rate(it);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {loss} at iteration {it} (lr {lr})"
            )));
        }
        let grads = model.backward(&cache, &euclidean_loss_grad(&pred, &labels))?;
        sgd_step(&mut model, &grads, &mut velocity, lr, cfg);
        model.update_running_stats(&cache);

        let iteration = it + 1;
        let mut val_loss = None;
        if !val_set.targets.is_empty() && (iteration % cfg.val_interval == 0 || iteration == cfg.max_iterations) {
            let v = validation_loss(&model, &val_set)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("validation loss became {v} at iteration {iteration}")));
            }
            debug!("iteration {iteration}: train {loss:.6} val {v:.6}");
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, iteration, model.clone()));
            }
            val_loss = Some(v);
        }
        log.push(TrainLogRow {
            iteration,
            train_loss: loss,
            val_loss,
        });
    }

    let (best_val_loss, best_iteration, best_model) = match best {
        Some((v, i, m)) => (Some(v), i, m),
        None => (None, cfg.max_iterations, model.clone()),
    };
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        log,
        best_iteration,
        best_val_loss,
    })
}

