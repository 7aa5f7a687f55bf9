//! Optimization loop: MSE objective, Adam, early stopping, and the
//! evaluation protocol (metrics on the standardized dataset scale).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{SeriesDataset, Split, WindowSample};
use crate::error::{Error, Result};
use crate::model::{MsgNet, TimeFeatures};
use crate::rng::SplitMix64;
use crate::tensor::{tape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs past the best validation MSE before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

/// Test metrics (standardized scale) plus the loss curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub horizon: usize,
    pub test_mse: f64,
    pub test_mae: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub eval: EvalResult,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

// ---------------------------------------------------------------------------
// losses and metrics
// ---------------------------------------------------------------------------

/// Mean squared error as a differentiable scalar.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    let diff = pred.sub(target)?;
    Ok(diff.mul(&diff)?.mean_all())
}

/// Mean absolute error as a differentiable scalar.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mae", pred.shape(), target.shape()));
    }
    Ok(pred.sub(target)?.abs().mean_all())
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// One bias-corrected Adam update over flat buffers. `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    first_moment: &mut [f64],
    second_moment: &mut [f64],
    step: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grad.len() != param.len()
        || first_moment.len() != param.len()
        || second_moment.len() != param.len()
    {
        return Err(Error::Contract(format!(
            "adam state sizes disagree: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            first_moment.len(),
            second_moment.len()
        )));
    }
    let bias1 = 1.0 - beta1.powi(step as i32);
    let bias2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        first_moment[i] = beta1 * first_moment[i] + (1.0 - beta1) * grad[i];
        second_moment[i] = beta2 * second_moment[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = first_moment[i] / bias1;
        let v_hat = second_moment[i] / bias2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        if !param[i].is_finite() {
            return Err(Error::NonFinite("adam_update"));
        }
    }
    Ok(())
}

/// Adam over a model's named parameters. Moment state is keyed by parameter
/// name; gradients are consumed from each tensor's grad slot (absent grad
/// counts as zero, so moments still decay).
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    moments: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: std::collections::HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, model: &mut MsgNet) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let (lr, beta1, beta2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |name, tensor| {
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; tensor.len()], vec![0.0; tensor.len()]));
            let grad = tensor
                .take_grad()
                .unwrap_or_else(|| vec![0.0; tensor.len()]);
            let mut data = tensor.data().to_vec();
            adam_update(&mut data, &grad, m, v, step, lr, beta1, beta2, eps)?;
            *tensor = tensor.with_data(data)?;
            Ok(())
        })
    }
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub ts: TimeFeatures,
}

/// Stack window samples into `[B, N, L]` / `[B, N, T]` tensors plus the
/// per-granularity timestamp index streams.
pub fn collate(samples: &[&WindowSample], n_vars: usize) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot collate an empty batch".into()));
    }
    let lookback = samples[0].ts_x.len();
    let horizon = samples[0].ts_y.len();
    let batch = samples.len();
    let mut x = Vec::with_capacity(batch * n_vars * lookback);
    let mut y = Vec::with_capacity(batch * n_vars * horizon);
    let mut granularities: Vec<Vec<usize>> =
        (0..5).map(|_| Vec::with_capacity(batch * lookback)).collect();
    for s in samples {
        if s.x.len() != n_vars * lookback || s.y.len() != n_vars * horizon {
            return Err(Error::Contract("ragged window sample in batch".into()));
        }
        x.extend_from_slice(&s.x);
        y.extend_from_slice(&s.y);
        for feats in &s.ts_x {
            for (g, stream) in granularities.iter_mut().enumerate() {
                stream.push(feats[g]);
            }
        }
    }
    Ok(Batch {
        x: Tensor::from_vec(&[batch, n_vars, lookback], x)?,
        y: Tensor::from_vec(&[batch, n_vars, horizon], y)?,
        ts: TimeFeatures {
            granularities,
            batch,
            len: lookback,
        },
    })
}

/// Batched forward over a window list with recording off; element-weighted
/// (MSE, MAE).
pub fn evaluate(
    model: &MsgNet,
    windows: &[WindowSample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::Data {
            row: None,
            message: "evaluation split has no windows".into(),
        });
    }
    let n_vars = model.config().n_vars;
    tape::no_grad(|| {
        let mut sq_sum = 0.0;
        let mut abs_sum = 0.0;
        let mut count = 0usize;
        for chunk in windows.chunks(batch_size) {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            let batch = collate(&refs, n_vars)?;
            let pred = model.forward(&batch.x, &batch.ts)?;
            for (p, t) in pred.data().iter().zip(batch.y.data()) {
                let d = p - t;
                sq_sum += d * d;
                abs_sum += d.abs();
            }
            count += pred.len();
        }
        Ok((sq_sum / count as f64, abs_sum / count as f64))
    })
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

/// Minibatch epochs with per-epoch validation, early stopping on validation
/// MSE, best-epoch restoration, and test metrics from the restored model.
pub fn train(
    model: &mut MsgNet,
    dataset: &SeriesDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let lookback = model.config().lookback;
    let horizon = model.config().horizon;
    let n_vars = model.config().n_vars;
    let train_windows = dataset.windows(Split::Train, lookback, horizon, 1)?;
    let val_windows = dataset.windows(Split::Val, lookback, horizon, 1)?;
    let test_windows = dataset.windows(Split::Test, lookback, horizon, 1)?;

    let mut optimizer = Adam::new(cfg.lr);
    let mut shuffle_rng = SplitMix64::new(cfg.seed);
    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.snapshot();
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        shuffle_rng.fork(epoch as u64).shuffle(&mut order);

        let mut weighted_loss = 0.0;
        let mut element_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let batch = collate(&refs, n_vars)?;
            let pred = model.forward(&batch.x, &batch.ts)?;
            let loss = mse(&pred, &batch.y)?;
            let loss_value = loss.item()?;
            tape::backward(&loss)?;
            optimizer.step(model)?;
            weighted_loss += loss_value * pred.len() as f64;
            element_count += pred.len();
        }
        let train_mse = weighted_loss / element_count as f64;
        let (val_mse, _) = evaluate(model, &val_windows, cfg.batch_size)?;
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_snapshot = model.snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best > cfg.patience {
                break;
            }
        }
    }

    model.restore(&best_snapshot)?;
    let (test_mse, test_mae) = evaluate(model, &test_windows, cfg.batch_size)?;
    Ok(TrainOutcome {
        eval: EvalResult {
            horizon,
            test_mse,
            test_mae,
            train_curve: log.iter().map(|l| l.train_mse).collect(),
            val_curve: log.iter().map(|l| l.val_mse).collect(),
        },
        log,
        best_epoch,
        best_val_mse: best_val,
    })
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

/// Repeat the last observed value across the horizon.
pub fn persistence_metrics(windows: &[WindowSample], n_vars: usize) -> (f64, f64) {
    let mut sq = 0.0;
    let mut ab = 0.0;
    let mut count = 0usize;
    for w in windows {
        let lookback = w.x.len() / n_vars;
        let horizon = w.y.len() / n_vars;
        for v in 0..n_vars {
            let last = w.x[v * lookback + lookback - 1];
            for t in 0..horizon {
                let d = last - w.y[v * horizon + t];
                sq += d * d;
                ab += d.abs();
            }
        }
        count += w.y.len();
    }
    (sq / count as f64, ab / count as f64)
}

/// Predict each variable's train-split mean everywhere.
pub fn mean_baseline_metrics(
    windows: &[WindowSample],
    n_vars: usize,
    train_means: &[f64],
) -> (f64, f64) {
    let mut sq = 0.0;
    let mut ab = 0.0;
    let mut count = 0usize;
    for w in windows {
        let horizon = w.y.len() / n_vars;
        for (v, &mean_v) in train_means.iter().enumerate().take(n_vars) {
            for t in 0..horizon {
                let d = mean_v - w.y[v * horizon + t];
                sq += d * d;
                ab += d.abs();
            }
        }
        count += w.y.len();
    }
    (sq / count as f64, ab / count as f64)
}

/// Percentage performance decrease reported by the split-modification
/// protocol: how much worse the degraded run is, relative to itself.
pub fn performance_decrease(degraded_mse: f64, reference_mse: f64) -> f64 {
    100.0 * (degraded_mse - reference_mse) / degraded_mse
}

/// Mean of each variable over the train split of the (standardized) dataset.
pub fn train_split_means(dataset: &SeriesDataset) -> Result<Vec<f64>> {
    let (start, end) = dataset.split_bounds(Split::Train)?;
    let n = dataset.n_vars();
    let mut means = vec![0.0; n];
    for r in start..end {
        for (v, mean) in means.iter_mut().enumerate() {
            *mean += dataset.values()[r * n + v];
        }
    }
    for m in &mut means {
        *m /= (end - start) as f64;
    }
    Ok(means)
}
