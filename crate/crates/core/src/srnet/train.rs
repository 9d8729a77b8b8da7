//! Training loop: Adam on masked MSE over width crops, best-validation
//! checkpointing, deterministic under a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::model::Model;
use crate::autodiff::{adam_step, AdamState, Shape, Tape, Tensor};
use crate::dataset::DatasetSample;
use crate::error::{Error, Result};

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// One warmup epoch at half the peak, then cosine decay from
    /// `peak` to `floor` over the remaining epochs.
    WarmupCosine { peak: f64, floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Columns excluded from the loss on each side of a window.
    pub mask_margin: usize,
    /// Train on random width crops of this size (None: full width).
    pub crop_width: Option<usize>,
    /// Fraction of crops centered near a label transition; the rest
    /// are uniform. Zero keeps plain uniform cropping.
    pub edge_crop_bias: f64,
    pub patience: usize,
    pub seed: u64,
    /// Stop once validation MSE falls below this value.
    pub stop_below_val: Option<f64>,
    /// Stop cleanly after this much wall time.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            schedule: LrSchedule::Constant,
            batch_size: 16,
            max_epochs: 50,
            mask_margin: 20,
            crop_width: None,
            edge_crop_bias: 0.0,
            patience: 10,
            seed: 0,
            stop_below_val: None,
            time_budget_s: None,
        }
    }
}

impl TrainHyper {
    /// Settings used for the CPU-scale training run.
    pub fn desk(seed: u64) -> Self {
        TrainHyper {
            lr: 1e-3,
            schedule: LrSchedule::WarmupCosine {
                peak: 2e-3,
                floor: 1e-4,
            },
            batch_size: 16,
            max_epochs: 40,
            crop_width: Some(128),
            edge_crop_bias: 0.5,
            seed,
            ..TrainHyper::default()
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::WarmupCosine { peak, floor } => {
                if epoch == 0 {
                    peak / 2.0
                } else {
                    let t = (epoch - 1) as f64 / (self.max_epochs.max(2) - 2).max(1) as f64;
                    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * t).cos())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Columns where the label steps by more than ~1 MHz, used to aim
/// crops at transitions.
fn label_edges(sample: &DatasetSample) -> Vec<usize> {
    let mut edges = Vec::new();
    for i in 1..sample.label.len() {
        if (sample.label[i] - sample.label[i - 1]).abs() > 0.0125 {
            edges.push(i);
        }
    }
    if edges.is_empty() {
        edges.push(sample.label.len() / 2);
    }
    edges
}

fn crop_to_tensors(
    sample: &DatasetSample,
    offset: usize,
    width: usize,
) -> (Vec<f32>, Vec<f32>) {
    let nf = sample.n_freq as usize;
    let full = sample.width as usize;
    let mut x = Vec::with_capacity(nf * width);
    for f in 0..nf {
        let row = &sample.input[f * full + offset..f * full + offset + width];
        x.extend_from_slice(row);
    }
    let y = sample.label[offset..offset + width].to_vec();
    (x, y)
}

/// Masked validation MSE of the current model over full-width samples.
pub fn validation_mse(model: &Model, samples: &[DatasetSample], mask_margin: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let mut total = 0.0f64;
    for sample in samples {
        let nf = sample.n_freq as usize;
        let w = sample.width as usize;
        let x = Tensor::from_vec(Shape([1, 1, nf, w]), sample.input.clone())?;
        let pred = model.forward_eval(&x)?;
        let mask = (mask_margin, w - mask_margin);
        let mut acc = 0.0f64;
        for k in mask.0..mask.1 {
            let d = pred.data()[k] as f64 - sample.label[k] as f64;
            acc += d * d;
        }
        total += acc / (mask.1 - mask.0) as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train in place; the model is left at its best-validation state.
/// Returns per-epoch history.
pub fn train(
    model: &mut Model,
    train_set: &[DatasetSample],
    val_set: &[DatasetSample],
    hyper: &TrainHyper,
) -> Result<Vec<EpochStats>> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput("empty training or validation set".into()));
    }
    let sample_width = train_set[0].width as usize;
    let crop = hyper.crop_width.unwrap_or(sample_width);
    if crop > sample_width {
        return Err(Error::InvalidInput(format!(
            "crop width {crop} exceeds sample width {sample_width}"
        )));
    }
    if crop <= 2 * hyper.mask_margin {
        return Err(Error::InvalidInput("crop narrower than loss mask".into()));
    }
    for s in train_set.iter().chain(val_set) {
        s.validate()?;
        if s.width as usize != sample_width {
            return Err(Error::ShapeMismatch("inconsistent sample widths".into()));
        }
    }
    let edges: Vec<Vec<usize>> = train_set.iter().map(label_edges).collect();
    let nf = train_set[0].n_freq as usize;
    let mask = (hyper.mask_margin, crop - hyper.mask_margin);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut optimizer = AdamState::new(&model.params, hyper.lr);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_state: Option<(Vec<Tensor<f32>>, Vec<crate::autodiff::BnRunning>)> = None;
    let mut since_best = 0usize;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..hyper.max_epochs {
        let epoch_start = Instant::now();
        optimizer.lr = hyper.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            if batch.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let mut x = Vec::with_capacity(batch.len() * nf * crop);
            let mut y = Vec::with_capacity(batch.len() * crop);
            for &i in batch {
                let offset = if crop == sample_width {
                    0
                } else if hyper.edge_crop_bias > 0.0 && rng.gen_bool(hyper.edge_crop_bias) {
                    let e = edges[i][rng.gen_range(0..edges[i].len())] as i64;
                    let jitter = rng.gen_range(-20..=20i64);
                    (e - crop as i64 / 2 + jitter).clamp(0, (sample_width - crop) as i64) as usize
                } else {
                    rng.gen_range(0..=sample_width - crop)
                };
                let (xs, ys) = crop_to_tensors(&train_set[i], offset, crop);
                x.extend(xs);
                y.extend(ys);
            }
            let x = Tensor::from_vec(Shape([batch.len(), 1, nf, crop]), x)?;
            let y = Tensor::from_vec(Shape([batch.len(), 1, 1, crop]), y)?;
            let mut tape = Tape::new();
            let (out, param_vars) = model.forward_train(&mut tape, &x)?;
            let loss = tape.mse_masked(out, y, mask)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch} (loss {loss_value})"
                )));
            }
            let grads = tape.backward(loss)?;
            let grad_refs: Vec<Option<&Tensor<f32>>> =
                param_vars.iter().map(|&v| grads.get(v)).collect();
            adam_step(&mut model.params, &grad_refs, &mut optimizer)?;
            epoch_loss += loss_value * batch.len() as f64;
            seen += batch.len();
        }
        let train_mse = epoch_loss / seen.max(1) as f64;
        let val_mse = validation_mse(model, val_set, hyper.mask_margin)?;
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: optimizer.lr,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_state = Some((model.params.clone(), model.bn_running.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hyper.patience {
                break 'epochs;
            }
        }
        if let Some(target) = hyper.stop_below_val {
            if val_mse < target {
                break 'epochs;
            }
        }
        if let Some(budget) = hyper.time_budget_s {
            if started.elapsed().as_secs_f64() > budget {
                break 'epochs;
            }
        }
    }
    if let Some((params, running)) = best_state {
        model.params = params;
        model.bn_running = running;
    }
    model.quantize_running_stats();
    Ok(history)
}

/// Write history as CSV: epoch, train_mse, val_mse.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for h in history {
        out.push_str(&format!("{},{:.8e},{:.8e}\n", h.epoch, h.train_mse, h.val_mse));
    }
    out
}
