use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{lstm_backward, weighted_sequence_loss};
use super::{LstmDims, LstmModel};
use crate::corpus::VideoSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmTrainConfig {
    pub cells: usize,
    pub projection: usize,
    /// Truncation length for backpropagation through time.
    pub unroll_k: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Videos per update.
    pub batch_size: usize,
    pub epochs: usize,
    /// Global-norm clip applied to each batch gradient.
    pub gradient_clip: Option<f64>,
    pub weight_floor_epsilon: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        LstmTrainConfig {
            cells: 32,
            projection: 16,
            unroll_k: 20,
            learning_rate: 0.0024,
            lr_decay: 1.0,
            batch_size: 12,
            epochs: 30,
            gradient_clip: Some(5.0),
            weight_floor_epsilon: 0.0,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl LstmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("lstm.{m}")));
        if self.cells == 0 || self.projection == 0 {
            return err("cells and projection must be >= 1");
        }
        if self.unroll_k == 0 {
            return err("unroll_k must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return err("lr_decay must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1");
        }
        if let Some(c) = self.gradient_clip {
            if c.is_nan() || c <= 0.0 {
                return err("gradient_clip must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.weight_floor_epsilon) {
            return err("weight_floor_epsilon must be in [0, 1)");
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return err("init_scale must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-video weighted loss of the initial model, then after each epoch.
    pub epoch_losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

fn weights_of(v: &VideoSequence) -> Result<&[f64]> {
    v.laf_weights
        .as_deref()
        .ok_or_else(|| Error::validation(format!("video '{}'", v.id), "missing laf_weights"))
}

fn video_loss(model: &LstmModel, v: &VideoSequence, floor: f64) -> Result<f64> {
    let pass = model.forward(&v.frames)?;
    weighted_sequence_loss(&pass.probs, v.label, weights_of(v)?, floor)
}

fn mean_loss(model: &LstmModel, videos: &[VideoSequence], floor: f64) -> Result<f64> {
    let losses = videos
        .par_iter()
        .map(|v| video_loss(model, v, floor))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / videos.len() as f64)
}

/// Seeded synchronous mini-batch SGD over whole videos.
///
/// Per-video gradients inside a batch may be computed in parallel; they are
/// always reduced in batch order, so results are bitwise reproducible.
pub fn train_lstm(
    videos: &[VideoSequence],
    config: &LstmTrainConfig,
    num_labels: usize,
    feature_dim: usize,
) -> Result<(LstmModel, TrainReport)> {
    config.validate()?;
    if videos.is_empty() {
        return Err(Error::Empty("LSTM training set"));
    }
    for v in videos {
        let w = weights_of(v)?;
        if w.len() != v.frames.len() {
            return Err(Error::validation(
                format!("video '{}'", v.id),
                "laf_weights length differs from frame count",
            ));
        }
        if v.label.0 >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: v.label.0,
                num_labels,
            });
        }
    }
    let dims = LstmDims {
        input: feature_dim,
        cells: config.cells,
        projection: config.projection,
        outputs: num_labels,
    };
    LstmModel::validate_dims(&dims)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LstmModel::random(dims, config.init_scale, &mut rng);
    let floor = config.weight_floor_epsilon;
    let mut report = TrainReport {
        epoch_losses: vec![mean_loss(&model, videos, floor)?],
        learning_rates: Vec::with_capacity(config.epochs),
    };

    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| {
                    let v = &videos[i];
                    let pass = model.forward(&v.frames)?;
                    lstm_backward(&model, &pass.traces, v.label, weights_of(v)?, floor, config.unroll_k)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = LstmModel::zeros(dims);
            for g in &grads {
                total.scaled_add(1.0, g);
            }
            total.scale(1.0 / batch.len() as f64);
            if let Some(clip) = config.gradient_clip {
                let norm = total.norm_sq().sqrt();
                if norm > clip {
                    total.scale(clip / norm);
                }
            }
            model.scaled_add(-lr, &total);
        }
        if !model.is_finite() {
            return Err(Error::validation(
                "LSTM training",
                "parameters diverged to non-finite values",
            ));
        }
        report.learning_rates.push(lr);
        report.epoch_losses.push(mean_loss(&model, videos, floor)?);
        lr *= config.lr_decay;
    }
    Ok((model, report))
}
