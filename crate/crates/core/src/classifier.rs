//! Multinomial softmax classifier over fixed features.
//!
//! This is the trainable head that stands in for the fine-tuned top layers of
//! an image/frame CNN: both the frame-trained filter and the image-trained
//! LAF proposal model are instances of it.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_f64s, encode_f64s};
use crate::corpus::{ActionLabel, FeatureVector};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::math::{softmax, softmax_open};

pub const CLASSIFIER_FORMAT: &str = "laf-softmax";

/// A labeled training example borrowed from a corpus.
pub type Example<'a> = (&'a FeatureVector, ActionLabel);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            learning_rate: 0.1,
            epochs: 100,
            l2_penalty: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("classifier.learning_rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config("classifier.l2_penalty must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("classifier.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `num_labels x feature_dim`, row per label.
    weights: Array2<f64>,
    biases: Array1<f64>,
}

/// Gradient of the regularized mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Classifier {
    /// All-zero parameters: the uniform classifier.
    pub fn zeros(num_labels: usize, feature_dim: usize) -> Self {
        Classifier {
            weights: Array2::zeros((num_labels, feature_dim)),
            biases: Array1::zeros(num_labels),
        }
    }

    pub fn from_parts(weights: Array2<f64>, biases: Array1<f64>) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.nrows(),
                actual: biases.len(),
            });
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Empty("classifier dimensions"));
        }
        if !weights.iter().chain(biases.iter()).all(|v| v.is_finite()) {
            return Err(Error::validation("classifier", "non-finite parameter"));
        }
        Ok(Classifier {
            weights: weights.as_standard_layout().into_owned(),
            biases,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    /// Squared Frobenius norm of all parameters.
    pub fn parameter_norm_sq(&self) -> f64 {
        self.weights.iter().chain(self.biases.iter()).map(|v| v * v).sum()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Array1<f64>> {
        self.check_dim(x)?;
        Ok(self.weights.dot(&ArrayView1::from(x)) + &self.biases)
    }

    /// Class probabilities, each strictly inside (0, 1).
    pub fn predict_softmax(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        Ok(softmax_open(z.as_slice().expect("contiguous logits")))
    }

    /// Probability assigned to `label`.
    pub fn score_for_label(&self, x: &[f64], label: ActionLabel) -> Result<f64> {
        if label.0 >= self.num_labels() {
            return Err(Error::LabelOutOfRange {
                label: label.0,
                num_labels: self.num_labels(),
            });
        }
        Ok(self.predict_softmax(x)?[label.0])
    }

    /// Mean cross-entropy over `batch` plus `l2/2 * ||W||^2`, and its gradient.
    /// Biases are not penalized.
    pub fn loss_and_gradient(&self, batch: &[Example<'_>], l2_penalty: f64) -> Result<(f64, ClassifierGradient)> {
        if batch.is_empty() {
            return Err(Error::Empty("classifier batch"));
        }
        let mut gw = Array2::<f64>::zeros(self.weights.raw_dim());
        let mut gb = Array1::<f64>::zeros(self.num_labels());
        let mut loss = 0.0;
        for (x, label) in batch {
            if label.0 >= self.num_labels() {
                return Err(Error::LabelOutOfRange {
                    label: label.0,
                    num_labels: self.num_labels(),
                });
            }
            let z = self.logits(x)?;
            let mut p = softmax(z.as_slice().expect("contiguous logits"));
            loss -= p[label.0].max(f64::MIN_POSITIVE).ln();
            p[label.0] -= 1.0;
            let delta = ArrayView1::from(&p[..]);
            let xv = ArrayView1::from(&x[..]);
            for (k, dk) in delta.iter().enumerate() {
                gw.row_mut(k).scaled_add(*dk, &xv);
            }
            gb += &delta;
        }
        let n = batch.len() as f64;
        loss /= n;
        gw /= n;
        gb /= n;
        if l2_penalty > 0.0 {
            loss += 0.5 * l2_penalty * self.weights.iter().map(|w| w * w).sum::<f64>();
            gw.scaled_add(l2_penalty, &self.weights);
        }
        Ok((
            loss,
            ClassifierGradient {
                weights: gw,
                biases: gb,
            },
        ))
    }

    fn apply(&mut self, grad: &ClassifierGradient, learning_rate: f64) {
        self.weights.scaled_add(-learning_rate, &grad.weights);
        self.biases.scaled_add(-learning_rate, &grad.biases);
    }

    pub fn to_checkpoint(&self) -> ClassifierCheckpoint {
        ClassifierCheckpoint {
            format: CLASSIFIER_FORMAT.to_string(),
            version: 1,
            num_labels: self.num_labels(),
            feature_dim: self.feature_dim(),
            weights: encode_f64s(self.weights.as_slice().expect("standard layout")),
            biases: encode_f64s(self.biases.as_slice().expect("contiguous")),
        }
    }

    pub fn from_checkpoint(ckpt: &ClassifierCheckpoint) -> Result<Self> {
        let bad = |m: String| Error::validation("classifier checkpoint", m);
        if ckpt.format != CLASSIFIER_FORMAT || ckpt.version != 1 {
            return Err(bad(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        let w = decode_f64s(&ckpt.weights).map_err(bad)?;
        let b = decode_f64s(&ckpt.biases).map_err(bad)?;
        let weights =
            Array2::from_shape_vec((ckpt.num_labels, ckpt.feature_dim), w).map_err(|e| bad(format!("weights: {e}")))?;
        if b.len() != ckpt.num_labels {
            return Err(bad(format!("{} biases for {} labels", b.len(), ckpt.num_labels)));
        }
        Classifier::from_parts(weights, Array1::from(b))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: ClassifierCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Classifier::from_checkpoint(&ckpt)
    }
}

/// On-disk form of a [`Classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub format: String,
    pub version: u32,
    pub num_labels: usize,
    pub feature_dim: usize,
    pub weights: String,
    pub biases: String,
}

/// Mini-batch gradient descent on L2-regularized cross-entropy from zero
/// initialization. Examples are reshuffled every epoch with a generator seeded
/// from `config.seed`; batch gradients are averaged.
pub fn train_classifier(
    examples: &[Example<'_>],
    num_labels: usize,
    config: &ClassifierTrainConfig,
) -> Result<Classifier> {
    config.validate()?;
    let Some((first, _)) = examples.first() else {
        return Err(Error::Empty("classifier training set"));
    };
    if num_labels == 0 {
        return Err(Error::Empty("label vocabulary"));
    }
    let dim = first.dim();
    for (x, label) in examples {
        if label.0 >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: label.0,
                num_labels,
            });
        }
        if x.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.dim(),
            });
        }
    }

    let mut clf = Classifier::zeros(num_labels, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (_, grad) = clf.loss_and_gradient(&batch, config.l2_penalty)?;
            clf.apply(&grad, config.learning_rate);
        }
    }
    Ok(clf)
}
