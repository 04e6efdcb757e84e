//! Bidirectional filtering of web images and video frames, and the per-step
//! LAF weights derived from the surviving image classifier.
//!
//! Each iteration trains `cnn_v` on the frame set, keeps the images it scores
//! above `theta1` for their own label, trains `cnn_i` on those images, and
//! keeps the frames `cnn_i` scores above `theta2`. The loop stops once
//! validation accuracy of `cnn_i` falls below the best seen, or after
//! `max_iterations`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_classifier, Classifier, ClassifierTrainConfig, Example};
use crate::corpus::{Corpus, Interval, Split, VideoSequence};
use crate::error::{Error, Result};
use crate::math::{argmax, mean_vectors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub max_iterations: usize,
    pub frames_per_video: usize,
    pub min_items_per_label: usize,
    pub classifier: ClassifierTrainConfig,
    /// Seeds the initial frame sample.
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            theta1: 0.5,
            theta2: 0.5,
            max_iterations: 5,
            frames_per_video: 10,
            min_items_per_label: 1,
            classifier: ClassifierTrainConfig::default(),
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, theta) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::Config(format!("transfer.{name} must be in [0, 1]")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("transfer.max_iterations must be >= 1".into()));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Config("transfer.frames_per_video must be >= 1".into()));
        }
        self.classifier.validate()
    }
}

/// A sampled training frame: `(video index, step index)` into the train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrameRef {
    pub video: usize,
    pub step: usize,
}

/// Samples `min(frames_per_video, T)` distinct steps per video, without
/// replacement, from one generator seeded with `seed`. Steps within a video are
/// returned in increasing order.
pub fn initialize_frame_set(videos: &[VideoSequence], frames_per_video: usize, seed: u64) -> Result<Vec<FrameRef>> {
    if videos.is_empty() {
        return Err(Error::Empty("training videos"));
    }
    if frames_per_video == 0 {
        return Err(Error::Config("frames_per_video must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        let t = video.len();
        let mut steps = sample(&mut rng, t, frames_per_video.min(t)).into_vec();
        steps.sort_unstable();
        out.extend(steps.into_iter().map(|step| FrameRef { video: v, step }));
    }
    Ok(out)
}

/// Outcome of [`filter_items`].
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    /// Indices of retained items, in input order.
    pub retained: Vec<usize>,
    /// Every item's score for its own label.
    pub scores: Vec<f64>,
    /// Highest score among removed items.
    pub max_removed_score: Option<f64>,
}

/// Keeps items scoring strictly above `theta` for their own label. A label
/// left with fewer than `min_items_per_label` survivors keeps its
/// top-scoring `min_items_per_label` items instead (earlier items win ties).
pub fn filter_items(
    items: &[Example<'_>],
    clf: &Classifier,
    theta: f64,
    min_items_per_label: usize,
) -> Result<Filtered> {
    let scores = items
        .par_iter()
        .map(|(x, label)| clf.score_for_label(x, *label))
        .collect::<Result<Vec<f64>>>()?;
    let mut keep: Vec<bool> = scores.iter().map(|&s| s > theta).collect();

    if min_items_per_label > 0 {
        let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); clf.num_labels()];
        for (i, (_, label)) in items.iter().enumerate() {
            by_label[label.0].push(i);
        }
        for mut members in by_label {
            let survivors = members.iter().filter(|&&i| keep[i]).count();
            if survivors >= min_items_per_label {
                continue;
            }
            members.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            for &i in members.iter().take(min_items_per_label) {
                keep[i] = true;
            }
        }
    }

    let retained: Vec<usize> = (0..items.len()).filter(|&i| keep[i]).collect();
    let max_removed_score = (0..items.len())
        .filter(|&i| !keep[i])
        .map(|i| scores[i])
        .max_by(f64::total_cmp);
    Ok(Filtered {
        retained,
        scores,
        max_removed_score,
    })
}

/// Average-fuses per-frame softmax outputs and returns the fraction of videos
/// whose argmax (lowest index on ties) is the true label.
pub fn validation_accuracy(clf: &Classifier, videos: &[VideoSequence]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::Empty("validation videos"));
    }
    let correct = videos
        .par_iter()
        .map(|video| -> Result<bool> {
            let probs = video
                .frames
                .iter()
                .map(|f| clf.predict_softmax(f))
                .collect::<Result<Vec<_>>>()?;
            let fused = mean_vectors(probs.iter().map(|p| p.as_slice()), clf.num_labels());
            Ok(argmax(&fused) == video.label.0)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / videos.len() as f64)
}

/// Per-step LAF weights: the classifier's softmax score for the video label.
pub fn laf_scores_for_video(cnn_i: &Classifier, video: &VideoSequence) -> Result<Vec<f64>> {
    video
        .frames
        .iter()
        .map(|f| cnn_i.score_for_label(f, video.label))
        .collect()
}

/// Mean step weight inside each shot. Shots must tile `[0, T)` in order.
pub fn shot_laf_scores(step_weights: &[f64], shots: &[Interval]) -> Result<Vec<f64>> {
    let mut cursor = 0;
    let mut out = Vec::with_capacity(shots.len());
    for shot in shots {
        if shot.is_empty() {
            return Err(Error::Validation {
                record: "shot".into(),
                message: format!("empty shot [{}, {})", shot.start, shot.end),
            });
        }
        if shot.start != cursor || shot.end > step_weights.len() {
            return Err(Error::Validation {
                record: "shot".into(),
                message: format!(
                    "shot [{}, {}) does not continue a tiling at {cursor}",
                    shot.start, shot.end
                ),
            });
        }
        let sum: f64 = step_weights[shot.start..shot.end].iter().sum();
        out.push(sum / shot.len() as f64);
        cursor = shot.end;
    }
    if cursor != step_weights.len() {
        return Err(Error::Validation {
            record: "shot".into(),
            message: format!("shots cover [0, {cursor}) of {} steps", step_weights.len()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferLogEntry {
    pub iteration: usize,
    #[serde(rename = "size_I")]
    pub size_i: usize,
    #[serde(rename = "size_V")]
    pub size_v: usize,
    pub validation_accuracy: f64,
    /// Fraction of retained images flagged relevant, when flags are known.
    pub image_purity: Option<f64>,
    pub max_removed_image_score: Option<f64>,
    pub max_removed_frame_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferLog {
    pub initial_size_i: usize,
    pub initial_size_v: usize,
    pub initial_image_purity: Option<f64>,
    pub iterations: Vec<TransferLogEntry>,
    pub best_iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LafResult {
    /// Image classifier from the best-validation iteration.
    pub cnn_i: Classifier,
    /// One weight vector per training video, in corpus order.
    pub weights: Vec<Vec<f64>>,
    pub log: TransferLog,
    /// Ids of the images retained at the best iteration.
    pub retained_image_ids: Vec<String>,
}

impl LafResult {
    /// Writes the weights into the training videos' `laf_weights`.
    pub fn apply_to(&self, corpus: &mut Corpus) -> Result<()> {
        let videos = corpus.videos_mut(Split::Train);
        if videos.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: videos.len(),
                actual: self.weights.len(),
            });
        }
        for (video, w) in videos.iter_mut().zip(&self.weights) {
            if w.len() != video.len() {
                return Err(Error::DimensionMismatch {
                    expected: video.len(),
                    actual: w.len(),
                });
            }
            video.laf_weights = Some(w.clone());
        }
        Ok(())
    }
}

fn purity(images: &[usize], corpus: &Corpus) -> Option<f64> {
    if images.is_empty() {
        return None;
    }
    let mut relevant = 0usize;
    for &i in images {
        if corpus.images[i].relevant? {
            relevant += 1;
        }
    }
    Some(relevant as f64 / images.len() as f64)
}

/// Runs the filtering loop on `corpus` and scores every step of every
/// training video with the best image classifier.
pub fn run_domain_transfer(corpus: &Corpus, config: &TransferConfig) -> Result<LafResult> {
    config.validate()?;
    if corpus.images.is_empty() {
        return Err(Error::Empty("web images"));
    }
    if corpus.validation_videos.is_empty() {
        return Err(Error::Empty("validation videos"));
    }
    let train = &corpus.train_videos;
    let frame_of = |f: &FrameRef| -> Example<'_> { (&train[f.video].frames[f.step], train[f.video].label) };
    let image_of = |i: usize| -> Example<'_> { (&corpus.images[i].feature, corpus.images[i].label) };

    let mut frames = initialize_frame_set(train, config.frames_per_video, config.seed)?;
    let mut images: Vec<usize> = (0..corpus.images.len()).collect();
    let mut log = TransferLog {
        initial_size_i: images.len(),
        initial_size_v: frames.len(),
        initial_image_purity: purity(&images, corpus),
        iterations: Vec::new(),
        best_iteration: 0,
    };
    let mut best: Option<(f64, Classifier, Vec<usize>)> = None;

    for iteration in 1..=config.max_iterations {
        let v_examples: Vec<Example> = frames.iter().map(frame_of).collect();
        let cnn_v = train_classifier(&v_examples, corpus.num_labels, &config.classifier)?;

        let i_examples: Vec<Example> = images.iter().map(|&i| image_of(i)).collect();
        let kept_i = filter_items(&i_examples, &cnn_v, config.theta1, config.min_items_per_label)?;
        images = kept_i.retained.iter().map(|&k| images[k]).collect();
        if images.is_empty() {
            return Err(Error::TransferCollapsed {
                iteration,
                set: "image set",
            });
        }

        let i_examples: Vec<Example> = images.iter().map(|&i| image_of(i)).collect();
        let cnn_i = train_classifier(&i_examples, corpus.num_labels, &config.classifier)?;

        let v_examples: Vec<Example> = frames.iter().map(frame_of).collect();
        let kept_v = filter_items(&v_examples, &cnn_i, config.theta2, config.min_items_per_label)?;
        frames = kept_v.retained.iter().map(|&k| frames[k]).collect();
        if frames.is_empty() {
            return Err(Error::TransferCollapsed {
                iteration,
                set: "frame set",
            });
        }

        let accuracy = validation_accuracy(&cnn_i, &corpus.validation_videos)?;
        log.iterations.push(TransferLogEntry {
            iteration,
            size_i: images.len(),
            size_v: frames.len(),
            validation_accuracy: accuracy,
            image_purity: purity(&images, corpus),
            max_removed_image_score: kept_i.max_removed_score,
            max_removed_frame_score: kept_v.max_removed_score,
        });

        let best_acc = best.as_ref().map(|(a, _, _)| *a);
        if best_acc.is_some_and(|b| accuracy < b) {
            break;
        }
        log.best_iteration = iteration;
        best = Some((accuracy, cnn_i, images.clone()));
    }

    let (_, cnn_i, best_images) = best.expect("at least one iteration runs");
    let weights = train
        .par_iter()
        .map(|v| laf_scores_for_video(&cnn_i, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(LafResult {
        cnn_i,
        weights,
        log,
        retained_image_ids: best_images.iter().map(|&i| corpus.images[i].id.clone()).collect(),
    })
}
