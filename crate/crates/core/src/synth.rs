//! Seeded synthetic corpora built from isotropic Gaussian modes.
//!
//! Every action has its own mode, shared by its video segment frames and its
//! relevant web images. Background frames come from a per-activity context
//! mode shared by sibling actions; web-only distractors come from
//! per-activity noise modes that never occur in video.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ActionLabel, Corpus, FeatureVector, Interval, Split, VideoSequence, WebImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_activities: usize,
    pub actions_per_activity: usize,
    pub feature_dim: usize,
    /// Videos generated per action, per split.
    pub videos_per_action: SplitCounts,
    /// Inclusive range of video lengths.
    pub min_frames: usize,
    pub max_frames: usize,
    pub action_segment_fraction: f64,
    pub images_per_action: usize,
    pub image_noise_fraction: f64,
    pub noise_modes_per_activity: usize,
    pub mode_separation: f64,
    pub mode_stddev: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_activities: 4,
            actions_per_activity: 2,
            feature_dim: 64,
            videos_per_action: SplitCounts {
                train: 10,
                validation: 4,
                test: 6,
            },
            min_frames: 30,
            max_frames: 50,
            action_segment_fraction: 0.2,
            images_per_action: 40,
            image_noise_fraction: 0.4,
            noise_modes_per_activity: 1,
            mode_separation: 6.0,
            mode_stddev: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_labels(&self) -> usize {
        self.num_activities * self.actions_per_activity
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.num_activities == 0 || self.actions_per_activity == 0 {
            return bad("num_activities and actions_per_activity must be >= 1");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if !(self.action_segment_fraction > 0.0 && self.action_segment_fraction <= 1.0) {
            return bad("action_segment_fraction must be in (0, 1]");
        }
        if self.action_segment_fraction * (self.min_frames as f64) < 1.0 {
            return bad("action_segment_fraction * min_frames must be >= 1");
        }
        if self.images_per_action == 0 {
            return bad("images_per_action must be >= 1");
        }
        if !(0.0..1.0).contains(&self.image_noise_fraction) {
            return bad("image_noise_fraction must be in [0, 1)");
        }
        if self.noise_modes_per_activity == 0 {
            return bad("noise_modes_per_activity must be >= 1");
        }
        if !(self.mode_separation > 0.0 && self.mode_separation.is_finite()) {
            return bad("mode_separation must be positive");
        }
        if !(self.mode_stddev > 0.0 && self.mode_stddev.is_finite()) {
            return bad("mode_stddev must be positive");
        }
        Ok(())
    }

    pub fn activity_of(&self, label: usize) -> usize {
        label / self.actions_per_activity
    }

    /// Planted segment length for a video of `frames` steps.
    pub fn segment_len(&self, frames: usize) -> usize {
        ((self.action_segment_fraction * frames as f64).floor() as usize).clamp(1, frames)
    }
}

/// Mode centers, written as a debugging sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModes {
    /// Indexed by label.
    pub action: Vec<Vec<f64>>,
    /// Indexed by activity.
    pub context: Vec<Vec<f64>>,
    /// Indexed by activity, then noise mode.
    pub noise: Vec<Vec<Vec<f64>>>,
}

fn random_center(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm * radius).collect();
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, center: &[f64], stddev: f64) -> FeatureVector {
    FeatureVector(
        center
            .iter()
            .map(|c| c + stddev * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect(),
    )
}

/// Builds the corpus and the mode centers it was drawn from.
pub fn generate_with_modes(spec: &SynthSpec) -> Result<(Corpus, SynthModes)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_labels();
    let d = spec.feature_dim;
    let sep = spec.mode_separation;

    let modes = SynthModes {
        action: (0..n).map(|_| random_center(&mut rng, d, sep)).collect(),
        context: (0..spec.num_activities)
            .map(|_| random_center(&mut rng, d, sep))
            .collect(),
        noise: (0..spec.num_activities)
            .map(|_| {
                (0..spec.noise_modes_per_activity)
                    .map(|_| random_center(&mut rng, d, sep))
                    .collect()
            })
            .collect(),
    };

    let mut corpus = Corpus::new(n, d);
    corpus.label_names = Some(
        (0..n)
            .map(|l| {
                format!(
                    "activity{}/action{}",
                    spec.activity_of(l),
                    l % spec.actions_per_activity
                )
            })
            .collect(),
    );

    for label in 0..n {
        let activity = spec.activity_of(label);
        for i in 0..spec.images_per_action {
            let relevant = rng.random::<f64>() >= spec.image_noise_fraction;
            let center = if relevant {
                &modes.action[label]
            } else {
                &modes.noise[activity][rng.random_range(0..spec.noise_modes_per_activity)]
            };
            corpus.images.push(WebImage {
                id: format!("img-{label}-{i}"),
                label: ActionLabel(label),
                feature: draw(&mut rng, center, spec.mode_stddev),
                relevant: Some(relevant),
            });
        }
    }

    let splits = [
        (Split::Train, "train", spec.videos_per_action.train),
        (Split::Validation, "val", spec.videos_per_action.validation),
        (Split::Test, "test", spec.videos_per_action.test),
    ];
    for (split, prefix, count) in splits {
        for label in 0..n {
            let activity = spec.activity_of(label);
            for i in 0..count {
                let frames = rng.random_range(spec.min_frames..=spec.max_frames);
                let len = spec.segment_len(frames);
                let start = rng.random_range(0..=frames - len);
                let segment = Interval {
                    start,
                    end: start + len,
                };
                let features = (0..frames)
                    .map(|t| {
                        let center = if t >= segment.start && t < segment.end {
                            &modes.action[label]
                        } else {
                            &modes.context[activity]
                        };
                        draw(&mut rng, center, spec.mode_stddev)
                    })
                    .collect();
                corpus.videos_mut(split).push(VideoSequence {
                    id: format!("{prefix}-{label}-{i}"),
                    label: ActionLabel(label),
                    frames: features,
                    gt_segments: Some(vec![segment]),
                    laf_weights: None,
                });
            }
        }
    }
    corpus.validate()?;
    Ok((corpus, modes))
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    generate_with_modes(spec).map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub image_purity: f64,
    /// Fraction of all video steps inside a ground-truth segment.
    pub action_step_fraction: f64,
    pub images_per_label: Vec<usize>,
    pub videos_per_label: Vec<usize>,
    pub num_images: usize,
    pub num_videos: usize,
}

/// Exact counts for a corpus carrying relevance flags and ground truth.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    let missing = |what: &str| Error::Validation {
        record: what.into(),
        message: "synthetic ground truth absent".into(),
    };
    let mut relevant = 0usize;
    let mut images_per_label = vec![0; corpus.num_labels];
    for img in &corpus.images {
        if img.relevant.ok_or_else(|| missing(&img.id))? {
            relevant += 1;
        }
        images_per_label[img.label.0] += 1;
    }
    let mut action_steps = 0usize;
    let mut steps = 0usize;
    let mut videos_per_label = vec![0; corpus.num_labels];
    let mut num_videos = 0;
    for (_, v) in corpus.all_videos() {
        let segments = v.gt_segments.as_ref().ok_or_else(|| missing(&v.id))?;
        let mut covered = vec![false; v.len()];
        for s in segments {
            covered[s.start..s.end].iter_mut().for_each(|c| *c = true);
        }
        action_steps += covered.iter().filter(|c| **c).count();
        steps += v.len();
        videos_per_label[v.label.0] += 1;
        num_videos += 1;
    }
    if corpus.images.is_empty() || steps == 0 {
        return Err(Error::Empty("synthetic corpus"));
    }
    Ok(CorpusStats {
        image_purity: relevant as f64 / corpus.images.len() as f64,
        action_step_fraction: action_steps as f64 / steps as f64,
        images_per_label,
        videos_per_label,
        num_images: corpus.images.len(),
        num_videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;

    fn small() -> SynthSpec {
        SynthSpec {
            feature_dim: 8,
            videos_per_action: SplitCounts {
                train: 2,
                validation: 1,
                test: 1,
            },
            images_per_action: 5,
            ..Default::default()
        }
    }

    #[test]
    fn no_noise_means_all_relevant() {
        let spec = SynthSpec {
            image_noise_fraction: 0.0,
            ..small()
        };
        let c = generate_corpus(&spec).unwrap();
        assert!(c.images.iter().all(|i| i.relevant == Some(true)));
        assert_eq!(corpus_stats(&c).unwrap().image_purity, 1.0);
    }

    #[test]
    fn full_segment_saturates() {
        let spec = SynthSpec {
            action_segment_fraction: 1.0,
            ..small()
        };
        let c = generate_corpus(&spec).unwrap();
        for (_, v) in c.all_videos() {
            assert_eq!(
                v.gt_segments.as_deref().unwrap(),
                &[Interval { start: 0, end: v.len() }]
            );
        }
        assert_eq!(corpus_stats(&c).unwrap().action_step_fraction, 1.0);
    }

    #[test]
    fn deterministic_bytes() {
        let bytes = |seed| {
            let mut buf = Vec::new();
            write_corpus(&generate_corpus(&SynthSpec { seed, ..small() }).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(3), bytes(3));
        assert_ne!(bytes(3), bytes(4));
    }

    #[test]
    fn structure() {
        let spec = small();
        let (c, modes) = generate_with_modes(&spec).unwrap();
        let stats = corpus_stats(&c).unwrap();
        assert_eq!(stats.images_per_label, vec![5; 8]);
        assert_eq!(stats.videos_per_label, vec![4; 8]);
        assert_eq!(stats.images_per_label.iter().sum::<usize>(), c.images.len());
        assert_eq!(
            stats.num_videos,
            c.train_videos.len() + c.validation_videos.len() + c.test_videos.len()
        );
        for center in modes.action.iter().chain(&modes.context) {
            let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - spec.mode_separation).abs() < 1e-9);
        }
        for (_, v) in c.all_videos() {
            let seg = v.gt_segments.as_ref().unwrap()[0];
            assert!(seg.end <= v.len());
            assert_eq!(seg.len(), spec.segment_len(v.len()));
            assert!((spec.min_frames..=spec.max_frames).contains(&v.len()));
        }
    }

    #[test]
    fn siblings_share_context() {
        // Strip noise so background frames sit near their context center.
        let spec = SynthSpec {
            mode_stddev: 1e-6,
            ..small()
        };
        let (c, modes) = generate_with_modes(&spec).unwrap();
        for v in &c.train_videos {
            let activity = spec.activity_of(v.label.0);
            let seg = v.gt_segments.as_ref().unwrap()[0];
            let outside = if seg.start > 0 { 0 } else { seg.end };
            for (a, b) in v.frames[outside].iter().zip(&modes.context[activity]) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec {
                num_activities: 0,
                ..small()
            },
            SynthSpec {
                action_segment_fraction: 0.01,
                ..small()
            },
            SynthSpec {
                image_noise_fraction: 1.0,
                ..small()
            },
            SynthSpec {
                min_frames: 60,
                ..small()
            },
            SynthSpec {
                mode_stddev: 0.0,
                ..small()
            },
        ] {
            assert!(matches!(generate_corpus(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stats_need_flags() {
        let mut c = generate_corpus(&small()).unwrap();
        c.images[0].relevant = None;
        assert!(corpus_stats(&c).is_err());
    }
}
