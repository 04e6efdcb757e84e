//! Video classification by average fusion, and temporal localization by
//! sliding-window scoring plus per-label temporal NMS.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{ActionLabel, Interval, VideoSequence};
use crate::error::{Error, Result};
use crate::lstm::LstmModel;
use crate::math::mean_vectors;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub interval: Interval,
    pub label: ActionLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub window_len: usize,
    pub window_stride: usize,
    /// Detections overlapping a kept one with IoU above this are suppressed.
    pub nms_overlap: f64,
    pub max_detections_per_label: Option<usize>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            window_len: 10,
            window_stride: 1,
            nms_overlap: 0.5,
            max_detections_per_label: None,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_stride == 0 {
            return Err(Error::Config(
                "localization.window_len and window_stride must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.nms_overlap) {
            return Err(Error::Config("localization.nms_overlap must be in [0, 1)".into()));
        }
        if self.max_detections_per_label == Some(0) {
            return Err(Error::Config(
                "localization.max_detections_per_label must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Average fusion: per-label mean of the per-step softmax vectors.
pub fn classify_video(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = probs.first() else {
        return Err(Error::Empty("step activations"));
    };
    Ok(mean_vectors(probs.iter().map(|p| p.as_slice()), first.len()))
}

/// Windows `[s, s + window_len)` for `s = 0, stride, ...` that fit inside the
/// sequence, each scored by its mean softmax. A sequence shorter than the
/// window yields a single whole-sequence window.
pub fn sliding_window_scores(
    probs: &[Vec<f64>],
    window_len: usize,
    window_stride: usize,
) -> Result<Vec<(Interval, Vec<f64>)>> {
    let steps = probs.len();
    if steps == 0 {
        return Err(Error::Empty("step activations"));
    }
    if window_len == 0 || window_stride == 0 {
        return Err(Error::Config("window_len and window_stride must be >= 1".into()));
    }
    let dim = probs[0].len();
    if steps < window_len {
        let interval = Interval { start: 0, end: steps };
        return Ok(vec![(interval, classify_video(probs)?)]);
    }
    Ok((0..=steps - window_len)
        .step_by(window_stride)
        .map(|start| {
            let end = start + window_len;
            let mean = mean_vectors(probs[start..end].iter().map(|p| p.as_slice()), dim);
            (Interval { start, end }, mean)
        })
        .collect())
}

/// Intersection over union in step units.
pub fn temporal_iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Ranking used by NMS: higher score first, then earlier start, then longer.
fn nms_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start.cmp(&b.interval.start))
        .then(b.interval.end.cmp(&a.interval.end))
}

/// Greedy temporal NMS over detections of one label in one video. The result
/// is sorted by descending score.
pub fn temporal_nms(mut detections: Vec<Detection>, nms_overlap: f64) -> Vec<Detection> {
    detections.sort_by(nms_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        if kept
            .iter()
            .all(|k| temporal_iou(&k.interval, &d.interval) <= nms_overlap)
        {
            kept.push(d);
        }
    }
    kept
}

/// Localization output for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLocalization {
    /// Average-fused class scores for the whole video.
    pub scores: Vec<f64>,
    /// Sorted by label, then descending score.
    pub detections: Vec<Detection>,
}

/// Runs the model over the video, scores sliding windows, and applies NMS
/// independently per label.
pub fn localize(model: &LstmModel, video: &VideoSequence, config: &LocalizationConfig) -> Result<VideoLocalization> {
    config.validate()?;
    let pass = model.forward(&video.frames)?;
    let windows = sliding_window_scores(&pass.probs, config.window_len, config.window_stride)?;
    let mut detections = Vec::new();
    for label in 0..model.dims.outputs {
        let candidates = windows
            .iter()
            .map(|(interval, scores)| Detection {
                video_id: video.id.clone(),
                interval: *interval,
                label: ActionLabel(label),
                score: scores[label],
            })
            .collect();
        let mut kept = temporal_nms(candidates, config.nms_overlap);
        if let Some(k) = config.max_detections_per_label {
            kept.truncate(k);
        }
        detections.extend(kept);
    }
    Ok(VideoLocalization {
        scores: classify_video(&pass.probs)?,
        detections,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    video_id: String,
    label: usize,
    start: usize,
    end: usize,
    score: f64,
}

/// Sorts by (label, descending score), then video id and start for a total
/// order.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.label
            .cmp(&b.label)
            .then(b.score.total_cmp(&a.score))
            .then(a.video_id.cmp(&b.video_id))
            .then(a.interval.start.cmp(&b.interval.start))
            .then(a.interval.end.cmp(&b.interval.end))
    });
}

/// One JSON object per line: `{"video_id","label","start","end","score"}`.
pub fn write_detections(dets: &[Detection], mut w: impl Write) -> Result<()> {
    let io_err = |e| Error::io("<detections stream>", e);
    for d in dets {
        let rec = DetectionRecord {
            video_id: d.video_id.clone(),
            label: d.label.0,
            start: d.interval.start,
            end: d.interval.end,
            score: d.score,
        };
        let line = serde_json::to_string(&rec).expect("detections serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<detections stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let interval = Interval::new(rec.start, rec.end).map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("empty interval [{}, {})", rec.start, rec.end),
        })?;
        if !rec.score.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "non-finite score".into(),
            });
        }
        out.push(Detection {
            video_id: rec.video_id,
            interval,
            label: ActionLabel(rec.label),
            score: rec.score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(start: usize, end: usize, score: f64) -> Detection {
        Detection {
            video_id: "v".into(),
            interval: Interval { start, end },
            label: ActionLabel(0),
            score,
        }
    }

    #[test]
    fn classify_examples() {
        let constant = vec![vec![0.2, 0.8]; 4];
        assert_eq!(classify_video(&constant).unwrap(), vec![0.2, 0.8]);
        assert_eq!(
            classify_video(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(classify_video(&[]).is_err());
    }

    #[test]
    fn window_counts() {
        let probs: Vec<Vec<f64>> = (0..12).map(|t| vec![t as f64, 1.0]).collect();
        let w = sliding_window_scores(&probs[..10], 10, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0, Interval { start: 0, end: 10 });
        assert_eq!(w[0].1, classify_video(&probs[..10]).unwrap());

        let w = sliding_window_scores(&probs, 10, 1).unwrap();
        let starts: Vec<usize> = w.iter().map(|(i, _)| i.start).collect();
        assert_eq!(starts, vec![0, 1, 2]);

        let w = sliding_window_scores(&probs[..5], 10, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0, Interval { start: 0, end: 5 });

        let w = sliding_window_scores(&probs, 4, 3).unwrap();
        let starts: Vec<usize> = w.iter().map(|(i, _)| i.start).collect();
        assert_eq!(starts, vec![0, 3, 6]);
    }

    #[test]
    fn iou_examples() {
        let a = Interval { start: 0, end: 5 };
        assert_eq!(temporal_iou(&a, &a), 1.0);
        assert_eq!(temporal_iou(&a, &Interval { start: 5, end: 10 }), 0.0);
        let third = temporal_iou(&Interval { start: 0, end: 10 }, &Interval { start: 5, end: 15 });
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nms_examples() {
        assert_eq!(temporal_nms(vec![det(0, 3, 0.1)], 0.5).len(), 1);

        let kept = temporal_nms(vec![det(5, 15, 0.8), det(20, 30, 0.7), det(0, 10, 0.9)], 0.3);
        let spans: Vec<(usize, usize)> = kept.iter().map(|d| (d.interval.start, d.interval.end)).collect();
        assert_eq!(spans, vec![(0, 10), (20, 30)]);

        let disjoint = vec![det(0, 2, 0.3), det(2, 4, 0.9), det(4, 6, 0.5)];
        for thr in [0.0, 0.5, 0.99] {
            let kept = temporal_nms(disjoint.clone(), thr);
            let scores: Vec<f64> = kept.iter().map(|d| d.score).collect();
            assert_eq!(scores, vec![0.9, 0.5, 0.3]);
        }
    }

    #[test]
    fn nms_ties_prefer_earlier_then_longer() {
        let kept = temporal_nms(vec![det(2, 6, 0.5), det(1, 4, 0.5), det(1, 5, 0.5)], 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].interval, Interval { start: 1, end: 5 });
    }

    #[test]
    fn detections_round_trip() {
        let dets = vec![det(0, 10, 0.25), det(3, 4, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_detections(&dets, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"video_id\":\"v\",\"label\":0,\"start\":0,\"end\":10,\"score\":0.25}"));
        assert_eq!(read_detections(&buf[..]).unwrap(), dets);
        assert!(
            read_detections("{\"video_id\":\"v\",\"label\":0,\"start\":4,\"end\":4,\"score\":1}".as_bytes()).is_err()
        );
    }

    fn interval_strategy() -> impl Strategy<Value = Interval> {
        (0usize..20, 1usize..10).prop_map(|(s, l)| Interval { start: s, end: s + l })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in interval_strategy(), b in interval_strategy()) {
            let x = temporal_iou(&a, &b);
            prop_assert_eq!(x, temporal_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x == 1.0, a == b);
        }

        #[test]
        fn nms_output_respects_threshold(
            items in prop::collection::vec((interval_strategy(), 0.0f64..1.0), 1..12),
            thr in 0.0f64..0.95,
        ) {
            let dets: Vec<Detection> = items.iter().map(|(i, s)| det(i.start, i.end, *s)).collect();
            let kept = temporal_nms(dets, thr);
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(temporal_iou(&a.interval, &b.interval) <= thr);
                    prop_assert!(a.score >= b.score);
                }
            }
        }

        #[test]
        fn classify_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = classify_video(&rows).unwrap();
            let b = classify_video(&shuffled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
