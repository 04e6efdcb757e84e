//! Hit@k for video classification and THUMOS-style average precision at a
//! temporal overlap ratio.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{ActionLabel, Interval};
use crate::error::{Error, Result};
use crate::localization::{temporal_iou, Detection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub hit_ks: Vec<usize>,
    pub overlap_ratios: Vec<f64>,
    /// Use interpolated precision (max precision at any later rank).
    pub interpolated: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            hit_ks: vec![1, 5],
            overlap_ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            interpolated: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hit_ks.contains(&0) {
            return Err(Error::Config("eval.hit_ks must be positive".into()));
        }
        if let Some(r) = self.overlap_ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("eval.overlap_ratios: {r} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Whether `label` is among the `k` best labels of `scores`, ranking ties by
/// lower label index.
pub fn in_top_k(scores: &[f64], label: ActionLabel, k: usize) -> bool {
    let own = scores[label.0];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > own || (s == own && i < label.0))
        .count();
    ahead < k
}

/// Fraction of videos whose true label is in their top `k`.
pub fn hit_at_k(scores: &[Vec<f64>], labels: &[ActionLabel], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("videos for Hit@k"));
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let mut hits = 0usize;
    for (s, &label) in scores.iter().zip(labels) {
        if label.0 >= s.len() {
            return Err(Error::LabelOutOfRange {
                label: label.0,
                num_labels: s.len(),
            });
        }
        if k > s.len() {
            return Err(Error::Config(format!("k = {k} exceeds {} labels", s.len())));
        }
        if in_top_k(s, label, k) {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// A detection counts when its IoU with a ground-truth segment exceeds `r`.
/// An exact match always counts, so `r = 1` means "exact only".
fn matches(iou: f64, r: f64) -> bool {
    iou > r || iou >= 1.0
}

/// Average precision of one label's detections across videos.
///
/// Detections are ranked by descending score (ties: video id, then start).
/// Each one claims the unmatched ground-truth segment in its video with the
/// highest IoU, provided the match criterion holds; otherwise it is a false
/// positive. AP is the sum of precision at each true-positive rank divided by
/// the number of ground-truth segments.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &HashMap<String, Vec<Interval>>,
    r: f64,
    interpolated: bool,
) -> Result<f64> {
    let n_gt: usize = ground_truth.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then(a.interval.start.cmp(&b.interval.start))
    });

    let mut used: HashMap<&str, Vec<bool>> = ground_truth
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();
    let mut precisions = Vec::with_capacity(ranked.len());
    let mut is_tp = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (rank, det) in ranked.iter().enumerate() {
        let mut hit = false;
        if let (Some(segments), Some(flags)) = (ground_truth.get(&det.video_id), used.get_mut(det.video_id.as_str())) {
            let mut best: Option<(usize, f64)> = None;
            for (g, seg) in segments.iter().enumerate() {
                if flags[g] {
                    continue;
                }
                let iou = temporal_iou(&det.interval, seg);
                if matches(iou, r) && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                flags[g] = true;
                hit = true;
                tp += 1;
            }
        }
        is_tp.push(hit);
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    if interpolated {
        for i in (0..precisions.len().saturating_sub(1)).rev() {
            precisions[i] = precisions[i].max(precisions[i + 1]);
        }
    }
    // fold from +0.0: an empty float sum is -0.0
    let sum: f64 = precisions
        .iter()
        .zip(&is_tp)
        .filter(|(_, t)| **t)
        .fold(0.0, |acc, (p, _)| acc + p);
    Ok(sum / n_gt as f64)
}

/// Ground truth grouped by label, then by video id.
pub type GroundTruth = BTreeMap<ActionLabel, HashMap<String, Vec<Interval>>>;

/// Per-label AP for every label with at least one ground-truth segment, and
/// their unweighted mean.
pub fn mean_ap(
    detections: &[Detection],
    ground_truth: &GroundTruth,
    r: f64,
    interpolated: bool,
) -> Result<(f64, BTreeMap<ActionLabel, f64>)> {
    let mut by_label: BTreeMap<ActionLabel, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_label.entry(d.label).or_default().push(d.clone());
    }
    let mut per_label = BTreeMap::new();
    for (label, gt) in ground_truth {
        if gt.values().all(Vec::is_empty) {
            continue;
        }
        let dets = by_label.get(label).map(Vec::as_slice).unwrap_or(&[]);
        per_label.insert(*label, average_precision(dets, gt, r, interpolated)?);
    }
    if per_label.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let mean = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok((mean, per_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(video: &str, start: usize, end: usize, score: f64) -> Detection {
        Detection {
            video_id: video.into(),
            interval: Interval { start, end },
            label: ActionLabel(0),
            score,
        }
    }

    fn gt(entries: &[(&str, usize, usize)]) -> HashMap<String, Vec<Interval>> {
        let mut m: HashMap<String, Vec<Interval>> = HashMap::new();
        for (v, s, e) in entries {
            m.entry(v.to_string())
                .or_default()
                .push(Interval { start: *s, end: *e });
        }
        m
    }

    #[test]
    fn hit_examples() {
        let scores = vec![vec![0.9, 0.05, 0.05], vec![0.1, 0.2, 0.7]];
        let labels = [ActionLabel(0), ActionLabel(2)];
        assert_eq!(hit_at_k(&scores, &labels, 1).unwrap(), 1.0);
        assert_eq!(hit_at_k(&scores, &[ActionLabel(1), ActionLabel(1)], 3).unwrap(), 1.0);
        assert!(hit_at_k(&[], &[], 1).is_err());
        // ties: lower index wins the top slot
        assert!(in_top_k(&[0.5, 0.5], ActionLabel(0), 1));
        assert!(!in_top_k(&[0.5, 0.5], ActionLabel(1), 1));
    }

    #[test]
    fn ap_examples() {
        // GT [0,10); detection [0,6) has IoU 0.6, [0,4) has IoU 0.4, [0,2) has IoU 0.2, [1,9) 0.8
        let g = gt(&[("a", 0, 10)]);
        assert_eq!(average_precision(&[det("a", 0, 6, 0.9)], &g, 0.5, false).unwrap(), 1.0);
        assert_eq!(average_precision(&[det("a", 0, 4, 0.9)], &g, 0.5, false).unwrap(), 0.0);
        let two = [det("a", 0, 2, 0.9), det("a", 1, 9, 0.8)];
        assert_eq!(average_precision(&two, &g, 0.5, false).unwrap(), 0.5);
        // interpolation cannot help when the only TP is last
        assert_eq!(average_precision(&two, &g, 0.5, true).unwrap(), 0.5);
        assert!(matches!(
            average_precision(&two, &HashMap::new(), 0.5, false),
            Err(Error::UndefinedAp)
        ));
    }

    #[test]
    fn boundary_is_strict() {
        // IoU exactly 0.5 is not "over" 0.5
        let g = gt(&[("a", 0, 10)]);
        assert_eq!(average_precision(&[det("a", 0, 5, 1.0)], &g, 0.5, false).unwrap(), 0.0);
        assert_eq!(average_precision(&[det("a", 0, 5, 1.0)], &g, 0.49, false).unwrap(), 1.0);
        // exact match counts even at r = 1
        assert_eq!(average_precision(&[det("a", 0, 10, 1.0)], &g, 1.0, false).unwrap(), 1.0);
    }

    #[test]
    fn duplicates_are_false_positives() {
        let g = gt(&[("a", 0, 10)]);
        let dets = [det("a", 0, 10, 0.9), det("a", 0, 9, 0.8)];
        assert_eq!(average_precision(&dets, &g, 0.5, false).unwrap(), 1.0);
        let g2 = gt(&[("a", 0, 10), ("b", 0, 10)]);
        let dets = [det("a", 0, 10, 0.9), det("a", 0, 9, 0.8), det("b", 0, 10, 0.7)];
        // ranks: TP (1/1), FP, TP (2/3)
        let ap = average_precision(&dets, &g2, 0.5, false).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(&dets, &g2, 0.5, true).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mean_ap_examples() {
        let mut truth = GroundTruth::new();
        truth.insert(ActionLabel(0), gt(&[("a", 0, 10)]));
        let d0 = det("a", 0, 10, 0.9);
        let (m, _) = mean_ap(std::slice::from_ref(&d0), &truth, 0.5, false).unwrap();
        assert_eq!(m, 1.0);

        truth.insert(ActionLabel(1), gt(&[("b", 0, 10)]));
        truth.insert(ActionLabel(2), HashMap::new());
        let (m, per) = mean_ap(&[d0], &truth, 0.5, false).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(per.len(), 2);
        assert_eq!(per[&ActionLabel(1)], 0.0);
    }

    proptest! {
        #[test]
        fn ap_bounded_and_monotone_invariant(
            raw in prop::collection::vec((0usize..3, 0usize..15, 1usize..8, 0.0f64..1.0), 0..10),
            gts in prop::collection::vec((0usize..3, 0usize..15, 1usize..8), 1..5),
            r in 0.05f64..0.95,
        ) {
            let names = ["a", "b", "c"];
            let dets: Vec<Detection> = raw.iter().map(|(v, s, l, sc)| det(names[*v], *s, s + l, *sc)).collect();
            let mut truth: HashMap<String, Vec<Interval>> = HashMap::new();
            for (v, s, l) in &gts {
                truth.entry(names[*v].to_string()).or_default().push(Interval { start: *s, end: s + l });
            }
            let ap = average_precision(&dets, &truth, r, false).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let warped: Vec<Detection> = dets.iter().map(|d| Detection { score: (3.0 * d.score).exp() - 7.0, ..d.clone() }).collect();
            prop_assert_eq!(ap, average_precision(&warped, &truth, r, false).unwrap());
        }
    }
}
