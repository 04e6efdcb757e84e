//! Oracle sweeps shared by the per-module integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::collections::HashMap;

use laf_core::evaluation::{average_precision, mean_ap, GroundTruth};
use laf_core::localization::{temporal_nms, Detection};
use laf_core::lstm::{lstm_backward, LstmDims, LstmState};
use laf_core::{ActionLabel, FeatureVector, Interval};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::*;

/// Max relative error of full-BPTT gradients against central differences
/// over `instances` random models with T <= 5 and at most 4 cells.
pub fn gradient_sweep(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dims = LstmDims {
            input: rng.random_range(1..4),
            cells: rng.random_range(1..5),
            projection: rng.random_range(1..4),
            outputs: rng.random_range(2..4),
        };
        let t = rng.random_range(1..6);
        let m = random_model(&mut rng, dims, 0.8);
        let xs: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..dims.input).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let weights: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
        let label = rng.random_range(0..dims.outputs);
        let feats: Vec<FeatureVector> = xs.iter().cloned().map(FeatureVector).collect();
        let pass = m.forward(&feats).unwrap();
        let grad = lstm_backward(&m, &pass.traces, ActionLabel(label), &weights, 0.0, t).unwrap();
        let err = max_fd_error(&m, &grad, 1e-6, 1e-4, |p| full_loss(p, &xs, label, &weights));
        worst = worst.max(err);
    }
    worst
}

/// Max absolute disagreement between `LstmModel::step` and the scalar
/// re-implementation over `instances` random draws.
pub fn equation_sweep(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dims = LstmDims {
            input: rng.random_range(1..6),
            cells: rng.random_range(1..6),
            projection: rng.random_range(1..5),
            outputs: rng.random_range(1..5),
        };
        let m = random_model(&mut rng, dims, 1.0);
        let x: Vec<f64> = (0..dims.input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..dims.cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..dims.projection).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prev = LstmState {
            c: c.clone().into(),
            r: r.clone().into(),
        };
        let (next, y, _) = m.step(&x, &prev).unwrap();
        let (c2, r2, y2) = lstm_step_scalar(&m, &x, &c, &r);
        for (a, b) in y
            .iter()
            .zip(&y2)
            .chain(next.c.iter().zip(&c2))
            .chain(next.r.iter().zip(&r2))
        {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Number of draws (of `draws`) where `temporal_nms` disagrees with the
/// exhaustive reference. Sizes 1..=6; scores come from a coarse grid so ties
/// are common.
pub fn nms_sweep(draws: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..draws {
        let n = rng.random_range(1..=6);
        let items: Vec<(Interval, f64)> = (0..n)
            .map(|_| {
                let start = rng.random_range(0..12);
                let len = rng.random_range(1..8);
                let score = rng.random_range(0..5) as f64 / 4.0;
                (
                    Interval {
                        start,
                        end: start + len,
                    },
                    score,
                )
            })
            .collect();
        let thr = [0.0, 0.1, 0.3, 0.5, 0.7][rng.random_range(0..5)];
        let dets: Vec<Detection> = items
            .iter()
            .map(|(interval, score)| Detection {
                video_id: "v".into(),
                interval: *interval,
                label: ActionLabel(0),
                score: *score,
            })
            .collect();
        let got: Vec<(Interval, f64)> = temporal_nms(dets, thr).iter().map(|d| (d.interval, d.score)).collect();
        let want: Vec<(Interval, f64)> = nms_bruteforce(&items, thr).iter().map(|&i| items[i]).collect();
        if got != want {
            mismatches += 1;
        }
    }
    mismatches
}

/// Compares `average_precision` (and `mean_ap` on a single label) with the
/// reference on every instance of the family: two videos, intervals inside
/// [0, 3), scores in {0.3, 0.7}, 0..=3 ordered detections, 1..=2 ground-truth
/// segments, and several overlap ratios. Returns (instances, max error).
pub fn ap_family_sweep() -> (usize, f64) {
    let mut spans = Vec::new();
    for s in 0..3 {
        for e in s + 1..=3 {
            spans.push(Interval { start: s, end: e });
        }
    }
    let mut atoms = Vec::new();
    for v in 0..2usize {
        for span in &spans {
            atoms.push((v, *span));
        }
    }
    let det_atoms: Vec<(usize, Interval, f64)> = atoms
        .iter()
        .flat_map(|&(v, i)| [0.3, 0.7].map(move |s| (v, i, s)))
        .collect();

    let mut det_sets: Vec<Vec<(usize, Interval, f64)>> = vec![vec![]];
    for len in 1..=3 {
        let mut idx = vec![0usize; len];
        loop {
            det_sets.push(idx.iter().map(|&i| det_atoms[i]).collect());
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < det_atoms.len() {
                    break;
                }
                idx[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    let mut gt_sets: Vec<Vec<(usize, Interval)>> = atoms.iter().map(|a| vec![*a]).collect();
    for a in &atoms {
        for b in &atoms {
            gt_sets.push(vec![*a, *b]);
        }
    }

    let name = |v: usize| format!("v{v}");
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for gts in &gt_sets {
        let mut truth: HashMap<String, Vec<Interval>> = HashMap::new();
        for (v, i) in gts {
            truth.entry(name(*v)).or_default().push(*i);
        }
        let mut by_label = GroundTruth::new();
        by_label.insert(ActionLabel(0), truth.clone());
        for dets in &det_sets {
            let detections: Vec<Detection> = dets
                .iter()
                .map(|(v, i, s)| Detection {
                    video_id: name(*v),
                    interval: *i,
                    label: ActionLabel(0),
                    score: *s,
                })
                .collect();
            for r in [0.1, 0.5, 0.6, 1.0] {
                let want = ap_bruteforce(dets, gts, r);
                let got = average_precision(&detections, &truth, r, false).unwrap();
                let (mean, _) = mean_ap(&detections, &by_label, r, false).unwrap();
                worst = worst.max((got - want).abs()).max((mean - want).abs());
                count += 1;
            }
        }
    }
    (count, worst)
}
