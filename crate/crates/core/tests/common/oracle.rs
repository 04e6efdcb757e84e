//! Test-only reference implementations, written independently of the crate's
//! code paths (plain loops over scalars, brute-force enumeration).

#![allow(dead_code, clippy::needless_range_loop)]

use laf_core::lstm::{LstmDims, LstmModel};
use laf_core::Interval;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Straight-line LSTM step over scalars. Returns (c, r, y).
pub fn lstm_step_scalar(m: &LstmModel, x: &[f64], c_prev: &[f64], r_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let LstmDims {
        input,
        cells,
        projection,
        outputs,
    } = m.dims;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut c = vec![0.0; cells];
    let mut mvec = vec![0.0; cells];
    for j in 0..cells {
        let mut ai = m.input_gate.bias[j] + m.peephole_input[j] * c_prev[j];
        let mut af = m.forget_gate.bias[j] + m.peephole_forget[j] * c_prev[j];
        let mut ag = m.cell_input.bias[j];
        let mut ao = m.output_gate.bias[j];
        for k in 0..input {
            ai += m.input_gate.from_input[[j, k]] * x[k];
            af += m.forget_gate.from_input[[j, k]] * x[k];
            ag += m.cell_input.from_input[[j, k]] * x[k];
            ao += m.output_gate.from_input[[j, k]] * x[k];
        }
        for k in 0..projection {
            ai += m.input_gate.from_recurrent[[j, k]] * r_prev[k];
            af += m.forget_gate.from_recurrent[[j, k]] * r_prev[k];
            ag += m.cell_input.from_recurrent[[j, k]] * r_prev[k];
            ao += m.output_gate.from_recurrent[[j, k]] * r_prev[k];
        }
        let i = sig(ai);
        let f = sig(af);
        c[j] = f * c_prev[j] + i * ag.tanh();
        let o = sig(ao + m.peephole_output[j] * c[j]);
        mvec[j] = o * c[j].tanh();
    }
    let mut r = vec![0.0; projection];
    for p in 0..projection {
        for j in 0..cells {
            r[p] += m.projection[[p, j]] * mvec[j];
        }
    }
    let mut y = vec![0.0; outputs];
    for n in 0..outputs {
        y[n] = m.output_bias[n];
        for p in 0..projection {
            y[n] += m.output[[n, p]] * r[p];
        }
    }
    (c, r, y)
}

/// `-ln softmax(y)[label]` via log-sum-exp.
pub fn neg_log_prob(y: &[f64], label: usize) -> f64 {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - y[label]
}

/// States (c, r) entering each step, starting from zero.
pub fn states_entering(m: &LstmModel, frames: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut c = vec![0.0; m.dims.cells];
    let mut r = vec![0.0; m.dims.projection];
    let mut out = Vec::new();
    for x in frames {
        out.push((c.clone(), r.clone()));
        let (c2, r2, _) = lstm_step_scalar(m, x, &c, &r);
        c = c2;
        r = r2;
    }
    out
}

/// Loss whose exact gradient equals truncated BPTT with window `k`: the
/// term for step `t` replays steps `max(0, t-k+1)..=t` from the state frozen
/// at `frozen` (computed once with the unperturbed model).
pub fn surrogate_loss(
    m: &LstmModel,
    frames: &[Vec<f64>],
    label: usize,
    weights: &[f64],
    k: usize,
    frozen: &[(Vec<f64>, Vec<f64>)],
) -> f64 {
    let mut total = 0.0;
    for t in 0..frames.len() {
        if weights[t] == 0.0 {
            continue;
        }
        let start = (t + 1).saturating_sub(k);
        let (mut c, mut r) = frozen[start].clone();
        let mut y = Vec::new();
        for x in &frames[start..=t] {
            let (c2, r2, y2) = lstm_step_scalar(m, x, &c, &r);
            c = c2;
            r = r2;
            y = y2;
        }
        total += weights[t] * neg_log_prob(&y, label);
    }
    total
}

/// Full-sequence loss from the scalar oracle.
pub fn full_loss(m: &LstmModel, frames: &[Vec<f64>], label: usize, weights: &[f64]) -> f64 {
    let frozen = states_entering(m, frames);
    surrogate_loss(m, frames, label, weights, frames.len(), &frozen)
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: LstmDims, scale: f64) -> LstmModel {
    let mut m = LstmModel::zeros(dims);
    for (_, t) in m.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    m
}

/// Max relative error between `analytic` and central differences of `loss`
/// (step `h`) over every parameter. Magnitudes below `floor` are compared
/// absolutely against `floor`.
pub fn max_fd_error<F>(model: &LstmModel, analytic: &LstmModel, h: f64, floor: f64, loss: F) -> f64
where
    F: Fn(&LstmModel) -> f64,
{
    let mut worst: f64 = 0.0;
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    for (ti, g) in grads.iter().enumerate() {
        for (j, &an) in g.iter().enumerate() {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].1[j] += h;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].1[j] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Greedy-NMS reference by exhaustive subset search: the kept set is the
/// unique subset K where a detection is in K exactly when no higher-priority
/// member of K overlaps it by more than `thr`.
pub fn nms_bruteforce(items: &[(Interval, f64)], thr: f64) -> Vec<usize> {
    let n = items.len();
    let iou = |a: &Interval, b: &Interval| {
        let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start)) as f64;
        let union = (a.end - a.start + b.end - b.start) as f64 - inter;
        inter / union
    };
    // priority: higher score, then earlier start, then longer window, then input order
    let before = |i: usize, j: usize| {
        let (a, sa) = items[i];
        let (b, sb) = items[j];
        if sa != sb {
            return sa > sb;
        }
        if a.start != b.start {
            return a.start < b.start;
        }
        if a.end != b.end {
            return a.end > b.end;
        }
        i < j
    };
    let mut found: Option<Vec<usize>> = None;
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let ok = (0..n).all(|d| {
            let blocked = (0..n).any(|e| e != d && inside(e) && before(e, d) && iou(&items[e].0, &items[d].0) > thr);
            inside(d) != blocked
        });
        if ok {
            assert!(found.is_none(), "fixed point must be unique");
            let mut kept: Vec<usize> = (0..n).filter(|&i| inside(i)).collect();
            kept.sort_by(|&a, &b| {
                if before(a, b) {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Greater
                }
            });
            found = Some(kept);
        }
    }
    found.expect("a greedy fixed point always exists")
}

/// AP reference: sorts by (score desc, video asc, start asc), matches each
/// detection to the best-IoU unmatched ground truth above `r` (exact matches
/// always count), and integrates precision over recall increments.
pub fn ap_bruteforce(dets: &[(usize, Interval, f64)], gts: &[(usize, Interval)], r: f64) -> f64 {
    let iou = |a: &Interval, b: &Interval| {
        let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start)) as f64;
        let union = (a.end - a.start + b.end - b.start) as f64 - inter;
        inter / union
    };
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (va, ia, sa) = dets[a];
        let (vb, ib, sb) = dets[b];
        sb.partial_cmp(&sa)
            .unwrap()
            .then(va.cmp(&vb))
            .then(ia.start.cmp(&ib.start))
    });
    let mut used = vec![false; gts.len()];
    let mut tp_flags = Vec::new();
    for &d in &order {
        let (v, iv, _) = dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, (gv, giv)) in gts.iter().enumerate() {
            if *gv != v || used[g] {
                continue;
            }
            let o = iou(&iv, giv);
            if (o > r || o >= 1.0) && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            tp_flags.push(true);
        } else {
            tp_flags.push(false);
        }
    }
    let n_gt = gts.len() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut tp = 0.0;
    for (rank, is_tp) in tp_flags.iter().enumerate() {
        if *is_tp {
            tp += 1.0;
        }
        let precision = tp / (rank as f64 + 1.0);
        let recall = tp / n_gt;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}
