//! Small numeric helpers shared by the classifier and the LSTM.

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Softmax clamped into the open interval (0, 1).
///
/// Logit gaps beyond ~745 underflow `exp`; the clamp keeps every output a
/// valid strictly-positive probability without moving the sum by more than
/// a few ulps.
pub fn softmax_open(logits: &[f64]) -> Vec<f64> {
    let mut p = softmax(logits);
    let below_one = 1.0 - f64::EPSILON / 2.0;
    for v in &mut p {
        *v = v.clamp(f64::MIN_POSITIVE, below_one);
    }
    p
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Arithmetic mean of equal-length vectors, summed in index order.
pub fn mean_vectors<'a, I>(rows: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    acc
}
