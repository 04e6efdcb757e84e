use ndarray::{Array1, ArrayView1, Zip};

use super::{GateParams, LstmModel};
use crate::corpus::{ActionLabel, FeatureVector};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softmax, softmax_open};

/// Cell activation and projected recurrent activation carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Array1<f64>,
    pub r: Array1<f64>,
}

impl LstmState {
    pub fn zeros(model: &LstmModel) -> Self {
        LstmState {
            c: Array1::zeros(model.dims.cells),
            r: Array1::zeros(model.dims.projection),
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub x: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub r_prev: Array1<f64>,
    pub input_gate: Array1<f64>,
    pub forget_gate: Array1<f64>,
    /// tanh of the cell-input pre-activation.
    pub cell_candidate: Array1<f64>,
    pub output_gate: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub m: Array1<f64>,
    pub r: Array1<f64>,
    /// Output logits.
    pub y: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Array1<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub traces: Vec<StepTrace>,
}

fn gate_preactivation(g: &GateParams, x: &ArrayView1<f64>, r_prev: &Array1<f64>) -> Array1<f64> {
    g.from_input.dot(x) + g.from_recurrent.dot(r_prev) + &g.bias
}

impl LstmModel {
    /// One step from `prev`. Returns the next state, the output logits and the
    /// trace for backpropagation.
    pub fn step(&self, x: &[f64], prev: &LstmState) -> Result<(LstmState, Array1<f64>, StepTrace)> {
        let d = self.dims;
        if x.len() != d.input {
            return Err(Error::DimensionMismatch {
                expected: d.input,
                actual: x.len(),
            });
        }
        if prev.c.len() != d.cells {
            return Err(Error::DimensionMismatch {
                expected: d.cells,
                actual: prev.c.len(),
            });
        }
        if prev.r.len() != d.projection {
            return Err(Error::DimensionMismatch {
                expected: d.projection,
                actual: prev.r.len(),
            });
        }
        let xv = ArrayView1::from(x);

        let mut i = gate_preactivation(&self.input_gate, &xv, &prev.r);
        i += &(&self.peephole_input * &prev.c);
        i.mapv_inplace(sigmoid);

        let mut f = gate_preactivation(&self.forget_gate, &xv, &prev.r);
        f += &(&self.peephole_forget * &prev.c);
        f.mapv_inplace(sigmoid);

        let mut g = gate_preactivation(&self.cell_input, &xv, &prev.r);
        g.mapv_inplace(f64::tanh);

        let c = &f * &prev.c + &i * &g;

        let mut o = gate_preactivation(&self.output_gate, &xv, &prev.r);
        o += &(&self.peephole_output * &c);
        o.mapv_inplace(sigmoid);

        let tanh_c = c.mapv(f64::tanh);
        let m = &o * &tanh_c;
        let r = self.projection.dot(&m);
        let y = self.output.dot(&r) + &self.output_bias;

        let trace = StepTrace {
            x: xv.to_owned(),
            c_prev: prev.c.clone(),
            r_prev: prev.r.clone(),
            input_gate: i,
            forget_gate: f,
            cell_candidate: g,
            output_gate: o,
            c: c.clone(),
            tanh_c,
            m,
            r: r.clone(),
            y: y.clone(),
        };
        Ok((LstmState { c, r }, y, trace))
    }

    /// Runs the sequence from a zero state.
    pub fn forward(&self, frames: &[FeatureVector]) -> Result<ForwardPass> {
        if frames.is_empty() {
            return Err(Error::Empty("LSTM input sequence"));
        }
        let mut state = LstmState::zeros(self);
        let mut pass = ForwardPass {
            logits: Vec::with_capacity(frames.len()),
            probs: Vec::with_capacity(frames.len()),
            traces: Vec::with_capacity(frames.len()),
        };
        for x in frames {
            let (next, y, trace) = self.step(x, &state)?;
            pass.probs.push(softmax_open(y.as_slice().expect("contiguous")));
            pass.logits.push(y);
            pass.traces.push(trace);
            state = next;
        }
        Ok(pass)
    }
}

fn effective_weight(w: f64, floor: f64) -> f64 {
    w.max(floor)
}

/// `sum_t max(w_t, floor) * -ln p_t[label]`. Steps whose effective weight is
/// zero contribute nothing regardless of their probabilities.
pub fn weighted_sequence_loss(
    probs: &[Vec<f64>],
    label: ActionLabel,
    weights: &[f64],
    weight_floor: f64,
) -> Result<f64> {
    if probs.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            actual: weights.len(),
        });
    }
    let mut loss = 0.0;
    for (p, &w) in probs.iter().zip(weights) {
        if w < 0.0 {
            return Err(Error::validation("loss weights", format!("negative weight {w}")));
        }
        let Some(&pa) = p.get(label.0) else {
            return Err(Error::LabelOutOfRange {
                label: label.0,
                num_labels: p.len(),
            });
        };
        let w = effective_weight(w, weight_floor);
        if w > 0.0 {
            loss -= w * pa.ln();
        }
    }
    Ok(loss)
}

/// Gate pre-activation errors and carries produced by backpropagating one step.
struct StepDelta {
    d_input: Array1<f64>,
    d_forget: Array1<f64>,
    d_cell: Array1<f64>,
    d_output: Array1<f64>,
    dr_prev: Array1<f64>,
    dc_prev: Array1<f64>,
}

/// Backpropagates `dr` (error on r_t) and `dc_next` (error on c_t arriving from
/// step t+1) through step t.
fn backprop_step(model: &LstmModel, tr: &StepTrace, dr: &Array1<f64>, dc_next: &Array1<f64>) -> StepDelta {
    let dm = model.projection.t().dot(dr);

    let mut d_output = &dm * &tr.tanh_c;
    Zip::from(&mut d_output)
        .and(&tr.output_gate)
        .for_each(|d, &o| *d *= o * (1.0 - o));

    let mut dc = dc_next.clone();
    Zip::from(&mut dc)
        .and(&dm)
        .and(&tr.output_gate)
        .and(&tr.tanh_c)
        .for_each(|dc, &dm, &o, &th| *dc += dm * o * (1.0 - th * th));
    dc += &(&d_output * &model.peephole_output);

    let mut d_input = &dc * &tr.cell_candidate;
    Zip::from(&mut d_input)
        .and(&tr.input_gate)
        .for_each(|d, &i| *d *= i * (1.0 - i));
    let mut d_forget = &dc * &tr.c_prev;
    Zip::from(&mut d_forget)
        .and(&tr.forget_gate)
        .for_each(|d, &f| *d *= f * (1.0 - f));
    let mut d_cell = &dc * &tr.input_gate;
    Zip::from(&mut d_cell)
        .and(&tr.cell_candidate)
        .for_each(|d, &g| *d *= 1.0 - g * g);

    let dc_prev = &dc * &tr.forget_gate + &d_input * &model.peephole_input + &d_forget * &model.peephole_forget;
    let dr_prev = model.input_gate.from_recurrent.t().dot(&d_input)
        + model.forget_gate.from_recurrent.t().dot(&d_forget)
        + model.cell_input.from_recurrent.t().dot(&d_cell)
        + model.output_gate.from_recurrent.t().dot(&d_output);

    StepDelta {
        d_input,
        d_forget,
        d_cell,
        d_output,
        dr_prev,
        dc_prev,
    }
}

/// Per-step sums of every error that reached that step.
struct StepAccumulator {
    d_input: Array1<f64>,
    d_forget: Array1<f64>,
    d_cell: Array1<f64>,
    d_output: Array1<f64>,
    dr: Array1<f64>,
}

impl StepAccumulator {
    fn zeros(model: &LstmModel) -> Self {
        let n = model.dims.cells;
        StepAccumulator {
            d_input: Array1::zeros(n),
            d_forget: Array1::zeros(n),
            d_cell: Array1::zeros(n),
            d_output: Array1::zeros(n),
            dr: Array1::zeros(model.dims.projection),
        }
    }

    fn add(&mut self, delta: &StepDelta, dr: &Array1<f64>) {
        self.d_input += &delta.d_input;
        self.d_forget += &delta.d_forget;
        self.d_cell += &delta.d_cell;
        self.d_output += &delta.d_output;
        self.dr += dr;
    }
}

fn add_outer(dst: &mut ndarray::Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    for (mut dst_row, &c) in dst.rows_mut().into_iter().zip(col) {
        if c != 0.0 {
            dst_row.scaled_add(c, row);
        }
    }
}

fn accumulate_gate(grad: &mut GateParams, delta: &Array1<f64>, tr: &StepTrace) {
    add_outer(&mut grad.from_input, delta, &tr.x);
    add_outer(&mut grad.from_recurrent, delta, &tr.r_prev);
    grad.bias += delta;
}

/// Gradient of [`weighted_sequence_loss`] with respect to every parameter.
///
/// The error injected at step `t` flows back through the recurrence only as
/// far as step `max(0, t - unroll_k + 1)`; the forward state itself is carried
/// across those boundaries untouched. With `unroll_k >= T` this is full BPTT.
pub fn lstm_backward(
    model: &LstmModel,
    traces: &[StepTrace],
    label: ActionLabel,
    weights: &[f64],
    weight_floor: f64,
    unroll_k: usize,
) -> Result<LstmModel> {
    let steps = traces.len();
    if weights.len() != steps {
        return Err(Error::DimensionMismatch {
            expected: steps,
            actual: weights.len(),
        });
    }
    if label.0 >= model.dims.outputs {
        return Err(Error::LabelOutOfRange {
            label: label.0,
            num_labels: model.dims.outputs,
        });
    }
    if unroll_k == 0 {
        return Err(Error::Config("unroll_k must be >= 1".into()));
    }

    // Output-layer errors: dL/dy_t = w_t * (softmax(y_t) - onehot(label)).
    let dy: Vec<Option<Array1<f64>>> = traces
        .iter()
        .zip(weights)
        .map(|(tr, &w)| {
            let w = effective_weight(w, weight_floor);
            (w > 0.0).then(|| {
                let mut p = softmax(tr.y.as_slice().expect("contiguous"));
                p[label.0] -= 1.0;
                Array1::from(p) * w
            })
        })
        .collect();
    let dr_from_output = |t: usize| -> Option<Array1<f64>> { dy[t].as_ref().map(|d| model.output.t().dot(d)) };

    let mut acc: Vec<StepAccumulator> = (0..steps).map(|_| StepAccumulator::zeros(model)).collect();
    let zero_c = Array1::<f64>::zeros(model.dims.cells);

    if unroll_k >= steps {
        let mut dr_carry = Array1::<f64>::zeros(model.dims.projection);
        let mut dc_carry = zero_c.clone();
        for t in (0..steps).rev() {
            let dr = match dr_from_output(t) {
                Some(d) => d + &dr_carry,
                None => dr_carry.clone(),
            };
            let delta = backprop_step(model, &traces[t], &dr, &dc_carry);
            acc[t].add(&delta, &dr);
            dr_carry = delta.dr_prev;
            dc_carry = delta.dc_prev;
        }
    } else {
        for source in 0..steps {
            let Some(mut dr) = dr_from_output(source) else { continue };
            let mut dc = zero_c.clone();
            let stop = (source + 1).saturating_sub(unroll_k);
            for t in (stop..=source).rev() {
                let delta = backprop_step(model, &traces[t], &dr, &dc);
                acc[t].add(&delta, &dr);
                dr = delta.dr_prev;
                dc = delta.dc_prev;
            }
        }
    }

    let mut grad = LstmModel::zeros(model.dims);
    for ((tr, a), dy) in traces.iter().zip(&acc).zip(&dy) {
        if let Some(dy) = dy {
            add_outer(&mut grad.output, dy, &tr.r);
            grad.output_bias += dy;
        }
        add_outer(&mut grad.projection, &a.dr, &tr.m);
        accumulate_gate(&mut grad.input_gate, &a.d_input, tr);
        accumulate_gate(&mut grad.forget_gate, &a.d_forget, tr);
        accumulate_gate(&mut grad.cell_input, &a.d_cell, tr);
        accumulate_gate(&mut grad.output_gate, &a.d_output, tr);
        grad.peephole_input += &(&a.d_input * &tr.c_prev);
        grad.peephole_forget += &(&a.d_forget * &tr.c_prev);
        grad.peephole_output += &(&a.d_output * &tr.c);
    }
    Ok(grad)
}
