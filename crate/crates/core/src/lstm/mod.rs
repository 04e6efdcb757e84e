//! LSTM with peephole connections and a recurrent projection layer.
//!
//! Per step, with `r` the projected recurrent state and `c` the cell state:
//!
//! ```text
//! i_t = sigmoid(W_ix x_t + W_ir r_{t-1} + w_ic * c_{t-1} + b_i)
//! f_t = sigmoid(W_fx x_t + W_fr r_{t-1} + w_fc * c_{t-1} + b_f)
//! c_t = f_t * c_{t-1} + i_t * tanh(W_cx x_t + W_cr r_{t-1} + b_c)
//! o_t = sigmoid(W_ox x_t + W_or r_{t-1} + w_oc * c_t + b_o)
//! m_t = o_t * tanh(c_t)
//! r_t = W_rm m_t
//! y_t = W_yr r_t + b_y
//! ```
//!
//! Peepholes (`w_ic`, `w_fc`, `w_oc`) are diagonal, applied elementwise.

mod cell;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_f64s, encode_f64s};
use crate::error::{Error, Result};
use crate::io::write_json;

pub use cell::{lstm_backward, weighted_sequence_loss, ForwardPass, LstmState, StepTrace};
pub use train::{train_lstm, LstmTrainConfig, TrainReport};

pub const LSTM_FORMAT: &str = "laf-lstm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmDims {
    /// Feature dimension of each step.
    pub input: usize,
    pub cells: usize,
    /// Width of the projected recurrent state.
    pub projection: usize,
    /// Number of action labels.
    pub outputs: usize,
}

/// Input, recurrent and bias parameters feeding one gate (or the cell input).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `cells x input`
    pub from_input: Array2<f64>,
    /// `cells x projection`
    pub from_recurrent: Array2<f64>,
    pub bias: Array1<f64>,
}

impl GateParams {
    fn zeros(dims: &LstmDims) -> Self {
        GateParams {
            from_input: Array2::zeros((dims.cells, dims.input)),
            from_recurrent: Array2::zeros((dims.cells, dims.projection)),
            bias: Array1::zeros(dims.cells),
        }
    }
}

/// All trainable tensors. The same struct doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub dims: LstmDims,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub cell_input: GateParams,
    pub output_gate: GateParams,
    pub peephole_input: Array1<f64>,
    pub peephole_forget: Array1<f64>,
    pub peephole_output: Array1<f64>,
    /// `projection x cells`
    pub projection: Array2<f64>,
    /// `outputs x projection`
    pub output: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl LstmModel {
    pub fn zeros(dims: LstmDims) -> Self {
        LstmModel {
            dims,
            input_gate: GateParams::zeros(&dims),
            forget_gate: GateParams::zeros(&dims),
            cell_input: GateParams::zeros(&dims),
            output_gate: GateParams::zeros(&dims),
            peephole_input: Array1::zeros(dims.cells),
            peephole_forget: Array1::zeros(dims.cells),
            peephole_output: Array1::zeros(dims.cells),
            projection: Array2::zeros((dims.projection, dims.cells)),
            output: Array2::zeros((dims.outputs, dims.projection)),
            output_bias: Array1::zeros(dims.outputs),
        }
    }

    /// Uniform `[-scale, scale]` weights, zero biases except a forget-gate
    /// bias of 1.
    pub fn random<R: Rng>(dims: LstmDims, scale: f64, rng: &mut R) -> Self {
        let mut model = LstmModel::zeros(dims);
        for (name, t) in model.tensors_mut() {
            if !name.starts_with("b_") {
                for v in t.iter_mut() {
                    *v = rng.random_range(-scale..=scale);
                }
            }
        }
        model.forget_gate.bias.fill(1.0);
        model
    }

    pub fn validate_dims(dims: &LstmDims) -> Result<()> {
        if dims.input == 0 || dims.cells == 0 || dims.projection == 0 || dims.outputs == 0 {
            return Err(Error::Config(format!("LSTM dimensions must be positive: {dims:?}")));
        }
        Ok(())
    }

    /// Every parameter tensor as a flat row-major slice, with its checkpoint
    /// name. The output layer weights and bias are listed separately as
    /// `w_yr` and `b_y`.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 18] {
        fn s<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            ("w_ix", s(&self.input_gate.from_input)),
            ("w_ir", s(&self.input_gate.from_recurrent)),
            ("b_i", s(&self.input_gate.bias)),
            ("w_fx", s(&self.forget_gate.from_input)),
            ("w_fr", s(&self.forget_gate.from_recurrent)),
            ("b_f", s(&self.forget_gate.bias)),
            ("w_cx", s(&self.cell_input.from_input)),
            ("w_cr", s(&self.cell_input.from_recurrent)),
            ("b_c", s(&self.cell_input.bias)),
            ("w_ox", s(&self.output_gate.from_input)),
            ("w_or", s(&self.output_gate.from_recurrent)),
            ("b_o", s(&self.output_gate.bias)),
            ("w_ic", s(&self.peephole_input)),
            ("w_fc", s(&self.peephole_forget)),
            ("w_oc", s(&self.peephole_output)),
            ("w_rm", s(&self.projection)),
            ("w_yr", s(&self.output)),
            ("b_y", s(&self.output_bias)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 18] {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        [
            ("w_ix", s(&mut self.input_gate.from_input)),
            ("w_ir", s(&mut self.input_gate.from_recurrent)),
            ("b_i", s(&mut self.input_gate.bias)),
            ("w_fx", s(&mut self.forget_gate.from_input)),
            ("w_fr", s(&mut self.forget_gate.from_recurrent)),
            ("b_f", s(&mut self.forget_gate.bias)),
            ("w_cx", s(&mut self.cell_input.from_input)),
            ("w_cr", s(&mut self.cell_input.from_recurrent)),
            ("b_c", s(&mut self.cell_input.bias)),
            ("w_ox", s(&mut self.output_gate.from_input)),
            ("w_or", s(&mut self.output_gate.from_recurrent)),
            ("b_o", s(&mut self.output_gate.bias)),
            ("w_ic", s(&mut self.peephole_input)),
            ("w_fc", s(&mut self.peephole_forget)),
            ("w_oc", s(&mut self.peephole_output)),
            ("w_rm", s(&mut self.projection)),
            ("w_yr", s(&mut self.output)),
            ("b_y", s(&mut self.output_bias)),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &LstmModel) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn to_bits(&self) -> Vec<u64> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn to_checkpoint(&self) -> LstmCheckpoint {
        let tensors = self
            .tensors()
            .iter()
            .map(|(name, t)| (name.to_string(), encode_f64s(t)))
            .collect();
        LstmCheckpoint {
            format: LSTM_FORMAT.to_string(),
            version: 1,
            dims: self.dims,
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &LstmCheckpoint) -> Result<Self> {
        let bad = |m: String| Error::validation("LSTM checkpoint", m);
        if ckpt.format != LSTM_FORMAT || ckpt.version != 1 {
            return Err(bad(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        Self::validate_dims(&ckpt.dims)?;
        let mut model = LstmModel::zeros(ckpt.dims);
        for (name, dst) in model.tensors_mut() {
            let text = ckpt
                .tensors
                .get(name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let values = decode_f64s(text).map_err(|m| bad(format!("{name}: {m}")))?;
            if values.len() != dst.len() {
                return Err(bad(format!(
                    "{name} has {} values, expected {}",
                    values.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&values);
        }
        if let Some(extra) = ckpt
            .tensors
            .keys()
            .find(|k| !model.tensors().iter().any(|(n, _)| n == k))
        {
            return Err(bad(format!("unknown tensor {extra}")));
        }
        if !model.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: LstmCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        LstmModel::from_checkpoint(&ckpt)
    }
}

/// On-disk form: `{"format":"laf-lstm","version":1,"dims":{...},"w_ix":"<base64>",...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCheckpoint {
    pub format: String,
    pub version: u32,
    pub dims: LstmDims,
    #[serde(flatten)]
    pub tensors: std::collections::BTreeMap<String, String>,
}
