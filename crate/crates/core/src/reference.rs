//! Double-precision oracle and the engine-versus-oracle comparator.
//!
//! The oracle follows the engine's conventions exactly (gate order, update
//! rules, batch restarts, streaming carry-over) but keeps every value in
//! f64 and never clips the LSTM cell.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{self, ActivationKind};
use crate::engine::{EngineConfig, EngineError, Session};
use crate::fxp;
use crate::loadable::CompiledModel;
use crate::model::{per_step_prefix, ExecMode, FloatLayer, FloatModel, LayerKind};

pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("layer {layer}: non-finite intermediate value")]
    NonFinite { layer: usize },
    #[error("input of {len} values is not a multiple of {multiple}")]
    InputLength { len: usize, multiple: usize },
    #[error("layer {layer}: initial state of {got} values, expected {expected}")]
    StateShape { layer: usize, expected: usize, got: usize },
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ReferenceError {
    pub fn code(&self) -> &'static str {
        match self {
            ReferenceError::NonFinite { .. } => "E_NON_FINITE",
            ReferenceError::InputLength { .. } => "E_DIM_MISMATCH",
            ReferenceError::StateShape { .. } => "E_STATE_SHAPE",
            ReferenceError::Topology(_) => "E_TOPOLOGY",
            ReferenceError::Engine(e) => e.code(),
        }
    }
}

/// Real-valued recurrent state of one layer; empty for FC layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// One output per inference, with the engine's batching rules.
    pub outputs: Vec<Vec<f64>>,
    /// Per-layer outputs in execution order.
    pub trace: Vec<Vec<Vec<f64>>>,
    pub final_state: Vec<RealState>,
}

fn matvec(weights: &[f64], bias: &[f64], invec: &[f64]) -> Vec<f64> {
    let cols = invec.len();
    bias.iter()
        .enumerate()
        .map(|(r, &b)| b + weights[r * cols..(r + 1) * cols].iter().zip(invec).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

fn gate(layer: &FloatLayer, g: usize, invec: &[f64], kind: ActivationKind) -> Vec<f64> {
    let gate = &layer.gates[g];
    matvec(&gate.weights, &gate.bias, invec).into_iter().map(|v| activation::real(kind, v)).collect()
}

fn concat(x: &[f64], h: &[f64]) -> Vec<f64> {
    x.iter().chain(h).copied().collect()
}

/// Advance one layer by one step; returns the layer output.
pub fn step_layer(layer: &FloatLayer, x: &[f64], state: &mut RealState) -> Vec<f64> {
    match layer.shape.kind {
        LayerKind::Fc => gate(layer, 0, x, layer.shape.activation),
        LayerKind::Gru => {
            let xh = concat(x, &state.h);
            let z = gate(layer, 0, &xh, ActivationKind::Sigmoid);
            let r = gate(layer, 1, &xh, ActivationKind::Sigmoid);
            let rh: Vec<f64> = r.iter().zip(&state.h).map(|(r, h)| r * h).collect();
            let cand = gate(layer, 2, &concat(x, &rh), ActivationKind::Tanh);
            for ((h, z), c) in state.h.iter_mut().zip(&z).zip(&cand) {
                *h = (1.0 - z) * c + z * *h;
            }
            state.h.clone()
        }
        LayerKind::Lstm => {
            let xh = concat(x, &state.h);
            let i = gate(layer, 0, &xh, ActivationKind::Sigmoid);
            let f = gate(layer, 1, &xh, ActivationKind::Sigmoid);
            let g = gate(layer, 2, &xh, ActivationKind::Tanh);
            let o = gate(layer, 3, &xh, ActivationKind::Sigmoid);
            for k in 0..state.h.len() {
                state.c[k] = f[k] * state.c[k] + i[k] * g[k];
                state.h[k] = o[k] * state.c[k].tanh();
            }
            state.h.clone()
        }
    }
}

pub fn zero_state(model: &FloatModel) -> Vec<RealState> {
    model
        .layers
        .iter()
        .map(|l| match l.shape.kind {
            LayerKind::Fc => RealState::default(),
            LayerKind::Gru => RealState { h: vec![0.0; l.shape.output_dim], c: Vec::new() },
            LayerKind::Lstm => RealState { h: vec![0.0; l.shape.output_dim], c: vec![0.0; l.shape.output_dim] },
        })
        .collect()
}

/// Forward pass over a flat real input from the zero state.
pub fn forward(model: &FloatModel, input: &[f64]) -> Result<Forward, ReferenceError> {
    forward_from(model, input, &zero_state(model))
}

/// Forward pass from an explicit initial state (batch sequences restart from it).
pub fn forward_from(model: &FloatModel, input: &[f64], initial: &[RealState]) -> Result<Forward, ReferenceError> {
    let zero = zero_state(model);
    for (layer, (want, got)) in zero.iter().zip(initial).enumerate() {
        for (e, g) in [(want.h.len(), got.h.len()), (want.c.len(), got.c.len())] {
            if e != g {
                return Err(ReferenceError::StateShape { layer, expected: e, got: g });
            }
        }
    }
    if initial.len() != zero.len() {
        return Err(ReferenceError::StateShape { layer: initial.len(), expected: zero.len(), got: initial.len() });
    }
    let dim = model.input_dim();
    let n = model.layers.len();
    let prefix = per_step_prefix(&model.shapes());
    let recurrent = model.layers.iter().any(|l| l.shape.kind.is_recurrent());
    let batch = recurrent && model.exec_mode == ExecMode::Batch;
    let multiple = if batch { dim * model.seq_len } else { dim };
    if input.is_empty() || !input.len().is_multiple_of(multiple) {
        return Err(ReferenceError::InputLength { len: input.len(), multiple });
    }

    let mut state = initial.to_vec();
    let mut trace = vec![Vec::new(); n];
    let mut outputs = Vec::new();
    let mut run = |range: std::ops::Range<usize>, mut x: Vec<f64>, state: &mut Vec<RealState>| {
        for li in range {
            x = step_layer(&model.layers[li], &x, &mut state[li]);
            if x.iter().chain(&state[li].c).any(|v| !v.is_finite()) {
                return Err(ReferenceError::NonFinite { layer: li });
            }
            trace[li].push(x.clone());
        }
        Ok(x)
    };
    for chunk in input.chunks(multiple) {
        if batch {
            state = initial.to_vec();
            let mut h = Vec::new();
            for step in chunk.chunks(dim) {
                h = run(0..prefix, step.to_vec(), &mut state)?;
            }
            outputs.push(run(prefix..n, h, &mut state)?);
        } else {
            outputs.push(run(0..n, chunk.to_vec(), &mut state)?);
        }
    }
    Ok(Forward { outputs, trace, final_state: state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub index: usize,
    pub kind: LayerKind,
    pub max_abs_error: f64,
    pub rms_error: f64,
    pub compared: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstLocation {
    pub layer: usize,
    /// Invocation index within that layer's trace.
    pub step: usize,
    pub element: usize,
    pub engine: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub pass: bool,
    pub max_abs_error: f64,
    pub rms_error: f64,
    pub compared: u64,
    /// Worst element of the final output.
    pub worst: Option<WorstLocation>,
    /// First layer whose error exceeds the tolerance, if any.
    pub first_failing_layer: Option<usize>,
    pub layers: Vec<LayerError>,
}

#[derive(Default)]
struct ErrStats {
    max: f64,
    sum_sq: f64,
    n: u64,
    worst: Option<(usize, usize, f64, f64)>,
}

impl ErrStats {
    fn push(&mut self, step: usize, element: usize, engine: f64, reference: f64) {
        let e = (engine - reference).abs();
        if e > self.max || self.worst.is_none() {
            self.max = self.max.max(e);
            self.worst = Some((step, element, engine, reference));
        }
        self.sum_sq += e * e;
        self.n += 1;
    }

    fn rms(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum_sq / self.n as f64).sqrt()
        }
    }
}

fn check_topology(compiled: &CompiledModel, float: &FloatModel) -> Result<(), ReferenceError> {
    if compiled.shapes() != float.shapes() {
        return Err(ReferenceError::Topology(format!("{:?} vs {:?}", compiled.shapes(), float.shapes())));
    }
    if compiled.seq_len != float.seq_len || compiled.exec_mode != float.exec_mode {
        return Err(ReferenceError::Topology(format!(
            "seq_len/exec_mode {}/{:?} vs {}/{:?}",
            compiled.seq_len, compiled.exec_mode, float.seq_len, float.exec_mode
        )));
    }
    Ok(())
}

/// Run engine and oracle on the same int16 input (at `input_exp`) and
/// compare dequantized engine outputs against the oracle.
pub fn validate(
    compiled: &Arc<CompiledModel>,
    float: &FloatModel,
    input: &[i16],
    input_exp: i32,
    cfg: &EngineConfig,
    tolerance: f64,
) -> Result<ValidationReport, ReferenceError> {
    check_topology(compiled, float)?;
    let mut session = Session::new(Arc::clone(compiled), cfg.clone())?;
    session.set_tracing(true);
    let run = session.run(input, input_exp)?;
    let scale = fxp::pow2(input_exp);
    let real_input: Vec<f64> = input.iter().map(|&v| v as f64 * scale).collect();
    let oracle = forward(float, &real_input)?;

    let q14 = fxp::pow2(fxp::Q14_EXP);
    let engine_trace = run.trace.unwrap_or_default();
    let n = compiled.layers.len();
    let mut layers = Vec::with_capacity(n);
    for (li, layer) in compiled.layers.iter().enumerate() {
        let mut st = ErrStats::default();
        if li + 1 == n {
            for (step, (f, o)) in run.frames.iter().zip(&oracle.outputs).enumerate() {
                for (k, (e, r)) in f.real().into_iter().zip(o).enumerate() {
                    st.push(step, k, e, *r);
                }
            }
        } else {
            for (step, (e, o)) in engine_trace[li].iter().zip(&oracle.trace[li]).enumerate() {
                for (k, (e, r)) in e.iter().zip(o).enumerate() {
                    st.push(step, k, *e as f64 * q14, *r);
                }
            }
        }
        layers.push((st, layer.shape.kind));
    }
    let (last, _) = layers.last().expect("validated topology has layers");
    let worst = last.worst.map(|(step, element, engine, reference)| WorstLocation {
        layer: n - 1,
        step,
        element,
        engine,
        reference,
    });
    let max_abs_error = last.max;
    let rms_error = last.rms();
    let compared = last.n;
    let first_failing_layer = layers.iter().position(|(s, _)| s.max > tolerance);
    Ok(ValidationReport {
        tolerance,
        pass: max_abs_error <= tolerance,
        max_abs_error,
        rms_error,
        compared,
        worst,
        first_failing_layer,
        layers: layers
            .into_iter()
            .enumerate()
            .map(|(index, (s, kind))| LayerError {
                index,
                kind,
                max_abs_error: s.max,
                rms_error: s.rms(),
                compared: s.n,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests;
