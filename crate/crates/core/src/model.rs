//! Network topology and real-valued weights.
//!
//! Recurrent gate matrices are stored fused: each gate is one
//! `hidden × (input + hidden)` row-major matrix with the input columns first.
//! Gate order is `z, r, h̃` for GRU and `i, f, g, o` for LSTM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationKind;

pub const MAX_DIM: usize = 4096;
pub const MAX_SEQ_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    Lstm,
    Gru,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Fc => 0,
            LayerKind::Lstm => 1,
            LayerKind::Gru => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Fc),
            1 => Some(LayerKind::Lstm),
            2 => Some(LayerKind::Gru),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Fc => "fc",
            LayerKind::Lstm => "lstm",
            LayerKind::Gru => "gru",
        }
    }

    pub fn gate_count(self) -> usize {
        match self {
            LayerKind::Fc => 1,
            LayerKind::Gru => 3,
            LayerKind::Lstm => 4,
        }
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, LayerKind::Fc)
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fc" | "linear" => Ok(LayerKind::Fc),
            "lstm" => Ok(LayerKind::Lstm),
            "gru" => Ok(LayerKind::Gru),
            _ => Err(s.to_string()),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// `seq_len` recurrent steps, then trailing layers once.
    #[default]
    Batch,
    /// One recurrent step plus trailing layers per call.
    Streaming,
}

impl ExecMode {
    pub fn code(self) -> u8 {
        match self {
            ExecMode::Batch => 0,
            ExecMode::Streaming => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ExecMode::Batch),
            1 => Some(ExecMode::Streaming),
            _ => None,
        }
    }
}

/// Dimensions and activation of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub input_dim: usize,
    /// Hidden size for recurrent layers.
    pub output_dim: usize,
    /// Output activation; only meaningful for FC layers.
    pub activation: ActivationKind,
}

impl LayerShape {
    pub fn fc(input_dim: usize, output_dim: usize, activation: ActivationKind) -> Self {
        LayerShape { kind: LayerKind::Fc, input_dim, output_dim, activation }
    }

    pub fn gru(input_dim: usize, hidden: usize) -> Self {
        LayerShape { kind: LayerKind::Gru, input_dim, output_dim: hidden, activation: ActivationKind::Tanh }
    }

    pub fn lstm(input_dim: usize, hidden: usize) -> Self {
        LayerShape { kind: LayerKind::Lstm, input_dim, output_dim: hidden, activation: ActivationKind::Tanh }
    }

    /// `(rows, cols)` of each gate matrix.
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Fc => (self.output_dim, self.input_dim),
            _ => (self.output_dim, self.input_dim + self.output_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        let (rows, cols) = self.weight_shape();
        self.kind.gate_count() * (rows * cols + rows)
    }

    /// Persistent int16 state elements (h, plus c for LSTM).
    pub fn state_elems(&self) -> usize {
        match self.kind {
            LayerKind::Fc => 0,
            LayerKind::Gru => self.output_dim,
            LayerKind::Lstm => 2 * self.output_dim,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("layer {layer}: dims out of range ({input_dim}, {output_dim}); each must be in [1, 4096]")]
    DimsOutOfRange { layer: usize, input_dim: usize, output_dim: usize },
    #[error("layer {layer}: input_dim {got} does not match previous output_dim {expected}")]
    Chain { layer: usize, expected: usize, got: usize },
    #[error("seq_len {0} out of range [1, 1024]")]
    SeqLen(usize),
    #[error("network has no layers")]
    Empty,
    #[error("too many layers ({0})")]
    TooManyLayers(usize),
    #[error("layer {layer}: expected {expected} {what}, got {got}")]
    TensorCount { layer: usize, what: &'static str, expected: usize, got: usize },
    #[error("layer {layer} gate {gate}: {what} has {got} values, expected {expected}")]
    TensorSize { layer: usize, gate: usize, what: &'static str, expected: usize, got: usize },
    #[error("layer {layer} gate {gate}: non-finite value")]
    NonFinite { layer: usize, gate: usize },
}

/// Check dims and the layer chain.
pub fn validate_topology(shapes: &[LayerShape], seq_len: usize) -> Result<(), TopologyError> {
    if shapes.is_empty() {
        return Err(TopologyError::Empty);
    }
    if shapes.len() > u16::MAX as usize {
        return Err(TopologyError::TooManyLayers(shapes.len()));
    }
    if !(1..=MAX_SEQ_LEN).contains(&seq_len) {
        return Err(TopologyError::SeqLen(seq_len));
    }
    for (i, s) in shapes.iter().enumerate() {
        if !(1..=MAX_DIM).contains(&s.input_dim) || !(1..=MAX_DIM).contains(&s.output_dim) {
            return Err(TopologyError::DimsOutOfRange { layer: i, input_dim: s.input_dim, output_dim: s.output_dim });
        }
        if i > 0 && shapes[i - 1].output_dim != s.input_dim {
            return Err(TopologyError::Chain { layer: i, expected: shapes[i - 1].output_dim, got: s.input_dim });
        }
    }
    Ok(())
}

/// One gate: fused row-major weight matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGate {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub shape: LayerShape,
    pub gates: Vec<FloatGate>,
}

/// A network with real-valued (pre-quantization) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub name: String,
    pub seq_len: usize,
    pub exec_mode: ExecMode,
    pub layers: Vec<FloatLayer>,
}

impl FloatModel {
    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.shape.param_count()).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape.output_dim)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        validate_topology(&self.shapes(), self.seq_len)?;
        for (li, layer) in self.layers.iter().enumerate() {
            let expected = layer.shape.kind.gate_count();
            if layer.gates.len() != expected {
                return Err(TopologyError::TensorCount { layer: li, what: "gates", expected, got: layer.gates.len() });
            }
            let (rows, cols) = layer.shape.weight_shape();
            for (gi, gate) in layer.gates.iter().enumerate() {
                if gate.weights.len() != rows * cols {
                    return Err(TopologyError::TensorSize {
                        layer: li,
                        gate: gi,
                        what: "weights",
                        expected: rows * cols,
                        got: gate.weights.len(),
                    });
                }
                if gate.bias.len() != rows {
                    return Err(TopologyError::TensorSize {
                        layer: li,
                        gate: gi,
                        what: "bias",
                        expected: rows,
                        got: gate.bias.len(),
                    });
                }
                if gate.weights.iter().chain(&gate.bias).any(|v| !v.is_finite()) {
                    return Err(TopologyError::NonFinite { layer: li, gate: gi });
                }
            }
        }
        Ok(())
    }

    /// Seeded synthetic parameters: weights ~ U(−1, 1)/√cols, biases ~ U(−0.1, 0.1).
    pub fn synthetic(name: &str, shapes: &[LayerShape], seq_len: usize, exec_mode: ExecMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shapes
            .iter()
            .map(|&shape| {
                let (rows, cols) = shape.weight_shape();
                let scale = 1.0 / (cols as f64).sqrt();
                let gates = (0..shape.kind.gate_count())
                    .map(|_| FloatGate {
                        weights: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect(),
                        bias: (0..rows).map(|_| rng.random_range(-0.1..0.1)).collect(),
                    })
                    .collect();
                FloatLayer { shape, gates }
            })
            .collect();
        FloatModel { name: name.to_string(), seq_len, exec_mode, layers }
    }
}

/// Layers that run every timestep: everything up to and including the last
/// recurrent layer. For feed-forward-only networks this is every layer.
pub fn per_step_prefix(shapes: &[LayerShape]) -> usize {
    shapes
        .iter()
        .rposition(|s| s.kind.is_recurrent())
        .map_or(shapes.len(), |i| i + 1)
}
