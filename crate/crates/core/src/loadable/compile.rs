use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{Manifest, ManifestError};
use super::{encode, CompiledGate, CompiledLayer, CompiledModel};
use crate::codec::{self, CodecError, CompressionMode, RatioReport};
use crate::fxp::{self, FxpError, MacMode, QFormat, Q14_EXP};
use crate::model::{FloatGate, FloatLayer, FloatModel, TopologyError};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("layer {layer} gate {gate}: weight exponent {exponent} does not fit in i8")]
    ExponentRange { layer: usize, gate: usize, exponent: i32 },
    #[error("layer {layer} gate {gate}: bias {value} does not fit the accumulator at exponent {exponent}")]
    BiasRange { layer: usize, gate: usize, value: f64, exponent: i32 },
    #[error("layer {layer} gate {gate}: {source}")]
    Codec { layer: usize, gate: usize, source: CodecError },
    #[error("layer {layer} gate {gate}: {source}")]
    Fxp { layer: usize, gate: usize, source: FxpError },
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::Topology(_) => "E_TOPOLOGY",
            CompileError::Manifest(m) => m.code(),
            CompileError::ExponentRange { .. } => "E_EXPONENT_RANGE",
            CompileError::BiasRange { .. } => "E_BIAS_RANGE",
            CompileError::Codec { .. } => "E_CODEC",
            CompileError::Fxp { .. } => "E_FXP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub weight_mode: MacMode,
    pub compression: CompressionMode,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { weight_mode: MacMode::W8, compression: CompressionMode::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub layer: usize,
    pub gate: usize,
    pub rows: usize,
    pub cols: usize,
    pub weight_exp: i32,
    pub bias_exp: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub param_count: usize,
    pub loadable_bytes: usize,
    pub tensors: Vec<TensorInfo>,
    /// Whole-model ratio over all compressed weight tensors.
    pub ratio: Option<RatioReport>,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub bytes: Vec<u8>,
    pub model: CompiledModel,
    pub report: CompileReport,
}

fn compile_gate(
    gate: &FloatGate,
    rows: usize,
    cols: usize,
    opts: CompileOptions,
    layer: usize,
    index: usize,
) -> Result<CompiledGate, CompileError> {
    let (weights, weight_exp, blob) = match opts.compression.index_bits() {
        Some(bits) => {
            let blob = codec::compress(&gate.weights, rows, cols, bits, opts.weight_mode)
                .map_err(|source| CompileError::Codec { layer, gate: index, source })?;
            let (weights, e) =
                codec::decompress(&blob).map_err(|source| CompileError::Codec { layer, gate: index, source })?;
            (weights, e, Some(blob))
        }
        None => {
            let bits = opts.weight_mode.weight_bits();
            let e = fxp::choose_exponent(&gate.weights, bits)
                .map_err(|source| CompileError::Fxp { layer, gate: index, source })?;
            let lane = QFormat::new(bits, e).map_err(|source| CompileError::Fxp { layer, gate: index, source })?;
            (gate.weights.iter().map(|&w| lane.quantize(w).value as i16).collect(), e, None)
        }
    };
    let bias_exp = weight_exp + Q14_EXP;
    if i8::try_from(weight_exp).is_err() || i8::try_from(bias_exp).is_err() {
        return Err(CompileError::ExponentRange { layer, gate: index, exponent: weight_exp });
    }
    let scale = fxp::pow2(bias_exp);
    // symmetric accumulator bound, so i32::MIN is excluded
    let limit = i32::MAX as f64;
    let mut bias = Vec::with_capacity(gate.bias.len());
    for &b in &gate.bias {
        let q = (b / scale).round_ties_even();
        if q.abs() > limit {
            return Err(CompileError::BiasRange { layer, gate: index, value: b, exponent: bias_exp });
        }
        bias.push(q as i32);
    }
    Ok(CompiledGate { weights, weight_exp, bias, blob })
}

/// Quantize (or compress) a real-valued model and serialize it.
///
/// Output bytes are a pure function of the model and options.
pub fn compile(model: &FloatModel, opts: CompileOptions) -> Result<Compiled, CompileError> {
    model.validate()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut tensors = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        let (rows, cols) = layer.shape.weight_shape();
        let mut gates = Vec::with_capacity(layer.gates.len());
        for (gi, gate) in layer.gates.iter().enumerate() {
            let g = compile_gate(gate, rows, cols, opts, li, gi)?;
            tensors.push(TensorInfo { layer: li, gate: gi, rows, cols, weight_exp: g.weight_exp, bias_exp: g.bias_exp() });
            gates.push(g);
        }
        layers.push(CompiledLayer { shape: layer.shape, gates });
    }
    let compiled = CompiledModel {
        seq_len: model.seq_len,
        exec_mode: model.exec_mode,
        weight_mode: opts.weight_mode,
        compression: opts.compression,
        layers,
    };
    let bytes = encode(&compiled);
    let blobs: Vec<_> = compiled.layers.iter().flat_map(|l| &l.gates).filter_map(|g| g.blob.as_ref()).collect();
    let report = CompileReport {
        param_count: model.param_count(),
        loadable_bytes: bytes.len(),
        tensors,
        ratio: codec::combined_ratio(&blobs),
    };
    Ok(Compiled { bytes, model: compiled, report })
}

pub fn compile_manifest(manifest: &Manifest) -> Result<Compiled, CompileError> {
    let model = manifest.load_weights()?;
    compile(&model, CompileOptions { weight_mode: manifest.weight_bits, compression: manifest.compression })
}

/// Real-valued view of a compiled model: every weight and bias dequantized.
pub fn decompile(model: &CompiledModel, name: &str) -> FloatModel {
    let layers = model
        .layers
        .iter()
        .map(|layer| FloatLayer {
            shape: layer.shape,
            gates: layer
                .gates
                .iter()
                .map(|g| {
                    let ws = fxp::pow2(g.weight_exp);
                    let bs = fxp::pow2(g.bias_exp());
                    FloatGate {
                        weights: g.weights.iter().map(|&w| w as f64 * ws).collect(),
                        bias: g.bias.iter().map(|&b| b as f64 * bs).collect(),
                    }
                })
                .collect(),
        })
        .collect();
    FloatModel { name: name.to_string(), seq_len: model.seq_len, exec_mode: model.exec_mode, layers }
}
