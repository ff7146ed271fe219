//! Model ingestion, compilation and the binary loadable container.
//!
//! Binary layout (all multi-byte fields little-endian):
//!
//! Header, 16 bytes:
//!
//! | off | size | field |
//! |-----|------|-------|
//! | 0 | 4 | magic `0x414E4E52` (bytes `R N N A`) |
//! | 4 | 2 | version = 1 |
//! | 6 | 1 | weight_bits (8 or 16) |
//! | 7 | 1 | compression index bits (0 = none, 2, 4, 6) |
//! | 8 | 2 | n_layers |
//! | 10 | 2 | seq_len |
//! | 12 | 1 | exec_mode (0 batch, 1 streaming) |
//! | 13 | 1 | reserved (0) |
//! | 14 | 2 | n_tensors |
//!
//! Layer table, 32 bytes per layer: type u8 (0 FC, 1 LSTM, 2 GRU),
//! activation u8, input_dim u16, output_dim u16, four weight tensor indices
//! u16, four bias tensor indices u16 (unused slots `0xFFFF`), 10 reserved
//! bytes. Gate order is (z, r, h̃) for GRU and (i, f, g, o) for LSTM.
//!
//! Tensor table, 16 bytes per tensor: absolute byte offset u32, byte length
//! u32, rows u16, cols u16, kind u8 (0 weight, 1 bias), exponent i8,
//! 2 reserved bytes.
//!
//! Blob section: uncompressed weights are raw i8 or i16 row-major;
//! compressed weights are codec blobs; biases are i32 at the accumulator
//! exponent `e_w − 14`.

mod compile;
mod format;
pub mod manifest;

use crate::codec::{CompressedBlob, CompressionMode};
use crate::fxp::MacMode;
use crate::model::{ExecMode, LayerShape};

pub use compile::{compile, compile_manifest, decompile, CompileError, CompileOptions, CompileReport, Compiled, TensorInfo};
pub use format::{encode, load, LoadError, HEADER_LEN, LAYER_RECORD_LEN, MAGIC, TENSOR_RECORD_LEN, VERSION};
pub use manifest::{parse_manifest, write_manifest, Manifest, ManifestError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledGate {
    /// Decoded row-major weights, each within the weight lane.
    pub weights: Vec<i16>,
    pub weight_exp: i32,
    /// Biases at exponent `weight_exp − 14`.
    pub bias: Vec<i32>,
    /// Present when the weights travel compressed.
    pub blob: Option<CompressedBlob>,
}

impl CompiledGate {
    pub fn bias_exp(&self) -> i32 {
        self.weight_exp + crate::fxp::Q14_EXP
    }

    /// Bytes the MAC array reads for one pass over this gate's weights.
    pub fn weight_bytes(&self, mode: MacMode) -> u64 {
        match &self.blob {
            Some(b) => (b.payload.len() + b.codebook_bytes()) as u64,
            None => self.weights.len() as u64 * mode.weight_bits() as u64 / 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledLayer {
    pub shape: LayerShape,
    pub gates: Vec<CompiledGate>,
}

/// A decoded network ready for the engine. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledModel {
    pub seq_len: usize,
    pub exec_mode: ExecMode,
    pub weight_mode: MacMode,
    pub compression: CompressionMode,
    pub layers: Vec<CompiledLayer>,
}

impl CompiledModel {
    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape.output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.shape.param_count()).sum()
    }

    /// Persistent state in bytes: int16 h for every recurrent layer plus c for LSTM.
    pub fn state_bytes(&self) -> usize {
        2 * self.layers.iter().map(|l| l.shape.state_elems()).sum::<usize>()
    }
}
