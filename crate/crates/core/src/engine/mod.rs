//! Bit-accurate behavioral model of the accelerator.
//!
//! A mat-vec streams one input column per cycle into `ceil(R / lanes)` row
//! tiles and pays `p_drain` cycles per tile to drain the adder tree. The
//! activation and element-wise units run pipelined behind the MAC array and
//! cost `d_dep` cycles only where a result feeds the next operation: twice
//! inside every recurrent step and once on every layer-to-layer hand-off
//! within a timestep.

pub mod ops;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::fxp::MacMode;
use crate::model::LayerKind;

pub use ops::{matvec, matvec_cycles, run_fc, step_gru, step_lstm, FcOutput, MatVec, Tally};
pub use session::{Engine, ModelId, OutputFrame, RunOutput, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Number of 8-bit MAC units; a power of two, at least 8.
    pub n_macs: u32,
    /// Used for rate reporting only.
    pub clock_mhz: f64,
    pub pool_bytes: usize,
    /// `None` follows the loaded model.
    pub weight_mode: Option<MacMode>,
    pub p_drain: u32,
    pub d_dep: u32,
    /// Charge one extra cycle per tile pass over compressed weights.
    pub decompress_stall: bool,
    /// Decode compressed weights from the blob during each mat-vec instead
    /// of using the pre-decoded copy. Results are identical.
    pub stream_weights: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_macs: 32,
            clock_mhz: 250.0,
            pool_bytes: 12288,
            weight_mode: None,
            p_drain: 4,
            d_dep: 12,
            decompress_stall: false,
            stream_weights: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_macs < 8 || !self.n_macs.is_power_of_two() {
            return Err(EngineError::BadConfig(format!("n_macs {} must be a power of two >= 8", self.n_macs)));
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(EngineError::BadConfig(format!("clock_mhz {} must be positive", self.clock_mhz)));
        }
        Ok(())
    }

    /// MAC lanes available to one mat-vec: 16-bit weights pair two units.
    pub fn lanes(&self, mode: MacMode) -> u32 {
        match mode {
            MacMode::W8 => self.n_macs,
            MacMode::W16 => self.n_macs / 2,
        }
    }

    pub fn peak_gops(&self) -> f64 {
        self.n_macs as f64 * self.clock_mhz * 2.0 / 1000.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("bad engine config: {0}")]
    BadConfig(String),
    #[error("state needs {needed} bytes but the pool holds {available}")]
    PoolOverflow { needed: usize, available: usize },
    #[error("input of {len} values is not a multiple of {multiple}")]
    InputLength { len: usize, multiple: usize },
    #[error("engine runs {config:?} weights but the model is {model:?}")]
    WeightMode { config: MacMode, model: MacMode },
    #[error("layer {layer}: state vector of {got} values, expected {expected}")]
    StateShape { layer: usize, expected: usize, got: usize },
    #[error("no resident model {0}")]
    UnknownModel(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::BadConfig(_) => "E_CONFIG",
            EngineError::PoolOverflow { .. } => "E_POOL_OVERFLOW",
            EngineError::InputLength { .. } => "E_DIM_MISMATCH",
            EngineError::WeightMode { .. } => "E_WEIGHT_MODE",
            EngineError::StateShape { .. } => "E_STATE_SHAPE",
            EngineError::UnknownModel(_) => "E_UNKNOWN_MODEL",
            EngineError::Codec(_) => "E_CODEC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    /// Mat-vec passes plus the layer's internal dependency stalls.
    pub cycles: u64,
    pub useful_mac_ops: u64,
    pub utilization: f64,
    pub weight_bytes_read: u64,
    pub bias_bytes_read: u64,
    pub saturation_events: u64,
}

/// Cycle, utilization and traffic counters for one run.
///
/// `total_cycles` = Σ layer cycles + `boundary_cycles` (inter-layer `d_dep`
/// charges). Utilization divides by the effective lane count, so 16-bit
/// weights are measured against `n_macs / 2` lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_macs: u32,
    pub weight_mode: MacMode,
    pub clock_mhz: f64,
    pub total_cycles: u64,
    pub boundary_cycles: u64,
    pub useful_mac_ops: u64,
    pub utilization: f64,
    pub inferences: u64,
    pub cycles_per_inference: f64,
    pub inferences_per_second: f64,
    pub peak_gops: f64,
    pub weight_bytes_read: u64,
    pub bias_bytes_read: u64,
    pub input_bytes_read: u64,
    pub output_bytes_written: u64,
    pub saturation_events: u64,
    pub layers: Vec<LayerReport>,
}
