//! Bit-accurate behavioral simulator and SDK for a small fixed-point RNN
//! accelerator: fixed-point arithmetic, piecewise-linear activations,
//! codebook weight compression, the model compiler and binary loadable, the
//! cycle-level engine, and a double-precision reference for validation.

pub mod activation;
pub mod benchmark;
pub mod codec;
pub mod engine;
pub mod fxp;
pub mod loadable;
pub mod model;
pub mod profiles;
pub mod reference;
pub mod report;

pub use activation::{ActivationKind, ActivationTables, PwlTable};
pub use codec::{CompressedBlob, CompressionMode, IndexBits, RatioReport};
pub use engine::{Engine, EngineConfig, EngineError, OutputFrame, Session, SimReport};
pub use fxp::{MacMode, QFormat};
pub use loadable::{compile, load, CompileOptions, CompiledModel, LoadError, Manifest};
pub use model::{ExecMode, FloatModel, LayerKind, LayerShape};
pub use reference::{validate, ValidationReport, DEFAULT_TOLERANCE};
pub use report::RunReport;
