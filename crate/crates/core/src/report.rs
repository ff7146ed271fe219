//! Machine-readable run reports (TOML).
//!
//! Top-level keys, in order: `tool`, `version`, `command`, `wall_clock_ms`,
//! then the optional tables `config`, `compile`, `ratio`, `sim`,
//! `validation` and `bench`. Every value except `wall_clock_ms` is a pure
//! function of the command's inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::BenchTable;
use crate::codec::RatioReport;
use crate::engine::{EngineConfig, SimReport};
use crate::loadable::CompileReport;
use crate::reference::ValidationReport;

pub const TOOL: &str = "rnnaccel";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report serialization: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("report parse: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Aggregate over several validation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub seeds: u64,
    pub passed: u64,
    pub tolerance: f64,
    pub max_abs_error: f64,
    pub worst_seed: u64,
    pub worst: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub wall_clock_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EngineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile: Option<CompileReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<RatioReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bench: Vec<BenchTable>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            wall_clock_ms: 0.0,
            config: None,
            compile: None,
            ratio: None,
            sim: None,
            validation: None,
            bench: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> Result<String, ReportError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        Ok(toml::from_str(text)?)
    }
}
