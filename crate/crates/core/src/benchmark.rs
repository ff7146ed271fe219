//! Profile benchmarks: compile a network under each compression mode, run
//! it on the engine, and compare against the oracle.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CompressionMode;
use crate::engine::{EngineConfig, EngineError, LayerReport, Session, SimReport};
use crate::fxp::{MacMode, Q14_EXP};
use crate::loadable::{compile, CompileError, CompileOptions, CompiledModel};
use crate::model::FloatModel;
use crate::profiles::{self, BiLstm};
use crate::reference::{self, ReferenceError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::Compile(e) => e.code(),
            BenchError::Engine(e) => e.code(),
            BenchError::Reference(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    KwsGru,
    AfibBilstm,
    Custom(FloatModel),
}

impl Profile {
    pub fn name(&self) -> String {
        match self {
            Profile::KwsGru => "kws-gru".into(),
            Profile::AfibBilstm => "afib-bilstm".into(),
            Profile::Custom(m) => m.name.clone(),
        }
    }

    pub fn note(&self) -> Option<&'static str> {
        match self {
            Profile::KwsGru => Some("synthetic weights"),
            Profile::AfibBilstm => Some("synthetic weights; stand-in topology of matching size"),
            Profile::Custom(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub engine: EngineConfig,
    pub weight_mode: MacMode,
    pub modes: Vec<CompressionMode>,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            engine: EngineConfig::default(),
            weight_mode: MacMode::W8,
            modes: CompressionMode::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub compression: String,
    pub nominal_ratio: f64,
    pub loadable_bytes: u64,
    pub total_cycles: u64,
    pub cycles_per_inference: f64,
    pub utilization: f64,
    pub inferences_per_second: f64,
    pub weight_bytes_per_inference: f64,
    pub max_abs_error: f64,
    pub rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub param_count: u64,
    pub n_macs: u32,
    pub clock_mhz: f64,
    pub peak_gops: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "profile {} ({} parameters), {} MACs @ {} MHz, peak {:.3} GOPS\n",
            self.profile, self.param_count, self.n_macs, self.clock_mhz, self.peak_gops
        );
        if let Some(n) = &self.note {
            out.push_str(&format!("note: {n}\n"));
        }
        out.push_str(&format!(
            "{:<6} {:>8} {:>10} {:>10} {:>7} {:>10} {:>12} {:>10} {:>10}\n",
            "mode", "ratio", "bytes", "cyc/inf", "util", "inf/s", "wbytes/inf", "max_err", "rms_err"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:>8.3} {:>10} {:>10.1} {:>7.4} {:>10.0} {:>12.1} {:>10.3e} {:>10.3e}\n",
                r.compression,
                r.nominal_ratio,
                r.loadable_bytes,
                r.cycles_per_inference,
                r.utilization,
                r.inferences_per_second,
                r.weight_bytes_per_inference,
                r.max_abs_error,
                r.rms_error
            ));
        }
        out
    }
}

/// Outcome of running one compiled profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRun {
    pub report: SimReport,
    pub loadable_bytes: u64,
    pub max_abs_error: f64,
    pub rms_error: f64,
}

fn compile_arc(m: &FloatModel, opts: CompileOptions) -> Result<(Arc<CompiledModel>, u64), CompileError> {
    let c = compile(m, opts)?;
    Ok((Arc::new(c.model), c.bytes.len() as u64))
}

/// One sequence of `seq_len` frames through a single-model network.
pub fn run_single(model: &FloatModel, opts: CompileOptions, cfg: &EngineConfig, seed: u64) -> Result<ProfileRun, BenchError> {
    let (compiled, bytes) = compile_arc(model, opts)?;
    let input = profiles::random_input(model.input_dim() * model.seq_len, seed);
    let validation = reference::validate(&compiled, model, &input, Q14_EXP, cfg, f64::INFINITY)?;
    let report = Session::new(compiled, cfg.clone())?.run(&input, Q14_EXP)?.report;
    Ok(ProfileRun { report, loadable_bytes: bytes, max_abs_error: validation.max_abs_error, rms_error: validation.rms_error })
}

/// Combine sequential runs into one report; `hand_offs` extra `d_dep`
/// boundaries join them and `inferences` is the composed count.
pub fn merge_reports(parts: &[SimReport], cfg: &EngineConfig, hand_offs: u64, inferences: u64) -> SimReport {
    let first = &parts[0];
    let lanes = cfg.lanes(first.weight_mode) as f64;
    let mut layers: Vec<LayerReport> = Vec::new();
    for p in parts {
        for l in &p.layers {
            layers.push(LayerReport { index: layers.len(), ..l.clone() });
        }
    }
    let sum = |f: fn(&SimReport) -> u64| parts.iter().map(f).sum::<u64>();
    let boundary = sum(|r| r.boundary_cycles) + hand_offs * cfg.d_dep as u64;
    let total = sum(|r| r.total_cycles) + hand_offs * cfg.d_dep as u64;
    let useful = sum(|r| r.useful_mac_ops);
    let cpi = total as f64 / inferences as f64;
    SimReport {
        n_macs: cfg.n_macs,
        weight_mode: first.weight_mode,
        clock_mhz: cfg.clock_mhz,
        total_cycles: total,
        boundary_cycles: boundary,
        useful_mac_ops: useful,
        utilization: useful as f64 / (lanes * total as f64),
        inferences,
        cycles_per_inference: cpi,
        inferences_per_second: cfg.clock_mhz * 1e6 / cpi,
        peak_gops: cfg.peak_gops(),
        weight_bytes_read: sum(|r| r.weight_bytes_read),
        bias_bytes_read: sum(|r| r.bias_bytes_read),
        // the head's input comes from on-chip state, not from outside
        input_bytes_read: parts.iter().take(2).map(|r| r.input_bytes_read).sum(),
        output_bytes_written: parts.last().map_or(0, |r| r.output_bytes_written),
        saturation_events: sum(|r| r.saturation_events),
        layers,
    }
}

/// Forward LSTM over x, backward LSTM over reversed x, FC head over
/// `[h_fwd; h_bwd]`.
pub fn run_bilstm(net: &BiLstm, opts: CompileOptions, cfg: &EngineConfig, seed: u64) -> Result<ProfileRun, BenchError> {
    let (fwd, b1) = compile_arc(&net.forward, opts)?;
    let (bwd, b2) = compile_arc(&net.backward, opts)?;
    let (head, b3) = compile_arc(&net.head, opts)?;
    let x = profiles::random_input(net.forward.seq_len * net.forward.input_dim(), seed);
    let rev: Vec<i16> = x.iter().rev().copied().collect();

    let rf = Session::new(fwd, cfg.clone())?.run(&x, Q14_EXP)?;
    let rb = Session::new(bwd, cfg.clone())?.run(&rev, Q14_EXP)?;
    let joined: Vec<i16> = rf.frames[0].values.iter().chain(&rb.frames[0].values).copied().collect();
    let rh = Session::new(head, cfg.clone())?.run(&joined, Q14_EXP)?;

    let real = |v: &[i16]| v.iter().map(|&q| q as f64 / 16384.0).collect::<Vec<_>>();
    let of = reference::forward(&net.forward, &real(&x))?;
    let ob = reference::forward(&net.backward, &real(&rev))?;
    let oj: Vec<f64> = of.outputs[0].iter().chain(&ob.outputs[0]).copied().collect();
    let oh = reference::forward(&net.head, &oj)?;
    let engine_out = rh.frames[0].real();
    let diffs: Vec<f64> = engine_out.iter().zip(&oh.outputs[0]).map(|(a, b)| (a - b).abs()).collect();
    let max = diffs.iter().copied().fold(0.0, f64::max);
    let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();

    Ok(ProfileRun {
        report: merge_reports(&[rf.report, rb.report, rh.report], cfg, 1, 1),
        loadable_bytes: b1 + b2 + b3,
        max_abs_error: max,
        rms_error: rms,
    })
}

pub fn run_profile(profile: &Profile, opts: CompileOptions, cfg: &EngineConfig, seed: u64) -> Result<ProfileRun, BenchError> {
    match profile {
        Profile::KwsGru => run_single(&profiles::kws_gru(seed), opts, cfg, seed),
        Profile::AfibBilstm => run_bilstm(&profiles::afib_bilstm(seed), opts, cfg, seed),
        Profile::Custom(m) => run_single(m, opts, cfg, seed),
    }
}

pub fn param_count(profile: &Profile, seed: u64) -> usize {
    match profile {
        Profile::KwsGru => profiles::kws_gru(seed).param_count(),
        Profile::AfibBilstm => profiles::afib_bilstm(seed).param_count(),
        Profile::Custom(m) => m.param_count(),
    }
}

/// Comparison table across compression modes.
pub fn bench(profile: &Profile, opts: &BenchOptions) -> Result<BenchTable, BenchError> {
    opts.engine.validate()?;
    let mut rows = Vec::with_capacity(opts.modes.len());
    for &mode in &opts.modes {
        let run = run_profile(profile, CompileOptions { weight_mode: opts.weight_mode, compression: mode }, &opts.engine, opts.seed)?;
        let r = &run.report;
        rows.push(BenchRow {
            compression: mode.label().to_string(),
            nominal_ratio: mode.nominal_ratio(),
            loadable_bytes: run.loadable_bytes,
            total_cycles: r.total_cycles,
            cycles_per_inference: r.cycles_per_inference,
            utilization: r.utilization,
            inferences_per_second: r.inferences_per_second,
            weight_bytes_per_inference: r.weight_bytes_read as f64 / r.inferences as f64,
            max_abs_error: run.max_abs_error,
            rms_error: run.rms_error,
        });
    }
    Ok(BenchTable {
        profile: profile.name(),
        note: profile.note().map(str::to_string),
        param_count: param_count(profile, opts.seed) as u64,
        n_macs: opts.engine.n_macs,
        clock_mhz: opts.engine.clock_mhz,
        peak_gops: opts.engine.peak_gops(),
        rows,
    })
}
