use std::sync::Arc;

use super::ops::{self, Tally};
use super::{EngineConfig, EngineError, LayerReport, SimReport};
use crate::activation::{ActivationKind, ActivationTables};
use crate::fxp::{self, MacMode, Q14_EXP};
use crate::loadable::CompiledModel;
use crate::model::{per_step_prefix, ExecMode, LayerKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct LayerState {
    h: Vec<i16>,
    c: Vec<i16>,
}

/// One inference result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFrame {
    /// Final layer output in Q1.14.
    pub values: Vec<i16>,
    /// Raw accumulators when the final layer is an Identity FC; these are
    /// the unsaturated logits.
    pub logits: Option<Vec<i64>>,
    pub logit_exp: i32,
}

impl OutputFrame {
    pub fn real(&self) -> Vec<f64> {
        match &self.logits {
            Some(l) => {
                let s = fxp::pow2(self.logit_exp);
                l.iter().map(|&v| v as f64 * s).collect()
            }
            None => {
                let s = fxp::pow2(Q14_EXP);
                self.values.iter().map(|&v| v as f64 * s).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub frames: Vec<OutputFrame>,
    pub report: SimReport,
    /// Per-layer Q1.14 outputs in execution order, when tracing is on.
    pub trace: Option<Vec<Vec<Vec<i16>>>>,
}

#[derive(Default)]
struct Counters {
    layers: Vec<Tally>,
    boundary: u64,
    inferences: u64,
    input_bytes: u64,
    output_bytes: u64,
    ingest_saturations: u64,
    trace: Option<Vec<Vec<Vec<i16>>>>,
}

/// Execution context for one model: persistent recurrent state plus config.
///
/// Batch runs restart every sequence from the initial state (zeros unless
/// set). Streaming runs carry state across calls until [`Session::reset`].
pub struct Session {
    model: Arc<CompiledModel>,
    cfg: EngineConfig,
    mode: MacMode,
    tables: &'static ActivationTables,
    prefix: usize,
    initial: Vec<LayerState>,
    state: Vec<LayerState>,
    tracing: bool,
}

impl Session {
    pub fn new(model: Arc<CompiledModel>, cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        if let Some(m) = cfg.weight_mode {
            if m != model.weight_mode {
                return Err(EngineError::WeightMode { config: m, model: model.weight_mode });
            }
        }
        let needed = model.state_bytes();
        if needed > cfg.pool_bytes {
            return Err(EngineError::PoolOverflow { needed, available: cfg.pool_bytes });
        }
        let initial: Vec<LayerState> = model
            .layers
            .iter()
            .map(|l| match l.shape.kind {
                LayerKind::Fc => LayerState::default(),
                LayerKind::Gru => LayerState { h: vec![0; l.shape.output_dim], c: Vec::new() },
                LayerKind::Lstm => LayerState { h: vec![0; l.shape.output_dim], c: vec![0; l.shape.output_dim] },
            })
            .collect();
        Ok(Session {
            prefix: per_step_prefix(&model.shapes()),
            mode: model.weight_mode,
            model,
            cfg,
            tables: ActivationTables::golden(),
            state: initial.clone(),
            initial,
            tracing: false,
        })
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Set the state a layer starts from (and restart from it now). `h` is
    /// Q1.14, `c` is Q2.13 and only applies to LSTM layers.
    pub fn set_initial_state(&mut self, layer: usize, h: &[i16], c: Option<&[i16]>) -> Result<(), EngineError> {
        let shape = self.model.layers.get(layer).map(|l| l.shape).ok_or(EngineError::StateShape {
            layer,
            expected: 0,
            got: h.len(),
        })?;
        let expected = if shape.kind.is_recurrent() { shape.output_dim } else { 0 };
        if h.len() != expected {
            return Err(EngineError::StateShape { layer, expected, got: h.len() });
        }
        let st = &mut self.initial[layer];
        st.h = h.to_vec();
        if let Some(c) = c {
            let expected = if shape.kind == LayerKind::Lstm { shape.output_dim } else { 0 };
            if c.len() != expected {
                return Err(EngineError::StateShape { layer, expected, got: c.len() });
            }
            st.c = c.to_vec();
        }
        self.state[layer] = st.clone();
        Ok(())
    }

    /// Record every layer's output during [`Session::run`].
    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn reset(&mut self) {
        self.state = self.initial.clone();
    }

    /// Current `(h, c)` of a layer; empty slices for FC layers.
    pub fn state(&self, layer: usize) -> (&[i16], &[i16]) {
        let s = &self.state[layer];
        (&s.h, &s.c)
    }

    fn state_bytes(&self) -> usize {
        2 * self.state.iter().map(|s| s.h.len() + s.c.len()).sum::<usize>()
    }

    fn run_layers(
        &mut self,
        range: std::ops::Range<usize>,
        mut x: Vec<i16>,
        charge_first: bool,
        counters: &mut Counters,
    ) -> Result<(Vec<i16>, Option<ops::FcOutput>), EngineError> {
        let mut last_fc = None;
        let start = range.start;
        for li in range {
            if li > start || charge_first {
                counters.boundary += self.cfg.d_dep as u64;
            }
            let layer = &self.model.layers[li];
            let st = &mut self.state[li];
            last_fc = None;
            let tally = match layer.shape.kind {
                LayerKind::Gru => {
                    let t = ops::step_gru(layer, &x, &mut st.h, &self.cfg, self.mode, self.tables)?;
                    x = st.h.clone();
                    t
                }
                LayerKind::Lstm => {
                    let t = ops::step_lstm(layer, &x, &mut st.h, &mut st.c, &self.cfg, self.mode, self.tables)?;
                    x = st.h.clone();
                    t
                }
                LayerKind::Fc => {
                    let out = ops::run_fc(layer, &x, &self.cfg, self.mode, self.tables)?;
                    x = out.values.clone();
                    let t = out.tally;
                    last_fc = Some(out);
                    t
                }
            };
            counters.layers[li].add(&tally);
            if let Some(trace) = counters.trace.as_mut() {
                trace[li].push(x.clone());
            }
        }
        debug_assert!(self.state_bytes() <= self.cfg.pool_bytes);
        Ok((x, last_fc))
    }

    fn frame(&self, values: Vec<i16>, last_fc: Option<ops::FcOutput>) -> OutputFrame {
        let identity = self.model.layers.last().is_some_and(|l| {
            l.shape.kind == LayerKind::Fc && l.shape.activation == ActivationKind::Identity
        });
        match last_fc {
            Some(fc) if identity => OutputFrame { values, logits: Some(fc.acc), logit_exp: fc.acc_exp },
            _ => OutputFrame { values, logits: None, logit_exp: Q14_EXP },
        }
    }

    /// Run raw int16 input at exponent `input_exp`.
    ///
    /// Streaming and feed-forward-only models take any whole number of
    /// frames and emit one output per frame. Batch recurrent models take
    /// whole sequences of `seq_len` frames and emit one output per sequence.
    pub fn run(&mut self, input: &[i16], input_exp: i32) -> Result<RunOutput, EngineError> {
        let model = Arc::clone(&self.model);
        let dim = model.input_dim();
        let n_layers = model.layers.len();
        let recurrent = model.layers.iter().any(|l| l.shape.kind.is_recurrent());
        let batch = recurrent && model.exec_mode == ExecMode::Batch;
        let multiple = if batch { dim * model.seq_len } else { dim };
        if input.is_empty() || !input.len().is_multiple_of(multiple) {
            return Err(EngineError::InputLength { len: input.len(), multiple });
        }
        let mut counters = Counters {
            layers: vec![Tally::default(); n_layers],
            trace: self.tracing.then(|| vec![Vec::new(); n_layers]),
            ..Default::default()
        };
        counters.input_bytes = 2 * input.len() as u64;
        let mut frames = Vec::new();

        for chunk in input.chunks(multiple) {
            if batch {
                self.reset();
                let mut h = Vec::new();
                for step in chunk.chunks(dim) {
                    let mut tally = Tally::default();
                    let x = ops::ingest(step, input_exp, &mut tally);
                    counters.ingest_saturations += tally.saturations;
                    h = self.run_layers(0..self.prefix, x, false, &mut counters)?.0;
                }
                let (out, fc) = self.run_layers(self.prefix..n_layers, h, true, &mut counters)?;
                frames.push(self.frame(out, fc));
            } else {
                let mut tally = Tally::default();
                let x = ops::ingest(chunk, input_exp, &mut tally);
                counters.ingest_saturations += tally.saturations;
                let (out, fc) = self.run_layers(0..n_layers, x, false, &mut counters)?;
                frames.push(self.frame(out, fc));
            }
            counters.inferences += 1;
        }
        counters.output_bytes = frames.iter().map(|f| 2 * f.values.len() as u64).sum();
        let report = self.report(&counters);
        Ok(RunOutput { frames, report, trace: counters.trace })
    }

    fn report(&self, c: &Counters) -> SimReport {
        let lanes = self.cfg.lanes(self.mode) as f64;
        let util = |useful: u64, cycles: u64| if cycles == 0 { 0.0 } else { useful as f64 / (lanes * cycles as f64) };
        let layers: Vec<LayerReport> = c
            .layers
            .iter()
            .enumerate()
            .map(|(i, t)| LayerReport {
                index: i,
                kind: self.model.layers[i].shape.kind,
                cycles: t.cycles,
                useful_mac_ops: t.useful_mac_ops,
                utilization: util(t.useful_mac_ops, t.cycles),
                weight_bytes_read: t.weight_bytes,
                bias_bytes_read: t.bias_bytes,
                saturation_events: t.saturations,
            })
            .collect();
        let mut sum = Tally::default();
        c.layers.iter().for_each(|t| sum.add(t));
        let total = sum.cycles + c.boundary;
        let cpi = if c.inferences == 0 { 0.0 } else { total as f64 / c.inferences as f64 };
        SimReport {
            n_macs: self.cfg.n_macs,
            weight_mode: self.mode,
            clock_mhz: self.cfg.clock_mhz,
            total_cycles: total,
            boundary_cycles: c.boundary,
            useful_mac_ops: sum.useful_mac_ops,
            utilization: util(sum.useful_mac_ops, total),
            inferences: c.inferences,
            cycles_per_inference: cpi,
            inferences_per_second: if cpi == 0.0 { 0.0 } else { self.cfg.clock_mhz * 1e6 / cpi },
            peak_gops: self.cfg.peak_gops(),
            weight_bytes_read: sum.weight_bytes,
            bias_bytes_read: sum.bias_bytes,
            input_bytes_read: c.input_bytes,
            output_bytes_written: c.output_bytes,
            saturation_events: sum.saturations + c.ingest_saturations,
            layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelId(pub usize);

/// Several resident models sharing one state pool.
pub struct Engine {
    cfg: EngineConfig,
    resident: Vec<Arc<CompiledModel>>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Engine { cfg, resident: Vec::new() })
    }

    pub fn pool_used(&self) -> usize {
        self.resident.iter().map(|m| m.state_bytes()).sum()
    }

    /// Make a model resident if its state fits next to the others.
    pub fn admit(&mut self, model: Arc<CompiledModel>) -> Result<ModelId, EngineError> {
        let needed = self.pool_used() + model.state_bytes();
        if needed > self.cfg.pool_bytes {
            return Err(EngineError::PoolOverflow { needed, available: self.cfg.pool_bytes });
        }
        if let Some(m) = self.cfg.weight_mode {
            if m != model.weight_mode {
                return Err(EngineError::WeightMode { config: m, model: model.weight_mode });
            }
        }
        self.resident.push(model);
        Ok(ModelId(self.resident.len() - 1))
    }

    pub fn session(&self, id: ModelId) -> Result<Session, EngineError> {
        let model = self.resident.get(id.0).ok_or(EngineError::UnknownModel(id.0))?;
        Session::new(Arc::clone(model), self.cfg.clone())
    }
}
