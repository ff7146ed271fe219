use super::{EngineConfig, EngineError};
use crate::activation::{ActivationKind, ActivationTables};
use crate::fxp::{self, Accumulator, MacMode, Q13_EXP, Q14_EXP, Q14_ONE};
use crate::loadable::{CompiledGate, CompiledLayer};

/// Counters accumulated by the datapath ops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub cycles: u64,
    pub useful_mac_ops: u64,
    pub weight_bytes: u64,
    pub bias_bytes: u64,
    pub saturations: u64,
}

impl Tally {
    pub fn add(&mut self, other: &Tally) {
        self.cycles += other.cycles;
        self.useful_mac_ops += other.useful_mac_ops;
        self.weight_bytes += other.weight_bytes;
        self.bias_bytes += other.bias_bytes;
        self.saturations += other.saturations;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatVec {
    /// One accumulator per row at exponent `e_w − 14` for Q1.14 inputs.
    pub acc: Vec<i64>,
    pub tally: Tally,
}

/// `ceil(R / lanes) × (C + p_drain)`, plus one stall cycle per pass when
/// decompression stalls are modeled.
pub fn matvec_cycles(rows: usize, cols: usize, cfg: &EngineConfig, mode: MacMode, compressed: bool) -> u64 {
    let passes = rows.div_ceil(cfg.lanes(mode) as usize) as u64;
    let stall = u64::from(compressed && cfg.decompress_stall);
    passes * (cols as u64 + cfg.p_drain as u64 + stall)
}

fn dot_rows<I>(weights: I, rows: usize, cols: usize, invec: &[i16], bias: &[i32], mode: MacMode) -> Result<(Vec<i64>, u64), EngineError>
where
    I: IntoIterator<Item = Result<i16, crate::codec::CodecError>>,
{
    let mut weights = weights.into_iter();
    let mut out = Vec::with_capacity(rows);
    let mut saturated = 0;
    for &b in bias.iter().take(rows) {
        let mut acc = Accumulator::with_bias(mode, b);
        for &a in invec.iter().take(cols) {
            let w = weights.next().ok_or(crate::codec::CodecError::Truncated { needed: rows * cols, have: 0 })??;
            acc.mac(a, w);
        }
        saturated += u64::from(acc.is_saturated());
        out.push(acc.value());
    }
    Ok((out, saturated))
}

/// Fused gate mat-vec: `acc[r] = bias[r] + Σ_c W[r][c] × invec[c]`.
pub fn matvec(gate: &CompiledGate, invec: &[i16], cfg: &EngineConfig, mode: MacMode) -> Result<MatVec, EngineError> {
    let rows = gate.bias.len();
    let cols = invec.len();
    debug_assert_eq!(gate.weights.len(), rows * cols);
    let (acc, saturations) = match (&gate.blob, cfg.stream_weights) {
        (Some(blob), true) => dot_rows(blob.decoder(), rows, cols, invec, &gate.bias, mode)?,
        _ => dot_rows(gate.weights.iter().map(|&w| Ok(w)), rows, cols, invec, &gate.bias, mode)?,
    };
    Ok(MatVec {
        acc,
        tally: Tally {
            cycles: matvec_cycles(rows, cols, cfg, mode, gate.blob.is_some()),
            useful_mac_ops: (rows * cols) as u64,
            weight_bytes: gate.weight_bytes(mode),
            bias_bytes: 4 * rows as u64,
            saturations,
        },
    })
}

/// Bring accumulators to the kind's input exponent and apply the activation
/// unit. Clamping a table function's argument is not counted: the table
/// saturates at a smaller magnitude anyway.
fn activate(
    acc: &[i64],
    acc_exp: i32,
    kind: ActivationKind,
    tables: &ActivationTables,
    tally: &mut Tally,
) -> Vec<i16> {
    let e_in = kind.input_exponent();
    acc.iter()
        .map(|&a| {
            let pre = fxp::rescale_i16(a, acc_exp, e_in);
            let y = tables.eval(kind, pre.value, e_in);
            let clamped = matches!(kind, ActivationKind::Relu | ActivationKind::Identity) && pre.saturated;
            tally.saturations += u64::from(y.saturated || clamped);
            y.value
        })
        .collect()
}

fn concat(x: &[i16], h: &[i16]) -> Vec<i16> {
    let mut v = Vec::with_capacity(x.len() + h.len());
    v.extend_from_slice(x);
    v.extend_from_slice(h);
    v
}

fn gate_activation(
    gate: &CompiledGate,
    invec: &[i16],
    kind: ActivationKind,
    cfg: &EngineConfig,
    mode: MacMode,
    tables: &ActivationTables,
    tally: &mut Tally,
) -> Result<Vec<i16>, EngineError> {
    let mv = matvec(gate, invec, cfg, mode)?;
    tally.add(&mv.tally);
    Ok(activate(&mv.acc, gate.bias_exp(), kind, tables, tally))
}

fn sat(s: fxp::Sat<i16>, tally: &mut Tally) -> i16 {
    tally.saturations += u64::from(s.saturated);
    s.value
}

/// One GRU timestep. `x` and `h` are Q1.14; `h` is updated in place.
///
/// `h' = (1 − z)⊙h̃ + z⊙h` with `h̃ = tanh(W_h·[x; r⊙h] + b_h)`.
pub fn step_gru(
    layer: &CompiledLayer,
    x: &[i16],
    h: &mut [i16],
    cfg: &EngineConfig,
    mode: MacMode,
    tables: &ActivationTables,
) -> Result<Tally, EngineError> {
    let mut t = Tally::default();
    let xh = concat(x, h);
    let z = gate_activation(&layer.gates[0], &xh, ActivationKind::Sigmoid, cfg, mode, tables, &mut t)?;
    let r = gate_activation(&layer.gates[1], &xh, ActivationKind::Sigmoid, cfg, mode, tables, &mut t)?;
    let rh: Vec<i16> = r.iter().zip(h.iter()).map(|(&r, &h)| sat(fxp::emul_q14(r, h), &mut t)).collect();
    let cand = gate_activation(&layer.gates[2], &concat(x, &rh), ActivationKind::Tanh, cfg, mode, tables, &mut t)?;
    for ((h, &z), &c) in h.iter_mut().zip(&z).zip(&cand) {
        let keep = sat(fxp::emul_q14(z, *h), &mut t);
        let new = sat(fxp::emul_q14(Q14_ONE - z, c), &mut t);
        *h = sat(fxp::add_sat_i16(new, keep), &mut t);
    }
    t.cycles += 2 * cfg.d_dep as u64;
    Ok(t)
}

/// One LSTM timestep. `h` is Q1.14 and `c` is Q2.13, both updated in place.
///
/// `c' = f⊙c + i⊙g` saturated to Q2.13, `h' = o⊙tanh(c')`.
pub fn step_lstm(
    layer: &CompiledLayer,
    x: &[i16],
    h: &mut [i16],
    c: &mut [i16],
    cfg: &EngineConfig,
    mode: MacMode,
    tables: &ActivationTables,
) -> Result<Tally, EngineError> {
    let mut t = Tally::default();
    let xh = concat(x, h);
    let i = gate_activation(&layer.gates[0], &xh, ActivationKind::Sigmoid, cfg, mode, tables, &mut t)?;
    let f = gate_activation(&layer.gates[1], &xh, ActivationKind::Sigmoid, cfg, mode, tables, &mut t)?;
    let g = gate_activation(&layer.gates[2], &xh, ActivationKind::Tanh, cfg, mode, tables, &mut t)?;
    let o = gate_activation(&layer.gates[3], &xh, ActivationKind::Sigmoid, cfg, mode, tables, &mut t)?;
    for k in 0..h.len() {
        // Q1.14 × Q2.13 >> 14 and Q1.14 × Q1.14 >> 15 both land on Q2.13
        let fc = sat(fxp::mul_shift(f[k], c[k], 14), &mut t);
        let ig = sat(fxp::mul_shift(i[k], g[k], 15), &mut t);
        c[k] = sat(fxp::add_sat_i16(fc, ig), &mut t);
        let tc = tables.eval(ActivationKind::Tanh, c[k], Q13_EXP).value;
        h[k] = sat(fxp::emul_q14(o[k], tc), &mut t);
    }
    t.cycles += 2 * cfg.d_dep as u64;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcOutput {
    /// Activated output in Q1.14.
    pub values: Vec<i16>,
    /// Raw accumulators before requantization.
    pub acc: Vec<i64>,
    pub acc_exp: i32,
    pub tally: Tally,
}

pub fn run_fc(
    layer: &CompiledLayer,
    x: &[i16],
    cfg: &EngineConfig,
    mode: MacMode,
    tables: &ActivationTables,
) -> Result<FcOutput, EngineError> {
    let gate = &layer.gates[0];
    let mv = matvec(gate, x, cfg, mode)?;
    let mut tally = mv.tally;
    let values = activate(&mv.acc, gate.bias_exp(), layer.shape.activation, tables, &mut tally);
    Ok(FcOutput { values, acc: mv.acc, acc_exp: gate.bias_exp(), tally })
}

/// Requantize a raw input frame at exponent `e` to Q1.14, saturating.
pub(crate) fn ingest(frame: &[i16], e: i32, tally: &mut Tally) -> Vec<i16> {
    frame.iter().map(|&v| sat(fxp::rescale_i16(v as i64, e, Q14_EXP), tally)).collect()
}
