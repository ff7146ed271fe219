//! Multi-mode activation unit.
//!
//! Tanh and Softsign are evaluated from 256-segment piecewise-linear tables
//! over `[0, 8)` (segment width 1/32) and extended to negative inputs by odd
//! symmetry. Sigmoid owns no table: it runs the Tanh path on `x/2` and maps
//! the result through `(t + 1) / 2`. ReLU and Identity are exact.
//!
//! The shipped tables are golden data files produced by [`fit_table`] and
//! committed under `data/`. [`build_table`] returns the golden copy so that
//! results do not depend on the platform's libm.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fxp::{self, Sat, Q14_EXP, Q14_ONE};

pub const SEGMENTS: usize = 256;
/// Bound on |PWL − f| over the real line.
pub const PWL_ERROR_BOUND: f64 = 2.0e-4;
/// Bound on |fixed-point output − f| over every int16 input.
pub const FIXED_ERROR_BOUND: f64 = 2.5e-4;
/// Fractional bits of the in-segment position (Q4.12 input has 12 fractional
/// bits, 5 of them select the segment).
const FRAC_BITS: u32 = 7;
const FRAC_MASK: i64 = (1 << FRAC_BITS) - 1;
/// Canonical activation input: Q4.12.
const CANONICAL_EXP: i32 = fxp::Q12_EXP;
const CANONICAL_LIMIT: i64 = 1 << 15;

const TANH_GOLDEN: &str = include_str!("../data/tanh_pwl.txt");
const SOFTSIGN_GOLDEN: &str = include_str!("../data/softsign_pwl.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("{0:?} has no piecewise-linear table")]
    NoTable(ActivationKind),
    #[error("non-finite activation input {0}")]
    NonFinite(f64),
    #[error("unknown activation `{0}`")]
    Unknown(String),
    #[error("table text line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
    Softsign,
    Relu,
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Softsign,
        ActivationKind::Relu,
        ActivationKind::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softsign => "softsign",
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
        }
    }

    /// Wire code used in the loadable layer table.
    pub fn code(self) -> u8 {
        match self {
            ActivationKind::Identity => 0,
            ActivationKind::Tanh => 1,
            ActivationKind::Sigmoid => 2,
            ActivationKind::Softsign => 3,
            ActivationKind::Relu => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Exponent at which the engine should present pre-activations.
    ///
    /// Sigmoid uses Q5.11 so its half-argument shift lands exactly on Q4.12
    /// and the usable input domain is `[-16, 16)`.
    pub fn input_exponent(self) -> i32 {
        match self {
            ActivationKind::Sigmoid => CANONICAL_EXP + 1,
            ActivationKind::Tanh | ActivationKind::Softsign => CANONICAL_EXP,
            ActivationKind::Relu | ActivationKind::Identity => Q14_EXP,
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = ActivationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ActivationError::Unknown(s.to_string()))
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One linear piece: `y = c0 + c1 × t`, `t ∈ [0, 1)` across the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// Q1.14 value at segment start.
    pub c0: i16,
    /// Q1.14 rise across the whole segment.
    pub c1: i16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PwlTable {
    kind: ActivationKind,
    segments: Vec<Segment>,
    sat_value: i16,
}

impl PwlTable {
    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Q1.14 output for canonical inputs at or beyond 8.0.
    pub fn sat_value(&self) -> i16 {
        self.sat_value
    }

    /// Fixed-point lookup for a non-negative canonical Q4.12 magnitude.
    fn lookup(&self, q: i64) -> i64 {
        if q >= CANONICAL_LIMIT {
            return self.sat_value as i64;
        }
        let seg = self.segments[(q >> FRAC_BITS) as usize];
        let frac = q & FRAC_MASK;
        seg.c0 as i64 + ((seg.c1 as i64 * frac + (1 << (FRAC_BITS - 1))) >> FRAC_BITS)
    }

    /// The table read as a continuous real-valued function (no output
    /// rounding), extended by odd symmetry.
    pub fn eval_real_pwl(&self, x: f64) -> f64 {
        let mag = x.abs();
        let y = if mag >= 8.0 {
            self.sat_value as f64
        } else {
            let pos = mag * 32.0;
            let s = (pos.floor() as usize).min(SEGMENTS - 1);
            let t = pos - s as f64;
            let seg = self.segments[s];
            seg.c0 as f64 + seg.c1 as f64 * t
        };
        y.copysign(x) * fxp::pow2(Q14_EXP)
    }

    /// Golden-file text: header lines followed by `segment c0 c1` records.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# rnnaccel piecewise-linear activation table v1").unwrap();
        writeln!(out, "# record: segment c0 c1 (Q1.14 decimal); x = segment/32 + t/32").unwrap();
        writeln!(out, "fn {}", self.kind).unwrap();
        writeln!(out, "segments {}", self.segments.len()).unwrap();
        writeln!(out, "sat {}", self.sat_value).unwrap();
        for (i, seg) in self.segments.iter().enumerate() {
            writeln!(out, "{i} {} {}", seg.c0, seg.c1).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ActivationError> {
        let err = |line: usize, message: &str| ActivationError::Parse { line, message: message.to_string() };
        let mut kind = None;
        let mut sat = None;
        let mut count = None;
        let mut segments = Vec::with_capacity(SEGMENTS);
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match fields.as_slice() {
                ["fn", name] => kind = Some(name.parse::<ActivationKind>()?),
                ["sat", v] => sat = Some(v.parse::<i16>().map_err(|e| err(line, &e.to_string()))?),
                ["segments", v] => count = Some(v.parse::<usize>().map_err(|e| err(line, &e.to_string()))?),
                [idx, c0, c1] => {
                    let idx: usize = idx.parse().map_err(|_| err(line, "bad segment index"))?;
                    if idx != segments.len() {
                        return Err(err(line, "segments out of order"));
                    }
                    let c0 = c0.parse().map_err(|_| err(line, "bad c0"))?;
                    let c1 = c1.parse().map_err(|_| err(line, "bad c1"))?;
                    segments.push(Segment { c0, c1 });
                }
                _ => return Err(err(line, "unrecognized record")),
            }
        }
        let kind = kind.ok_or_else(|| err(0, "missing fn"))?;
        if !matches!(kind, ActivationKind::Tanh | ActivationKind::Softsign) {
            return Err(ActivationError::NoTable(kind));
        }
        if count != Some(SEGMENTS) || segments.len() != SEGMENTS {
            return Err(err(0, "table must have exactly 256 segments"));
        }
        let sat_value = sat.ok_or_else(|| err(0, "missing sat"))?;
        Ok(PwlTable { kind, segments, sat_value })
    }
}

fn reference_fn(kind: ActivationKind) -> fn(f64) -> f64 {
    match kind {
        ActivationKind::Tanh => f64::tanh,
        ActivationKind::Softsign => |x| x / (1.0 + x.abs()),
        _ => unreachable!("only tanh and softsign are tabulated"),
    }
}

fn table_sat_value(kind: ActivationKind) -> i16 {
    // the function value at x = 8.0
    (reference_fn(kind)(8.0) * Q14_ONE as f64).round_ties_even() as i16
}

/// Offline least-max fit of a 256-segment table against double precision.
///
/// Each segment starts from the chord shifted by half its peak deviation
/// (the continuous minimax line for a concave piece), then searches the
/// neighbouring integer coefficients for the smallest max error over the
/// 2048 sample points per segment that a 2^-16 sweep visits. Segment 0 is
/// pinned to `c0 = 0`. Coefficients are constrained so the fixed-point
/// output is non-decreasing across segment boundaries.
pub fn fit_table(kind: ActivationKind) -> Result<PwlTable, ActivationError> {
    if !matches!(kind, ActivationKind::Tanh | ActivationKind::Softsign) {
        return Err(ActivationError::NoTable(kind));
    }
    const SAMPLES: usize = 2048;
    let f = reference_fn(kind);
    let scale = Q14_ONE as f64;
    let sat_value = table_sat_value(kind);
    let mut segments = Vec::with_capacity(SEGMENTS);
    let mut prev_end = 0i64;
    let mut ys = vec![0f64; SAMPLES + 1];
    for s in 0..SEGMENTS {
        for (k, y) in ys.iter_mut().enumerate() {
            *y = f((s as f64 + k as f64 / SAMPLES as f64) / 32.0) * scale;
        }
        let (y0, y1) = (ys[0], ys[SAMPLES]);
        let rise = y1 - y0;
        let peak = (0..=SAMPLES)
            .map(|k| ys[k] - (y0 + rise * k as f64 / SAMPLES as f64))
            .fold(0f64, f64::max);
        let c0_center = (y0 + peak / 2.0).round() as i64;
        let c1_center = rise.round() as i64;

        let c0_range = if s == 0 { 0..=0 } else { (c0_center - 3).max(prev_end)..=(c0_center + 3).max(prev_end) };
        let mut best: Option<(f64, i64, i64)> = None;
        for c0 in c0_range {
            for c1 in (c1_center - 4).max(0)..=c1_center + 4 {
                let end = c0 + ((c1 * 127 + 64) >> FRAC_BITS);
                if end > sat_value as i64 {
                    continue;
                }
                let err = (0..SAMPLES)
                    .map(|k| (c0 as f64 + c1 as f64 * k as f64 / SAMPLES as f64 - ys[k]).abs())
                    .fold(0f64, f64::max);
                if best.is_none_or(|(e, _, _)| err < e) {
                    best = Some((err, c0, c1));
                }
            }
        }
        let (_, c0, c1) = best.expect("fit search space is never empty");
        prev_end = c0 + ((c1 * 127 + 64) >> FRAC_BITS);
        segments.push(Segment { c0: c0 as i16, c1: c1 as i16 });
    }
    Ok(PwlTable { kind, segments, sat_value })
}

/// The golden table for Tanh or Softsign.
pub fn build_table(kind: ActivationKind) -> Result<PwlTable, ActivationError> {
    match kind {
        ActivationKind::Tanh => PwlTable::from_text(TANH_GOLDEN),
        ActivationKind::Softsign => PwlTable::from_text(SOFTSIGN_GOLDEN),
        other => Err(ActivationError::NoTable(other)),
    }
}

/// Both tables the unit needs. Immutable once built.
#[derive(Debug, Clone)]
pub struct ActivationTables {
    tanh: PwlTable,
    softsign: PwlTable,
}

impl ActivationTables {
    pub fn new(tanh: PwlTable, softsign: PwlTable) -> Self {
        assert_eq!(tanh.kind, ActivationKind::Tanh);
        assert_eq!(softsign.kind, ActivationKind::Softsign);
        ActivationTables { tanh, softsign }
    }

    /// Process-wide golden tables.
    pub fn golden() -> &'static ActivationTables {
        static TABLES: OnceLock<ActivationTables> = OnceLock::new();
        TABLES.get_or_init(|| {
            ActivationTables::new(
                build_table(ActivationKind::Tanh).expect("golden tanh table"),
                build_table(ActivationKind::Softsign).expect("golden softsign table"),
            )
        })
    }

    pub fn tanh(&self) -> &PwlTable {
        &self.tanh
    }

    pub fn softsign(&self) -> &PwlTable {
        &self.softsign
    }

    /// Fixed-point activation of `x × 2^e_x`, returned in Q1.14.
    ///
    /// `saturated` is set only when ReLU/Identity clamp at the int16 lane.
    pub fn eval(&self, kind: ActivationKind, x: i16, e_x: i32) -> Sat<i16> {
        match kind {
            ActivationKind::Tanh => Sat { value: odd_eval(&self.tanh, x, e_x, 0), saturated: false },
            ActivationKind::Softsign => Sat { value: odd_eval(&self.softsign, x, e_x, 0), saturated: false },
            ActivationKind::Sigmoid => {
                let t = odd_eval(&self.tanh, x, e_x, 1) as i32;
                Sat { value: ((t + Q14_ONE as i32) >> 1) as i16, saturated: false }
            }
            ActivationKind::Relu => {
                let r = fxp::rescale_i16(x as i64, e_x, Q14_EXP);
                Sat { value: r.value.max(0), saturated: r.saturated && x > 0 }
            }
            ActivationKind::Identity => fxp::rescale_i16(x as i64, e_x, Q14_EXP),
        }
    }
}

/// Map `|x| × 2^e_x / 2^halvings` onto canonical Q4.12 with round-half-even;
/// `None` if the value reaches 8.0.
fn canonical_magnitude(x: i16, e_x: i32, halvings: i32) -> Option<i64> {
    let mag = (x as i64).abs();
    let shift = e_x - CANONICAL_EXP - halvings;
    let q = if shift >= 0 {
        if mag != 0 && (shift >= 16 || mag << shift >= CANONICAL_LIMIT) {
            return None;
        }
        mag << shift
    } else {
        fxp::shr_round_even(mag, (-shift) as u32)
    };
    (q < CANONICAL_LIMIT).then_some(q)
}

fn odd_eval(table: &PwlTable, x: i16, e_x: i32, halvings: i32) -> i16 {
    let y = match canonical_magnitude(x, e_x, halvings) {
        Some(q) => table.lookup(q),
        None => table.sat_value as i64,
    };
    (if x < 0 { -y } else { y }) as i16
}

/// Fixed-point evaluation against the golden tables.
pub fn eval_fixed(kind: ActivationKind, x: i16, e_x: i32, tables: &ActivationTables) -> i16 {
    tables.eval(kind, x, e_x).value
}

/// Double-precision reference.
pub fn eval_real(kind: ActivationKind, x: f64) -> Result<f64, ActivationError> {
    if !x.is_finite() {
        return Err(ActivationError::NonFinite(x));
    }
    Ok(real(kind, x))
}

/// Unchecked double-precision reference, for inner loops that already know
/// their inputs are finite.
pub fn real(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        ActivationKind::Softsign => x / (1.0 + x.abs()),
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::Identity => x,
    }
}

/// Maximum errors for one function from the exhaustive sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: ActivationKind,
    /// Max |real-valued PWL − f| over `[-8, 8)` at step 2^-16.
    pub pwl_max_error: f64,
    pub pwl_worst_x: f64,
    /// Max |fixed-point output − f| over every int16 input at Q4.12.
    pub fixed_max_error: f64,
    pub fixed_worst_input: i16,
}

/// Real-valued PWL error and exhaustive fixed-point error for one function.
pub fn sweep(kind: ActivationKind, tables: &ActivationTables) -> Result<SweepResult, ActivationError> {
    let pwl: Box<dyn Fn(f64) -> f64> = match kind {
        ActivationKind::Tanh => Box::new(|x| tables.tanh.eval_real_pwl(x)),
        ActivationKind::Softsign => Box::new(|x| tables.softsign.eval_real_pwl(x)),
        ActivationKind::Sigmoid => Box::new(|x| 0.5 * (1.0 + tables.tanh.eval_real_pwl(x / 2.0))),
        other => return Err(ActivationError::NoTable(other)),
    };
    let mut result = SweepResult {
        kind,
        pwl_max_error: 0.0,
        pwl_worst_x: 0.0,
        fixed_max_error: 0.0,
        fixed_worst_input: 0,
    };
    let step = fxp::pow2(-16);
    for k in -(8i64 << 16)..(8i64 << 16) {
        let x = k as f64 * step;
        let err = (pwl(x) - real(kind, x)).abs();
        if err > result.pwl_max_error {
            result.pwl_max_error = err;
            result.pwl_worst_x = x;
        }
    }
    let q14 = fxp::pow2(Q14_EXP);
    let q12 = fxp::pow2(CANONICAL_EXP);
    for raw in i16::MIN..=i16::MAX {
        let got = tables.eval(kind, raw, CANONICAL_EXP).value as f64 * q14;
        let err = (got - real(kind, raw as f64 * q12)).abs();
        if err > result.fixed_max_error {
            result.fixed_max_error = err;
            result.fixed_worst_input = raw;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> &'static ActivationTables {
        ActivationTables::golden()
    }

    #[test]
    fn golden_tables_match_fitter() {
        for kind in [ActivationKind::Tanh, ActivationKind::Softsign] {
            assert_eq!(fit_table(kind).unwrap(), build_table(kind).unwrap(), "{kind} golden drifted");
        }
    }

    #[test]
    fn table_invariants() {
        for (kind, sat) in [(ActivationKind::Tanh, 16384), (ActivationKind::Softsign, 14564)] {
            let t = build_table(kind).unwrap();
            assert_eq!(t.segments().len(), 256);
            assert_eq!(t.segments()[0].c0, 0);
            assert_eq!(t.sat_value(), sat);
            assert!(t.segments().windows(2).all(|w| w[0].c0 <= w[1].c0));
        }
    }

    #[test]
    fn softsign_last_segment_start() {
        let t = build_table(ActivationKind::Softsign).unwrap();
        let expected = 7.96875 / 8.96875 * 16384.0;
        assert!((t.segments()[255].c0 as f64 - expected).abs() <= 2.0);
    }

    #[test]
    fn no_table_for_relu() {
        assert_eq!(build_table(ActivationKind::Relu), Err(ActivationError::NoTable(ActivationKind::Relu)));
        assert!(fit_table(ActivationKind::Sigmoid).is_err());
    }

    #[test]
    fn eval_fixed_examples() {
        let t = tables();
        assert_eq!(eval_fixed(ActivationKind::Tanh, 0, -12, t), 0);
        assert_eq!(eval_fixed(ActivationKind::Sigmoid, 0, -12, t), 8192);
        assert_eq!(eval_fixed(ActivationKind::Tanh, 32767, -12, t), 16384);
        assert_eq!(eval_fixed(ActivationKind::Relu, -5, -12, t), 0);
        assert_eq!(eval_fixed(ActivationKind::Relu, -5, 3, t), 0);
        assert_eq!(eval_fixed(ActivationKind::Identity, 100, -12, t), 400);
        assert_eq!(eval_fixed(ActivationKind::Tanh, i16::MIN, -12, t), -16384);
    }

    #[test]
    fn eval_real_examples() {
        assert!((eval_real(ActivationKind::Tanh, 0.5).unwrap() - 0.4621171573).abs() < 1e-10);
        assert_eq!(eval_real(ActivationKind::Softsign, -1.0).unwrap(), -0.5);
        assert_eq!(eval_real(ActivationKind::Sigmoid, 0.0).unwrap(), 0.5);
        assert_eq!(eval_real(ActivationKind::Relu, -3.0).unwrap(), 0.0);
        assert!(eval_real(ActivationKind::Tanh, f64::INFINITY).is_err());
    }

    #[test]
    fn odd_symmetry_and_sigmoid_sharing() {
        let t = tables();
        for x in (i16::MIN + 1)..=i16::MAX {
            for e in [-14, -12, -11, -9] {
                assert_eq!(t.eval(ActivationKind::Tanh, -x, e).value, -t.eval(ActivationKind::Tanh, x, e).value);
                assert_eq!(t.eval(ActivationKind::Softsign, -x, e).value, -t.eval(ActivationKind::Softsign, x, e).value);
            }
            let half = odd_eval(t.tanh(), x, -12, 1) as i32;
            assert_eq!(t.eval(ActivationKind::Sigmoid, x, -12).value as i32, (half + 16384) >> 1);
        }
    }

    #[test]
    fn monotone_and_bounded() {
        let t = tables();
        for kind in ActivationKind::ALL {
            let mut prev = i16::MIN;
            for x in i16::MIN..=i16::MAX {
                let y = t.eval(kind, x, -12).value;
                assert!(y >= prev, "{kind} not monotone at {x}");
                if matches!(kind, ActivationKind::Tanh | ActivationKind::Sigmoid | ActivationKind::Softsign) {
                    assert!((-16384..=16384).contains(&y));
                }
                prev = y;
            }
        }
    }

    #[test]
    fn sigmoid_extended_domain() {
        // at Q5.11, 15.9995 saturates to ~1 and -16 to ~0
        let t = tables();
        assert_eq!(t.eval(ActivationKind::Sigmoid, i16::MAX, -11).value, 16384);
        assert_eq!(t.eval(ActivationKind::Sigmoid, i16::MIN, -11).value, 0);
        let y = t.eval(ActivationKind::Sigmoid, 2048 * 3, -11).value as f64 / 16384.0;
        assert!((y - real(ActivationKind::Sigmoid, 3.0)).abs() < 2.5e-4);
    }

    #[test]
    fn sweep_error_budget() {
        for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Softsign] {
            let r = sweep(kind, tables()).unwrap();
            assert!(r.pwl_max_error <= PWL_ERROR_BOUND, "{kind} pwl {r:?}");
            assert!(r.fixed_max_error <= FIXED_ERROR_BOUND, "{kind} fixed {r:?}");
        }
        assert!(sweep(ActivationKind::Relu, tables()).is_err());
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let t = build_table(ActivationKind::Tanh).unwrap();
        assert_eq!(PwlTable::from_text(&t.to_text()).unwrap(), t);
        assert!(PwlTable::from_text("fn relu\nsegments 256\nsat 0\n").is_err());
        assert!(PwlTable::from_text("fn tanh\nsegments 256\nsat 1\n0 0 1\n").is_err());
    }
}

#[cfg(test)]
mod regenerate {
    use super::*;

    /// Rewrites `data/*.txt` from the fitter: `cargo test -p rnnaccel-core -- --ignored regenerate`.
    #[test]
    #[ignore]
    fn regenerate_golden_tables() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        for (kind, file) in [(ActivationKind::Tanh, "tanh_pwl.txt"), (ActivationKind::Softsign, "softsign_pwl.txt")] {
            std::fs::write(dir.join(file), fit_table(kind).unwrap().to_text()).unwrap();
        }
    }
}
