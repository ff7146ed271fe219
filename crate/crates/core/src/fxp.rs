//! Fixed-point arithmetic shared by every stage of the datapath.
//!
//! All values are two's-complement integers paired with a power-of-two
//! exponent: `real = stored × 2^exponent`. Rounding is round-half-to-even and
//! overflow always saturates. Saturation is reported back to the caller
//! through [`Sat`] so that run-level counters stay outside these functions.

use thiserror::Error;

/// Q1.14: hidden state, gate outputs, activation outputs.
pub const Q14_EXP: i32 = -14;
/// Q2.13: LSTM cell state.
pub const Q13_EXP: i32 = -13;
/// Q4.12: canonical activation-unit input.
pub const Q12_EXP: i32 = -12;
/// 1.0 in Q1.14.
pub const Q14_ONE: i16 = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FxpError {
    #[error("lane width {0} is not one of 8, 16, 32")]
    BadLaneWidth(u32),
    #[error("cannot choose an exponent for an empty tensor")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// A value together with whether producing it clamped at a lane bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sat<T> {
    pub value: T,
    pub saturated: bool,
}

impl<T> Sat<T> {
    fn new(value: T, saturated: bool) -> Self {
        Sat { value, saturated }
    }
}

/// Integer lane format: `bits`-wide storage with exponent `exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    bits: u32,
    pub exponent: i32,
}

impl QFormat {
    pub fn new(bits: u32, exponent: i32) -> Result<Self, FxpError> {
        match bits {
            8 | 16 | 32 => Ok(QFormat { bits, exponent }),
            other => Err(FxpError::BadLaneWidth(other)),
        }
    }

    pub const fn q14() -> Self {
        QFormat { bits: 16, exponent: Q14_EXP }
    }

    pub const fn q13() -> Self {
        QFormat { bits: 16, exponent: Q13_EXP }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn max_int(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    pub fn min_int(&self) -> i64 {
        -(1i64 << (self.bits - 1))
    }

    /// Real-valued representable range `[min, max]`.
    pub fn range(&self) -> (f64, f64) {
        let scale = pow2(self.exponent);
        (self.min_int() as f64 * scale, self.max_int() as f64 * scale)
    }

    /// Quantize a real value (round-half-to-even, saturating).
    pub fn quantize(&self, x: f64) -> Sat<i64> {
        let scaled = (x / pow2(self.exponent)).round_ties_even();
        if scaled > self.max_int() as f64 {
            Sat::new(self.max_int(), true)
        } else if scaled < self.min_int() as f64 {
            Sat::new(self.min_int(), true)
        } else {
            Sat::new(scaled as i64, false)
        }
    }

    pub fn dequantize(&self, v: i64) -> f64 {
        v as f64 * pow2(self.exponent)
    }
}

/// Integer tensor in a single [`QFormat`].
///
/// Storage is `i32` regardless of lane width; construction rejects elements
/// outside the lane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    rows: usize,
    cols: usize,
    data: Vec<i32>,
    fmt: QFormat,
}

impl QTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>, fmt: QFormat) -> Option<Self> {
        if rows.checked_mul(cols)? != data.len() {
            return None;
        }
        let (lo, hi) = (fmt.min_int(), fmt.max_int());
        if data.iter().any(|&v| (v as i64) < lo || (v as i64) > hi) {
            return None;
        }
        Some(QTensor { rows, cols, data, fmt })
    }

    /// Quantize real values row-major into `fmt`.
    pub fn from_real(rows: usize, cols: usize, values: &[f64], fmt: QFormat) -> Option<Self> {
        let data = values.iter().map(|&v| fmt.quantize(v).value as i32).collect();
        Self::new(rows, cols, data, fmt)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&v| self.fmt.dequantize(v as i64)).collect()
    }
}

/// MAC operating mode. `W16` pairs two 16×8 multipliers into one 16×16 MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    W8,
    W16,
}

impl MacMode {
    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(MacMode::W8),
            16 => Some(MacMode::W16),
            _ => None,
        }
    }

    pub fn weight_bits(self) -> u32 {
        match self {
            MacMode::W8 => 8,
            MacMode::W16 => 16,
        }
    }

    /// Accumulator width in bits.
    pub fn acc_bits(self) -> u32 {
        match self {
            MacMode::W8 => 32,
            MacMode::W16 => 40,
        }
    }

    pub fn acc_max(self) -> i64 {
        (1i64 << (self.acc_bits() - 1)) - 1
    }

    pub fn weight_range(self) -> (i32, i32) {
        match self {
            MacMode::W8 => (i8::MIN as i32, i8::MAX as i32),
            MacMode::W16 => (i16::MIN as i32, i16::MAX as i32),
        }
    }
}

/// Saturating MAC accumulator.
///
/// The bound is symmetric: `|value| ≤ 2^(acc_bits−1) − 1`. The saturated flag
/// is sticky for the lifetime of the accumulator (one dot product).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    value: i64,
    mode: MacMode,
    saturated: bool,
}

impl Accumulator {
    pub fn new(mode: MacMode) -> Self {
        Accumulator { value: 0, mode, saturated: false }
    }

    /// Start a dot product from a 32-bit bias already at accumulator scale.
    pub fn with_bias(mode: MacMode, bias: i32) -> Self {
        let mut acc = Self::new(mode);
        acc.add(bias as i64);
        acc
    }

    /// Start from an arbitrary value, clamping it into the bound.
    pub fn from_value(mode: MacMode, value: i64) -> Self {
        let mut acc = Self::new(mode);
        acc.add(value);
        acc
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn mode(&self) -> MacMode {
        self.mode
    }

    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    fn add(&mut self, term: i64) {
        let bound = self.mode.acc_max();
        // |value| < 2^39 and |term| < 2^40, so the i64 sum cannot wrap
        let sum = self.value + term;
        if sum > bound {
            self.value = bound;
            self.saturated = true;
        } else if sum < -bound {
            self.value = -bound;
            self.saturated = true;
        } else {
            self.value = sum;
        }
    }

    /// One multiply-accumulate: `value ← saturate(value + a×w)`.
    ///
    /// `w` must lie in the weight lane of the accumulator's mode; this is a
    /// caller invariant checked in debug builds.
    pub fn mac(&mut self, a: i16, w: i16) {
        debug_assert!({
            let (lo, hi) = self.mode.weight_range();
            (lo..=hi).contains(&(w as i32))
        });
        self.add(a as i64 * w as i64);
    }

    /// Consuming variant of [`Accumulator::mac`].
    pub fn mac_into(mut self, a: i16, w: i16) -> Self {
        self.mac(a, w);
        self
    }
}

/// `2^e` as f64, exact for the exponent range this crate uses.
pub fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Arithmetic right shift with round-half-to-even.
pub fn shr_round_even(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    if shift >= 63 {
        // |x| < 2^63 ≤ half of 2^shift: everything rounds to 0 except the
        // single tie at i64::MIN with shift 64, which cannot occur here.
        return 0;
    }
    let floor = x >> shift;
    let rem = x - (floor << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

pub fn saturate_i16(x: i64) -> Sat<i16> {
    if x > i16::MAX as i64 {
        Sat::new(i16::MAX, true)
    } else if x < i16::MIN as i64 {
        Sat::new(i16::MIN, true)
    } else {
        Sat::new(x as i16, false)
    }
}

pub fn saturate_i32(x: i64) -> Sat<i32> {
    if x > i32::MAX as i64 {
        Sat::new(i32::MAX, true)
    } else if x < i32::MIN as i64 {
        Sat::new(i32::MIN, true)
    } else {
        Sat::new(x as i32, false)
    }
}

/// Move an accumulator into the 16-bit activation domain:
/// `saturate_i16(round_half_even(acc / 2^shift))`.
pub fn requantize(acc: i64, shift: u32) -> Sat<i16> {
    saturate_i16(shr_round_even(acc, shift))
}

/// Re-express `x` (exponent `from`) at exponent `to` in a 16-bit lane.
///
/// Right shifts round half to even; left shifts saturate.
pub fn rescale_i16(x: i64, from: i32, to: i32) -> Sat<i16> {
    if to >= from {
        requantize(x, (to - from) as u32)
    } else {
        let left = (from - to) as u32;
        if x == 0 {
            return Sat::new(0, false);
        }
        if left >= 48 {
            return saturate_i16(if x > 0 { i64::MAX } else { i64::MIN });
        }
        saturate_i16(x.saturating_mul(1i64 << left))
    }
}

/// Product of two 16-bit lanes shifted right by `shift` with round-half-to-even.
pub fn mul_shift(a: i16, b: i16, shift: u32) -> Sat<i16> {
    requantize(a as i64 * b as i64, shift)
}

/// Element-wise Q1.14 product.
pub fn emul_q14(a: i16, b: i16) -> Sat<i16> {
    mul_shift(a, b, 14)
}

pub fn add_sat_i16(a: i16, b: i16) -> Sat<i16> {
    saturate_i16(a as i64 + b as i64)
}

/// Smallest exponent `e` with `round(max|v| / 2^e) ≤ 2^(bits−1) − 1`.
///
/// An all-zero input yields `−(bits−1)`.
pub fn choose_exponent(values: &[f64], bits: u32) -> Result<i32, FxpError> {
    if !matches!(bits, 8 | 16 | 32) {
        return Err(FxpError::BadLaneWidth(bits));
    }
    if values.is_empty() {
        return Err(FxpError::Empty);
    }
    let mut max_abs = 0f64;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(FxpError::NonFinite { index, value });
        }
        max_abs = max_abs.max(value.abs());
    }
    let limit = ((1i64 << (bits - 1)) - 1) as f64;
    if max_abs == 0.0 {
        return Ok(-(bits as i32 - 1));
    }
    let fits = |e: i32| (max_abs / pow2(e)).round_ties_even() <= limit;
    // log2 estimate, then walk to the exact boundary
    let mut e = max_abs.log2().floor() as i32 - (bits as i32 - 1);
    while !fits(e) {
        e += 1;
    }
    while fits(e - 1) {
        e -= 1;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mac_examples() {
        let acc = Accumulator::new(MacMode::W8).mac_into(100, 20);
        assert_eq!(acc.value(), 2000);
        let acc = Accumulator::from_value(MacMode::W8, 5).mac_into(-1, 1);
        assert_eq!(acc.value(), 4);
        let acc = Accumulator::from_value(MacMode::W8, i32::MAX as i64).mac_into(32767, 127);
        assert_eq!(acc.value(), i32::MAX as i64);
        assert!(acc.is_saturated());
    }

    #[test]
    fn saturated_flag_is_sticky() {
        let mut acc = Accumulator::from_value(MacMode::W8, i32::MAX as i64);
        acc.mac(1, 1);
        acc.mac(-32768, 127);
        assert!(acc.is_saturated());
        assert!(acc.value() < i32::MAX as i64);
    }

    #[test]
    fn w16_bound_is_40_bits() {
        let mut acc = Accumulator::new(MacMode::W16);
        for _ in 0..1024 {
            acc.mac(i16::MIN, i16::MIN);
        }
        assert_eq!(acc.value(), (1i64 << 39) - 1);
        assert!(acc.is_saturated());
    }

    #[test]
    fn requantize_examples() {
        assert_eq!(requantize(5, 1), Sat { value: 2, saturated: false });
        assert_eq!(requantize(7, 1), Sat { value: 4, saturated: false });
        assert_eq!(requantize(1 << 20, 0), Sat { value: 32767, saturated: true });
        assert_eq!(requantize(-5, 1).value, -2);
        assert_eq!(requantize(-7, 1).value, -4);
        assert_eq!(requantize(-6, 2).value, -2);
    }

    #[test]
    fn emul_examples() {
        assert_eq!(emul_q14(16384, 16384).value, 16384);
        assert_eq!(emul_q14(16384, -8192).value, -8192);
        assert_eq!(emul_q14(8192, 8192).value, 4096);
    }

    #[test]
    fn choose_exponent_examples() {
        assert_eq!(choose_exponent(&[0.5, -0.25], 8).unwrap(), -7);
        assert_eq!(choose_exponent(&[0.0], 8).unwrap(), -7);
        assert_eq!(choose_exponent(&[100.0], 8).unwrap(), 0);
        assert!(matches!(
            choose_exponent(&[1.0, f64::NAN], 8),
            Err(FxpError::NonFinite { index: 1, .. })
        ));
        assert_eq!(choose_exponent(&[], 8), Err(FxpError::Empty));
    }

    /// Exhaustive search over a wide exponent window, independent of the
    /// log2 starting point used by `choose_exponent`.
    fn exponent_oracle(values: &[f64], bits: u32) -> i32 {
        let limit = ((1i64 << (bits - 1)) - 1) as f64;
        let max_abs = values.iter().fold(0f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            return -(bits as i32 - 1);
        }
        (-200..200)
            .find(|&e| (max_abs / 2f64.powi(e)).round_ties_even() <= limit)
            .unwrap()
    }

    #[test]
    fn round_half_even_window_sweep() {
        // every accumulator in a 2^20 window, several shifts
        for shift in 1..=4u32 {
            let div = (1i64 << shift) as f64;
            for acc in -(1i64 << 19)..(1i64 << 19) {
                let exact = acc as f64 / div;
                let got = shr_round_even(acc, shift);
                assert!((got as f64 - exact).abs() <= 0.5);
                if (exact - exact.floor()) == 0.5 {
                    assert_eq!(got & 1, 0, "tie {acc} >> {shift} must go to even");
                }
            }
        }
    }

    #[test]
    fn brute_force_agreement() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let start: i64 = rng.random_range(-(1i64 << 31)..(1i64 << 31));
            let a: i16 = rng.random();
            let w: i8 = rng.random();
            let shift: u32 = rng.random_range(0..24);

            let acc = Accumulator::from_value(MacMode::W8, start).mac_into(a, w as i16);
            let wide = (start as i128 + a as i128 * w as i128)
                .clamp(-(i32::MAX as i128), i32::MAX as i128);
            assert_eq!(acc.value() as i128, wide);

            // wide-integer rounding: nearest, ties to even, by explicit remainder
            let d = 1i128 << shift;
            let q = wide.div_euclid(d);
            let r = wide.rem_euclid(d);
            let rounded = if 2 * r > d || (2 * r == d && q % 2 != 0) { q + 1 } else { q };
            let expected = rounded.clamp(i16::MIN as i128, i16::MAX as i128) as i16;
            assert_eq!(requantize(acc.value(), shift).value, expected);
        }
    }

    proptest! {
        #[test]
        fn mac_order_independent(pairs in prop::collection::vec((any::<i16>(), any::<i8>()), 1..64)) {
            // 64 terms of |a×w| ≤ 2^22 stay well inside the 32-bit bound
            let forward = pairs.iter().fold(Accumulator::new(MacMode::W8), |acc, &(a, w)| acc.mac_into(a, w as i16));
            let backward = pairs.iter().rev().fold(Accumulator::new(MacMode::W8), |acc, &(a, w)| acc.mac_into(a, w as i16));
            prop_assert_eq!(forward.value(), backward.value());
            prop_assert!(!forward.is_saturated());
        }

        #[test]
        fn requantize_zero_shift_is_saturation(x in -(1i64 << 39)..(1i64 << 39)) {
            prop_assert_eq!(requantize(x, 0), saturate_i16(x));
        }

        #[test]
        fn q14_one_is_identity(a in any::<i16>()) {
            prop_assert_eq!(emul_q14(a, Q14_ONE).value, a);
        }

        #[test]
        fn choose_exponent_matches_oracle(values in prop::collection::vec(-1e6f64..1e6, 1..32), bits in prop::sample::select(vec![8u32, 16, 32])) {
            prop_assert_eq!(choose_exponent(&values, bits).unwrap(), exponent_oracle(&values, bits));
        }

        #[test]
        fn rescale_left_then_right_roundtrips(x in -2000i64..2000, k in 0i32..4) {
            let up = rescale_i16(x, 0, -k);
            prop_assume!(!up.saturated);
            prop_assert_eq!(rescale_i16(up.value as i64, -k, 0).value as i64, x);
        }
    }
}
