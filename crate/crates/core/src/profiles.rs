//! Benchmark networks with seeded synthetic weights, plus the small random
//! networks used for oracle checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::ActivationKind;
use crate::model::{ExecMode, FloatGate, FloatLayer, FloatModel, LayerShape};

pub const KWS_SEQ_LEN: usize = 10;
pub const AFIB_HIDDEN: usize = 70;
pub const AFIB_SEQ_LEN: usize = 64;

/// Keyword spotting: GRU(10→154) + FC(154→12), streamed one frame per inference.
pub fn kws_gru(seed: u64) -> FloatModel {
    FloatModel::synthetic(
        "kws-gru",
        &[LayerShape::gru(10, 154), LayerShape::fc(154, 12, ActivationKind::Identity)],
        KWS_SEQ_LEN,
        ExecMode::Streaming,
        seed,
    )
}

/// Bidirectional LSTM arrhythmia detector, built from three engine models:
/// a forward and a backward LSTM(1→70) over the same sequence and an
/// FC(140→2) head over their concatenated final states. The layer sizes are
/// a stand-in chosen to total 40,602 parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: FloatModel,
    pub backward: FloatModel,
    pub head: FloatModel,
}

impl BiLstm {
    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count() + self.head.param_count()
    }

    pub fn models(&self) -> [&FloatModel; 3] {
        [&self.forward, &self.backward, &self.head]
    }
}

pub fn afib_bilstm(seed: u64) -> BiLstm {
    let lstm = |name: &str, s| FloatModel::synthetic(name, &[LayerShape::lstm(1, AFIB_HIDDEN)], AFIB_SEQ_LEN, ExecMode::Batch, s);
    BiLstm {
        forward: lstm("afib-fwd", seed),
        backward: lstm("afib-bwd", seed.wrapping_add(1)),
        head: FloatModel::synthetic(
            "afib-head",
            &[LayerShape::fc(2 * AFIB_HIDDEN, 2, ActivationKind::Identity)],
            1,
            ExecMode::Batch,
            seed.wrapping_add(2),
        ),
    }
}

/// Random recurrent network with every dimension at most 8 and at most 4
/// timesteps: one GRU or LSTM layer, optionally followed by an FC head.
pub fn random_small_net(seed: u64) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_5A11);
    let input = rng.random_range(1..=8);
    let hidden = rng.random_range(1..=8);
    let seq_len = rng.random_range(1..=4);
    let mut shapes =
        vec![if rng.random_bool(0.5) { LayerShape::gru(input, hidden) } else { LayerShape::lstm(input, hidden) }];
    if rng.random_bool(0.5) {
        let act = [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Softsign, ActivationKind::Identity]
            [rng.random_range(0..4)];
        shapes.push(LayerShape::fc(hidden, rng.random_range(1..=8), act));
    }
    FloatModel::synthetic(&format!("small-{seed}"), &shapes, seq_len, ExecMode::Batch, rng.random())
}

/// Seeded uniform input in [-1, 1) as Q1.14 integers.
pub fn random_input(len: usize, seed: u64) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-16384..16384)).collect()
}

/// Single Identity FC layer whose parameters survive 16-bit quantization
/// exactly: integer weights (exponent 0) with one of magnitude ≥ 2^14, and
/// integer biases at the accumulator exponent. With Q1.14 inputs every
/// engine product and sum is exact.
pub fn exact_fc(seed: u64) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=8);
    let output = rng.random_range(1..=8);
    let mut weights: Vec<f64> = (0..input * output).map(|_| rng.random_range(-32767..=32767) as f64).collect();
    let pin = rng.random_range(0..weights.len());
    weights[pin] = (if rng.random_bool(0.5) { 1.0 } else { -1.0 }) * rng.random_range(16384..=32767) as f64;
    let bias_scale = crate::fxp::pow2(crate::fxp::Q14_EXP);
    let bias = (0..output).map(|_| rng.random_range(-(1 << 24)..(1 << 24)) as f64 * bias_scale).collect();
    FloatModel {
        name: format!("exact-fc-{seed}"),
        seq_len: 1,
        exec_mode: ExecMode::Batch,
        layers: vec![FloatLayer {
            shape: LayerShape::fc(input, output, ActivationKind::Identity),
            gates: vec![FloatGate { weights, bias }],
        }],
    }
}
