use std::sync::Arc;

use super::*;
use crate::codec::{CompressionMode, IndexBits};
use crate::fxp::MacMode;
use crate::loadable::{compile, decompile, CompileOptions};
use crate::model::{FloatGate, LayerShape};
use crate::profiles::{exact_fc, random_input, random_small_net};

fn zero_model(shape: LayerShape) -> FloatModel {
    let (rows, cols) = shape.weight_shape();
    FloatModel {
        name: "zero".into(),
        seq_len: 1,
        exec_mode: ExecMode::Streaming,
        layers: vec![FloatLayer {
            shape,
            gates: vec![FloatGate { weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }; shape.kind.gate_count()],
        }],
    }
}

#[test]
fn oracle_closed_forms() {
    let gru = zero_model(LayerShape::gru(2, 3));
    let init = [RealState { h: vec![1.0; 3], c: vec![] }];
    let f = forward_from(&gru, &[0.3, -0.2], &init).unwrap();
    assert_eq!(f.outputs[0], [0.5; 3]);

    let lstm = zero_model(LayerShape::lstm(1, 2));
    let init = [RealState { h: vec![0.0; 2], c: vec![1.0; 2] }];
    let f = forward_from(&lstm, &[0.7], &init).unwrap();
    for v in &f.outputs[0] {
        assert!((v - 0.231_058_578_630_005).abs() < 1e-12, "{v}");
    }
    assert_eq!(f.final_state[0].c, [0.5; 2]);

    let mut fc = zero_model(LayerShape::fc(3, 3, ActivationKind::Identity));
    for i in 0..3 {
        fc.layers[0].gates[0].weights[i * 3 + i] = 1.0;
    }
    let x = [0.25, -1.5, 3.0];
    assert_eq!(forward(&fc, &x).unwrap().outputs[0], x);
}

#[test]
fn oracle_and_engine_agree_on_zero_weights() {
    // GRU h' = h/2, LSTM c' = c/2 within 1 LSB
    let gru = zero_model(LayerShape::gru(2, 4));
    let compiled = Arc::new(compile(&gru, CompileOptions::default()).unwrap().model);
    let mut s = crate::engine::Session::new(compiled, EngineConfig::default()).unwrap();
    let h0 = [16384, -9000, 123, 7777];
    s.set_initial_state(0, &h0, None).unwrap();
    s.run(&[0, 0], -14).unwrap();
    for (h, h0) in s.state(0).0.iter().zip(h0) {
        assert!((*h as f64 - h0 as f64 / 2.0).abs() <= 1.0);
    }

    let lstm = zero_model(LayerShape::lstm(1, 3));
    let compiled = Arc::new(compile(&lstm, CompileOptions::default()).unwrap().model);
    let mut s = crate::engine::Session::new(compiled, EngineConfig::default()).unwrap();
    let c0 = [8192, -16000, 5];
    s.set_initial_state(0, &[0; 3], Some(&c0)).unwrap();
    s.run(&[0], -14).unwrap();
    for (c, c0) in s.state(0).1.iter().zip(c0) {
        assert!((*c as f64 - c0 as f64 / 2.0).abs() <= 1.0);
    }
}

#[test]
fn exact_fc_is_bit_exact() {
    let cfg = EngineConfig::default();
    for seed in 0..100 {
        let m = exact_fc(seed);
        let c = compile(&m, CompileOptions { weight_mode: MacMode::W16, compression: CompressionMode::None }).unwrap();
        assert_eq!(c.model.layers[0].gates[0].weight_exp, 0);
        let input = random_input(m.input_dim() * 3, seed);
        let r = validate(&Arc::new(c.model), &m, &input, -14, &cfg, 0.0).unwrap();
        assert_eq!(r.max_abs_error, 0.0, "seed {seed}");
        assert!(r.pass);
    }
}

fn small_net_error(seed: u64, compression: CompressionMode) -> (f64, f64) {
    let m = random_small_net(seed);
    let c = compile(&m, CompileOptions { weight_mode: MacMode::W8, compression }).unwrap();
    let input = random_input(m.input_dim() * m.seq_len * 2, seed);
    let compiled = Arc::new(c.model);
    let r = validate(&compiled, &m, &input, -14, &EngineConfig::default(), DEFAULT_TOLERANCE).unwrap();
    // weights-only error: quantized weights, double arithmetic
    let real: Vec<f64> = input.iter().map(|&v| v as f64 / 16384.0).collect();
    let exact = forward(&m, &real).unwrap().outputs;
    let wq = forward(&decompile(&compiled, "q"), &real).unwrap().outputs;
    let wq_err = exact.iter().flatten().zip(wq.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (r.max_abs_error, wq_err)
}

/// The 1000-seed calibration run behind `DEFAULT_TOLERANCE`.
#[test]
fn tolerance_calibration() {
    let mut errs = Vec::new();
    let (mut wq_sum, mut total_sum) = (0.0, 0.0);
    for seed in 0..1000 {
        let (e, wq) = small_net_error(seed, CompressionMode::None);
        errs.push(e);
        wq_sum += wq;
        total_sum += e;
    }
    errs.sort_by(f64::total_cmp);
    let p999 = errs[998];
    let passing = errs.iter().filter(|&&e| e <= DEFAULT_TOLERANCE).count();
    println!("calibration: p50 {:.2e} p99 {:.2e} p99.9 {:.2e} max {:.2e}", errs[500], errs[989], p999, errs[999]);
    assert!(passing >= 999, "{passing}");
    assert!(2.0 * p999 <= DEFAULT_TOLERANCE, "p99.9 {p999}");
    assert!(wq_sum <= total_sum);
}

#[test]
fn compression_degrades_monotonically() {
    let modes = [
        CompressionMode::None,
        CompressionMode::Codebook(IndexBits::FOUR),
        CompressionMode::Codebook(IndexBits::TWO),
    ];
    let mut means = [0.0; 3];
    for seed in 0..40 {
        for (m, mode) in modes.iter().enumerate() {
            means[m] += small_net_error(seed, *mode).0 / 40.0;
        }
    }
    assert!(means[2] >= means[1] && means[1] >= means[0], "{means:?}");
}

#[test]
fn validate_reports_topology_mismatch() {
    let a = random_small_net(1);
    let b = random_small_net(2);
    let c = Arc::new(compile(&a, CompileOptions::default()).unwrap().model);
    if a.shapes() != b.shapes() {
        let e = validate(&c, &b, &[0; 64], -14, &EngineConfig::default(), 0.01).unwrap_err();
        assert_eq!(e.code(), "E_TOPOLOGY");
    }
}

#[test]
fn corruption_is_localized() {
    let m = crate::profiles::kws_gru(3);
    let c = compile(&m, CompileOptions::default()).unwrap();
    let input = random_input(40, 3);
    let good = validate(&Arc::new(c.model.clone()), &m, &input, -14, &EngineConfig::default(), 0.05).unwrap();
    assert!(good.pass, "{}", good.max_abs_error);
    let mut bad = c.model.clone();
    bad.layers[1].gates[0].weights[5] = bad.layers[1].gates[0].weights[5].wrapping_add(100).clamp(-127, 127);
    bad.layers[1].gates[0].bias[5] += 1 << 22;
    let r = validate(&Arc::new(bad), &m, &input, -14, &EngineConfig::default(), 0.05).unwrap();
    assert!(!r.pass);
    assert_eq!(r.first_failing_layer, Some(1));
    assert_eq!(r.worst.unwrap().element, 5);
    assert!(r.layers[0].max_abs_error <= 0.05);
}

#[test]
fn validate_is_repeatable() {
    let m = random_small_net(17);
    let c = Arc::new(compile(&m, CompileOptions::default()).unwrap().model);
    let input = random_input(m.input_dim() * m.seq_len, 5);
    let a = validate(&c, &m, &input, -14, &EngineConfig::default(), 0.01).unwrap();
    let b = validate(&c, &m, &input, -14, &EngineConfig::default(), 0.01).unwrap();
    assert_eq!(a, b);
}
