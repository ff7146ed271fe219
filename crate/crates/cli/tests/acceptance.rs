//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! run with `cargo test -p rnnaccel-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rnnaccel_core::activation::{self, ActivationKind, ActivationTables, FIXED_ERROR_BOUND, PWL_ERROR_BOUND};
use rnnaccel_core::codec::{self, CompressionMode, IndexBits};
use rnnaccel_core::engine::{EngineConfig, Session};
use rnnaccel_core::fxp::MacMode;
use rnnaccel_core::loadable::{self, manifest, CompileOptions, CompiledModel};
use rnnaccel_core::model::{ExecMode, FloatModel, LayerKind, LayerShape};
use rnnaccel_core::profiles;
use rnnaccel_core::reference::{self, DEFAULT_TOLERANCE};
use rnnaccel_core::report::RunReport;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rnnaccel"))
}

fn activation_bounds() -> Outcome {
    let tables = ActivationTables::golden();
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Softsign] {
        let r = activation::sweep(kind, tables).map_err(|e| e.to_string())?;
        ok &= r.pwl_max_error <= PWL_ERROR_BOUND && r.fixed_max_error <= FIXED_ERROR_BOUND;
        parts.push(format!("{kind} pwl {:.2e} fixed {:.2e}", r.pwl_max_error, r.fixed_max_error));
    }
    ensure(ok, parts.join(", "))
}

fn kws_performance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report_path = dir.path().join("bench.toml");
    let out = bin()
        .args(["bench", "kws-gru", "--macs", "32", "--clock", "250", "--compress", "none", "--report"])
        .arg(&report_path)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let text = std::fs::read_to_string(&report_path).map_err(|e| e.to_string())?;
    let report = RunReport::from_toml(&text).map_err(|e| e.to_string())?;
    let table = report.bench.first().ok_or("report has no bench table")?;
    let row = table.rows.first().ok_or("bench table has no rows")?;
    let detail = format!(
        "utilization {:.4}, {:.0} inf/s, peak {:.3} GOPS",
        row.utilization, row.inferences_per_second, table.peak_gops
    );
    ensure(
        (0.85..=0.95).contains(&row.utilization)
            && (85_000.0..=100_000.0).contains(&row.inferences_per_second)
            && table.peak_gops == 16.0
            && stdout.contains("peak 16.000 GOPS"),
        detail,
    )
}

fn uniform_tensor(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gaussian_tensor(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid sigma");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

fn compression_ratios() -> Outcome {
    let nominal_exact = IndexBits::SIX.nominal_ratio() == 32.0 / 6.0
        && IndexBits::FOUR.nominal_ratio() == 8.0
        && IndexBits::TWO.nominal_ratio() == 16.0;
    let mut worst = f64::INFINITY;
    for (rows, cols) in [(128, 128), (154, 164), (256, 256)] {
        for bits in IndexBits::ALL {
            for width in [MacMode::W8, MacMode::W16] {
                let w = gaussian_tensor((rows * cols) as u64, rows * cols);
                let blob = codec::compress(&w, rows, cols, bits, width).map_err(|e| e.to_string())?;
                let r = codec::ratio_report(&blob);
                worst = worst.min(r.actual_ratio / r.nominal_ratio);
            }
        }
    }
    ensure(nominal_exact && worst >= 0.95, format!("nominal exact: {nominal_exact}, worst actual/nominal {worst:.4}"))
}

fn codec_dominance() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for bits in [IndexBits::TWO, IndexBits::FOUR, IndexBits::SIX] {
        let mut wins = 0;
        for seed in 0..100u64 {
            let w = if seed % 2 == 0 { uniform_tensor(seed, 4096) } else { gaussian_tensor(seed, 4096) };
            let blob = codec::compress(&w, 64, 64, bits, MacMode::W16).map_err(|e| e.to_string())?;
            let ours = codec::mse(&w, &blob.dequantize().map_err(|e| e.to_string())?);
            let uniform = codec::mse(&w, &codec::quantize_uniform(&w, bits.get()).map_err(|e| e.to_string())?);
            wins += u32::from(ours <= uniform);
        }
        ok &= wins == 100;
        parts.push(format!("b={} {wins}/100", bits.get()));
    }
    ensure(ok, parts.join(", "))
}

fn small_net_error(seed: u64, compression: CompressionMode) -> Result<f64, String> {
    let m = profiles::random_small_net(seed);
    let c = loadable::compile(&m, CompileOptions { weight_mode: MacMode::W8, compression }).map_err(|e| e.to_string())?;
    let input = profiles::random_input(m.input_dim() * m.seq_len * 2, seed);
    let r = reference::validate(&Arc::new(c.model), &m, &input, -14, &EngineConfig::default(), DEFAULT_TOLERANCE)
        .map_err(|e| e.to_string())?;
    Ok(r.max_abs_error)
}

fn oracle_equivalence() -> Outcome {
    let cfg = EngineConfig::default();
    let mut exact = 0;
    for seed in 0..100 {
        let m = profiles::exact_fc(seed);
        let opts = CompileOptions { weight_mode: MacMode::W16, compression: CompressionMode::None };
        let c = loadable::compile(&m, opts).map_err(|e| e.to_string())?;
        let input = profiles::random_input(m.input_dim() * 4, seed);
        let r = reference::validate(&Arc::new(c.model), &m, &input, -14, &cfg, 0.0).map_err(|e| e.to_string())?;
        exact += u32::from(r.max_abs_error == 0.0);
    }

    let mut within = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        let e = small_net_error(seed, CompressionMode::None)?;
        within += u32::from(e <= DEFAULT_TOLERANCE);
        worst = worst.max(e);
    }

    let modes = [CompressionMode::None, CompressionMode::Codebook(IndexBits::FOUR), CompressionMode::Codebook(IndexBits::TWO)];
    let seeds = 40;
    let mut means = [0.0; 3];
    for seed in 0..seeds {
        for (mean, mode) in means.iter_mut().zip(modes) {
            *mean += small_net_error(10_000 + seed, mode)? / seeds as f64;
        }
    }
    let monotone = means[2] >= means[1] && means[1] >= means[0];
    ensure(
        exact == 100 && within >= 999 && monotone,
        format!(
            "(a) bit-exact {exact}/100, (b) {within}/1000 within {DEFAULT_TOLERANCE} (max {worst:.2e}), \
             (c) mean error none {:.2e} <= b4 {:.2e} <= b2 {:.2e}: {monotone}",
            means[0], means[1], means[2]
        ),
    )
}

fn compile_via_cli(manifest_path: &Path, out: &Path, compress: &str) -> Result<Vec<u8>, String> {
    let status = bin()
        .arg("compile")
        .arg(manifest_path)
        .args(["--compress", compress, "-o"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

fn same_topology(a: &CompiledModel, b: &FloatModel) -> bool {
    a.shapes() == b.shapes() && a.seq_len == b.seq_len && a.exec_mode == b.exec_mode
}

fn determinism_and_format() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kws = profiles::kws_gru(7);
    let manifest_path =
        manifest::write_manifest(&kws, &dir.path().join("kws"), MacMode::W8, CompressionMode::None).map_err(|e| e.to_string())?;
    let mut identical = true;
    for compress in ["none", "5.3x", "8x", "16x"] {
        let a = compile_via_cli(&manifest_path, &dir.path().join(format!("a-{compress}.rnna")), compress)?;
        let b = compile_via_cli(&manifest_path, &dir.path().join(format!("b-{compress}.rnna")), compress)?;
        identical &= a == b;
    }

    let mut models: Vec<FloatModel> = (0..50).map(profiles::random_small_net).collect();
    models.push(kws);
    models.extend(profiles::afib_bilstm(3).models().into_iter().cloned());
    let mut valid = Vec::new();
    let mut roundtrips = 0;
    for (i, m) in models.iter().enumerate() {
        let mode = CompressionMode::ALL[i % CompressionMode::ALL.len()];
        let c = loadable::compile(m, CompileOptions { weight_mode: MacMode::W8, compression: mode }).map_err(|e| e.to_string())?;
        let back = loadable::load(&c.bytes).map_err(|e| e.to_string())?;
        roundtrips += usize::from(same_topology(&back, m) && back == c.model);
        valid.push(c.bytes);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let (mut random_rejected, mut panics, mut mutated) = (0u32, 0u32, 0u32);
    let total = 100_000;
    for i in 0..total {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.random_range(0..512);
            (0..len).map(|_| rng.random()).collect()
        } else {
            mutated += 1;
            let mut b = valid[rng.random_range(0..valid.len())].clone();
            for _ in 0..rng.random_range(1..8) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            if rng.random_bool(0.2) {
                b.truncate(rng.random_range(0..b.len()));
            }
            b
        };
        match catch_unwind(AssertUnwindSafe(|| loadable::load(&bytes))) {
            Ok(Err(_)) if i % 2 == 0 => random_rejected += 1,
            Ok(_) => {}
            Err(_) => panics += 1,
        }
    }
    let random_total = total - mutated;
    ensure(
        identical && roundtrips == models.len() && panics == 0 && random_rejected == random_total,
        format!(
            "byte-identical compiles: {identical}, roundtrips {roundtrips}/{}, fuzz {total} inputs: \
             {random_rejected}/{random_total} random rejected, {mutated} mutated, {panics} panics",
            models.len()
        ),
    )
}

/// Cycle count derived only from layer dimensions and the configuration.
fn closed_form_cycles(shapes: &[LayerShape], mode: ExecMode, seq_len: usize, frames: usize, cfg: &EngineConfig, wm: MacMode) -> u64 {
    let lanes = u64::from(match wm {
        MacMode::W8 => cfg.n_macs,
        MacMode::W16 => cfg.n_macs / 2,
    });
    let d = u64::from(cfg.d_dep);
    let layer = |s: &LayerShape| {
        let (gates, rows, cols) = match s.kind {
            LayerKind::Fc => (1, s.output_dim, s.input_dim),
            LayerKind::Gru => (3, s.output_dim, s.input_dim + s.output_dim),
            LayerKind::Lstm => (4, s.output_dim, s.input_dim + s.output_dim),
        };
        let mv = (rows as u64).div_ceil(lanes) * (cols as u64 + u64::from(cfg.p_drain));
        gates * mv + if s.kind == LayerKind::Fc { 0 } else { 2 * d }
    };
    match (shapes.iter().rposition(|s| s.kind != LayerKind::Fc), mode) {
        (Some(p), ExecMode::Batch) => {
            let per_step: u64 = shapes[..=p].iter().map(layer).sum::<u64>() + p as u64 * d;
            let tail: u64 = shapes[p + 1..].iter().map(|s| layer(s) + d).sum();
            (frames / seq_len) as u64 * (seq_len as u64 * per_step + tail)
        }
        _ => frames as u64 * (shapes.iter().map(layer).sum::<u64>() + (shapes.len() as u64 - 1) * d),
    }
}

fn cycle_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1C1E);
    let (mut matches, mut monotone) = (0u64, 0u64);
    let topologies = 50;
    for t in 0..topologies {
        let mut dim = rng.random_range(1..48);
        let shapes: Vec<LayerShape> = (0..rng.random_range(1..4))
            .map(|_| {
                let out = rng.random_range(1..80);
                let s = match rng.random_range(0..3) {
                    0 => LayerShape::fc(dim, out, ActivationKind::Tanh),
                    1 => LayerShape::gru(dim, out),
                    _ => LayerShape::lstm(dim, out),
                };
                dim = out;
                s
            })
            .collect();
        let mode = if rng.random_bool(0.5) { ExecMode::Batch } else { ExecMode::Streaming };
        let wm = if rng.random_bool(0.5) { MacMode::W16 } else { MacMode::W8 };
        let seq_len = rng.random_range(1..5);
        let fm = FloatModel::synthetic(&format!("topo-{t}"), &shapes, seq_len, mode, t);
        let opts = CompileOptions { weight_mode: wm, compression: CompressionMode::None };
        let model = Arc::new(loadable::compile(&fm, opts).map_err(|e| e.to_string())?.model);
        let frames = 2 * seq_len;
        let input = profiles::random_input(frames * shapes[0].input_dim, t);
        let (mut all_match, mut prev) = (true, u64::MAX);
        let mut non_increasing = true;
        for n_macs in [8, 16, 32, 64, 128] {
            let cfg = EngineConfig { n_macs, pool_bytes: 1 << 20, ..Default::default() };
            let report = Session::new(model.clone(), cfg.clone())
                .and_then(|mut s| s.run(&input, -14))
                .map_err(|e| e.to_string())?
                .report;
            all_match &= report.total_cycles == closed_form_cycles(&shapes, mode, seq_len, frames, &cfg, wm);
            non_increasing &= report.total_cycles <= prev;
            prev = report.total_cycles;
        }
        matches += u64::from(all_match);
        monotone += u64::from(non_increasing);
    }
    ensure(
        matches == topologies && monotone == topologies,
        format!("closed form matched {matches}/{topologies}, n_macs doubling non-increasing {monotone}/{topologies}"),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "activation error bound", budget: Duration::from_secs(5), check: activation_bounds },
        Criterion { id: 2, name: "KWS performance", budget: Duration::from_secs(10), check: kws_performance },
        Criterion { id: 3, name: "compression ratios", budget: Duration::from_secs(5), check: compression_ratios },
        Criterion { id: 4, name: "codec dominance", budget: Duration::from_secs(30), check: codec_dominance },
        Criterion { id: 5, name: "oracle equivalence", budget: Duration::from_secs(120), check: oracle_equivalence },
        Criterion { id: 6, name: "determinism and format", budget: Duration::from_secs(60), check: determinism_and_format },
        Criterion { id: 7, name: "cycle-model closed form", budget: Duration::from_secs(10), check: cycle_model },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let started = Instant::now();
        let outcome = (c.check)();
        let elapsed = started.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => (false, d),
        };
        println!(
            "{} criterion {}: {} ({:.2}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
