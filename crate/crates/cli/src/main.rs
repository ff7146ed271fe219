mod tensor_io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use rnnaccel_core::activation::{self, ActivationKind, ActivationTables, FIXED_ERROR_BOUND, PWL_ERROR_BOUND};
use rnnaccel_core::benchmark::{self, BenchOptions, Profile};
use rnnaccel_core::codec::{self, CompressionMode};
use rnnaccel_core::engine::{EngineConfig, Session};
use rnnaccel_core::fxp::{MacMode, Q14_EXP};
use rnnaccel_core::loadable::{self, manifest, CompileOptions, Manifest};
use rnnaccel_core::profiles;
use rnnaccel_core::reference::{self, DEFAULT_TOLERANCE};
use rnnaccel_core::report::{RunReport, ValidationSummary};

/// Error carrying a stable diagnostic code.
#[derive(Debug)]
struct Coded {
    code: &'static str,
    message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

fn fail(code: &'static str, message: impl fmt::Display) -> anyhow::Error {
    Coded { code, message: message.to_string() }.into()
}

#[derive(Parser)]
#[command(name = "rnnaccel", version, about = "Fixed-point RNN accelerator SDK and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a manifest and its float32 weights into a binary loadable.
    Compile {
        manifest: PathBuf,
        /// none, 5.3x, 8x or 16x (overrides the manifest)
        #[arg(long)]
        compress: Option<CompressionMode>,
        /// 8 or 16 (overrides the manifest)
        #[arg(long)]
        wbits: Option<u32>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Codebook-compress one raw float32 tensor into a blob.
    Compress {
        input: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value = "8x")]
        compress: CompressionMode,
        #[arg(long, default_value_t = 8)]
        wbits: u32,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a loadable on the engine model.
    #[command(group(ArgGroup::new("source").required(true).args(["input", "random"])))]
    Simulate {
        loadable: PathBuf,
        /// Raw little-endian int16 input (sidecar `<file>.meta` optional)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Seed for one sequence of uniform Q1.14 input
        #[arg(long)]
        random: Option<u64>,
        #[command(flatten)]
        engine: EngineArgs,
        /// Write int16 outputs (plus sidecar) here
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the engine against the double-precision reference.
    Validate {
        manifest: PathBuf,
        loadable: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Benchmark a profile (kws-gru, afib-bilstm or a manifest path).
    Bench {
        profile: String,
        #[command(flatten)]
        engine: EngineArgs,
        /// Only this compression mode (default: all)
        #[arg(long)]
        compress: Option<CompressionMode>,
        #[arg(long, default_value_t = 8)]
        wbits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump or verify a piecewise-linear activation table.
    #[command(group(ArgGroup::new("action").required(true).multiple(true).args(["emit", "verify"])))]
    Acttable {
        /// tanh or softsign
        #[arg(long = "fn")]
        function: String,
        #[arg(long)]
        emit: Option<PathBuf>,
        #[arg(long)]
        verify: bool,
    },
}

#[derive(clap::Args, Clone)]
struct EngineArgs {
    #[arg(long, default_value_t = 32)]
    macs: u32,
    /// Clock in MHz (rates only)
    #[arg(long, default_value_t = 250.0)]
    clock: f64,
    /// Local state pool in bytes
    #[arg(long, default_value_t = 12288)]
    pool: usize,
    #[arg(long, default_value_t = 4)]
    p_drain: u32,
    #[arg(long, default_value_t = 12)]
    d_dep: u32,
    #[arg(long)]
    decompress_stall: bool,
    #[arg(long)]
    stream_weights: bool,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let cfg = EngineConfig {
            n_macs: self.macs,
            clock_mhz: self.clock,
            pool_bytes: self.pool,
            weight_mode: None,
            p_drain: self.p_drain,
            d_dep: self.d_dep,
            decompress_stall: self.decompress_stall,
            stream_weights: self.stream_weights,
        };
        cfg.validate().map_err(|e| fail(e.code(), e))?;
        Ok(cfg)
    }
}

fn mac_mode(bits: u32) -> Result<MacMode> {
    MacMode::from_bits(bits).ok_or_else(|| fail("E_WEIGHT_BITS", format!("weight bits {bits} must be 8 or 16")))
}

fn write_report(path: Option<&Path>, mut report: RunReport, started: Instant) -> Result<()> {
    if let Some(path) = path {
        report.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
        let text = report.to_toml().map_err(|e| fail("E_REPORT", e))?;
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn read_loadable(path: &Path) -> Result<Arc<loadable::CompiledModel>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let model = loadable::load(&bytes).map_err(|e| fail(e.code(), format!("{}: {e}", path.display())))?;
    Ok(Arc::new(model))
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::from_path(path).map_err(|e| fail(e.code(), format!("{}: {e}", path.display())))
}

fn cmd_compile(
    manifest_path: &Path,
    compress: Option<CompressionMode>,
    wbits: Option<u32>,
    output: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let manifest = read_manifest(manifest_path)?;
    let opts = CompileOptions {
        weight_mode: wbits.map(mac_mode).transpose()?.unwrap_or(manifest.weight_bits),
        compression: compress.unwrap_or(manifest.compression),
    };
    let model = manifest.load_weights().map_err(|e| fail(e.code(), e))?;
    let compiled = loadable::compile(&model, opts).map_err(|e| fail(e.code(), e))?;
    std::fs::write(output, &compiled.bytes).with_context(|| format!("cannot write {}", output.display()))?;

    let r = &compiled.report;
    println!(
        "network {}: {} parameters, {} layers, w{}, compression {}",
        manifest.network,
        r.param_count,
        model.layers.len(),
        opts.weight_mode.weight_bits(),
        opts.compression
    );
    for t in &r.tensors {
        println!("tensor layer {} gate {}: {}x{} e_w={} e_bias={}", t.layer, t.gate, t.rows, t.cols, t.weight_exp, t.bias_exp);
    }
    if let Some(ratio) = &r.ratio {
        println!(
            "ratio: nominal {:.3} actual {:.3} ({} -> {} bytes)",
            ratio.nominal_ratio, ratio.actual_ratio, ratio.original_bytes, ratio.compressed_bytes
        );
    }
    println!("wrote {} ({} bytes)", output.display(), compiled.bytes.len());

    let mut report = RunReport::new("compile");
    report.ratio = r.ratio;
    report.compile = Some(compiled.report);
    write_report(report_path, report, started)
}

fn cmd_compress(
    input: &Path,
    rows: usize,
    cols: usize,
    mode: CompressionMode,
    wbits: u32,
    output: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let bits = mode.index_bits().ok_or_else(|| fail("E_COMPRESSION", "compress needs 5.3x, 8x or 16x"))?;
    let weights = manifest::read_f32_file(input).map_err(|e| fail(e.code(), e))?;
    let blob = codec::compress(&weights, rows, cols, bits, mac_mode(wbits)?).map_err(|e| fail("E_CODEC", e))?;
    std::fs::write(output, blob.to_bytes()).with_context(|| format!("cannot write {}", output.display()))?;
    let ratio = codec::ratio_report(&blob);
    let restored = blob.dequantize().map_err(|e| fail("E_CODEC", e))?;
    println!(
        "ratio: nominal {:.3} actual {:.3} ({} -> {} bytes)",
        ratio.nominal_ratio, ratio.actual_ratio, ratio.original_bytes, ratio.compressed_bytes
    );
    println!("mse {:.6e}, exponent {}", codec::mse(&weights, &restored), blob.exponent);
    let mut report = RunReport::new("compress");
    report.ratio = Some(ratio);
    write_report(report_path, report, started)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    loadable_path: &Path,
    input: Option<&Path>,
    random: Option<u64>,
    engine: &EngineArgs,
    output: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = engine.config()?;
    let model = read_loadable(loadable_path)?;
    let (data, exponent) = match (input, random) {
        (Some(p), _) => tensor_io::read_tensor(p)?,
        (None, Some(seed)) => (profiles::random_input(model.seq_len * model.input_dim(), seed), Q14_EXP),
        (None, None) => unreachable!("clap requires an input source"),
    };
    let mut session = Session::new(Arc::clone(&model), cfg.clone()).map_err(|e| fail(e.code(), e))?;
    let run = session.run(&data, exponent).map_err(|e| fail(e.code(), e))?;
    let r = &run.report;
    println!("cycles {} ({:.1} per inference, {} inferences)", r.total_cycles, r.cycles_per_inference, r.inferences);
    println!("utilization {:.4}", r.utilization);
    println!("inferences/s {:.1}", r.inferences_per_second);
    println!("peak GOPS {:.3}", r.peak_gops);
    println!(
        "traffic: weights {} B, biases {} B, input {} B, output {} B",
        r.weight_bytes_read, r.bias_bytes_read, r.input_bytes_read, r.output_bytes_written
    );
    println!("saturation events {}", r.saturation_events);
    if let Some(path) = output {
        let values: Vec<i16> = run.frames.iter().flat_map(|f| f.values.iter().copied()).collect();
        tensor_io::write_tensor(path, &values, Q14_EXP)?;
    }
    let mut report = RunReport::new("simulate");
    report.config = Some(cfg);
    report.sim = Some(run.report);
    write_report(report_path, report, started)
}

fn cmd_validate(
    manifest_path: &Path,
    loadable_path: &Path,
    seeds: u64,
    tolerance: f64,
    engine: &EngineArgs,
    report_path: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let cfg = engine.config()?;
    let float = read_manifest(manifest_path)?.load_weights().map_err(|e| fail(e.code(), e))?;
    let compiled = read_loadable(loadable_path)?;
    if seeds == 0 {
        return Err(fail("E_ARGS", "--seeds must be at least 1"));
    }
    let mut worst: Option<(u64, reference::ValidationReport)> = None;
    let mut passed = 0;
    for seed in 0..seeds {
        let input = profiles::random_input(float.seq_len * float.input_dim(), seed);
        let r = reference::validate(&compiled, &float, &input, Q14_EXP, &cfg, tolerance).map_err(|e| fail(e.code(), e))?;
        passed += u64::from(r.pass);
        if worst.as_ref().is_none_or(|(_, w)| r.max_abs_error > w.max_abs_error) {
            worst = Some((seed, r));
        }
    }
    let (worst_seed, w) = worst.expect("at least one seed");
    println!("validated {seeds} seeds: {passed} passed at tolerance {tolerance}");
    println!("max abs error {:.6e} (seed {worst_seed}), rms {:.6e}", w.max_abs_error, w.rms_error);
    for l in &w.layers {
        println!("layer {} {}: max abs {:.6e} rms {:.6e} over {} values", l.index, l.kind, l.max_abs_error, l.rms_error, l.compared);
    }
    let mut report = RunReport::new("validate");
    report.config = Some(cfg);
    report.validation = Some(ValidationSummary {
        seeds,
        passed,
        tolerance,
        max_abs_error: w.max_abs_error,
        worst_seed,
        worst: w.clone(),
    });
    write_report(report_path, report, started)?;
    if passed < seeds {
        let loc = w
            .worst
            .as_ref()
            .map(|l| format!(" at layer {} step {} element {} (engine {:.6} vs reference {:.6})", l.layer, l.step, l.element, l.engine, l.reference))
            .unwrap_or_default();
        let first = w.first_failing_layer.map(|l| format!("; first failing layer {l}")).unwrap_or_default();
        return Err(fail(
            "E_TOLERANCE",
            format!("{} of {seeds} seeds exceed tolerance {tolerance}: max abs error {:.6e}{loc}{first}", seeds - passed, w.max_abs_error),
        ));
    }
    Ok(())
}

fn cmd_bench(
    profile: &str,
    engine: &EngineArgs,
    compress: Option<CompressionMode>,
    wbits: u32,
    seed: u64,
    report_path: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let profile = match profile {
        "kws-gru" => Profile::KwsGru,
        "afib-bilstm" => Profile::AfibBilstm,
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(fail("E_PROFILE", format!("unknown profile `{path}` (kws-gru, afib-bilstm or a manifest path)")));
            }
            Profile::Custom(read_manifest(p)?.load_weights().map_err(|e| fail(e.code(), e))?)
        }
    };
    let opts = BenchOptions {
        engine: engine.config()?,
        weight_mode: mac_mode(wbits)?,
        modes: compress.map_or_else(|| CompressionMode::ALL.to_vec(), |m| vec![m]),
        seed,
    };
    let table = benchmark::bench(&profile, &opts).map_err(|e| fail(e.code(), e))?;
    print!("{}", table.to_text());
    let mut report = RunReport::new("bench");
    report.config = Some(opts.engine);
    report.bench.push(table);
    write_report(report_path, report, started)
}

fn cmd_acttable(function: &str, emit: Option<&Path>, verify: bool) -> Result<()> {
    let kind: ActivationKind = function.parse().map_err(|e| fail("E_ACTIVATION", e))?;
    let tables = ActivationTables::golden();
    let table = match kind {
        ActivationKind::Tanh => tables.tanh(),
        ActivationKind::Softsign => tables.softsign(),
        other => return Err(fail("E_NO_TABLE", format!("`{other}` has no table (use tanh or softsign)"))),
    };
    if let Some(path) = emit {
        std::fs::write(path, table.to_text()).with_context(|| format!("cannot write {}", path.display()))?;
        println!("wrote {} ({} segments)", path.display(), table.segments().len());
    }
    if verify {
        // sigmoid is evaluated through the tanh table
        let kinds: &[ActivationKind] = match kind {
            ActivationKind::Tanh => &[ActivationKind::Tanh, ActivationKind::Sigmoid],
            _ => &[kind],
        };
        let mut failures = Vec::new();
        for &k in kinds {
            let r = activation::sweep(k, tables).map_err(|e| fail("E_ACTIVATION", e))?;
            println!(
                "{k}: pwl max error {:.3e} (x={}), fixed max error {:.3e} (input {})",
                r.pwl_max_error, r.pwl_worst_x, r.fixed_max_error, r.fixed_worst_input
            );
            if r.pwl_max_error > PWL_ERROR_BOUND || r.fixed_max_error > FIXED_ERROR_BOUND {
                failures.push(format!("{k} worst input {} (pwl x={})", r.fixed_worst_input, r.pwl_worst_x));
            }
        }
        if !failures.is_empty() {
            return Err(fail("E_ACT_BOUND", format!("error bound exceeded: {}", failures.join(", "))));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile { manifest, compress, wbits, output, report } => {
            cmd_compile(&manifest, compress, wbits, &output, report.as_deref())
        }
        Command::Compress { input, rows, cols, compress, wbits, output, report } => {
            cmd_compress(&input, rows, cols, compress, wbits, &output, report.as_deref())
        }
        Command::Simulate { loadable, input, random, engine, output, report } => {
            cmd_simulate(&loadable, input.as_deref(), random, &engine, output.as_deref(), report.as_deref())
        }
        Command::Validate { manifest, loadable, seeds, tolerance, engine, report } => {
            cmd_validate(&manifest, &loadable, seeds, tolerance, &engine, report.as_deref())
        }
        Command::Bench { profile, engine, compress, wbits, seed, report } => {
            cmd_bench(&profile, &engine, compress, wbits, seed, report.as_deref())
        }
        Command::Acttable { function, emit, verify } => cmd_acttable(&function, emit.as_deref(), verify),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.downcast_ref::<Coded>().map_or("E_IO", |c| c.code);
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{code}]: {message}");
            ExitCode::FAILURE
        }
    }
}
