//! Neutral model manifest (TOML) plus raw float32 weight files.
//!
//! ```toml
//! network = "kws-gru"
//! seq_len = 10
//! exec_mode = "streaming"   # or "batch"
//! weight_bits = 8           # 8 or 16
//! compression = "none"      # none | 2 | 4 | 6 (also "16x", "8x", "5.3x")
//!
//! [[layers]]
//! type = "gru"
//! input_dim = 10
//! output_dim = 154
//! weights = ["gru.z.f32", "gru.r.f32", "gru.h.f32"]
//! bias = ["gru.bz.f32", "gru.br.f32", "gru.bh.f32"]
//!
//! [[layers]]
//! type = "fc"
//! input_dim = 154
//! output_dim = 12
//! activation = "identity"
//! weights = ["fc.w.f32"]
//! bias = ["fc.b.f32"]
//! ```
//!
//! Weight files are little-endian float32, row-major. Recurrent gate
//! matrices are `output_dim × (input_dim + output_dim)` with the input
//! columns first; biases are `output_dim` values. Paths are relative to the
//! manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationKind;
use crate::codec::CompressionMode;
use crate::fxp::MacMode;
use crate::model::{
    validate_topology, ExecMode, FloatGate, FloatLayer, FloatModel, LayerKind, LayerShape, TopologyError,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest syntax: {0}")]
    Syntax(String),
    #[error("layer {layer}: unknown layer type `{name}`")]
    UnknownLayerType { layer: usize, name: String },
    #[error("layer {layer}: unknown activation `{name}`")]
    UnknownActivation { layer: usize, name: String },
    #[error("weight_bits {0} must be 8 or 16")]
    WeightBits(u32),
    #[error("compression `{0}` must be none, 2, 4 or 6")]
    Compression(String),
    #[error("exec_mode `{0}` must be batch or streaming")]
    ExecMode(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("layer {layer}: missing weight file {}", path.display())]
    MissingFile { layer: usize, path: PathBuf },
    #[error("layer {layer}: {} is {actual} bytes, expected {expected}", path.display())]
    FileSize { layer: usize, path: PathBuf, expected: u64, actual: u64 },
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            ManifestError::Syntax(_) => "E_MANIFEST_SYNTAX",
            ManifestError::UnknownLayerType { .. } => "E_LAYER_TYPE",
            ManifestError::UnknownActivation { .. } => "E_ACTIVATION",
            ManifestError::WeightBits(_) => "E_WEIGHT_BITS",
            ManifestError::Compression(_) => "E_COMPRESSION",
            ManifestError::ExecMode(_) => "E_EXEC_MODE",
            ManifestError::Topology(TopologyError::DimsOutOfRange { .. }) => "E_DIMS_RANGE",
            ManifestError::Topology(TopologyError::Chain { .. }) => "E_DIMS_CHAIN",
            ManifestError::Topology(_) => "E_TOPOLOGY",
            ManifestError::MissingFile { .. } => "E_MISSING_FILE",
            ManifestError::FileSize { .. } => "E_FILE_SIZE",
            ManifestError::Io { .. } => "E_IO",
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum CompressionField {
    Int(i64),
    Text(String),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    #[serde(rename = "type")]
    kind: String,
    input_dim: i64,
    output_dim: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    weights: Vec<String>,
    bias: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    network: String,
    seq_len: i64,
    #[serde(default = "default_exec_mode")]
    exec_mode: String,
    #[serde(default = "default_weight_bits")]
    weight_bits: u32,
    #[serde(default = "default_compression")]
    compression: CompressionField,
    layers: Vec<RawLayer>,
}

fn default_exec_mode() -> String {
    "batch".into()
}

fn default_weight_bits() -> u32 {
    8
}

fn default_compression() -> CompressionField {
    CompressionField::Text("none".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestLayer {
    pub shape: LayerShape,
    pub weights: Vec<PathBuf>,
    pub bias: Vec<PathBuf>,
}

/// A validated manifest. Weight paths are resolved against the manifest's
/// directory and are known to exist with the right sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub network: String,
    pub seq_len: usize,
    pub exec_mode: ExecMode,
    pub weight_bits: MacMode,
    pub compression: CompressionMode,
    pub layers: Vec<ManifestLayer>,
}

fn dim(v: i64) -> usize {
    // negative dims become 0 and fail the range check
    usize::try_from(v).unwrap_or(0)
}

fn check_file(layer: usize, path: &Path, expected: u64) -> Result<(), ManifestError> {
    match std::fs::metadata(path) {
        Ok(meta) if meta.is_file() => {
            if meta.len() == expected {
                Ok(())
            } else {
                Err(ManifestError::FileSize { layer, path: path.to_path_buf(), expected, actual: meta.len() })
            }
        }
        _ => Err(ManifestError::MissingFile { layer, path: path.to_path_buf() }),
    }
}

/// Parse and validate manifest text; `base_dir` anchors relative weight paths.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest, ManifestError> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| ManifestError::Syntax(e.message().to_string()))?;
    let weight_bits = MacMode::from_bits(raw.weight_bits).ok_or(ManifestError::WeightBits(raw.weight_bits))?;
    let compression = match &raw.compression {
        CompressionField::Int(v) => v.to_string().parse(),
        CompressionField::Text(s) => s.parse(),
    }
    .map_err(|_| {
        ManifestError::Compression(match &raw.compression {
            CompressionField::Int(v) => v.to_string(),
            CompressionField::Text(s) => s.clone(),
        })
    })?;
    let exec_mode = match raw.exec_mode.to_ascii_lowercase().as_str() {
        "batch" => ExecMode::Batch,
        "streaming" => ExecMode::Streaming,
        _ => return Err(ManifestError::ExecMode(raw.exec_mode)),
    };

    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, rl) in raw.layers.iter().enumerate() {
        let kind: LayerKind =
            rl.kind.parse().map_err(|name| ManifestError::UnknownLayerType { layer: i, name })?;
        let activation = match (kind, &rl.activation) {
            (LayerKind::Fc, Some(name)) => name
                .parse::<ActivationKind>()
                .map_err(|_| ManifestError::UnknownActivation { layer: i, name: name.clone() })?,
            (LayerKind::Fc, None) => ActivationKind::Identity,
            _ => ActivationKind::Tanh,
        };
        let shape = LayerShape { kind, input_dim: dim(rl.input_dim), output_dim: dim(rl.output_dim), activation };
        layers.push((shape, rl));
    }
    let shapes: Vec<LayerShape> = layers.iter().map(|(s, _)| *s).collect();
    validate_topology(&shapes, dim(raw.seq_len))?;

    let mut out = Vec::with_capacity(layers.len());
    for (i, (shape, rl)) in layers.into_iter().enumerate() {
        let gates = shape.kind.gate_count();
        for (what, list) in [("weight files", &rl.weights), ("bias files", &rl.bias)] {
            if list.len() != gates {
                return Err(TopologyError::TensorCount { layer: i, what, expected: gates, got: list.len() }.into());
            }
        }
        let (rows, cols) = shape.weight_shape();
        let weights: Vec<PathBuf> = rl.weights.iter().map(|p| base_dir.join(p)).collect();
        let bias: Vec<PathBuf> = rl.bias.iter().map(|p| base_dir.join(p)).collect();
        for p in &weights {
            check_file(i, p, 4 * (rows * cols) as u64)?;
        }
        for p in &bias {
            check_file(i, p, 4 * rows as u64)?;
        }
        out.push(ManifestLayer { shape, weights, bias });
    }
    Ok(Manifest {
        network: raw.network,
        seq_len: dim(raw.seq_len),
        exec_mode,
        weight_bits,
        compression,
        layers: out,
    })
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f64>, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_f32_file(path: &Path, values: &[f64]) -> Result<(), ManifestError> {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self, ManifestError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.shape.param_count()).sum()
    }

    /// Read every weight file into a real-valued model.
    pub fn load_weights(&self) -> Result<FloatModel, ManifestError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, ml) in self.layers.iter().enumerate() {
            let mut gates = Vec::with_capacity(ml.weights.len());
            for (w, b) in ml.weights.iter().zip(&ml.bias) {
                gates.push(FloatGate { weights: read_f32_file(w)?, bias: read_f32_file(b)? });
            }
            let layer = FloatLayer { shape: ml.shape, gates };
            // files may have changed since parse
            let (rows, cols) = ml.shape.weight_shape();
            for (p, g) in ml.weights.iter().zip(&layer.gates) {
                if g.weights.len() != rows * cols {
                    return Err(ManifestError::FileSize {
                        layer: i,
                        path: p.clone(),
                        expected: 4 * (rows * cols) as u64,
                        actual: 4 * g.weights.len() as u64,
                    });
                }
            }
            layers.push(layer);
        }
        let model = FloatModel { name: self.network.clone(), seq_len: self.seq_len, exec_mode: self.exec_mode, layers };
        model.validate()?;
        Ok(model)
    }
}

/// Write `model` as float32 files plus a manifest into `dir`; returns the
/// manifest path. Values are rounded to f32 on the way out.
pub fn write_manifest(
    model: &FloatModel,
    dir: &Path,
    weight_bits: MacMode,
    compression: CompressionMode,
) -> Result<PathBuf, ManifestError> {
    std::fs::create_dir_all(dir).map_err(|source| ManifestError::Io { path: dir.to_path_buf(), source })?;
    let gate_names: &[&str] = &["w"];
    let mut raw_layers = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        let names = match layer.shape.kind {
            LayerKind::Fc => gate_names,
            LayerKind::Gru => &["z", "r", "h"][..],
            LayerKind::Lstm => &["i", "f", "g", "o"][..],
        };
        let mut weights = Vec::new();
        let mut bias = Vec::new();
        for (gate, name) in layer.gates.iter().zip(names) {
            let wf = format!("l{li}_{}_{name}.f32", layer.shape.kind);
            let bf = format!("l{li}_{}_b{name}.f32", layer.shape.kind);
            write_f32_file(&dir.join(&wf), &gate.weights)?;
            write_f32_file(&dir.join(&bf), &gate.bias)?;
            weights.push(wf);
            bias.push(bf);
        }
        raw_layers.push(RawLayer {
            kind: layer.shape.kind.name().to_string(),
            input_dim: layer.shape.input_dim as i64,
            output_dim: layer.shape.output_dim as i64,
            activation: (layer.shape.kind == LayerKind::Fc).then(|| layer.shape.activation.name().to_string()),
            weights,
            bias,
        });
    }
    let raw = RawManifest {
        network: model.name.clone(),
        seq_len: model.seq_len as i64,
        exec_mode: match model.exec_mode {
            ExecMode::Batch => "batch".into(),
            ExecMode::Streaming => "streaming".into(),
        },
        weight_bits: weight_bits.weight_bits(),
        compression: match compression.index_bits() {
            None => CompressionField::Text("none".into()),
            Some(b) => CompressionField::Int(b.get() as i64),
        },
        layers: raw_layers,
    };
    let text = toml::to_string(&raw).map_err(|e| ManifestError::Syntax(e.to_string()))?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kws_dir() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let model = FloatModel::synthetic(
            "kws",
            &[LayerShape::gru(10, 154), LayerShape::fc(154, 12, ActivationKind::Identity)],
            10,
            ExecMode::Streaming,
            1,
        );
        let path = write_manifest(&model, dir.path(), MacMode::W8, CompressionMode::None).unwrap();
        (dir, path)
    }

    #[test]
    fn kws_manifest_parses() {
        let (_dir, path) = kws_dir();
        let m = Manifest::from_path(&path).unwrap();
        assert_eq!(m.param_count(), 78090);
        assert_eq!(m.exec_mode, ExecMode::Streaming);
        assert_eq!(m.layers[1].shape.activation, ActivationKind::Identity);
        let model = m.load_weights().unwrap();
        assert_eq!(model.layers[0].gates.len(), 3);
    }

    fn edit(path: &Path, from: &str, to: &str) -> Result<Manifest, ManifestError> {
        let text = std::fs::read_to_string(path).unwrap().replacen(from, to, 1);
        parse_manifest(&text, path.parent().unwrap())
    }

    #[test]
    fn diagnostics_name_the_layer() {
        let (_dir, path) = kws_dir();
        let e = edit(&path, "input_dim = 154", "input_dim = 150").unwrap_err();
        assert_eq!(e.code(), "E_DIMS_CHAIN");
        assert!(e.to_string().contains("layer 1"), "{e}");

        let e = edit(&path, "input_dim = 10", "input_dim = 0").unwrap_err();
        assert_eq!(e.code(), "E_DIMS_RANGE");
        assert!(e.to_string().contains("dims out of range"));

        let e = edit(&path, "type = \"gru\"", "type = \"rnn\"").unwrap_err();
        assert!(matches!(e, ManifestError::UnknownLayerType { layer: 0, .. }));

        let e = edit(&path, "activation = \"identity\"", "activation = \"gelu\"").unwrap_err();
        assert!(matches!(e, ManifestError::UnknownActivation { layer: 1, .. }));

        let e = edit(&path, "l1_fc_w.f32", "nope.f32").unwrap_err();
        assert!(matches!(&e, ManifestError::MissingFile { layer: 1, path } if path.ends_with("nope.f32")));

        let e = edit(&path, "l1_fc_w.f32", "l0_gru_z.f32").unwrap_err();
        assert!(matches!(e, ManifestError::FileSize { layer: 1, .. }));

        assert_eq!(edit(&path, "weight_bits = 8", "weight_bits = 4").unwrap_err().code(), "E_WEIGHT_BITS");
        assert_eq!(edit(&path, "[[layers]]", "[[layer]]").unwrap_err().code(), "E_MANIFEST_SYNTAX");
    }

    #[test]
    fn compression_spellings() {
        let (_dir, path) = kws_dir();
        let m = edit(&path, "compression = \"none\"", "compression = 4").unwrap();
        assert_eq!(m.compression.code(), 4);
        let m = edit(&path, "compression = \"none\"", "compression = \"16x\"").unwrap();
        assert_eq!(m.compression.code(), 2);
        assert_eq!(edit(&path, "compression = \"none\"", "compression = 3").unwrap_err().code(), "E_COMPRESSION");
    }
}
