use thiserror::Error;

use super::{CompiledGate, CompiledLayer, CompiledModel};
use crate::activation::ActivationKind;
use crate::codec::{self, CompressedBlob, CompressionMode};
use crate::fxp::{MacMode, Q14_EXP};
use crate::model::{validate_topology, ExecMode, LayerKind, LayerShape, TopologyError};

pub const MAGIC: u32 = 0x414E_4E52;
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const LAYER_RECORD_LEN: usize = 32;
pub const TENSOR_RECORD_LEN: usize = 16;

const GATE_SLOTS: usize = 4;
const UNUSED: u16 = 0xFFFF;
const KIND_WEIGHT: u8 = 0;
const KIND_BIAS: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("file truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error("tensor {tensor}: bytes {offset}..{end} outside the {len}-byte file")]
    OutOfBounds { tensor: usize, offset: u64, end: u64, len: usize },
    #[error("layer {layer}: tensor {tensor} {reason}")]
    DimMismatch { layer: usize, tensor: usize, reason: String },
    #[error("tensor {tensor}: corrupt blob: {reason}")]
    CorruptBlob { tensor: usize, reason: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

impl LoadError {
    pub fn code(&self) -> &'static str {
        match self {
            LoadError::BadMagic(_) => "E_BAD_MAGIC",
            LoadError::UnsupportedVersion(_) => "E_VERSION",
            LoadError::BadHeader(_) => "E_BAD_HEADER",
            LoadError::Truncated { .. } => "E_TRUNCATED",
            LoadError::BadLayer { .. } => "E_BAD_LAYER",
            LoadError::OutOfBounds { .. } => "E_OUT_OF_BOUNDS",
            LoadError::DimMismatch { .. } => "E_DIM_MISMATCH",
            LoadError::CorruptBlob { .. } => "E_CORRUPT_BLOB",
            LoadError::Topology(_) => "E_TOPOLOGY",
        }
    }
}

struct TensorRecord {
    offset: u32,
    len: u32,
    rows: u16,
    cols: u16,
    kind: u8,
    exponent: i8,
}

fn gate_payload(gate: &CompiledGate, mode: MacMode) -> Vec<u8> {
    match &gate.blob {
        Some(blob) => blob.to_bytes(),
        None => match mode {
            MacMode::W8 => gate.weights.iter().map(|&w| w as i8 as u8).collect(),
            MacMode::W16 => gate.weights.iter().flat_map(|w| w.to_le_bytes()).collect(),
        },
    }
}

/// Serialize a compiled model. The model must already satisfy the
/// container's invariants (dims, exponents within i8), which `compile`
/// guarantees.
pub fn encode(model: &CompiledModel) -> Vec<u8> {
    let n_layers = model.layers.len();
    let n_tensors: usize = model.layers.iter().map(|l| 2 * l.gates.len()).sum();
    let tables_end = HEADER_LEN + LAYER_RECORD_LEN * n_layers + TENSOR_RECORD_LEN * n_tensors;

    let mut blobs = Vec::new();
    let mut tensors = Vec::with_capacity(n_tensors);
    let mut layer_records = Vec::with_capacity(n_layers * LAYER_RECORD_LEN);
    for layer in &model.layers {
        let (rows, cols) = layer.shape.weight_shape();
        let mut weight_slots = [UNUSED; GATE_SLOTS];
        let mut bias_slots = [UNUSED; GATE_SLOTS];
        for (g, gate) in layer.gates.iter().enumerate() {
            let w = gate_payload(gate, model.weight_mode);
            weight_slots[g] = tensors.len() as u16;
            tensors.push(TensorRecord {
                offset: (tables_end + blobs.len()) as u32,
                len: w.len() as u32,
                rows: rows as u16,
                cols: cols as u16,
                kind: KIND_WEIGHT,
                exponent: gate.weight_exp as i8,
            });
            blobs.extend_from_slice(&w);
            bias_slots[g] = tensors.len() as u16;
            tensors.push(TensorRecord {
                offset: (tables_end + blobs.len()) as u32,
                len: 4 * gate.bias.len() as u32,
                rows: rows as u16,
                cols: 1,
                kind: KIND_BIAS,
                exponent: gate.bias_exp() as i8,
            });
            blobs.extend(gate.bias.iter().flat_map(|b| b.to_le_bytes()));
        }
        let start = layer_records.len();
        layer_records.push(layer.shape.kind.code());
        layer_records.push(layer.shape.activation.code());
        layer_records.extend_from_slice(&(layer.shape.input_dim as u16).to_le_bytes());
        layer_records.extend_from_slice(&(layer.shape.output_dim as u16).to_le_bytes());
        for slot in weight_slots.iter().chain(&bias_slots) {
            layer_records.extend_from_slice(&slot.to_le_bytes());
        }
        layer_records.resize(start + LAYER_RECORD_LEN, 0);
    }

    let mut out = Vec::with_capacity(tables_end + blobs.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.weight_mode.weight_bits() as u8);
    out.push(model.compression.code());
    out.extend_from_slice(&(n_layers as u16).to_le_bytes());
    out.extend_from_slice(&(model.seq_len as u16).to_le_bytes());
    out.push(model.exec_mode.code());
    out.push(0);
    out.extend_from_slice(&(n_tensors as u16).to_le_bytes());
    out.extend_from_slice(&layer_records);
    for t in &tensors {
        out.extend_from_slice(&t.offset.to_le_bytes());
        out.extend_from_slice(&t.len.to_le_bytes());
        out.extend_from_slice(&t.rows.to_le_bytes());
        out.extend_from_slice(&t.cols.to_le_bytes());
        out.push(t.kind);
        out.push(t.exponent as u8);
        out.extend_from_slice(&[0, 0]);
    }
    debug_assert_eq!(out.len(), tables_end);
    out.extend_from_slice(&blobs);
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_tensor_table(bytes: &[u8], start: usize, n: usize) -> Result<Vec<TensorRecord>, LoadError> {
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let at = start + t * TENSOR_RECORD_LEN;
        let rec = TensorRecord {
            offset: u32_at(bytes, at),
            len: u32_at(bytes, at + 4),
            rows: u16_at(bytes, at + 8),
            cols: u16_at(bytes, at + 10),
            kind: bytes[at + 12],
            exponent: bytes[at + 13] as i8,
        };
        let end = rec.offset as u64 + rec.len as u64;
        if rec.offset as usize > bytes.len() || end > bytes.len() as u64 {
            return Err(LoadError::OutOfBounds { tensor: t, offset: rec.offset as u64, end, len: bytes.len() });
        }
        if rec.kind > KIND_BIAS {
            return Err(LoadError::CorruptBlob { tensor: t, reason: format!("unknown tensor kind {}", rec.kind) });
        }
        out.push(rec);
    }
    Ok(out)
}

struct Header {
    weight_mode: MacMode,
    compression: CompressionMode,
    n_layers: usize,
    seq_len: usize,
    exec_mode: ExecMode,
    n_tensors: usize,
}

fn read_header(bytes: &[u8]) -> Result<Header, LoadError> {
    if bytes.len() < 4 {
        return Err(LoadError::Truncated { needed: HEADER_LEN, have: bytes.len() });
    }
    let magic = u32_at(bytes, 0);
    if magic != MAGIC {
        return Err(LoadError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LoadError::Truncated { needed: HEADER_LEN, have: bytes.len() });
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(LoadError::UnsupportedVersion(version));
    }
    let weight_mode =
        MacMode::from_bits(bytes[6] as u32).ok_or_else(|| LoadError::BadHeader(format!("weight_bits {}", bytes[6])))?;
    let compression = CompressionMode::from_code(bytes[7])
        .map_err(|_| LoadError::BadHeader(format!("compression code {}", bytes[7])))?;
    let exec_mode =
        ExecMode::from_code(bytes[12]).ok_or_else(|| LoadError::BadHeader(format!("exec_mode {}", bytes[12])))?;
    if bytes[13] != 0 {
        return Err(LoadError::BadHeader("reserved byte set".into()));
    }
    Ok(Header {
        weight_mode,
        compression,
        n_layers: u16_at(bytes, 8) as usize,
        seq_len: u16_at(bytes, 10) as usize,
        exec_mode,
        n_tensors: u16_at(bytes, 14) as usize,
    })
}

fn decode_weights(
    bytes: &[u8],
    t: usize,
    rec: &TensorRecord,
    header: &Header,
) -> Result<(Vec<i16>, Option<CompressedBlob>), LoadError> {
    let data = &bytes[rec.offset as usize..rec.offset as usize + rec.len as usize];
    let n = rec.rows as usize * rec.cols as usize;
    let corrupt = |reason: String| LoadError::CorruptBlob { tensor: t, reason };
    match header.compression.index_bits() {
        None => {
            let width = header.weight_mode.weight_bits() as usize / 8;
            if data.len() != n * width {
                return Err(corrupt(format!("{} bytes for {n} weights", data.len())));
            }
            let weights = match header.weight_mode {
                MacMode::W8 => data.iter().map(|&b| b as i8 as i16).collect(),
                MacMode::W16 => data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect(),
            };
            Ok((weights, None))
        }
        Some(bits) => {
            let blob = CompressedBlob::from_bytes(data).map_err(|e| corrupt(e.to_string()))?;
            if blob.bits != bits {
                return Err(corrupt(format!("index width {} under a {}-bit header", blob.bits.get(), bits.get())));
            }
            if blob.entry_width != header.weight_mode {
                return Err(corrupt("codebook entry width differs from weight_bits".into()));
            }
            if blob.rows != rec.rows || blob.cols != rec.cols {
                return Err(corrupt(format!("blob shape {}x{} vs table {}x{}", blob.rows, blob.cols, rec.rows, rec.cols)));
            }
            if blob.exponent != rec.exponent {
                return Err(corrupt("blob exponent differs from tensor table".into()));
            }
            if blob.encoded_len() != data.len() {
                return Err(corrupt(format!("{} trailing bytes", data.len() - blob.encoded_len())));
            }
            let (weights, _) = codec::decompress(&blob).map_err(|e| corrupt(e.to_string()))?;
            Ok((weights, Some(blob)))
        }
    }
}

/// Validate and decode a loadable. Never panics on arbitrary input.
pub fn load(bytes: &[u8]) -> Result<CompiledModel, LoadError> {
    let header = read_header(bytes)?;
    let layers_start = HEADER_LEN;
    let tensors_start = layers_start + LAYER_RECORD_LEN * header.n_layers;
    let tables_end = tensors_start + TENSOR_RECORD_LEN * header.n_tensors;
    if bytes.len() < tables_end {
        return Err(LoadError::Truncated { needed: tables_end, have: bytes.len() });
    }
    let records = read_tensor_table(bytes, tensors_start, header.n_tensors)?;

    let mut shapes = Vec::with_capacity(header.n_layers);
    let mut slots = Vec::with_capacity(header.n_layers);
    for l in 0..header.n_layers {
        let at = layers_start + l * LAYER_RECORD_LEN;
        let bad = |reason: String| LoadError::BadLayer { layer: l, reason };
        let kind = LayerKind::from_code(bytes[at]).ok_or_else(|| bad(format!("unknown layer type {}", bytes[at])))?;
        let activation = ActivationKind::from_code(bytes[at + 1])
            .ok_or_else(|| bad(format!("unknown activation {}", bytes[at + 1])))?;
        let shape = LayerShape {
            kind,
            input_dim: u16_at(bytes, at + 2) as usize,
            output_dim: u16_at(bytes, at + 4) as usize,
            activation,
        };
        let idx: Vec<u16> = (0..2 * GATE_SLOTS).map(|s| u16_at(bytes, at + 6 + 2 * s)).collect();
        if bytes[at + 22..at + LAYER_RECORD_LEN].iter().any(|&b| b != 0) {
            return Err(bad("reserved bytes set".into()));
        }
        let gates = kind.gate_count();
        for (s, &i) in idx.iter().enumerate() {
            let used = s % GATE_SLOTS < gates;
            if used && i as usize >= header.n_tensors {
                return Err(bad(format!("tensor index {i} out of range")));
            }
            if !used && i != UNUSED {
                return Err(bad(format!("slot {s} must be unused")));
            }
        }
        shapes.push(shape);
        slots.push(idx);
    }
    validate_topology(&shapes, header.seq_len)?;

    let mut layers = Vec::with_capacity(shapes.len());
    for (l, (shape, idx)) in shapes.iter().zip(&slots).enumerate() {
        let (rows, cols) = shape.weight_shape();
        let mut gates = Vec::with_capacity(shape.kind.gate_count());
        for g in 0..shape.kind.gate_count() {
            let (wt, bt) = (idx[g] as usize, idx[GATE_SLOTS + g] as usize);
            let (wr, br) = (&records[wt], &records[bt]);
            let mismatch = |tensor: usize, reason: String| LoadError::DimMismatch { layer: l, tensor, reason };
            if wr.kind != KIND_WEIGHT || wr.rows as usize != rows || wr.cols as usize != cols {
                return Err(mismatch(wt, format!("expected {rows}x{cols} weights, found {}x{}", wr.rows, wr.cols)));
            }
            if br.kind != KIND_BIAS || br.rows as usize != rows || br.cols != 1 || br.len as usize != 4 * rows {
                return Err(mismatch(bt, format!("expected {rows} biases")));
            }
            let weight_exp = wr.exponent as i32;
            if br.exponent as i32 != weight_exp + Q14_EXP {
                return Err(mismatch(bt, format!("bias exponent {} is not e_w − 14", br.exponent)));
            }
            let (weights, blob) = decode_weights(bytes, wt, wr, &header)?;
            let data = &bytes[br.offset as usize..br.offset as usize + br.len as usize];
            let bias: Vec<i32> = data.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if bias.contains(&i32::MIN) {
                return Err(LoadError::CorruptBlob { tensor: bt, reason: "bias outside the accumulator range".into() });
            }
            gates.push(CompiledGate { weights, weight_exp, bias, blob });
        }
        layers.push(CompiledLayer { shape: *shape, gates });
    }
    Ok(CompiledModel {
        seq_len: header.seq_len,
        exec_mode: header.exec_mode,
        weight_mode: header.weight_mode,
        compression: header.compression,
        layers,
    })
}
