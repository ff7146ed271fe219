//! Fixed-ratio codebook weight compression.
//!
//! A tensor is compressed by scalar k-means into `2^b` centroids, the
//! centroids are quantized to the MAC weight lane, and every weight is
//! replaced by a `b`-bit index into that codebook. Decompression is a table
//! lookup driven by an LSB-first bit reader and needs no memory beyond the
//! codebook.
//!
//! Blob layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 1 | index bits `b` (2, 4, 6) |
//! | 4 | weight count `n` |
//! | 1 | entry width (8 or 16) |
//! | 1 | codebook exponent `e_w` (two's complement) |
//! | 2 | rows |
//! | 2 | cols |
//! | `2^b × width/8` | codebook entries |
//! | `ceil(n×b/8)` | packed indices, row-major |

pub mod baseline;
pub mod bitpack;
pub mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fxp::{self, FxpError, MacMode};
pub use baseline::{mse, prune_magnitude, quantize_uniform};
use bitpack::BitReader;

pub const BLOB_HEADER_LEN: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("unsupported index width {0} (expected 2, 4 or 6)")]
    BadBits(u32),
    #[error("unsupported codebook entry width {0} (expected 8 or 16)")]
    BadEntryWidth(u32),
    #[error("cannot compress an empty tensor")]
    Empty,
    #[error("tensor of {rows}x{cols} does not hold {n} weights")]
    ShapeMismatch { rows: usize, cols: usize, n: usize },
    #[error("blob truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("sparsity {0} outside [0, 1)")]
    BadSparsity(f64),
    #[error("codebook exponent {0} does not fit in i8")]
    ExponentRange(i32),
    #[error(transparent)]
    Fxp(#[from] FxpError),
}

/// Bits per codebook index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IndexBits(u8);

impl IndexBits {
    pub const TWO: IndexBits = IndexBits(2);
    pub const FOUR: IndexBits = IndexBits(4);
    pub const SIX: IndexBits = IndexBits(6);
    pub const ALL: [IndexBits; 3] = [IndexBits::SIX, IndexBits::FOUR, IndexBits::TWO];

    pub fn new(bits: u8) -> Result<Self, CodecError> {
        match bits {
            2 | 4 | 6 => Ok(IndexBits(bits)),
            other => Err(CodecError::BadBits(other as u32)),
        }
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    pub fn codebook_len(self) -> usize {
        1 << self.0
    }

    /// Ratio against float32 storage: `32 / b`.
    pub fn nominal_ratio(self) -> f64 {
        32.0 / self.0 as f64
    }
}

impl TryFrom<u8> for IndexBits {
    type Error = CodecError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        IndexBits::new(v)
    }
}

impl From<IndexBits> for u8 {
    fn from(b: IndexBits) -> u8 {
        b.0
    }
}

/// Weight storage mode for a compiled model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CompressionMode {
    #[default]
    None,
    Codebook(IndexBits),
}

impl CompressionMode {
    pub const ALL: [CompressionMode; 4] = [
        CompressionMode::None,
        CompressionMode::Codebook(IndexBits::SIX),
        CompressionMode::Codebook(IndexBits::FOUR),
        CompressionMode::Codebook(IndexBits::TWO),
    ];

    /// Wire value: 0 for none, otherwise `b`.
    pub fn code(self) -> u8 {
        match self {
            CompressionMode::None => 0,
            CompressionMode::Codebook(b) => b.0,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            0 => Ok(CompressionMode::None),
            b => IndexBits::new(b).map(CompressionMode::Codebook),
        }
    }

    pub fn index_bits(self) -> Option<IndexBits> {
        match self {
            CompressionMode::None => None,
            CompressionMode::Codebook(b) => Some(b),
        }
    }

    pub fn nominal_ratio(self) -> f64 {
        self.index_bits().map_or(1.0, IndexBits::nominal_ratio)
    }

    /// CLI spelling: `none`, `5.3x`, `8x`, `16x`.
    pub fn label(self) -> &'static str {
        match self.code() {
            0 => "none",
            2 => "16x",
            4 => "8x",
            _ => "5.3x",
        }
    }
}

impl std::str::FromStr for CompressionMode {
    type Err = CodecError;

    /// Accepts `none`/`0`, a ratio label (`16x`, `8x`, `5.3x`) or an index
    /// width (`2`, `4`, `6`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "0" => Ok(CompressionMode::None),
            "16x" | "2" => Ok(CompressionMode::Codebook(IndexBits::TWO)),
            "8x" | "4" => Ok(CompressionMode::Codebook(IndexBits::FOUR)),
            "5.3x" | "5.33x" | "6" => Ok(CompressionMode::Codebook(IndexBits::SIX)),
            _ => Err(CodecError::BadBits(0)),
        }
    }
}

impl std::fmt::Display for CompressionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBlob {
    pub bits: IndexBits,
    pub n: u32,
    pub entry_width: MacMode,
    pub exponent: i8,
    pub rows: u16,
    pub cols: u16,
    /// `2^b` entries, each within the entry lane.
    pub codebook: Vec<i16>,
    pub payload: Vec<u8>,
}

impl CompressedBlob {
    fn entry_bytes(width: MacMode) -> usize {
        width.weight_bits() as usize / 8
    }

    pub fn codebook_bytes(&self) -> usize {
        self.codebook.len() * Self::entry_bytes(self.entry_width)
    }

    pub fn encoded_len(&self) -> usize {
        BLOB_HEADER_LEN + self.codebook_bytes() + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.bits.0);
        out.extend_from_slice(&self.n.to_le_bytes());
        out.push(self.entry_width.weight_bits() as u8);
        out.push(self.exponent as u8);
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        for &c in &self.codebook {
            match self.entry_width {
                MacMode::W8 => out.push(c as i8 as u8),
                MacMode::W16 => out.extend_from_slice(&c.to_le_bytes()),
            }
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse and validate a blob. Trailing bytes beyond the payload are
    /// rejected by callers that know the exact extent; here they are ignored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(CodecError::Truncated { needed, have: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(BLOB_HEADER_LEN)?;
        let bits = IndexBits::new(bytes[0])?;
        let n = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let entry_width = MacMode::from_bits(bytes[5] as u32).ok_or(CodecError::BadEntryWidth(bytes[5] as u32))?;
        let exponent = bytes[6] as i8;
        let rows = u16::from_le_bytes([bytes[7], bytes[8]]);
        let cols = u16::from_le_bytes([bytes[9], bytes[10]]);
        if rows as usize * cols as usize != n as usize {
            return Err(CodecError::ShapeMismatch { rows: rows as usize, cols: cols as usize, n: n as usize });
        }
        let eb = Self::entry_bytes(entry_width);
        let cb_end = BLOB_HEADER_LEN + bits.codebook_len() * eb;
        let end = cb_end + bitpack::packed_len(n as usize, bits.get());
        need(end)?;
        let codebook = bytes[BLOB_HEADER_LEN..cb_end]
            .chunks_exact(eb)
            .map(|c| match entry_width {
                MacMode::W8 => c[0] as i8 as i16,
                MacMode::W16 => i16::from_le_bytes([c[0], c[1]]),
            })
            .collect();
        Ok(CompressedBlob {
            bits,
            n,
            entry_width,
            exponent,
            rows,
            cols,
            codebook,
            payload: bytes[cb_end..end].to_vec(),
        })
    }

    /// Streaming decoder over the packed indices.
    pub fn decoder(&self) -> BlobDecoder<'_> {
        BlobDecoder { blob: self, reader: BitReader::new(&self.payload), remaining: self.n as usize }
    }

    pub fn indices(&self) -> Result<Vec<u16>, CodecError> {
        bitpack::unpack(&self.payload, self.bits.get(), self.n as usize).ok_or(CodecError::Truncated {
            needed: bitpack::packed_len(self.n as usize, self.bits.get()),
            have: self.payload.len(),
        })
    }

    pub fn dequantize(&self) -> Result<Vec<f64>, CodecError> {
        let scale = fxp::pow2(self.exponent as i32);
        Ok(decompress(self)?.0.into_iter().map(|w| w as f64 * scale).collect())
    }
}

/// Yields decoded weights in row-major order, one index read per item.
pub struct BlobDecoder<'a> {
    blob: &'a CompressedBlob,
    reader: BitReader<'a>,
    remaining: usize,
}

impl Iterator for BlobDecoder<'_> {
    type Item = Result<i16, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(match self.reader.read(self.blob.bits.get()) {
            Some(idx) => Ok(self.blob.codebook[idx as usize]),
            None => Err(CodecError::Truncated {
                needed: bitpack::packed_len(self.blob.n as usize, self.blob.bits.get()),
                have: self.blob.payload.len(),
            }),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Compress a row-major `rows × cols` tensor.
pub fn compress(
    weights: &[f64],
    rows: usize,
    cols: usize,
    bits: IndexBits,
    entry_width: MacMode,
) -> Result<CompressedBlob, CodecError> {
    if weights.is_empty() {
        return Err(CodecError::Empty);
    }
    if rows * cols != weights.len() || rows > u16::MAX as usize || cols > u16::MAX as usize {
        return Err(CodecError::ShapeMismatch { rows, cols, n: weights.len() });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(FxpError::NonFinite { index, value }.into());
    }
    let km = kmeans::kmeans_1d(weights, bits.codebook_len());
    let e = fxp::choose_exponent(&km.centroids, entry_width.weight_bits())?;
    let exponent = i8::try_from(e).map_err(|_| CodecError::ExponentRange(e))?;
    let lane = fxp::QFormat::new(entry_width.weight_bits(), e)?;
    // rounding is monotone, so the codebook stays non-decreasing
    let codebook: Vec<i16> = km.centroids.iter().map(|&c| lane.quantize(c).value as i16).collect();
    let scale = fxp::pow2(e);
    let levels: Vec<f64> = codebook.iter().map(|&c| c as f64 * scale).collect();
    let mut writer = bitpack::BitWriter::with_capacity(bitpack::packed_len(weights.len(), bits.get()));
    for &w in weights {
        writer.write(kmeans::nearest(&levels, w) as u32, bits.get());
    }
    Ok(CompressedBlob {
        bits,
        n: weights.len() as u32,
        entry_width,
        exponent,
        rows: rows as u16,
        cols: cols as u16,
        codebook,
        payload: writer.finish(),
    })
}

/// Decode every weight; returns the integer weights and their exponent.
pub fn decompress(blob: &CompressedBlob) -> Result<(Vec<i16>, i32), CodecError> {
    if blob.codebook.len() != blob.bits.codebook_len() {
        return Err(CodecError::BadBits(blob.bits.get()));
    }
    let (lo, hi) = blob.entry_width.weight_range();
    if blob.codebook.iter().any(|&c| (c as i32) < lo || (c as i32) > hi) {
        return Err(CodecError::BadEntryWidth(blob.entry_width.weight_bits()));
    }
    let weights = blob.decoder().collect::<Result<Vec<_>, _>>()?;
    Ok((weights, blob.exponent as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub nominal_ratio: f64,
    pub actual_ratio: f64,
    pub original_bytes: u64,
    pub compressed_bytes: u64,
}

/// Ratio of float32 storage to the full blob (header + codebook + payload).
pub fn ratio_report(blob: &CompressedBlob) -> RatioReport {
    let original = 4 * blob.n as u64;
    let compressed = blob.encoded_len() as u64;
    RatioReport {
        nominal_ratio: blob.bits.nominal_ratio(),
        actual_ratio: original as f64 / compressed as f64,
        original_bytes: original,
        compressed_bytes: compressed,
    }
}

/// Aggregate ratio over several blobs.
pub fn combined_ratio(blobs: &[&CompressedBlob]) -> Option<RatioReport> {
    let first = blobs.first()?;
    let original: u64 = blobs.iter().map(|b| 4 * b.n as u64).sum();
    let compressed: u64 = blobs.iter().map(|b| b.encoded_len() as u64).sum();
    Some(RatioReport {
        nominal_ratio: first.bits.nominal_ratio(),
        actual_ratio: original as f64 / compressed as f64,
        original_bytes: original,
        compressed_bytes: compressed,
    })
}
