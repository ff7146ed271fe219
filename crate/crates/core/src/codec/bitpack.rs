//! LSB-first bit packing.
//!
//! Field `k` of width `b` occupies stream bits `k×b .. (k+1)×b`, where stream
//! bit 0 is the least significant bit of byte 0. Fields may straddle bytes.

/// Accumulates fixed-width fields into bytes.
#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        BitWriter { buf: Vec::with_capacity(bytes), ..Self::default() }
    }

    /// Append the low `bits` bits of `value` (1..=32).
    pub fn write(&mut self, value: u32, bits: u32) {
        debug_assert!((1..=32).contains(&bits));
        let mask = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
        self.acc |= ((value & mask) as u64) << self.filled;
        self.filled += bits;
        while self.filled >= 8 {
            self.buf.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    /// Flush the partial byte (zero-padded in its high bits).
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.buf.push(self.acc as u8);
        }
        self.buf
    }
}

/// Reads fixed-width fields back out of an LSB-first stream.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    avail: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0, acc: 0, avail: 0 }
    }

    /// Next `bits`-wide field (1..=32), or `None` once the stream runs dry.
    pub fn read(&mut self, bits: u32) -> Option<u32> {
        debug_assert!((1..=32).contains(&bits));
        while self.avail < bits {
            let byte = *self.bytes.get(self.pos)?;
            self.acc |= (byte as u64) << self.avail;
            self.avail += 8;
            self.pos += 1;
        }
        let mask = if bits == 32 { u32::MAX as u64 } else { (1u64 << bits) - 1 };
        let v = (self.acc & mask) as u32;
        self.acc >>= bits;
        self.avail -= bits;
        Some(v)
    }
}

/// Bytes needed for `n` fields of `bits` each.
pub fn packed_len(n: usize, bits: u32) -> usize {
    (n * bits as usize).div_ceil(8)
}

pub fn pack(indices: &[u16], bits: u32) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(packed_len(indices.len(), bits));
    for &i in indices {
        w.write(i as u32, bits);
    }
    w.finish()
}

/// Unpack exactly `n` fields; `None` if `bytes` is too short.
pub fn unpack(bytes: &[u8], bits: u32, n: usize) -> Option<Vec<u16>> {
    if bytes.len() < packed_len(n, bits) {
        return None;
    }
    let mut r = BitReader::new(bytes);
    (0..n).map(|_| r.read(bits).map(|v| v as u16)).collect()
}
