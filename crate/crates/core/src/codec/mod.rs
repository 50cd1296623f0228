//! Residual frame codec.
//!
//! A frame is coded as the signed difference to a reference frame, quantized
//! by a uniform mid-tread step `q` (round to nearest, ties away from zero).
//! The quantized values are scanned row-major; zero runs become run-class
//! symbols followed by raw extra bits, and all symbols are canonical-Huffman
//! coded. Coding against an all-zero reference gives the intra mode.
//!
//! Stream layout (little-endian):
//!
//! ```text
//! "NRES" | version u16 | width u16 | height u16 | q u8 | channels u8 | payload length u32
//! payload = symbol count u16 | (symbol i16, code length u8)* | bitstream
//! CRC32(payload) u32
//! ```

mod experiment;
pub mod huffman;

use alloc::vec::Vec;

pub use experiment::{run_compression_experiment, savings_csv, ExperimentError, SavingsRecord, SAVINGS_CSV_HEADER};

use crate::image::Frame;
use huffman::{canonical_codes, code_lengths, BitReader, BitWriter, Decoder};

pub const MAGIC: &[u8; 4] = b"NRES";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
/// Symbols at and above this value encode zero runs: `RUN_BASE + c` stands
/// for a run of `2^c + extra` zeros, `extra` being `c` raw bits.
pub const RUN_BASE: i16 = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("frame shapes differ")]
    ShapeMismatch,
    #[error("quantization step must be at least 1")]
    InvalidStep,
    #[error("frame dimensions exceed the 16-bit header fields")]
    TooLarge,
    #[error("malformed stream at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
}

fn malformed(offset: usize, reason: &'static str) -> CodecError {
    CodecError::Malformed { offset, reason }
}

/// `round(r / q)` with ties away from zero.
pub fn quantize(residual: i16, q: u8) -> i16 {
    let q = q as i32;
    let mag = (2 * (residual as i32).abs() + q) / (2 * q);
    (if residual < 0 { -mag } else { mag }) as i16
}

pub fn dequantize(level: i16, q: u8) -> i16 {
    level * q as i16
}

/// Symbol stream: nonzero levels verbatim, zero runs as `(class symbol, extra bits)`.
fn symbolize(levels: &[i16]) -> Vec<(i16, u32, u64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < levels.len() {
        if levels[i] != 0 {
            out.push((levels[i], 0, 0));
            i += 1;
            continue;
        }
        let start = i;
        while i < levels.len() && levels[i] == 0 {
            i += 1;
        }
        let run = (i - start) as u64;
        let class = 63 - run.leading_zeros();
        out.push((RUN_BASE + class as i16, class, run - (1u64 << class)));
    }
    out
}

/// Encodes `real` as a residual against `reference` with step `q`.
pub fn encode_frame(real: &Frame, reference: &Frame, q: u8) -> Result<Vec<u8>, CodecError> {
    if !real.same_shape(reference) {
        return Err(CodecError::ShapeMismatch);
    }
    if q == 0 {
        return Err(CodecError::InvalidStep);
    }
    if real.width() > u16::MAX as usize || real.height() > u16::MAX as usize {
        return Err(CodecError::TooLarge);
    }
    let levels: Vec<i16> =
        real.data().iter().zip(reference.data()).map(|(&a, &b)| quantize(a as i16 - b as i16, q)).collect();
    let symbols = symbolize(&levels);

    let mut freqs: Vec<(i16, u64)> = Vec::new();
    let mut sorted: Vec<i16> = symbols.iter().map(|s| s.0).collect();
    sorted.sort_unstable();
    for s in sorted {
        match freqs.last_mut() {
            Some((last, n)) if *last == s => *n += 1,
            _ => freqs.push((s, 1)),
        }
    }
    let lengths = code_lengths(&freqs);
    let codes = canonical_codes(&lengths);
    let mut by_symbol = codes.clone();
    by_symbol.sort_unstable_by_key(|c| c.0);
    let lookup = |s: i16| -> (u8, u32) {
        let i = by_symbol.binary_search_by_key(&s, |c| c.0).expect("every symbol has a code");
        (by_symbol[i].1, by_symbol[i].2)
    };

    let mut payload = Vec::new();
    payload.extend_from_slice(&(codes.len() as u16).to_le_bytes());
    for &(s, l, _) in &codes {
        payload.extend_from_slice(&s.to_le_bytes());
        payload.push(l);
    }
    let mut bits = BitWriter::default();
    for &(s, extra_bits, extra) in &symbols {
        let (len, code) = lookup(s);
        bits.put(code as u64, len as u32);
        if extra_bits > 0 {
            // Runs can exceed 32 bits of extra only for absurd frame sizes.
            bits.put(extra >> 32.min(extra_bits), extra_bits.saturating_sub(32));
            bits.put(extra, extra_bits.min(32));
        }
    }
    payload.extend_from_slice(&bits.finish());

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(real.width() as u16).to_le_bytes());
    out.extend_from_slice(&(real.height() as u16).to_le_bytes());
    out.push(q);
    out.push(real.channels() as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Intra mode: residual against an all-zero frame.
pub fn encode_intra(real: &Frame, q: u8) -> Result<Vec<u8>, CodecError> {
    let zero = Frame::new(real.width(), real.height(), real.channels()).map_err(|_| CodecError::ShapeMismatch)?;
    encode_frame(real, &zero, q)
}

/// Parsed stream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub q: u8,
    pub channels: u8,
    pub payload_len: u32,
}

pub fn parse_header(bytes: &[u8]) -> Result<StreamHeader, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(malformed(0, "bad magic"));
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != VERSION {
        return Err(malformed(4, "unsupported version"));
    }
    Ok(StreamHeader {
        width: u16::from_le_bytes([bytes[6], bytes[7]]),
        height: u16::from_le_bytes([bytes[8], bytes[9]]),
        q: bytes[10],
        channels: bytes[11],
        payload_len: u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]),
    })
}

/// Rebuilds a frame from its residual stream and the same reference.
pub fn decode_frame(bytes: &[u8], reference: &Frame, q: u8) -> Result<Frame, CodecError> {
    let h = parse_header(bytes)?;
    if h.q != q || q == 0 {
        return Err(malformed(10, "quantization step differs from the expected one"));
    }
    if h.width as usize != reference.width()
        || h.height as usize != reference.height()
        || h.channels as usize != reference.channels()
    {
        return Err(CodecError::ShapeMismatch);
    }
    let end = HEADER_LEN + h.payload_len as usize;
    if bytes.len() < end + 4 {
        return Err(malformed(bytes.len(), "truncated payload"));
    }
    if bytes.len() > end + 4 {
        return Err(malformed(end + 4, "trailing bytes"));
    }
    let payload = &bytes[HEADER_LEN..end];
    let crc = u32::from_le_bytes(bytes[end..end + 4].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != crc {
        return Err(malformed(end, "payload CRC mismatch"));
    }
    if payload.len() < 2 {
        return Err(malformed(HEADER_LEN, "missing symbol table"));
    }
    let count = u16::from_le_bytes([payload[0], payload[1]]) as usize;
    let table_end = 2 + 3 * count;
    if payload.len() < table_end {
        return Err(malformed(HEADER_LEN + payload.len(), "truncated symbol table"));
    }
    let lengths: Vec<(i16, u8)> = payload[2..table_end]
        .chunks_exact(3)
        .map(|c| (i16::from_le_bytes([c[0], c[1]]), c[2]))
        .collect();
    let decoder = Decoder::new(&lengths).ok_or(malformed(HEADER_LEN + 2, "invalid code lengths"))?;
    let stream = &payload[table_end..];
    let mut bits = BitReader::new(stream);
    let bit_offset = |b: &BitReader<'_>| HEADER_LEN + table_end + b.position() / 8;

    let total = reference.data().len();
    let mut out = Vec::with_capacity(total);
    let qi = q;
    while out.len() < total {
        let sym = decoder.decode(&mut bits).ok_or_else(|| malformed(bit_offset(&bits), "bitstream ended early"))?;
        if sym >= RUN_BASE {
            let class = (sym - RUN_BASE) as u32;
            if class > 63 {
                return Err(malformed(bit_offset(&bits), "run class out of range"));
            }
            let hi = bits.bits(class.saturating_sub(32)).ok_or_else(|| malformed(bit_offset(&bits), "truncated run"))?;
            let lo = bits.bits(class.min(32)).ok_or_else(|| malformed(bit_offset(&bits), "truncated run"))?;
            let run = (1u64 << class) + ((hi << 32.min(class)) | lo);
            if out.len() as u64 + run > total as u64 {
                return Err(malformed(bit_offset(&bits), "zero run overflows the frame"));
            }
            for _ in 0..run {
                let i = out.len();
                out.push(reference.data()[i]);
            }
        } else {
            let i = out.len();
            let v = reference.data()[i] as i32 + dequantize(sym, qi) as i32;
            out.push(v.clamp(0, 255) as u8);
        }
    }
    if stream.len() > bits.position().div_ceil(8) {
        return Err(malformed(bit_offset(&bits) + 1, "trailing bitstream bytes"));
    }
    Frame::from_vec(reference.width(), reference.height(), reference.channels(), out)
        .map_err(|_| CodecError::ShapeMismatch)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("compression savings need a positive total size")]
pub struct EmptySizes;

/// `100 · I / (I + P)`: the share of bytes avoided by not transmitting the
/// reference frame.
pub fn compression_savings(i_size: usize, p_size: usize) -> Result<f64, EmptySizes> {
    let total = i_size + p_size;
    if total == 0 {
        return Err(EmptySizes);
    }
    Ok(100.0 * i_size as f64 / total as f64)
}
