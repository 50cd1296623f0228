//! Canonical prefix codes and an MSB-first bit stream.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

pub const MAX_CODE_LEN: u8 = 24;

/// Code lengths for `(symbol, frequency)` pairs, limited to [`MAX_CODE_LEN`].
/// A lone symbol gets length 1. Output is sorted by symbol.
pub fn code_lengths(freqs: &[(i16, u64)]) -> Vec<(i16, u8)> {
    let mut syms: Vec<(i16, u64)> = freqs.iter().copied().filter(|&(_, f)| f > 0).collect();
    syms.sort_unstable_by_key(|&(s, _)| s);
    match syms.len() {
        0 => return Vec::new(),
        1 => return vec![(syms[0].0, 1)],
        _ => {}
    }
    let mut weights: Vec<u64> = syms.iter().map(|&(_, f)| f).collect();
    loop {
        let lengths = huffman_depths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN as usize) {
            return syms.iter().zip(lengths).map(|(&(s, _), l)| (s, l as u8)).collect();
        }
        for w in &mut weights {
            *w = (*w).div_ceil(2);
        }
    }
}

fn huffman_depths(weights: &[u64]) -> Vec<usize> {
    let n = weights.len();
    // Nodes 0..n are leaves; internal nodes get ids from n on. Ties break on id.
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    (0..n)
        .map(|mut i| {
            let mut d = 0;
            while parent[i] != usize::MAX {
                i = parent[i];
                d += 1;
            }
            d
        })
        .collect()
}

/// Canonical code assignment: `(symbol, length, code)` ordered by (length, symbol).
pub fn canonical_codes(lengths: &[(i16, u8)]) -> Vec<(i16, u8, u32)> {
    let mut sorted: Vec<(i16, u8)> = lengths.to_vec();
    sorted.sort_unstable_by_key(|&(s, l)| (l, s));
    let mut out = Vec::with_capacity(sorted.len());
    let mut code = 0u32;
    let mut prev_len = sorted.first().map(|&(_, l)| l).unwrap_or(0);
    for (i, &(s, l)) in sorted.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (l - prev_len);
        }
        prev_len = l;
        out.push((s, l, code));
    }
    out
}

/// Table-driven canonical decoder.
#[derive(Debug)]
pub struct Decoder {
    /// Per length: (first code, index of first symbol, count).
    per_len: [(u32, usize, usize); MAX_CODE_LEN as usize + 1],
    symbols: Vec<i16>,
}

impl Decoder {
    /// `None` if the lengths are invalid or over-subscribe the code space.
    pub fn new(lengths: &[(i16, u8)]) -> Option<Decoder> {
        if lengths.is_empty() || lengths.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
            return None;
        }
        let kraft: u64 = lengths.iter().map(|&(_, l)| 1u64 << (MAX_CODE_LEN - l)).sum();
        if kraft > 1u64 << MAX_CODE_LEN {
            return None;
        }
        let codes = canonical_codes(lengths);
        let mut per_len = [(0u32, 0usize, 0usize); MAX_CODE_LEN as usize + 1];
        for (i, &(_, l, code)) in codes.iter().enumerate() {
            let e = &mut per_len[l as usize];
            if e.2 == 0 {
                *e = (code, i, 0);
            }
            e.2 += 1;
        }
        Some(Decoder { per_len, symbols: codes.iter().map(|&(s, _, _)| s).collect() })
    }

    pub fn decode(&self, bits: &mut BitReader<'_>) -> Option<i16> {
        let mut code = 0u32;
        for len in 1..=MAX_CODE_LEN as usize {
            code = (code << 1) | bits.bit()?;
            let (first, start, count) = self.per_len[len];
            if count > 0 && code >= first && ((code - first) as usize) < count {
                return Some(self.symbols[start + (code - first) as usize]);
            }
        }
        None
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    /// Appends the low `n` bits of `value`, most significant first.
    pub fn put(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 32);
        if n == 0 {
            return;
        }
        self.acc = (self.acc << n) | (value & ((1u64 << n) - 1));
        self.nbits += n;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    /// Pads the last byte with zero bits.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn bit(&mut self) -> Option<u32> {
        let byte = *self.bytes.get(self.pos / 8)?;
        let b = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Some(b as u32)
    }

    pub fn bits(&mut self, n: u32) -> Option<u64> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u64;
        }
        Some(v)
    }

    /// Bits consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_satisfy_kraft_and_prefer_frequent_symbols() {
        let freqs = [(0i16, 100u64), (1, 50), (-1, 50), (2, 10), (-2, 5), (300, 1)];
        let lens = code_lengths(&freqs);
        let kraft: f64 = lens.iter().map(|&(_, l)| 0.5f64.powi(l as i32)).sum();
        assert!((kraft - 1.0).abs() < 1e-12);
        let len_of = |s: i16| lens.iter().find(|&&(x, _)| x == s).unwrap().1;
        assert!(len_of(0) <= len_of(2) && len_of(2) <= len_of(300));
    }

    #[test]
    fn skewed_frequencies_are_length_limited() {
        let mut freqs = Vec::new();
        let (mut a, mut b) = (1u64, 1u64);
        for s in 0..40i16 {
            freqs.push((s, a));
            (a, b) = (b, a + b);
        }
        let lens = code_lengths(&freqs);
        assert!(lens.iter().all(|&(_, l)| l <= MAX_CODE_LEN));
        assert!(Decoder::new(&lens).is_some());
    }

    #[test]
    fn encode_decode_symbols() {
        let lens = code_lengths(&[(5, 3), (7, 9), (-4, 1), (0, 20)]);
        let codes = canonical_codes(&lens);
        let msg = [0i16, 7, 5, -4, 0, 0, 7];
        let mut w = BitWriter::default();
        for s in msg {
            let &(_, l, c) = codes.iter().find(|&&(x, _, _)| x == s).unwrap();
            w.put(c as u64, l as u32);
        }
        let bytes = w.finish();
        let dec = Decoder::new(&lens).unwrap();
        let mut r = BitReader::new(&bytes);
        for s in msg {
            assert_eq!(dec.decode(&mut r), Some(s));
        }
    }

    #[test]
    fn over_subscribed_table_is_rejected() {
        assert!(Decoder::new(&[(0, 1), (1, 1), (2, 1)]).is_none());
        assert!(Decoder::new(&[]).is_none());
    }
}
