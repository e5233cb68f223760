//! Batched lookup-table evaluation over 4-bit sub-codes.
//!
//! A code of `D'` bits is split into `D'/4` segments. For one query, every
//! segment gets a 16-entry table holding the signed partial inner product for
//! each possible sub-code, and the inner product of a code with the query is
//! the sum of one table entry per segment. Codes are packed 32 at a time so
//! that a segment's sub-codes for the whole batch occupy 16 contiguous bytes:
//! byte `t` carries code `t` in its low nibble and code `t + 16` in its high
//! nibble.

use crate::error::{Error, Result};

/// Codes per packed batch.
pub const BATCH: usize = 32;

/// Bytes per segment in a packed batch.
pub const SEGMENT_BYTES: usize = 16;

/// Bytes needed to pack one batch of `padded_dim`-bit codes.
pub const fn batch_bytes(padded_dim: usize) -> usize {
    padded_dim / 4 * SEGMENT_BYTES
}

#[inline]
fn sub_code(bits: &[u64], seg: usize) -> u8 {
    let bit = seg * 4;
    ((bits[bit / 64] >> (bit % 64)) & 0xf) as u8
}

/// Up to 32 codes in the interleaved nibble layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    seg_count: usize,
    real: usize,
    bytes: Vec<u8>,
}

impl PackedBatch {
    pub fn seg_count(&self) -> usize {
        self.seg_count
    }

    /// Number of real (non-padding) codes; positions `real..32` are padding.
    pub fn real_count(&self) -> usize {
        self.real
    }

    pub fn is_padding(&self, pos: usize) -> bool {
        pos >= self.real
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Recovers all 32 codes, padding included.
    pub fn unpack(&self) -> Vec<Vec<u64>> {
        unpack_bytes(&self.bytes, self.seg_count * 4)
    }
}

/// Packs between 1 and 32 codes of `padded_dim` bits each.
pub fn pack_codes<B: AsRef<[u64]>>(codes: &[B], padded_dim: usize) -> Result<PackedBatch> {
    if codes.is_empty() || codes.len() > BATCH {
        return Err(Error::invalid(format!(
            "a batch holds 1..=32 codes, got {}",
            codes.len()
        )));
    }
    if padded_dim == 0 || !padded_dim.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "code length {padded_dim} is not a positive multiple of 4"
        )));
    }
    let words = padded_dim.div_ceil(64);
    if let Some(bad) = codes.iter().position(|c| c.as_ref().len() != words) {
        return Err(Error::invalid(format!(
            "code {bad} has {} words, expected {words}",
            codes[bad].as_ref().len()
        )));
    }
    let mut bytes = vec![0u8; batch_bytes(padded_dim)];
    pack_into(codes, &mut bytes);
    Ok(PackedBatch {
        seg_count: padded_dim / 4,
        real: codes.len(),
        bytes,
    })
}

/// Packs codes into a zeroed `out` sized for one batch. Missing codes stay zero.
pub(crate) fn pack_into<B: AsRef<[u64]>>(codes: &[B], out: &mut [u8]) {
    let seg_count = out.len() / SEGMENT_BYTES;
    for (k, code) in codes.iter().enumerate() {
        let bits = code.as_ref();
        let (t, shift) = if k < 16 { (k, 0) } else { (k - 16, 4) };
        for seg in 0..seg_count {
            out[seg * SEGMENT_BYTES + t] |= sub_code(bits, seg) << shift;
        }
    }
}

pub(crate) fn unpack_bytes(bytes: &[u8], padded_dim: usize) -> Vec<Vec<u64>> {
    let words = padded_dim.div_ceil(64);
    let mut codes = vec![vec![0u64; words]; BATCH];
    for (seg, chunk) in bytes.chunks_exact(SEGMENT_BYTES).enumerate() {
        let bit = seg * 4;
        for (t, &b) in chunk.iter().enumerate() {
            codes[t][bit / 64] |= ((b & 0xf) as u64) << (bit % 64);
            codes[t + 16][bit / 64] |= ((b >> 4) as u64) << (bit % 64);
        }
    }
    codes
}

/// Per-query lookup tables in exact and 8-bit quantized form.
#[derive(Debug, Clone)]
pub struct QueryLut {
    seg_count: usize,
    /// `seg_count * 16` entries.
    exact: Vec<f32>,
    quantized: Vec<u8>,
    delta: f32,
    /// Per-entry additive constant of the quantized reconstruction.
    offset: f32,
}

impl QueryLut {
    /// Builds the tables for the rotated query `q_prime` (length a multiple
    /// of 4).
    pub fn new(q_prime: &[f32]) -> Self {
        let mut lut = Self {
            seg_count: 0,
            exact: Vec::new(),
            quantized: Vec::new(),
            delta: 0.0,
            offset: 0.0,
        };
        lut.rebuild(q_prime);
        lut
    }

    /// Rebuilds in place, reusing allocations.
    pub fn rebuild(&mut self, q_prime: &[f32]) {
        assert!(
            q_prime.len().is_multiple_of(4),
            "rotated query length must be a multiple of 4"
        );
        let seg_count = q_prime.len() / 4;
        let inv_sqrt = 1.0 / (q_prime.len() as f32).sqrt();
        self.seg_count = seg_count;
        self.exact.clear();
        self.exact.resize(seg_count * 16, 0.0);

        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for (seg, q) in q_prime.chunks_exact(4).enumerate() {
            // set-bit sums with prefix reuse: sum[b] = sum[b without lowest bit] + q[lowest]
            let mut set_sum = [0.0f32; 16];
            for b in 1..16usize {
                set_sum[b] = set_sum[b & (b - 1)] + q[b.trailing_zeros() as usize];
            }
            let total = set_sum[15];
            let row = &mut self.exact[seg * 16..(seg + 1) * 16];
            for (e, s) in row.iter_mut().zip(set_sum) {
                *e = (2.0 * s - total) * inv_sqrt;
                min = min.min(*e);
                max = max.max(*e);
            }
        }

        self.quantized.clear();
        self.quantized.resize(seg_count * 16, 0);
        if seg_count == 0 {
            self.delta = 0.0;
            self.offset = 0.0;
            return;
        }
        let delta = (max - min) / 255.0;
        self.offset = min;
        if delta > 0.0 {
            self.delta = delta;
            let inv = 1.0 / delta;
            for (qv, &e) in self.quantized.iter_mut().zip(&self.exact) {
                *qv = ((e - min) * inv).round().clamp(0.0, 255.0) as u8;
            }
        } else {
            self.delta = 0.0;
        }
    }

    pub fn seg_count(&self) -> usize {
        self.seg_count
    }

    pub fn delta(&self) -> f32 {
        self.delta
    }

    pub fn offset(&self) -> f32 {
        self.offset
    }

    /// Exact table entry for sub-code `b` of segment `seg`.
    pub fn exact(&self, seg: usize, b: u8) -> f32 {
        self.exact[seg * 16 + b as usize]
    }

    pub fn quantized(&self, seg: usize, b: u8) -> u8 {
        self.quantized[seg * 16 + b as usize]
    }

    /// Value the quantized entry stands for.
    pub fn reconstructed(&self, seg: usize, b: u8) -> f32 {
        self.quantized(seg, b) as f32 * self.delta + self.offset
    }

    /// Worst-case absolute error of a quantized sum over all segments.
    pub fn quantized_error_bound(&self) -> f32 {
        self.seg_count as f32 * self.delta / 2.0
    }

    /// Sum over segments for a single unpacked code, walking the exact table.
    pub fn scalar_sum(&self, bits: &[u64]) -> f32 {
        (0..self.seg_count)
            .map(|seg| self.exact(seg, sub_code(bits, seg)))
            .sum()
    }
}

/// Evaluates the 32 sums of a packed batch.
pub fn batch_estimate(
    batch: &PackedBatch,
    lut: &QueryLut,
    use_quantized: bool,
) -> Result<[f32; BATCH]> {
    if batch.seg_count != lut.seg_count {
        return Err(Error::invalid(format!(
            "batch has {} segments, table has {}",
            batch.seg_count, lut.seg_count
        )));
    }
    let mut out = [0.0; BATCH];
    estimate_packed(&batch.bytes, lut, use_quantized, &mut out);
    Ok(out)
}

/// Hot-path variant over raw packed bytes; `packed.len()` must equal
/// `16 * lut.seg_count()`.
#[inline]
pub(crate) fn estimate_packed(
    packed: &[u8],
    lut: &QueryLut,
    use_quantized: bool,
    out: &mut [f32; BATCH],
) {
    debug_assert_eq!(packed.len(), lut.seg_count * SEGMENT_BYTES);
    if use_quantized {
        let mut acc = [0u32; BATCH];
        accumulate_quantized(packed, &lut.quantized, &mut acc);
        let base = lut.seg_count as f32 * lut.offset;
        for (o, &a) in out.iter_mut().zip(&acc) {
            *o = a as f32 * lut.delta + base;
        }
    } else {
        *out = [0.0; BATCH];
        for (chunk, row) in packed
            .chunks_exact(SEGMENT_BYTES)
            .zip(lut.exact.chunks_exact(16))
        {
            for (t, &b) in chunk.iter().enumerate() {
                out[t] += row[(b & 0xf) as usize];
                out[t + 16] += row[(b >> 4) as usize];
            }
        }
    }
}

#[inline]
fn accumulate_quantized(packed: &[u8], table: &[u8], acc: &mut [u32; BATCH]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("ssse3") {
            // SAFETY: the required target feature was detected at runtime.
            unsafe { x86::accumulate_ssse3(packed, table, acc) };
            return;
        }
    }
    accumulate_scalar(packed, table, acc);
}

fn accumulate_scalar(packed: &[u8], table: &[u8], acc: &mut [u32; BATCH]) {
    for (chunk, row) in packed
        .chunks_exact(SEGMENT_BYTES)
        .zip(table.chunks_exact(16))
    {
        for (t, &b) in chunk.iter().enumerate() {
            acc[t] += row[(b & 0xf) as usize] as u32;
            acc[t + 16] += row[(b >> 4) as usize] as u32;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use super::{BATCH, SEGMENT_BYTES};

    /// 16-bit lanes hold at most 257 entries of 255; flush well before that.
    const FLUSH_EVERY: usize = 256;

    #[target_feature(enable = "ssse3")]
    pub(super) unsafe fn accumulate_ssse3(packed: &[u8], table: &[u8], acc: &mut [u32; BATCH]) {
        let seg_count = packed.len() / SEGMENT_BYTES;
        let nibble = _mm_set1_epi8(0x0f);
        let zero = _mm_setzero_si128();
        let mut seg = 0;
        while seg < seg_count {
            let end = (seg + FLUSH_EVERY).min(seg_count);
            // lanes: codes 0-7, 8-15, 16-23, 24-31
            let mut a0 = zero;
            let mut a1 = zero;
            let mut a2 = zero;
            let mut a3 = zero;
            for j in seg..end {
                let codes =
                    _mm_loadu_si128(packed.as_ptr().add(j * SEGMENT_BYTES) as *const __m128i);
                let row = _mm_loadu_si128(table.as_ptr().add(j * 16) as *const __m128i);
                let lo = _mm_and_si128(codes, nibble);
                let hi = _mm_and_si128(_mm_srli_epi16(codes, 4), nibble);
                let vlo = _mm_shuffle_epi8(row, lo);
                let vhi = _mm_shuffle_epi8(row, hi);
                a0 = _mm_add_epi16(a0, _mm_unpacklo_epi8(vlo, zero));
                a1 = _mm_add_epi16(a1, _mm_unpackhi_epi8(vlo, zero));
                a2 = _mm_add_epi16(a2, _mm_unpacklo_epi8(vhi, zero));
                a3 = _mm_add_epi16(a3, _mm_unpackhi_epi8(vhi, zero));
            }
            let mut lanes = [0u16; 32];
            _mm_storeu_si128(lanes.as_mut_ptr() as *mut __m128i, a0);
            _mm_storeu_si128(lanes.as_mut_ptr().add(8) as *mut __m128i, a1);
            _mm_storeu_si128(lanes.as_mut_ptr().add(16) as *mut __m128i, a2);
            _mm_storeu_si128(lanes.as_mut_ptr().add(24) as *mut __m128i, a3);
            for (a, &l) in acc.iter_mut().zip(&lanes) {
                *a += l as u32;
            }
            seg = end;
        }
    }
}
