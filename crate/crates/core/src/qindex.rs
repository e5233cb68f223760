//! Index data model and its on-disk form.
//!
//! Every vertex owns one fixed-stride block:
//!
//! ```text
//! raw vector    D   x f32
//! neighbor ids  R   x u32
//! packed codes  R/32 batches x (16 * D'/4) bytes
//! bias          R   x f32
//! scale         R   x f32
//! ```
//!
//! The codes, bias and scale of slot `k` describe neighbor `k` relative to the
//! block's own vector, so a search that visits a vertex reads the exact
//! vector, the neighbor estimates and the adjacency from one contiguous
//! region. All fields are 4-byte multiples and blocks are kept in one `u32`
//! buffer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fastscan::{self, BATCH};
use crate::quantizer;
use crate::rotation::{padded_dim_for, Rotator};
use crate::vectors::Vectors;

pub const MAGIC: [u8; 8] = *b"SYMQG\0\0\x01";

/// Serialized header size in bytes.
pub const HEADER_BYTES: usize = 46;

/// Marks an unused neighbor slot. Only indices assembled with
/// [`QGIndex::assemble_partial`] contain it.
pub const NO_NEIGHBOR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// Vectors and queries are scaled to unit norm, then compared by
    /// Euclidean distance.
    Cosine,
}

impl Metric {
    fn code(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

/// Which lookup table drives neighbor estimates during search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LutMode {
    Exact,
    #[default]
    Quantized,
}

impl LutMode {
    fn code(self) -> u8 {
        match self {
            LutMode::Exact => 0,
            LutMode::Quantized => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LutMode::Exact),
            1 => Some(LutMode::Quantized),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub n: usize,
    pub dim: usize,
    pub padded_dim: usize,
    pub degree: usize,
    pub metric: Metric,
    pub entry_point: u32,
    pub rotator_seed: u64,
    pub rotator_rounds: usize,
    pub lut_mode: LutMode,
}

impl IndexHeader {
    /// Block size in 4-byte words.
    pub fn stride_words(&self) -> usize {
        self.dim + self.degree + self.degree * self.padded_dim / 32 + 2 * self.degree
    }

    /// Block size in bytes: `4D + 4R + R*D'/8 + 8R`.
    pub fn stride_bytes(&self) -> usize {
        4 * self.stride_words()
    }

    fn to_bytes(self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        let mut w = FieldWriter { buf: &mut b, at: 0 };
        w.put(&MAGIC);
        w.put(&(self.n as u64).to_le_bytes());
        w.put(&(self.dim as u32).to_le_bytes());
        w.put(&(self.padded_dim as u32).to_le_bytes());
        w.put(&(self.degree as u32).to_le_bytes());
        w.put(&[self.metric.code()]);
        w.put(&self.entry_point.to_le_bytes());
        w.put(&self.rotator_seed.to_le_bytes());
        w.put(&(self.rotator_rounds as u32).to_le_bytes());
        w.put(&[self.lut_mode.code()]);
        debug_assert_eq!(w.at, HEADER_BYTES);
        b
    }

    fn from_bytes(b: &[u8; HEADER_BYTES]) -> Result<Self> {
        if b[..8] != MAGIC {
            if b[..7] == MAGIC[..7] {
                return Err(Error::format(
                    7,
                    format!("unsupported index version {}", b[7]),
                ));
            }
            return Err(Error::format(0, "bad magic"));
        }
        let u32_at = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        let metric =
            Metric::from_code(b[28]).ok_or_else(|| Error::format(28, "unknown metric code"))?;
        let lut_mode =
            LutMode::from_code(b[45]).ok_or_else(|| Error::format(45, "unknown table mode"))?;
        let header = IndexHeader {
            n: u64_at(8) as usize,
            dim: u32_at(16) as usize,
            padded_dim: u32_at(20) as usize,
            degree: u32_at(24) as usize,
            metric,
            entry_point: u32_at(29),
            rotator_seed: u64_at(33),
            rotator_rounds: u32_at(41) as usize,
            lut_mode,
        };
        if header.dim == 0 || header.padded_dim != padded_dim_for(header.dim) {
            return Err(Error::format(16, "inconsistent dimensions"));
        }
        if header.degree == 0 || !header.degree.is_multiple_of(BATCH) {
            return Err(Error::format(24, "degree is not a positive multiple of 32"));
        }
        if header.n == 0 || header.entry_point as usize >= header.n {
            return Err(Error::format(29, "entry point out of range"));
        }
        Ok(header)
    }
}

struct FieldWriter<'a> {
    buf: &'a mut [u8],
    at: usize,
}

impl FieldWriter<'_> {
    fn put(&mut self, bytes: &[u8]) {
        self.buf[self.at..self.at + bytes.len()].copy_from_slice(bytes);
        self.at += bytes.len();
    }
}

/// Borrowed view of one vertex block.
#[derive(Debug, Clone, Copy)]
pub struct VertexBlock<'a> {
    pub raw: &'a [f32],
    pub neighbors: &'a [u32],
    /// `R/32` packed batches back to back.
    pub packed: &'a [u8],
    pub bias: &'a [f32],
    pub scale: &'a [f32],
}

impl VertexBlock<'_> {
    /// Neighbor ids in use, skipping empty slots.
    pub fn live_neighbors(&self) -> impl Iterator<Item = u32> + '_ {
        self.neighbors.iter().copied().filter(|&u| u != NO_NEIGHBOR)
    }
}

/// Byte accounting for an index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexStats {
    pub n: usize,
    /// Out-degree (live neighbors) -> vertex count.
    pub degree_histogram: BTreeMap<usize, usize>,
    pub header_bytes: usize,
    pub raw_bytes: usize,
    pub neighbor_bytes: usize,
    pub code_bytes: usize,
    /// Per-neighbor bias and scale, not part of the raw + ids + codes formula.
    pub factor_bytes: usize,
    pub total_bytes: usize,
}

impl IndexStats {
    /// Bytes of raw vectors, neighbor ids and codes combined.
    pub fn formula_bytes(&self) -> usize {
        self.raw_bytes + self.neighbor_bytes + self.code_bytes
    }

    pub fn mean_degree(&self) -> f64 {
        let edges: usize = self.degree_histogram.iter().map(|(d, c)| d * c).sum();
        edges as f64 / self.n.max(1) as f64
    }
}

/// Immutable graph index with per-vertex quantized neighbor data.
#[derive(Debug, Clone)]
pub struct QGIndex {
    header: IndexHeader,
    rotator: Rotator,
    data: Vec<u32>,
}

impl QGIndex {
    /// Builds blocks from a complete adjacency: exactly `degree` distinct
    /// non-self neighbors per vertex.
    pub fn assemble(
        vectors: &Vectors,
        adjacency: &[Vec<u32>],
        degree: usize,
        rotator: Rotator,
        metric: Metric,
        entry_point: u32,
    ) -> Result<Self> {
        Self::assemble_impl(
            vectors,
            adjacency,
            degree,
            rotator,
            metric,
            entry_point,
            false,
        )
    }

    /// Like [`assemble`](Self::assemble) but lists may be shorter than
    /// `degree`; missing slots hold [`NO_NEIGHBOR`] and are skipped by search.
    pub fn assemble_partial(
        vectors: &Vectors,
        adjacency: &[Vec<u32>],
        degree: usize,
        rotator: Rotator,
        metric: Metric,
        entry_point: u32,
    ) -> Result<Self> {
        Self::assemble_impl(
            vectors,
            adjacency,
            degree,
            rotator,
            metric,
            entry_point,
            true,
        )
    }

    fn assemble_impl(
        vectors: &Vectors,
        adjacency: &[Vec<u32>],
        degree: usize,
        rotator: Rotator,
        metric: Metric,
        entry_point: u32,
        partial: bool,
    ) -> Result<Self> {
        let n = vectors.len();
        if n == 0 {
            return Err(Error::invalid("cannot index an empty vector set"));
        }
        if n > NO_NEIGHBOR as usize {
            return Err(Error::invalid("vertex ids must fit in 32 bits"));
        }
        if degree == 0 || !degree.is_multiple_of(BATCH) {
            return Err(Error::invalid(format!(
                "degree {degree} is not a positive multiple of 32"
            )));
        }
        if rotator.dim() != vectors.dim() {
            return Err(Error::invalid(format!(
                "rotator dimension {} differs from data dimension {}",
                rotator.dim(),
                vectors.dim()
            )));
        }
        if adjacency.len() != n {
            return Err(Error::invalid(format!(
                "adjacency has {} lists for {n} vertices",
                adjacency.len()
            )));
        }
        if entry_point as usize >= n {
            return Err(Error::invalid(format!(
                "entry point {entry_point} out of range"
            )));
        }
        adjacency
            .par_iter()
            .enumerate()
            .try_for_each(|(v, list)| validate_list(v, list, n, degree, partial))?;

        let header = IndexHeader {
            n,
            dim: vectors.dim(),
            padded_dim: rotator.padded_dim(),
            degree,
            metric,
            entry_point,
            rotator_seed: rotator.seed(),
            rotator_rounds: rotator.rounds(),
            lut_mode: LutMode::default(),
        };
        let stride = header.stride_words();
        let padded = rotator.padded_dim();
        let mut rotated = vec![0.0f32; n * padded];
        rotated
            .par_chunks_mut(padded)
            .enumerate()
            .for_each(|(i, out)| {
                rotator
                    .apply_into(vectors.row(i), out)
                    .expect("dimensions validated")
            });
        let mut data = vec![0u32; n * stride];
        let layout = Layout::new(&header);
        let rotated = Rotated {
            data: &rotated,
            padded,
        };
        data.par_chunks_mut(stride).enumerate().for_each_init(
            || vec![0.0f32; padded],
            |scratch, (v, block)| {
                fill_block(block, &layout, vectors, &rotated, v, &adjacency[v], scratch)
            },
        );
        Ok(Self {
            header,
            rotator,
            data,
        })
    }

    pub fn with_lut_mode(mut self, mode: LutMode) -> Self {
        self.header.lut_mode = mode;
        self
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn rotator(&self) -> &Rotator {
        &self.rotator
    }

    pub fn len(&self) -> usize {
        self.header.n
    }

    pub fn is_empty(&self) -> bool {
        self.header.n == 0
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn degree(&self) -> usize {
        self.header.degree
    }

    pub fn metric(&self) -> Metric {
        self.header.metric
    }

    pub fn entry_point(&self) -> u32 {
        self.header.entry_point
    }

    /// Word offset of block `i` from the start of the block region.
    pub fn block_offset(&self, i: usize) -> usize {
        i * self.header.stride_words()
    }

    #[inline]
    fn block_words(&self, i: usize) -> &[u32] {
        let stride = self.header.stride_words();
        &self.data[i * stride..(i + 1) * stride]
    }

    #[inline]
    pub fn block(&self, i: usize) -> VertexBlock<'_> {
        let words = self.block_words(i);
        let l = Layout::new(&self.header);
        VertexBlock {
            raw: bytemuck::cast_slice(&words[..l.neighbors]),
            neighbors: &words[l.neighbors..l.packed],
            packed: bytemuck::cast_slice(&words[l.packed..l.bias]),
            bias: bytemuck::cast_slice(&words[l.bias..l.scale]),
            scale: bytemuck::cast_slice(&words[l.scale..]),
        }
    }

    #[inline]
    pub fn raw(&self, i: usize) -> &[f32] {
        let d = self.header.dim;
        bytemuck::cast_slice(&self.block_words(i)[..d])
    }

    /// Pointer to the first byte of block `i`, for cache prefetch hints.
    #[inline]
    pub(crate) fn block_ptr(&self, i: usize) -> *const u32 {
        self.block_words(i).as_ptr()
    }

    /// Unpacked code of neighbor slot `k` in block `i`.
    pub fn neighbor_code(&self, i: usize, k: usize) -> quantizer::NeighborCode {
        let b = self.block(i);
        let batch_len = fastscan::batch_bytes(self.header.padded_dim);
        let batch = &b.packed[(k / BATCH) * batch_len..(k / BATCH + 1) * batch_len];
        let codes = fastscan::unpack_bytes(batch, self.header.padded_dim);
        quantizer::NeighborCode {
            bits: codes[k % BATCH].clone(),
            bias: b.bias[k],
            scale: b.scale[k],
        }
    }

    /// Adjacency lists with empty slots removed.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        (0..self.len())
            .map(|i| self.block(i).live_neighbors().collect())
            .collect()
    }

    /// All stored vectors, in id order.
    pub fn vectors(&self) -> Vectors {
        let mut data = Vec::with_capacity(self.len() * self.dim());
        for i in 0..self.len() {
            data.extend_from_slice(self.raw(i));
        }
        Vectors::new(self.dim(), data).expect("dimensions are consistent")
    }

    pub fn stats(&self) -> IndexStats {
        let h = &self.header;
        let mut degree_histogram = BTreeMap::new();
        let (mut raw_bytes, mut neighbor_bytes, mut code_bytes, mut factor_bytes) = (0, 0, 0, 0);
        for i in 0..h.n {
            let b = self.block(i);
            *degree_histogram
                .entry(b.live_neighbors().count())
                .or_insert(0) += 1;
            raw_bytes += size_of_val(b.raw);
            neighbor_bytes += size_of_val(b.neighbors);
            code_bytes += b.packed.len();
            factor_bytes += size_of_val(b.bias) + size_of_val(b.scale);
        }
        IndexStats {
            n: h.n,
            degree_histogram,
            header_bytes: HEADER_BYTES,
            raw_bytes,
            neighbor_bytes,
            code_bytes,
            factor_bytes,
            total_bytes: HEADER_BYTES + 4 * self.data.len(),
        }
    }

    /// Serialized form: header followed by all blocks, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.data.len());
        out.extend_from_slice(&self.header.to_bytes());
        for w in &self.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.check_persistable()?;
        w.write_all(&self.header.to_bytes())?;
        let mut buf = Vec::with_capacity(64 * 1024);
        for chunk in self.data.chunks(16 * 1024) {
            buf.clear();
            for word in chunk {
                buf.extend_from_slice(&word.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.check_persistable()?;
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut hb = [0u8; HEADER_BYTES];
        r.read_exact(&mut hb)?;
        let header = IndexHeader::from_bytes(&hb)?;
        let rotator = Rotator::with_rounds(header.rotator_seed, header.dim, header.rotator_rounds)?;
        let words = header
            .n
            .checked_mul(header.stride_words())
            .ok_or_else(|| Error::format(8, "vertex count overflows"))?;
        let expected = words
            .checked_mul(4)
            .ok_or_else(|| Error::format(8, "vertex count overflows"))?;
        let mut bytes = Vec::new();
        r.by_ref().take(expected as u64).read_to_end(&mut bytes)?;
        if bytes.len() < expected {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "index truncated: {} of {expected} block bytes present",
                    bytes.len()
                ),
            )));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format(
                (HEADER_BYTES + bytes.len()) as u64,
                "trailing bytes after last block",
            ));
        }
        let data: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let index = Self {
            header,
            rotator,
            data,
        };
        index.check_ids()?;
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    fn check_persistable(&self) -> Result<()> {
        let regenerated = Rotator::with_rounds(
            self.header.rotator_seed,
            self.header.dim,
            self.header.rotator_rounds,
        )?;
        if regenerated != self.rotator {
            return Err(Error::invalid(
                "rotator is not reproducible from its seed and cannot be saved",
            ));
        }
        Ok(())
    }

    fn check_ids(&self) -> Result<()> {
        let l = Layout::new(&self.header);
        for i in 0..self.len() {
            let block = self.block(i);
            if let Some(k) = block
                .neighbors
                .iter()
                .position(|&u| u != NO_NEIGHBOR && u as usize >= self.len())
            {
                let offset = HEADER_BYTES + 4 * (self.block_offset(i) + l.neighbors + k);
                return Err(Error::format(
                    offset as u64,
                    format!("vertex {i} has an out-of-range neighbor"),
                ));
            }
        }
        Ok(())
    }
}

fn validate_list(v: usize, list: &[u32], n: usize, degree: usize, partial: bool) -> Result<()> {
    if list.len() > degree || (!partial && list.len() != degree) {
        return Err(Error::invalid(format!(
            "vertex {v} has {} neighbors, expected {degree}",
            list.len()
        )));
    }
    let mut seen = list.to_vec();
    seen.sort_unstable();
    for w in seen.windows(2) {
        if w[0] == w[1] {
            return Err(Error::invalid(format!(
                "vertex {v} lists neighbor {} twice",
                w[0]
            )));
        }
    }
    for &u in list {
        if u as usize >= n {
            return Err(Error::invalid(format!(
                "vertex {v} has out-of-range neighbor {u}"
            )));
        }
        if u as usize == v {
            return Err(Error::invalid(format!(
                "vertex {v} lists itself as a neighbor"
            )));
        }
    }
    Ok(())
}

/// Word offsets of the fields inside a block.
#[derive(Debug, Clone, Copy)]
struct Layout {
    neighbors: usize,
    packed: usize,
    bias: usize,
    scale: usize,
}

impl Layout {
    #[inline]
    fn new(h: &IndexHeader) -> Self {
        let neighbors = h.dim;
        let packed = neighbors + h.degree;
        let bias = packed + h.degree * h.padded_dim / 32;
        let scale = bias + h.degree;
        Self {
            neighbors,
            packed,
            bias,
            scale,
        }
    }
}

struct Rotated<'a> {
    data: &'a [f32],
    padded: usize,
}

impl Rotated<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.padded..(i + 1) * self.padded]
    }
}

fn fill_block(
    block: &mut [u32],
    l: &Layout,
    vectors: &Vectors,
    rotated: &Rotated<'_>,
    v: usize,
    list: &[u32],
    scratch: &mut [f32],
) {
    let center = vectors.row(v);
    let degree = l.packed - l.neighbors;
    block[..l.neighbors].copy_from_slice(bytemuck::cast_slice(center));
    let ids = &mut block[l.neighbors..l.packed];
    ids.fill(NO_NEIGHBOR);
    ids[..list.len()].copy_from_slice(list);

    let c_rot = rotated.row(v);
    let codes: Vec<quantizer::NeighborCode> = list
        .iter()
        .map(|&u| {
            let u = u as usize;
            quantizer::quantize_rotated(vectors.row(u), center, rotated.row(u), c_rot, scratch)
        })
        .collect();

    let batch_len = fastscan::batch_bytes(rotated.padded);
    let packed: &mut [u8] = bytemuck::cast_slice_mut(&mut block[l.packed..l.bias]);
    debug_assert_eq!(packed.len(), degree / BATCH * batch_len);
    for (batch, out) in codes.chunks(BATCH).zip(packed.chunks_exact_mut(batch_len)) {
        let bits: Vec<&[u64]> = batch.iter().map(|c| c.bits.as_slice()).collect();
        fastscan::pack_into(&bits, out);
    }
    for (k, code) in codes.iter().enumerate() {
        block[l.bias + k] = code.bias.to_bits();
        block[l.scale + k] = code.scale.to_bits();
    }
}
