//! Beam search driven by batched neighbor estimates.
//!
//! Visiting a vertex computes its exact distance from the raw vector stored in
//! its block; that distance both updates the result set and serves as
//! `|q_r - c|^2` for the estimates of the vertex's neighbors, so results carry
//! exact distances without a separate re-ranking pass. Neighbors are pushed
//! into the pool with every new estimate unless they were already visited, so
//! one vertex may hold several entries at once.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fastscan::{self, QueryLut, BATCH};
use crate::qindex::{LutMode, Metric, QGIndex, NO_NEIGHBOR};
use crate::quantizer::estimate_sqdist;
use crate::vectors::{normalize_in_place, sqdist, Vectors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Pool capacity `n_b`; counts duplicate entries.
    pub beam: usize,
    pub k: usize,
    /// Re-insert already pooled vertices with each new estimate. Disabling
    /// keeps at most one entry per vertex.
    pub multi_estimate: bool,
    pub prefetch: bool,
    /// Overrides the table mode stored in the index header.
    pub lut_mode: Option<LutMode>,
}

impl SearchParams {
    pub fn new(beam: usize, k: usize) -> Self {
        Self {
            beam,
            k,
            multi_estimate: true,
            prefetch: true,
            lut_mode: None,
        }
    }

    pub fn multi_estimate(mut self, on: bool) -> Self {
        self.multi_estimate = on;
        self
    }

    pub fn prefetch(mut self, on: bool) -> Self {
        self.prefetch = on;
        self
    }

    pub fn lut_mode(mut self, mode: LutMode) -> Self {
        self.lut_mode = Some(mode);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    /// Exact distance (not squared).
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Vertices visited, equal to the number of exact distance evaluations.
    pub visited: usize,
    pub batches: usize,
    /// Neighbor estimates computed, `32 * batches`.
    pub estimates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    /// Ascending by distance, ties by id.
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` vertices were visited.
    pub truncated: bool,
    pub stats: SearchStats,
}

impl SearchOutput {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn distances(&self) -> Vec<f32> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub est_sqdist: f32,
    pub id: u32,
    pub visited: bool,
}

#[inline]
fn before(a_est: f32, a_id: u32, b_est: f32, b_id: u32) -> bool {
    a_est < b_est || (a_est == b_est && a_id < b_id)
}

/// Bounded candidate pool ordered by estimated distance, ties by lower id.
#[derive(Debug, Clone, Default)]
pub struct BeamPool {
    capacity: usize,
    entries: Vec<PoolEntry>,
    /// Every entry before `cursor` is visited.
    cursor: usize,
}

/// Result of [`BeamPool::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insert {
    Rejected,
    Inserted,
    /// Inserted and pushed out the entry for this id.
    Evicted(u32),
}

impl BeamPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
            cursor: 0,
        }
    }

    pub fn reset(&mut self, capacity: usize) {
        self.capacity = capacity;
        self.entries.clear();
        self.cursor = 0;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Inserts an unvisited entry. A full pool takes the newcomer only if it
    /// orders strictly before the current worst entry.
    pub fn insert(&mut self, est_sqdist: f32, id: u32) -> Insert {
        if self.capacity == 0 {
            return Insert::Rejected;
        }
        let full = self.entries.len() >= self.capacity;
        if full {
            let worst = self.entries.last().expect("full pool is non-empty");
            if !before(est_sqdist, id, worst.est_sqdist, worst.id) {
                return Insert::Rejected;
            }
        }
        let pos = self.entries.partition_point(|e| {
            before(e.est_sqdist, e.id, est_sqdist, id) || (e.est_sqdist == est_sqdist && e.id == id)
        });
        self.entries.insert(
            pos,
            PoolEntry {
                est_sqdist,
                id,
                visited: false,
            },
        );
        if pos < self.cursor {
            self.cursor = pos;
        }
        if full {
            let gone = self.entries.pop().expect("non-empty");
            if self.cursor > self.entries.len() {
                self.cursor = self.entries.len();
            }
            Insert::Evicted(gone.id)
        } else {
            Insert::Inserted
        }
    }

    fn skip_visited(&mut self) {
        while self.cursor < self.entries.len() && self.entries[self.cursor].visited {
            self.cursor += 1;
        }
    }

    /// Best unvisited entry, without consuming it.
    pub fn peek_unvisited(&mut self) -> Option<PoolEntry> {
        self.skip_visited();
        self.entries.get(self.cursor).copied()
    }

    /// Marks the best unvisited entry visited and returns it.
    pub fn pop_unvisited(&mut self) -> Option<PoolEntry> {
        self.skip_visited();
        let e = self.entries.get_mut(self.cursor)?;
        e.visited = true;
        let out = *e;
        self.cursor += 1;
        Some(out)
    }
}

/// Advisory prefetch target: the vertex the next iteration will most likely
/// visit.
pub fn prefetch_next(pool: &mut BeamPool) -> Option<u32> {
    pool.peek_unvisited().map(|e| e.id)
}

#[inline]
fn prefetch_block(index: &QGIndex, id: u32) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let ptr = index.block_ptr(id as usize) as *const i8;
        let bytes = index.header().stride_bytes().min(4 * 64);
        // SAFETY: prefetch is a hint and never faults; offsets stay inside the block.
        unsafe {
            let mut off = 0;
            while off < bytes {
                _mm_prefetch::<_MM_HINT_T0>(ptr.add(off));
                off += 64;
            }
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (index, id);
}

/// Epoch-tagged membership over vertex ids.
#[derive(Debug, Clone, Default)]
struct EpochSet {
    tags: Vec<u32>,
    epoch: u32,
}

impl EpochSet {
    fn reset(&mut self, n: usize) {
        if self.tags.len() != n || self.epoch == u32::MAX {
            self.tags.clear();
            self.tags.resize(n, 0);
            self.epoch = 0;
        }
        self.epoch += 1;
    }

    #[inline]
    fn contains(&self, i: u32) -> bool {
        self.tags[i as usize] == self.epoch
    }

    #[inline]
    fn insert(&mut self, i: u32) {
        self.tags[i as usize] = self.epoch;
    }

    #[inline]
    fn remove(&mut self, i: u32) {
        self.tags[i as usize] = 0;
    }
}

/// Bounded set of the `k` smallest exact squared distances seen.
#[derive(Debug, Clone, Default)]
struct TopK {
    k: usize,
    items: Vec<(f32, u32)>,
}

impl TopK {
    fn reset(&mut self, k: usize) {
        self.k = k;
        self.items.clear();
    }

    #[inline]
    fn offer(&mut self, d2: f32, id: u32) {
        if self.items.len() == self.k {
            let &(wd, wid) = self.items.last().expect("k >= 1");
            if !before(d2, id, wd, wid) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, i)| before(d, i, d2, id));
        self.items.insert(pos, (d2, id));
    }
}

/// Per-query scratch space. Reusable across queries on indices of any size;
/// never shared between threads.
#[derive(Debug, Clone, Default)]
pub struct QueryContext {
    query: Vec<f32>,
    rotated: Vec<f32>,
    lut: Option<QueryLut>,
    visited: EpochSet,
    pooled: EpochSet,
    pool: BeamPool,
    topk: TopK,
    stats: SearchStats,
    order: Vec<u32>,
}

impl QueryContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs one query and returns the `k` nearest visited vertices.
    pub fn search(
        &mut self,
        index: &QGIndex,
        query: &[f32],
        params: &SearchParams,
    ) -> Result<SearchOutput> {
        self.run(index, query, params)?;
        let neighbors: Vec<Neighbor> = self
            .topk
            .items
            .iter()
            .map(|&(d2, id)| Neighbor {
                id,
                distance: d2.sqrt(),
            })
            .collect();
        Ok(SearchOutput {
            truncated: neighbors.len() < params.k,
            neighbors,
            stats: self.stats,
        })
    }

    /// Like [`search`](Self::search) but leaves the `(squared distance, id)`
    /// results in the context, avoiding an allocation.
    pub(crate) fn search_sq(
        &mut self,
        index: &QGIndex,
        query: &[f32],
        params: &SearchParams,
    ) -> Result<&[(f32, u32)]> {
        self.run(index, query, params)?;
        Ok(&self.topk.items)
    }

    /// Pool state left by the last query.
    pub fn pool(&self) -> &BeamPool {
        &self.pool
    }

    /// Vertices visited by the last query, in visit order.
    pub fn visit_order(&self) -> &[u32] {
        &self.order
    }

    fn run(&mut self, index: &QGIndex, query: &[f32], params: &SearchParams) -> Result<()> {
        if index.is_empty() {
            return Err(Error::invalid("search on an empty index"));
        }
        if query.len() != index.dim() {
            return Err(Error::invalid(format!(
                "query has {} coordinates, index expects {}",
                query.len(),
                index.dim()
            )));
        }
        if params.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if params.beam == 0 {
            return Err(Error::invalid("beam size must be at least 1"));
        }
        if params.k > params.beam {
            log::debug!(
                "k = {} exceeds beam size {}; results may be truncated",
                params.k,
                params.beam
            );
        }

        self.query.clear();
        self.query.extend_from_slice(query);
        if index.metric() == Metric::Cosine {
            normalize_in_place(&mut self.query);
        }
        self.rotated.resize(index.header().padded_dim, 0.0);
        index.rotator().apply_into(&self.query, &mut self.rotated)?;
        match &mut self.lut {
            Some(lut) => lut.rebuild(&self.rotated),
            None => self.lut = Some(QueryLut::new(&self.rotated)),
        }
        let lut = self.lut.as_ref().expect("built above");
        let quantized = params.lut_mode.unwrap_or(index.header().lut_mode) == LutMode::Quantized;

        self.visited.reset(index.len());
        if !params.multi_estimate {
            self.pooled.reset(index.len());
        }
        self.pool.reset(params.beam);
        self.topk.reset(params.k);
        self.stats = SearchStats::default();
        self.order.clear();

        let entry = index.entry_point();
        self.pool.insert(0.0, entry);
        if !params.multi_estimate {
            self.pooled.insert(entry);
        }

        let batch_len = fastscan::batch_bytes(index.header().padded_dim);
        let mut sums = [0.0f32; BATCH];
        while let Some(top) = self.pool.pop_unvisited() {
            let p = top.id;
            if self.visited.contains(p) {
                // stale duplicate of an already visited vertex
                continue;
            }
            self.visited.insert(p);
            self.stats.visited += 1;
            self.order.push(p);

            let block = index.block(p as usize);
            let d2 = sqdist(&self.query, block.raw);
            self.topk.offer(d2, p);

            for (b, packed) in block.packed.chunks_exact(batch_len).enumerate() {
                let ids = &block.neighbors[b * BATCH..(b + 1) * BATCH];
                if ids[0] == NO_NEIGHBOR {
                    // empty slots only appear as a suffix
                    break;
                }
                fastscan::estimate_packed(packed, lut, quantized, &mut sums);
                self.stats.batches += 1;
                self.stats.estimates += BATCH;
                let bias = &block.bias[b * BATCH..(b + 1) * BATCH];
                let scale = &block.scale[b * BATCH..(b + 1) * BATCH];
                for t in 0..BATCH {
                    let u = ids[t];
                    if u == NO_NEIGHBOR || self.visited.contains(u) {
                        continue;
                    }
                    if !params.multi_estimate && self.pooled.contains(u) {
                        continue;
                    }
                    let est = estimate_sqdist(bias[t], scale[t], d2, sums[t]);
                    match self.pool.insert(est, u) {
                        Insert::Rejected => {}
                        Insert::Inserted => {
                            if !params.multi_estimate {
                                self.pooled.insert(u);
                            }
                        }
                        Insert::Evicted(gone) => {
                            if !params.multi_estimate {
                                self.pooled.insert(u);
                                self.pooled.remove(gone);
                            }
                        }
                    }
                }
            }
            if params.prefetch {
                if let Some(next) = prefetch_next(&mut self.pool) {
                    prefetch_block(index, next);
                }
            }
        }
        Ok(())
    }
}

/// One-shot search with a fresh context.
pub fn search(index: &QGIndex, query: &[f32], params: &SearchParams) -> Result<SearchOutput> {
    QueryContext::new().search(index, query, params)
}

/// Searches every row of `queries` in parallel, one context per worker.
pub fn search_batch(
    index: &QGIndex,
    queries: &Vectors,
    params: &SearchParams,
) -> Result<Vec<SearchOutput>> {
    (0..queries.len())
        .into_par_iter()
        .map_init(QueryContext::new, |ctx, i| {
            ctx.search(index, queries.row(i), params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_orders_and_bounds() {
        let mut pool = BeamPool::new(3);
        assert_eq!(pool.insert(5.0, 1), Insert::Inserted);
        assert_eq!(pool.insert(3.0, 2), Insert::Inserted);
        assert_eq!(pool.insert(4.0, 3), Insert::Inserted);
        assert_eq!(pool.insert(9.0, 4), Insert::Rejected);
        // equal to the worst is not strictly better
        assert_eq!(pool.insert(5.0, 1), Insert::Rejected);
        assert_eq!(pool.insert(1.0, 5), Insert::Evicted(1));
        let ids: Vec<u32> = pool.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![5, 2, 3]);
    }

    #[test]
    fn pool_ties_break_on_id() {
        let mut pool = BeamPool::new(2);
        pool.insert(1.0, 9);
        pool.insert(1.0, 4);
        assert_eq!(pool.insert(1.0, 6), Insert::Evicted(9));
        assert_eq!(pool.pop_unvisited().unwrap().id, 4);
        assert_eq!(pool.pop_unvisited().unwrap().id, 6);
        assert!(pool.pop_unvisited().is_none());
    }

    #[test]
    fn pool_allows_duplicates() {
        let mut pool = BeamPool::new(4);
        pool.insert(2.0, 7);
        pool.insert(1.0, 7);
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn cursor_moves_back_for_better_insert() {
        let mut pool = BeamPool::new(4);
        pool.insert(2.0, 1);
        pool.insert(3.0, 2);
        assert_eq!(pool.pop_unvisited().unwrap().id, 1);
        pool.insert(0.5, 3);
        assert_eq!(pool.pop_unvisited().unwrap().id, 3);
        assert_eq!(pool.pop_unvisited().unwrap().id, 2);
    }

    #[test]
    fn prefetch_hint() {
        let mut pool = BeamPool::new(4);
        assert_eq!(prefetch_next(&mut pool), None);
        pool.insert(1.0, 11);
        assert_eq!(prefetch_next(&mut pool), Some(11));
        pool.pop_unvisited();
        assert_eq!(prefetch_next(&mut pool), None);
    }

    #[test]
    fn topk_keeps_smallest() {
        let mut t = TopK::default();
        t.reset(2);
        for (d, id) in [(4.0, 1), (1.0, 2), (3.0, 3), (1.0, 0)] {
            t.offer(d, id);
        }
        assert_eq!(t.items, vec![(1.0, 0), (1.0, 2)]);
    }
}
