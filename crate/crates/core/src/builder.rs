//! Iterative graph construction.
//!
//! Starting from a random `R`-regular graph, each iteration codes the current
//! graph, runs a beam search for every vertex to collect candidates, and keeps
//! an NSG-pruned subset as the vertex's new neighbor list. The previous list
//! is discarded. After the last iteration, vertices left with fewer than `R`
//! neighbors are topped up from their pruned candidates with an angle rule
//! whose threshold is binary-searched per vertex, so every block holds whole
//! batches of 32 live codes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fastscan::BATCH;
use crate::qindex::{LutMode, Metric, QGIndex};
use crate::rotation::Rotator;
use crate::search::{QueryContext, SearchParams};
use crate::vectors::{sqdist, Vectors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    /// Out-degree `R`, a positive multiple of 32.
    pub degree: usize,
    /// Candidate beam size.
    pub ef: usize,
    pub iterations: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Top up under-full vertices after the last iteration. Turning this off
    /// leaves short lists with empty slots.
    pub refine: bool,
    pub admission: Admission,
    pub lut_mode: LutMode,
}

/// Which edges can block a pruned candidate during refinement at angle
/// threshold `theta`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Admission {
    /// Any kept or pruned candidate closer to the vertex than `c` within
    /// `theta` of `c` blocks it. Each candidate is judged on its own, so the
    /// admitted count is non-increasing in `theta` and the binary search
    /// finds the largest feasible threshold.
    #[default]
    Closer,
    /// Only kept edges and candidates already admitted in this scan can
    /// block. Spreads supplements further apart, but the admitted count is
    /// not monotone in `theta`, so the binary search returns some feasible
    /// threshold rather than the largest.
    Greedy,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            degree: 32,
            ef: 200,
            iterations: 3,
            seed: 0,
            metric: Metric::Euclidean,
            refine: true,
            admission: Admission::Closer,
            lut_mode: LutMode::Quantized,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 || !self.degree.is_multiple_of(BATCH) {
            return Err(Error::invalid(format!(
                "degree {} is not a positive multiple of 32",
                self.degree
            )));
        }
        if self.ef < self.degree {
            return Err(Error::invalid(format!(
                "ef {} is smaller than degree {}",
                self.ef, self.degree
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        Ok(())
    }
}

/// A candidate neighbor with its exact squared distance to the vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub sqdist: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneResult {
    pub kept: Vec<Candidate>,
    /// Candidates not kept, ascending.
    pub pruned: Vec<Candidate>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    /// Mean out-degree after each iteration's pruning.
    pub iteration_mean_degree: Vec<f64>,
    /// Vertices that needed edges supplemented.
    pub refined_vertices: usize,
    /// Vertices that still fell short after the angle rule and got random fill.
    pub random_filled_vertices: usize,
}

fn vertex_rng(seed: u64, salt: u64, v: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17));
    rng.set_stream(v as u64);
    rng
}

const INIT_SALT: u64 = 0x1f83_d9ab_fb41_bd6b;
const FILL_SALT: u64 = 0x5be0_cd19_137e_2179;

/// Random graph with `degree` distinct non-self neighbors per vertex.
pub fn random_init(n: usize, degree: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if n <= degree {
        return Err(Error::invalid(format!(
            "need more than {degree} vertices for degree {degree}, got {n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|v| {
            let mut rng = vertex_rng(seed, INIT_SALT, v);
            sample(&mut rng, n - 1, degree)
                .into_iter()
                .map(|i| if i >= v { i + 1 } else { i } as u32)
                .collect()
        })
        .collect())
}

/// NSG occlusion rule: scanning ascending, keep `c` iff no kept `u` is
/// closer to `c` than the vertex itself is. Stops after `degree` keeps.
pub fn nsg_prune(
    vectors: &Vectors,
    candidates: &[Candidate],
    degree: usize,
) -> Result<PruneResult> {
    if candidates.windows(2).any(|w| w[1].sqdist < w[0].sqdist) {
        return Err(Error::invalid("candidates must be sorted by distance"));
    }
    let mut out = PruneResult::default();
    for (i, &c) in candidates.iter().enumerate() {
        if out.kept.len() >= degree {
            out.pruned.extend_from_slice(&candidates[i..]);
            break;
        }
        let cv = vectors.row(c.id as usize);
        let occluded = out
            .kept
            .iter()
            .any(|u| sqdist(vectors.row(u.id as usize), cv) < c.sqdist);
        if occluded {
            out.pruned.push(c);
        } else {
            out.kept.push(c);
        }
    }
    Ok(out)
}

/// Edge directions from one vertex, with memoized pairwise cosines. Kept in
/// f64 so that small angles stay resolvable.
struct Fan<'a> {
    /// Unit edge directions; zero when the member coincides with the vertex.
    dirs: Vec<f64>,
    zero: Vec<bool>,
    dim: usize,
    m: usize,
    cos: &'a mut Vec<f64>,
}

impl<'a> Fan<'a> {
    fn new(vectors: &Vectors, p: usize, members: &[Candidate], cos: &'a mut Vec<f64>) -> Self {
        let dim = vectors.dim();
        let pv = vectors.row(p);
        let mut dirs = vec![0.0; members.len() * dim];
        let mut zero = Vec::with_capacity(members.len());
        for (c, out) in members.iter().zip(dirs.chunks_exact_mut(dim)) {
            for ((o, &x), &y) in out.iter_mut().zip(vectors.row(c.id as usize)).zip(pv) {
                *o = x as f64 - y as f64;
            }
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            zero.push(norm == 0.0);
            if norm > 0.0 {
                out.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let m = members.len();
        cos.clear();
        cos.resize(m * m, f64::NAN);
        Self {
            dirs,
            zero,
            dim,
            m,
            cos,
        }
    }

    /// Cosine of the angle between edges `i` and `j`. A zero-length edge has
    /// no direction and never blocks another edge, reported as -1.
    #[inline]
    fn cos(&mut self, i: usize, j: usize) -> f64 {
        let slot = i * self.m + j;
        let cached = self.cos[slot];
        if !cached.is_nan() {
            return cached;
        }
        let c = if self.zero[i] || self.zero[j] {
            -1.0
        } else {
            let a = &self.dirs[i * self.dim..(i + 1) * self.dim];
            let b = &self.dirs[j * self.dim..(j + 1) * self.dim];
            dot64(a, b).clamp(-1.0, 1.0)
        };
        self.cos[slot] = c;
        self.cos[j * self.m + i] = c;
        c
    }
}

#[inline]
fn dot64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Largest cosine between member `c` and the first `among` members no
/// farther than it, memoized in `memo` since it does not depend on the
/// threshold.
#[inline]
fn closer_max_cos(
    fan: &mut Fan<'_>,
    members: &[Candidate],
    among: usize,
    memo: &mut [f64],
    c: usize,
) -> f64 {
    if !memo[c].is_nan() {
        return memo[c];
    }
    let dc = members[c].sqdist;
    let v = (0..among)
        .filter(|&u| u != c && members[u].sqdist <= dc)
        .map(|u| fan.cos(u, c))
        .fold(-1.0f64, f64::max);
    memo[c] = v;
    v
}

/// Angle admission scan over the pruned members (positions `n_kept..`) at
/// `cos_threshold`: `c` is admitted iff no blocking member no farther than
/// `c` makes an angle with it whose cosine exceeds the threshold. Returns
/// admitted positions, stopping at `limit`.
fn admit(
    fan: &mut Fan<'_>,
    members: &[Candidate],
    n_kept: usize,
    memo: &mut [f64],
    rule: Admission,
    cos_threshold: f64,
    limit: usize,
) -> Vec<usize> {
    let mut admitted: Vec<usize> = Vec::new();
    for c in n_kept..members.len() {
        if admitted.len() >= limit {
            break;
        }
        match rule {
            Admission::Closer => {
                if closer_max_cos(fan, members, members.len(), memo, c) <= cos_threshold {
                    admitted.push(c);
                }
            }
            Admission::Greedy => {
                if closer_max_cos(fan, members, n_kept, memo, c) > cos_threshold {
                    continue;
                }
                // pruned members are ascending, so every admitted one is no farther
                let blocked = admitted.iter().any(|&u| fan.cos(u, c) > cos_threshold);
                if !blocked {
                    admitted.push(c);
                }
            }
        }
    }
    admitted
}

/// Ids admitted by the angle rule at angle `theta` (radians), without a cap.
pub fn angle_admitted(
    vectors: &Vectors,
    p: usize,
    kept: &[Candidate],
    pruned: &[Candidate],
    rule: Admission,
    theta: f64,
) -> Vec<u32> {
    let members: Vec<Candidate> = kept.iter().chain(pruned).copied().collect();
    let mut cache = Vec::new();
    let mut fan = Fan::new(vectors, p, &members, &mut cache);
    let mut memo = vec![f64::NAN; members.len()];
    admit(
        &mut fan,
        &members,
        kept.len(),
        &mut memo,
        rule,
        theta.cos(),
        usize::MAX,
    )
    .into_iter()
    .map(|i| members[i].id)
    .collect()
}

const HALVINGS: usize = 32;

/// Tops `kept` up to exactly `degree` neighbors. Kept edges stay first and
/// unchanged; supplements come from `pruned` under the most restrictive
/// angle threshold in `[0, 60 deg]` that still yields `degree` edges, then
/// from deterministic random ids if the candidates run out.
pub fn refine_degree(
    vectors: &Vectors,
    p: usize,
    kept: &[Candidate],
    pruned: &[Candidate],
    degree: usize,
    seed: u64,
    rule: Admission,
) -> Vec<u32> {
    let mut cache = Vec::new();
    refine_with_cache(vectors, p, kept, pruned, degree, seed, rule, &mut cache).0
}

/// Returns the list and whether random fill was needed.
fn refine_with_cache(
    vectors: &Vectors,
    p: usize,
    kept: &[Candidate],
    pruned: &[Candidate],
    degree: usize,
    seed: u64,
    rule: Admission,
    cache: &mut Vec<f64>,
) -> (Vec<u32>, bool) {
    let mut out: Vec<u32> = kept.iter().take(degree).map(|c| c.id).collect();
    if out.len() >= degree {
        return (out, false);
    }
    let need = degree - out.len();
    let members: Vec<Candidate> = kept.iter().chain(pruned).copied().collect();
    let mut fan = Fan::new(vectors, p, &members, cache);
    let n_kept = kept.len();
    let mut memo = vec![f64::NAN; members.len()];

    let strict = 0.5f64;
    let mut chosen = admit(&mut fan, &members, n_kept, &mut memo, rule, strict, need);
    if chosen.len() < need {
        let loose = admit(&mut fan, &members, n_kept, &mut memo, rule, 1.0, need);
        if loose.len() < need {
            chosen = loose;
        } else {
            let (mut lo, mut hi) = (strict, 1.0f64);
            let mut best = loose;
            for _ in 0..HALVINGS {
                let mid = lo + (hi - lo) / 2.0;
                if mid <= lo || mid >= hi {
                    break;
                }
                let got = admit(&mut fan, &members, n_kept, &mut memo, rule, mid, need);
                if got.len() >= need {
                    hi = mid;
                    best = got;
                } else {
                    lo = mid;
                }
            }
            chosen = best;
        }
    }
    out.extend(chosen.iter().map(|&i| members[i].id));

    let filled = out.len() < degree;
    if filled {
        let n = vectors.len();
        let mut rng = vertex_rng(seed, FILL_SALT, p);
        let mut taken: std::collections::HashSet<u32> = out.iter().copied().collect();
        taken.insert(p as u32);
        while out.len() < degree {
            let u = rng.random_range(0..n as u32);
            if taken.insert(u) {
                out.push(u);
            }
        }
    }
    (out, filled)
}

/// Vertex closest to the mean vector.
pub fn medoid_entry(vectors: &Vectors) -> u32 {
    let dim = vectors.dim();
    let mut mean = vec![0.0f64; dim];
    for row in vectors.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    let inv = 1.0 / vectors.len().max(1) as f64;
    let centroid: Vec<f32> = mean.iter().map(|&m| (m * inv) as f32).collect();
    (0..vectors.len())
        .into_par_iter()
        .map(|i| (sqdist(vectors.row(i), &centroid), i as u32))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .unwrap_or(0)
}

pub fn build(vectors: &Vectors, params: &BuildParams) -> Result<QGIndex> {
    build_with_report(vectors, params).map(|(idx, _)| idx)
}

pub fn build_with_report(
    vectors: &Vectors,
    params: &BuildParams,
) -> Result<(QGIndex, BuildReport)> {
    params.validate()?;
    let mut normalized = None;
    let data = ingest(vectors, params.metric, &mut normalized);
    let mut state = iterate(data, params)?;
    let index = if params.refine {
        state.refine(data, params)?
    } else {
        state.unrefined(data, params)?
    };
    Ok((index, state.report))
}

/// Builds the refined and unrefined variants of one graph. Both share every
/// iteration and differ only in the final degree-alignment pass, so the pair
/// costs about one build. Returns `(refined, unrefined)`; `params.refine` is
/// ignored.
pub fn build_refinement_pair(
    vectors: &Vectors,
    params: &BuildParams,
) -> Result<(QGIndex, QGIndex)> {
    params.validate()?;
    let mut normalized = None;
    let data = ingest(vectors, params.metric, &mut normalized);
    let mut state = iterate(data, params)?;
    let unrefined = state.unrefined(data, params)?;
    let refined = state.refine(data, params)?;
    Ok((refined, unrefined))
}

fn ingest<'a>(vectors: &'a Vectors, metric: Metric, slot: &'a mut Option<Vectors>) -> &'a Vectors {
    match metric {
        Metric::Euclidean => vectors,
        Metric::Cosine => slot.insert(vectors.normalized()),
    }
}

struct BuildState {
    rotator: Rotator,
    entry: u32,
    adjacency: Vec<Vec<u32>>,
    last: Vec<PruneResult>,
    report: BuildReport,
}

fn iterate(data: &Vectors, params: &BuildParams) -> Result<BuildState> {
    let n = data.len();
    let rotator = Rotator::new(params.seed, data.dim())?;
    let mut adjacency = random_init(n, params.degree, params.seed)?;
    let entry = medoid_entry(data);
    let search_params = SearchParams::new(params.ef, params.ef + 1).lut_mode(params.lut_mode);
    let mut report = BuildReport::default();
    let mut last: Vec<PruneResult> = Vec::new();

    for _ in 0..params.iterations {
        let index = QGIndex::assemble_partial(
            data,
            &adjacency,
            params.degree,
            rotator.clone(),
            params.metric,
            entry,
        )?;
        last = (0..n)
            .into_par_iter()
            .map_init(QueryContext::new, |ctx, v| {
                let found = ctx.search_sq(&index, data.row(v), &search_params)?;
                let candidates: Vec<Candidate> = found
                    .iter()
                    .filter(|&&(_, id)| id as usize != v)
                    .take(params.ef)
                    .map(|&(sqdist, id)| Candidate { id, sqdist })
                    .collect();
                nsg_prune(data, &candidates, params.degree)
            })
            .collect::<Result<_>>()?;
        adjacency = last
            .iter()
            .map(|r| r.kept.iter().map(|c| c.id).collect())
            .collect();
        let edges: usize = adjacency.iter().map(Vec::len).sum();
        report.iteration_mean_degree.push(edges as f64 / n as f64);
    }
    Ok(BuildState {
        rotator,
        entry,
        adjacency,
        last,
        report,
    })
}

impl BuildState {
    fn unrefined(&self, data: &Vectors, params: &BuildParams) -> Result<QGIndex> {
        let index = QGIndex::assemble_partial(
            data,
            &self.adjacency,
            params.degree,
            self.rotator.clone(),
            params.metric,
            self.entry,
        )?;
        Ok(index.with_lut_mode(params.lut_mode))
    }

    fn refine(&mut self, data: &Vectors, params: &BuildParams) -> Result<QGIndex> {
        let refined: Vec<(Vec<u32>, bool, bool)> = self
            .last
            .par_iter()
            .enumerate()
            .map_init(Vec::new, |cache, (v, r)| {
                let short = r.kept.len() < params.degree;
                let (list, filled) = refine_with_cache(
                    data,
                    v,
                    &r.kept,
                    &r.pruned,
                    params.degree,
                    params.seed,
                    params.admission,
                    cache,
                );
                (list, short, filled)
            })
            .collect();
        self.report.refined_vertices = refined.iter().filter(|r| r.1).count();
        self.report.random_filled_vertices = refined.iter().filter(|r| r.2).count();
        let adjacency: Vec<Vec<u32>> = refined.into_iter().map(|r| r.0).collect();
        let index = QGIndex::assemble(
            data,
            &adjacency,
            params.degree,
            self.rotator.clone(),
            params.metric,
            self.entry,
        )?;
        Ok(index.with_lut_mode(params.lut_mode))
    }
}
