//! Dataset files, exact ground truth, accuracy metrics and beam sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qindex::{Metric, QGIndex};
use crate::search::{QueryContext, SearchParams};
use crate::vectors::{sqdist, Vectors};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "QGRAPH_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when set. Returns the
/// thread count in effect.
pub fn configure_threads_from_env() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a pool may already exist; the first configuration wins
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    rayon::current_num_threads()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecKind {
    /// `.fvecs`
    Float,
    /// `.ivecs`
    Int,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VecPayload {
    Float(Vec<f32>),
    Int(Vec<i32>),
}

/// Contents of an fvecs/ivecs file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub count: usize,
    /// `None` for an empty file.
    pub dim: Option<usize>,
    pub payload: VecPayload,
}

impl DatasetFile {
    pub fn into_vectors(self) -> Result<Vectors> {
        match self.payload {
            VecPayload::Float(data) => Vectors::new(self.dim.unwrap_or(1), data),
            VecPayload::Int(_) => Err(Error::invalid(
                "integer file used where vectors were expected",
            )),
        }
    }

    /// Rows of an ivecs file, e.g. ground-truth ids.
    pub fn into_int_rows(self) -> Result<Vec<Vec<i32>>> {
        match self.payload {
            VecPayload::Int(data) => Ok(match self.dim {
                Some(d) => data.chunks_exact(d).map(<[i32]>::to_vec).collect(),
                None => Vec::new(),
            }),
            VecPayload::Float(_) => Err(Error::invalid(
                "float file used where integers were expected",
            )),
        }
    }
}

/// Parses little-endian `(i32 d, d x 4-byte value)` records to end of input.
pub fn parse_vecs(bytes: &[u8], kind: VecKind) -> Result<(usize, Option<usize>, VecPayload)> {
    let mut dim: Option<usize> = None;
    let mut floats = Vec::new();
    let mut ints = Vec::new();
    let mut at = 0usize;
    let mut count = 0usize;
    while at < bytes.len() {
        if bytes.len() - at < 4 {
            return Err(Error::format(at as u64, "truncated record header"));
        }
        let d = i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if d <= 0 {
            return Err(Error::format(
                at as u64,
                format!("invalid record dimension {d}"),
            ));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(
                    at as u64,
                    format!("record dimension {d} differs from {expected}"),
                ))
            }
            _ => {}
        }
        let body = at + 4;
        let end = body + 4 * d;
        if end > bytes.len() {
            return Err(Error::format(at as u64, "truncated record"));
        }
        for c in bytes[body..end].chunks_exact(4) {
            let raw: [u8; 4] = c.try_into().unwrap();
            match kind {
                VecKind::Float => floats.push(f32::from_le_bytes(raw)),
                VecKind::Int => ints.push(i32::from_le_bytes(raw)),
            }
        }
        at = end;
        count += 1;
    }
    let payload = match kind {
        VecKind::Float => VecPayload::Float(floats),
        VecKind::Int => VecPayload::Int(ints),
    };
    Ok((count, dim, payload))
}

pub fn read_vecs(path: impl AsRef<Path>, kind: VecKind) -> Result<DatasetFile> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (count, dim, payload) = parse_vecs(&bytes, kind)?;
    if count == 0 {
        log::warn!("{} contains no records", path.display());
    }
    Ok(DatasetFile {
        path: path.to_path_buf(),
        count,
        dim,
        payload,
    })
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Vectors> {
    read_vecs(path, VecKind::Float)?.into_vectors()
}

pub fn encode_vecs(file: &DatasetFile) -> Vec<u8> {
    let mut out = Vec::new();
    let Some(dim) = file.dim else {
        return out;
    };
    let header = (dim as i32).to_le_bytes();
    match &file.payload {
        VecPayload::Float(v) => {
            for row in v.chunks_exact(dim) {
                out.extend_from_slice(&header);
                row.iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
        VecPayload::Int(v) => {
            for row in v.chunks_exact(dim) {
                out.extend_from_slice(&header);
                row.iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    out
}

pub fn write_vecs(path: impl AsRef<Path>, file: &DatasetFile) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_vecs(file))?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, vectors: &Vectors) -> Result<()> {
    let path = path.as_ref();
    write_vecs(
        path,
        &DatasetFile {
            path: path.to_path_buf(),
            count: vectors.len(),
            dim: (!vectors.is_empty()).then_some(vectors.dim()),
            payload: VecPayload::Float(vectors.as_slice().to_vec()),
        },
    )
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<u32>]) -> Result<()> {
    let path = path.as_ref();
    let dim = rows.first().map(Vec::len);
    if rows.iter().any(|r| Some(r.len()) != dim) || dim == Some(0) {
        return Err(Error::invalid(
            "ivecs rows must be non-empty and equally long",
        ));
    }
    let payload = rows.iter().flatten().map(|&x| x as i32).collect();
    write_vecs(
        path,
        &DatasetFile {
            path: path.to_path_buf(),
            count: rows.len(),
            dim,
            payload: VecPayload::Int(payload),
        },
    )
}

/// Standard normal vectors from a seeded generator.
pub fn gaussian_vectors(n: usize, dim: usize, seed: u64) -> Vectors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Vectors::new(dim, data).expect("dim is positive")
}

/// Exact `k` nearest neighbors per query.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub ids: Vec<Vec<u32>>,
    /// Distances, not squared.
    pub distances: Vec<Vec<f32>>,
}

impl GroundTruth {
    pub fn k(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rebuilds distances for stored ids, e.g. after loading ids from ivecs.
    pub fn from_ids(
        data: &Vectors,
        queries: &Vectors,
        ids: Vec<Vec<u32>>,
        metric: Metric,
    ) -> Result<Self> {
        if ids.len() != queries.len() {
            return Err(Error::invalid("ground truth and query counts differ"));
        }
        let (data, queries) = prepare(data, queries, metric);
        let distances = ids
            .iter()
            .enumerate()
            .map(|(q, row)| {
                row.iter()
                    .map(|&i| {
                        if i as usize >= data.len() {
                            Err(Error::invalid(format!("ground-truth id {i} out of range")))
                        } else {
                            Ok(sqdist(queries.row(q), data.row(i as usize)).sqrt())
                        }
                    })
                    .collect::<Result<Vec<f32>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { ids, distances })
    }
}

fn prepare<'a>(
    data: &'a Vectors,
    queries: &'a Vectors,
    metric: Metric,
) -> (std::borrow::Cow<'a, Vectors>, std::borrow::Cow<'a, Vectors>) {
    use std::borrow::Cow;
    match metric {
        Metric::Euclidean => (Cow::Borrowed(data), Cow::Borrowed(queries)),
        Metric::Cosine => (
            Cow::Owned(data.normalized()),
            Cow::Owned(queries.normalized()),
        ),
    }
}

/// Full scan, ties broken by lower id, parallel across queries.
pub fn groundtruth(
    data: &Vectors,
    queries: &Vectors,
    k: usize,
    metric: Metric,
) -> Result<GroundTruth> {
    if k == 0 || k > data.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            data.len()
        )));
    }
    if data.dim() != queries.dim() {
        return Err(Error::invalid("data and query dimensions differ"));
    }
    let (data, queries) = prepare(data, queries, metric);
    let rows: Vec<(Vec<u32>, Vec<f32>)> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let mut all: Vec<(f32, u32)> = data
                .rows()
                .enumerate()
                .map(|(i, row)| (sqdist(query, row), i as u32))
                .collect();
            let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, cmp);
                all.truncate(k);
            }
            all.sort_unstable_by(cmp);
            all.into_iter().map(|(d, i)| (i, d.sqrt())).unzip()
        })
        .collect();
    let (ids, distances) = rows.into_iter().unzip();
    Ok(GroundTruth { ids, distances })
}

/// `|result ∩ truth| / k` over the first `k` entries of each list.
pub fn recall(result_ids: &[u32], gt_ids: &[u32], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let truth = &gt_ids[..k.min(gt_ids.len())];
    let hits = result_ids
        .iter()
        .take(k)
        .filter(|id| truth.contains(id))
        .count();
    hits as f64 / k as f64
}

/// Floor used for zero ground-truth distances.
pub const ADR_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRatio {
    pub value: f64,
    /// Some ground-truth distance was zero while the result's was not.
    pub zero_guarded: bool,
}

/// Mean of `result[i] / truth[i]` over paired ranks.
pub fn avg_distance_ratio(result_dists: &[f32], gt_dists: &[f32]) -> DistanceRatio {
    let m = result_dists.len().min(gt_dists.len());
    if m == 0 {
        return DistanceRatio {
            value: 1.0,
            zero_guarded: false,
        };
    }
    let mut guarded = false;
    let sum: f64 = result_dists
        .iter()
        .zip(gt_dists)
        .map(|(&r, &g)| {
            let (r, g) = (r as f64, g as f64);
            if g == 0.0 {
                if r == 0.0 {
                    1.0
                } else {
                    guarded = true;
                    r / ADR_EPSILON
                }
            } else {
                r / g
            }
        })
        .sum();
    DistanceRatio {
        value: sum / m as f64,
        zero_guarded: guarded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_b: usize,
    pub qps: f64,
    pub recall: f64,
    pub adr: f64,
    pub visited_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    /// Ascending in `n_b`.
    pub rows: Vec<SweepRow>,
    /// Beam sizes whose ADR hit the zero-distance guard.
    pub zero_guarded: Vec<usize>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["n_b", "qps", "recall", "adr", "visited_mean"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(Self {
            rows,
            zero_guarded: Vec::new(),
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Recall-vs-QPS line chart as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0f64, 420.0f64, 50.0f64);
        let max_qps = self.rows.iter().map(|r| r.qps).fold(1.0, f64::max);
        let min_recall = self
            .rows
            .iter()
            .map(|r| r.recall)
            .fold(1.0, f64::min)
            .min(0.9);
        let x = |recall: f64| {
            pad + (recall - min_recall) / (1.0 - min_recall).max(1e-9) * (w - 2.0 * pad)
        };
        let y = |qps: f64| h - pad - qps / max_qps * (h - 2.0 * pad);
        let points: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{:.1},{:.1}", x(r.recall), y(r.qps)))
            .collect();
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        svg += &format!(
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <text x=\"{cx}\" y=\"{ly}\" text-anchor=\"middle\" font-size=\"14\">recall ({min_recall:.2} to 1.00)</text>\n\
             <text x=\"14\" y=\"{cy}\" font-size=\"14\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">QPS (max {max_qps:.0})</text>\n",
            b = h - pad,
            r = w - pad,
            cx = w / 2.0,
            ly = h - 12.0,
            cy = h / 2.0,
        );
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        );
        for (r, p) in self.rows.iter().zip(&points) {
            let (px, py) = p.split_once(',').unwrap();
            svg += &format!(
                "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"steelblue\"><title>n_b={}</title></circle>\n",
                r.n_b
            );
        }
        svg += "</svg>\n";
        svg
    }
}

/// Sweeps beam sizes with default search settings.
pub fn bench(
    index: &QGIndex,
    queries: &Vectors,
    gt: &GroundTruth,
    k: usize,
    beams: &[usize],
) -> Result<SweepReport> {
    bench_with(index, queries, gt, beams, &SearchParams::new(0, k))
}

/// One row per beam size (sorted ascending). For each, a warm-up pass over
/// all queries is followed by a timed single-threaded pass. `template`
/// supplies `k` and every flag; its `beam` is ignored.
pub fn bench_with(
    index: &QGIndex,
    queries: &Vectors,
    gt: &GroundTruth,
    beams: &[usize],
    template: &SearchParams,
) -> Result<SweepReport> {
    if beams.is_empty() {
        return Err(Error::invalid("beam list is empty"));
    }
    if gt.len() != queries.len() {
        return Err(Error::invalid(format!(
            "{} ground-truth rows for {} queries",
            gt.len(),
            queries.len()
        )));
    }
    let k = template.k;
    if gt.k() < k {
        return Err(Error::invalid(format!(
            "ground truth holds {} ids, need {k}",
            gt.k()
        )));
    }
    let mut beams = beams.to_vec();
    beams.sort_unstable();
    let mut ctx = QueryContext::new();
    let mut report = SweepReport::default();
    for n_b in beams {
        let params = SearchParams {
            beam: n_b,
            ..*template
        };
        for q in queries.rows() {
            ctx.search(index, q, &params)?;
        }
        let mut outputs = Vec::with_capacity(queries.len());
        let start = Instant::now();
        for q in queries.rows() {
            outputs.push(ctx.search(index, q, &params)?);
        }
        let elapsed = start.elapsed().as_secs_f64();

        let mut recall_sum = 0.0;
        let mut adr_sum = 0.0;
        let mut visited = 0usize;
        let mut guarded = false;
        for (i, out) in outputs.iter().enumerate() {
            recall_sum += recall(&out.ids(), &gt.ids[i], k);
            let ratio = avg_distance_ratio(&out.distances(), &gt.distances[i][..k]);
            guarded |= ratio.zero_guarded;
            adr_sum += ratio.value;
            visited += out.stats.visited;
        }
        let nq = queries.len().max(1) as f64;
        if guarded {
            report.zero_guarded.push(n_b);
        }
        report.rows.push(SweepRow {
            n_b,
            qps: if elapsed > 0.0 {
                queries.len() as f64 / elapsed
            } else {
                f64::INFINITY
            },
            recall: recall_sum / nq,
            adr: adr_sum / nq,
            visited_mean: visited as f64 / nq,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record() {
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        let (count, dim, payload) = parse_vecs(&bytes, VecKind::Float).unwrap();
        assert_eq!((count, dim), (1, Some(2)));
        assert_eq!(payload, VecPayload::Float(vec![1.0, 2.0]));
    }

    #[test]
    fn empty_input() {
        let (count, dim, _) = parse_vecs(&[], VecKind::Float).unwrap();
        assert_eq!((count, dim), (0, None));
    }

    #[test]
    fn inconsistent_dims_report_offset() {
        let mut bytes = 1i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2i32.to_le_bytes());
        bytes.extend([0u8; 8]);
        match parse_vecs(&bytes, VecKind::Float) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        match parse_vecs(&bytes[..14], VecKind::Float) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recall_cases() {
        let gt: Vec<u32> = (0..10).collect();
        assert_eq!(recall(&gt, &gt, 10), 1.0);
        let other: Vec<u32> = (10..20).collect();
        assert_eq!(recall(&other, &gt, 10), 0.0);
        let mut nine = gt.clone();
        nine[9] = 99;
        assert!((recall(&nine, &gt, 10) - 0.9).abs() < 1e-12);
        assert!((recall(&gt[..5], &gt, 10) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ratio_cases() {
        let g = [1.0f32, 2.0, 4.0];
        assert_eq!(avg_distance_ratio(&g, &g).value, 1.0);
        let doubled = [2.0f32, 4.0, 8.0];
        assert!((avg_distance_ratio(&doubled, &g).value - 2.0).abs() < 1e-12);
        let z = avg_distance_ratio(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!((z.value, z.zero_guarded), (1.0, false));
        let z = avg_distance_ratio(&[0.5, 1.0], &[0.0, 1.0]);
        assert!(z.zero_guarded);
    }

    #[test]
    fn gt_query_equals_row() {
        let data = gaussian_vectors(50, 4, 1);
        let queries = Vectors::new(4, data.row(17).to_vec()).unwrap();
        let gt = groundtruth(&data, &queries, 5, Metric::Euclidean).unwrap();
        assert_eq!(gt.ids[0][0], 17);
        assert_eq!(gt.distances[0][0], 0.0);
        let all = groundtruth(&data, &queries, 50, Metric::Euclidean).unwrap();
        assert_eq!(all.ids[0].len(), 50);
        assert!(all.distances[0].windows(2).all(|w| w[0] <= w[1]));
        assert!(groundtruth(&data, &queries, 51, Metric::Euclidean).is_err());
    }
}
