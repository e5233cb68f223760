mod common;

use common::*;
use proptest::prelude::*;
use qgraph::eval::{
    avg_distance_ratio, bench, bench_with, encode_vecs, gaussian_vectors, groundtruth, parse_vecs,
    read_fvecs, read_vecs, recall, write_fvecs, write_ivecs, write_vecs, GroundTruth, SweepReport,
    SweepRow, VecKind, VecPayload, ADR_EPSILON,
};
use qgraph::{build, BuildParams, Error, LutMode, Metric, SearchParams, Vectors};

fn record(d: i32, vals: &[f32]) -> Vec<u8> {
    let mut out = d.to_le_bytes().to_vec();
    vals.iter().for_each(|v| out.extend(v.to_le_bytes()));
    out
}

#[test]
fn one_record_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.fvecs");
    std::fs::write(&path, record(2, &[1.0, 2.0])).unwrap();
    let f = read_vecs(&path, VecKind::Float).unwrap();
    assert_eq!((f.count, f.dim), (1, Some(2)));
    assert_eq!(f.payload, VecPayload::Float(vec![1.0, 2.0]));
    assert_eq!(f.path, path);
}

#[test]
fn empty_file_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.fvecs");
    std::fs::write(&path, b"").unwrap();
    let f = read_vecs(&path, VecKind::Float).unwrap();
    assert_eq!((f.count, f.dim), (0, None));
    assert!(encode_vecs(&f).is_empty());
}

#[test]
fn format_errors_carry_offsets() {
    let mut bytes = record(3, &[1.0, 2.0, 3.0]);
    bytes.extend(record(2, &[1.0, 2.0]));
    match parse_vecs(&bytes, VecKind::Float) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
        other => panic!("{other:?}"),
    }
    let mut bytes = record(3, &[1.0, 2.0, 3.0]);
    bytes.extend(record(3, &[1.0, 2.0, 3.0]));
    bytes.truncate(bytes.len() - 2);
    assert!(matches!(
        parse_vecs(&bytes, VecKind::Float),
        Err(Error::Format { offset: 16, .. })
    ));
    let mut bytes = record(1, &[1.0]);
    bytes.extend([1, 0]);
    assert!(matches!(
        parse_vecs(&bytes, VecKind::Float),
        Err(Error::Format { offset: 8, .. })
    ));
    assert!(matches!(
        parse_vecs(&record(-1, &[]), VecKind::Int),
        Err(Error::Format { offset: 0, .. })
    ));
    assert!(matches!(
        parse_vecs(&record(0, &[]), VecKind::Int),
        Err(Error::Format { offset: 0, .. })
    ));
}

#[test]
fn file_size_invariant() {
    let v = gaussian_vectors(17, 9, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.fvecs");
    write_fvecs(&path, &v).unwrap();
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        17 * (4 + 4 * 9)
    );
    assert_eq!(read_fvecs(&path).unwrap(), v);
}

#[test]
fn byte_identical_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = rng(2);
    // arbitrary bit patterns, NaN payloads included
    let mut fbytes = Vec::new();
    for _ in 0..20 {
        fbytes.extend(5i32.to_le_bytes());
        for _ in 0..5 {
            fbytes.extend(rand::Rng::random::<u32>(&mut g).to_le_bytes());
        }
    }
    let src = dir.path().join("src.fvecs");
    std::fs::write(&src, &fbytes).unwrap();
    let f = read_vecs(&src, VecKind::Float).unwrap();
    let dst = dir.path().join("dst.fvecs");
    write_vecs(&dst, &f).unwrap();
    assert_eq!(std::fs::read(&dst).unwrap(), fbytes);

    let rows: Vec<Vec<u32>> = (0..10)
        .map(|i| (0..4).map(|j| i * 10 + j).collect())
        .collect();
    let ip = dir.path().join("g.ivecs");
    write_ivecs(&ip, &rows).unwrap();
    let f = read_vecs(&ip, VecKind::Int).unwrap();
    let again = dir.path().join("g2.ivecs");
    write_vecs(&again, &f).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&ip).unwrap());
    let back: Vec<Vec<u32>> = f
        .into_int_rows()
        .unwrap()
        .into_iter()
        .map(|r| r.into_iter().map(|x| x as u32).collect())
        .collect();
    assert_eq!(back, rows);
    assert!(write_ivecs(dir.path().join("bad"), &[vec![1], vec![1, 2]]).is_err());
}

#[test]
fn kinds_do_not_mix() {
    let (_, _, payload) = parse_vecs(&record(1, &[1.0]), VecKind::Int).unwrap();
    assert!(matches!(payload, VecPayload::Int(_)));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x");
    std::fs::write(&p, record(1, &[1.0])).unwrap();
    assert!(read_vecs(&p, VecKind::Int).unwrap().into_vectors().is_err());
    assert!(read_vecs(&p, VecKind::Float)
        .unwrap()
        .into_int_rows()
        .is_err());
}

#[test]
fn missing_file_is_io() {
    assert!(matches!(
        read_fvecs("/no/such/file.fvecs"),
        Err(Error::Io(_))
    ));
}

/// Quadratic scan kept deliberately naive.
fn gt_oracle(data: &Vectors, queries: &Vectors, k: usize) -> Vec<Vec<u32>> {
    queries
        .rows()
        .map(|q| {
            let mut all: Vec<(f64, u32)> = (0..data.len())
                .map(|i| (sqdist64(q, data.row(i)), i as u32))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|x| x.1).collect()
        })
        .collect()
}

#[test]
fn groundtruth_matches_oracle() {
    let data = gaussian_vectors(1000, 16, 3);
    let queries = gaussian_vectors(50, 16, 4);
    let gt = groundtruth(&data, &queries, 20, Metric::Euclidean).unwrap();
    assert_eq!(gt.ids, gt_oracle(&data, &queries, 20));
    assert_eq!((gt.len(), gt.k()), (50, 20));
    for (q, (ids, dists)) in gt.ids.iter().zip(&gt.distances).enumerate() {
        for (&id, &d) in ids.iter().zip(dists) {
            let want = sqdist64(queries.row(q), data.row(id as usize)).sqrt();
            assert!((d as f64 - want).abs() < 1e-5 * want.max(1.0));
        }
    }
    let rebuilt =
        GroundTruth::from_ids(&data, &queries, gt.ids.clone(), Metric::Euclidean).unwrap();
    assert_eq!(rebuilt, gt);
}

#[test]
fn groundtruth_examples() {
    let data = gaussian_vectors(30, 5, 5);
    let queries = Vectors::from_rows(&[data.row(7)]).unwrap();
    let gt = groundtruth(&data, &queries, 30, Metric::Euclidean).unwrap();
    assert_eq!((gt.ids[0][0], gt.distances[0][0]), (7, 0.0));
    let mut sorted = gt.ids[0].clone();
    sorted.sort();
    assert_eq!(sorted, (0..30).collect::<Vec<_>>());
    assert!(gt.distances[0].windows(2).all(|w| w[0] <= w[1]));
    assert!(groundtruth(&data, &queries, 31, Metric::Euclidean).is_err());
    assert!(groundtruth(&data, &queries, 0, Metric::Euclidean).is_err());
}

#[test]
fn groundtruth_ties_lower_id() {
    let data = Vectors::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [-1.0, 0.0], [3.0, 3.0]]).unwrap();
    let queries = Vectors::from_rows(&[[0.0f32, 0.0]]).unwrap();
    let gt = groundtruth(&data, &queries, 3, Metric::Euclidean).unwrap();
    assert_eq!(gt.ids[0], vec![0, 1, 2]);
}

#[test]
fn cosine_groundtruth() {
    let data = Vectors::from_rows(&[[10.0f32, 0.0], [0.0, 0.5], [1.0, 1.1]]).unwrap();
    let queries = Vectors::from_rows(&[[0.1f32, 0.1]]).unwrap();
    let gt = groundtruth(&data, &queries, 3, Metric::Cosine).unwrap();
    assert_eq!(gt.ids[0], vec![2, 0, 1]);
}

#[test]
fn recall_examples() {
    assert_eq!(recall(&[1, 2, 3], &[3, 2, 1], 3), 1.0);
    assert_eq!(recall(&[4, 5, 6], &[1, 2, 3], 3), 0.0);
    let gt: Vec<u32> = (0..10).collect();
    let mut res: Vec<u32> = (0..9).collect();
    res.push(99);
    assert!((recall(&res, &gt, 10) - 0.9).abs() < 1e-12);
    assert!((recall(&[0, 1], &gt, 10) - 0.2).abs() < 1e-12);
}

#[test]
fn adr_examples() {
    let gt = [1.0f32, 2.0, 4.0];
    assert_eq!(avg_distance_ratio(&gt, &gt).value, 1.0);
    let doubled: Vec<f32> = gt.iter().map(|x| 2.0 * x).collect();
    assert_eq!(avg_distance_ratio(&doubled, &gt).value, 2.0);
    let r = avg_distance_ratio(&[0.0, 2.0], &[0.0, 1.0]);
    assert_eq!((r.value, r.zero_guarded), (1.5, false));
    let r = avg_distance_ratio(&[1e-6, 2.0], &[0.0, 1.0]);
    assert!(r.zero_guarded);
    assert!((r.value - (1e-6f32 as f64 / ADR_EPSILON + 2.0) / 2.0).abs() < 1e-3);
}

proptest! {
    #[test]
    fn adr_transcription(pairs in prop::collection::vec((0.01f32..10.0, 1.0f32..3.0), 1..20)) {
        let gt: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let res: Vec<f32> = pairs.iter().map(|p| p.0 * p.1).collect();
        let mut want = 0.0f64;
        for i in 0..gt.len() {
            want += res[i] as f64 / gt[i] as f64;
        }
        want /= gt.len() as f64;
        let got = avg_distance_ratio(&res, &gt);
        prop_assert!((got.value - want).abs() <= 1e-12);
        prop_assert!(got.value >= 1.0 - 1e-9);
    }
}

#[test]
fn csv_round_trip() {
    let report = SweepReport {
        rows: vec![
            SweepRow {
                n_b: 10,
                qps: 12345.5,
                recall: 0.5,
                adr: 1.25,
                visited_mean: 11.0,
            },
            SweepRow {
                n_b: 40,
                qps: 2000.125,
                recall: 0.875,
                adr: 1.0625,
                visited_mean: 39.5,
            },
        ],
        zero_guarded: vec![],
    };
    let text = report.to_csv().unwrap();
    assert!(text.starts_with("n_b,qps,recall,adr,visited_mean\n"));
    assert_eq!(SweepReport::from_csv(&text).unwrap(), report);
    let empty = SweepReport::default().to_csv().unwrap();
    assert_eq!(empty, "n_b,qps,recall,adr,visited_mean\n");
    assert!(report.to_svg().starts_with("<svg"));
}

#[test]
fn bench_properties() {
    let data = gaussian_vectors(1000, 16, 6);
    let queries = gaussian_vectors(40, 16, 7);
    let index = build(
        &data,
        &BuildParams {
            ef: 100,
            ..BuildParams::default()
        },
    )
    .unwrap();
    let gt = groundtruth(&data, &queries, 10, Metric::Euclidean).unwrap();

    let twice = bench(&index, &queries, &gt, 10, &[10, 10]).unwrap();
    assert_eq!(twice.rows.len(), 2);
    assert_eq!(twice.rows[0].recall, twice.rows[1].recall);
    assert_eq!(twice.rows[0].adr, twice.rows[1].adr);

    let full = bench(&index, &queries, &gt, 10, &[1000]).unwrap();
    assert_eq!(full.rows[0].recall, 1.0);
    assert!((full.rows[0].adr - 1.0).abs() < 1e-6);

    let sweep = bench_with(
        &index,
        &queries,
        &gt,
        &[80, 5, 20],
        &SearchParams::new(0, 10).lut_mode(LutMode::Exact),
    )
    .unwrap();
    let nbs: Vec<usize> = sweep.rows.iter().map(|r| r.n_b).collect();
    assert_eq!(nbs, vec![5, 20, 80]);
    for row in &sweep.rows {
        assert!((0.0..=1.0).contains(&row.recall));
        assert!(row.adr >= 1.0 - 1e-9);
        assert!(row.qps > 0.0);
    }
    assert!(bench(&index, &queries, &gt, 10, &[]).is_err());
    assert!(bench(&index, &queries, &gt, 20, &[10]).is_err());
    let short = Vectors::new(16, queries.as_slice()[..16 * 3].to_vec()).unwrap();
    assert!(bench(&index, &short, &gt, 10, &[10]).is_err());
}

#[test]
fn recall_trend_on_sweep() {
    let data = gaussian_vectors(10_000, 32, 8);
    let queries = gaussian_vectors(100, 32, 9);
    let index = build(&data, &BuildParams::default()).unwrap();
    let gt = groundtruth(&data, &queries, 10, Metric::Euclidean).unwrap();
    let report = bench(&index, &queries, &gt, 10, &[10, 20, 40, 80, 160, 320, 512]).unwrap();
    for w in report.rows.windows(2) {
        assert!(w[1].recall >= w[0].recall - 0.005, "{:?}", report.rows);
    }
}
