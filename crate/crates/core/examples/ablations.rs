//! Recall at fixed beam sizes with and without degree refinement, with and
//! without multiple estimates, under both angle admission rules.
//!
//! ```bash
//! cargo run --release --example ablations
//! ```

use std::time::Instant;

use qgraph::eval::{gaussian_vectors, groundtruth, recall};
use qgraph::{
    build_refinement_pair, search_batch, Admission, BuildParams, Metric, QGIndex, SearchParams,
    Vectors,
};

fn mean_recall(
    index: &QGIndex,
    queries: &Vectors,
    gt: &[Vec<u32>],
    params: &SearchParams,
) -> qgraph::Result<f64> {
    let out = search_batch(index, queries, params)?;
    Ok(out
        .iter()
        .zip(gt)
        .map(|(o, g)| recall(&o.ids(), g, 10))
        .sum::<f64>()
        / out.len() as f64)
}

fn main() -> qgraph::Result<()> {
    let data = gaussian_vectors(10_000, 32, 1);
    let queries = gaussian_vectors(100, 32, 2);
    let gt = groundtruth(&data, &queries, 10, Metric::Euclidean)?;

    println!("rule,variant,n_b,recall");
    for rule in [Admission::Closer, Admission::Greedy] {
        let start = Instant::now();
        let (refined, unrefined) = build_refinement_pair(
            &data,
            &BuildParams {
                admission: rule,
                ..BuildParams::default()
            },
        )?;
        eprintln!(
            "{rule:?}: built both graphs in {:.1}s",
            start.elapsed().as_secs_f64()
        );
        for nb in [50usize, 100, 200] {
            let p = SearchParams::new(nb, 10);
            let rows = [
                ("refined", mean_recall(&refined, &queries, &gt.ids, &p)?),
                (
                    "refined_single_estimate",
                    mean_recall(&refined, &queries, &gt.ids, &p.multi_estimate(false))?,
                ),
                ("unrefined", mean_recall(&unrefined, &queries, &gt.ids, &p)?),
            ];
            for (name, r) in rows {
                println!("{rule:?},{name},{nb},{r:.4}");
            }
        }
    }
    Ok(())
}
