//! Build an index over synthetic Gaussian data, then sweep beam sizes
//! against exact ground truth.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use std::time::Instant;

use qgraph::eval::{self, gaussian_vectors};
use qgraph::{build_with_report, BuildParams, Metric};

fn main() -> qgraph::Result<()> {
    let data = gaussian_vectors(10_000, 32, 1);
    let queries = gaussian_vectors(100, 32, 2);
    let params = BuildParams::default();

    let start = Instant::now();
    let (index, report) = build_with_report(&data, &params)?;
    println!(
        "built {} vertices in {:.2}s (R={}, EF={}, t={})",
        index.len(),
        start.elapsed().as_secs_f64(),
        params.degree,
        params.ef,
        params.iterations
    );
    println!(
        "mean degree after pruning, per iteration: {:?}",
        report.iteration_mean_degree
    );
    println!(
        "{} vertices topped up to R, {} needed random fill",
        report.refined_vertices, report.random_filled_vertices
    );

    let gt = eval::groundtruth(&data, &queries, 10, Metric::Euclidean)?;
    let sweep = eval::bench(&index, &queries, &gt, 10, &[10, 20, 40, 80, 160, 320, 512])?;
    print!("{}", sweep.to_csv()?);
    Ok(())
}
