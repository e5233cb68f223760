//! Sweep beam sizes for both LUT modes and write CSV and SVG reports.
//!
//! ```bash
//! cargo run --release --example bench_sweep -- /tmp/qg
//! ```

use std::path::PathBuf;

use qgraph::eval::{self, gaussian_vectors};
use qgraph::{build, BuildParams, LutMode, Metric, SearchParams};

fn main() -> qgraph::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let data = gaussian_vectors(5000, 32, 21);
    let queries = gaussian_vectors(100, 32, 22);
    let index = build(&data, &BuildParams::default())?;
    let gt = eval::groundtruth(&data, &queries, 10, Metric::Euclidean)?;

    for (name, mode) in [("exact", LutMode::Exact), ("quantized", LutMode::Quantized)] {
        let template = SearchParams::new(0, 10).lut_mode(mode);
        let report = eval::bench_with(
            &index,
            &queries,
            &gt,
            &[10, 20, 40, 80, 160, 320],
            &template,
        )?;
        let csv = dir.join(format!("sweep-{name}.csv"));
        report.write_csv(&csv)?;
        std::fs::write(csv.with_extension("svg"), report.to_svg())?;
        println!("{name}");
        print!("{}", report.to_csv()?);
    }
    println!("reports in {}", dir.display());
    Ok(())
}
