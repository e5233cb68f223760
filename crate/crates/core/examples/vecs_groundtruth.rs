//! Write base and query sets as fvecs, compute exact ground truth and store
//! it as ivecs, then read everything back.
//!
//! ```bash
//! cargo run --release --example vecs_groundtruth -- /tmp/qg
//! ```

use std::path::PathBuf;

use qgraph::eval::{self, VecKind};
use qgraph::Metric;

fn main() -> qgraph::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let base = dir.join("base.fvecs");
    let query = dir.join("query.fvecs");
    let gt_path = dir.join("gt.ivecs");

    eval::write_fvecs(&base, &eval::gaussian_vectors(5000, 16, 1))?;
    eval::write_fvecs(&query, &eval::gaussian_vectors(20, 16, 2))?;

    let data = eval::read_fvecs(&base)?;
    let queries = eval::read_fvecs(&query)?;
    let gt = eval::groundtruth(&data, &queries, 10, Metric::Euclidean)?;
    eval::write_ivecs(&gt_path, &gt.ids)?;

    let back = eval::read_vecs(&gt_path, VecKind::Int)?;
    println!(
        "{}: {} rows of {:?}",
        gt_path.display(),
        back.count,
        back.dim
    );
    println!("query 0 nearest: {:?}", &gt.ids[0][..5]);
    println!("distances: {:?}", &gt.distances[0][..5]);
    Ok(())
}
