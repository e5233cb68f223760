//! Save an index, load it back and check that searches agree.
//!
//! ```bash
//! cargo run --release --example persistence
//! ```

use qgraph::eval::gaussian_vectors;
use qgraph::{build, search_batch, BuildParams, QGIndex, SearchParams};

fn main() -> qgraph::Result<()> {
    let data = gaussian_vectors(2000, 24, 11);
    let queries = gaussian_vectors(50, 24, 12);
    let index = build(
        &data,
        &BuildParams {
            ef: 100,
            ..BuildParams::default()
        },
    )?;

    let path = std::env::temp_dir().join("qgraph-persistence-example.qg");
    index.save(&path)?;
    let loaded = QGIndex::load(&path)?;
    println!(
        "{} bytes on disk, header {:?}",
        std::fs::metadata(&path)?.len(),
        loaded.header()
    );

    let params = SearchParams::new(64, 10);
    let a = search_batch(&index, &queries, &params)?;
    let b = search_batch(&loaded, &queries, &params)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.neighbors == y.neighbors);
    println!("results identical after reload: {same}");
    std::fs::remove_file(&path)?;
    Ok(())
}
