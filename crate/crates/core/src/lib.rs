//! Graph-based approximate nearest-neighbor search with 1-bit quantized
//! neighbor codes.
//!
//! Every vertex of a fixed-out-degree proximity graph stores, next to its raw
//! vector and adjacency, a sign-bit code for each neighbor computed against
//! the vertex's own vector. A query builds one lookup table, then beam search
//! estimates the distances of 32 neighbors at a time from those codes while
//! exact distances of visited vertices maintain the result set.
//!
//! ```no_run
//! use qgraph::{build, eval, BuildParams, SearchParams};
//!
//! let data = eval::gaussian_vectors(10_000, 32, 7);
//! let index = build(&data, &BuildParams::default())?;
//! let hits = qgraph::search(&index, data.row(0), &SearchParams::new(64, 10))?;
//! assert_eq!(hits.neighbors[0].id, 0);
//! # Ok::<(), qgraph::Error>(())
//! ```
//!
//! Runnable walkthroughs of each part live in `examples/`.

#[cfg(target_endian = "big")]
compile_error!("the in-memory block layout assumes a little-endian target");

pub mod builder;
pub mod error;
pub mod eval;
pub mod fastscan;
pub mod qindex;
pub mod quantizer;
pub mod rotation;
pub mod search;
pub mod vectors;

pub use builder::{
    build, build_refinement_pair, build_with_report, Admission, BuildParams, BuildReport,
};
pub use error::{Error, Result};
pub use qindex::{IndexHeader, IndexStats, LutMode, Metric, QGIndex};
pub use rotation::Rotator;
pub use search::{search, search_batch, Neighbor, QueryContext, SearchOutput, SearchParams};
pub use vectors::Vectors;
