//! Pack 32 codes into a FastScan batch and evaluate them against one query
//! table, exact and 8-bit quantized.
//!
//! ```bash
//! cargo run --release --example fastscan_batch
//! ```

use qgraph::eval::gaussian_vectors;
use qgraph::fastscan::{batch_estimate, pack_codes, QueryLut, BATCH};
use qgraph::quantizer::{bivalued_dot, quantize_residual};
use qgraph::Rotator;

fn main() -> qgraph::Result<()> {
    let dim = 128;
    let rotator = Rotator::new(1, dim)?;
    let data = gaussian_vectors(BATCH + 2, dim, 5);
    let center = data.row(0);
    let codes = (0..BATCH)
        .map(|i| quantize_residual(&rotator, data.row(i + 1), center).map(|c| c.bits))
        .collect::<qgraph::Result<Vec<_>>>()?;
    let batch = pack_codes(&codes, rotator.padded_dim())?;

    let q = rotator.apply(data.row(BATCH + 1))?;
    let lut = QueryLut::new(&q);
    let exact = batch_estimate(&batch, &lut, false)?;
    let quant = batch_estimate(&batch, &lut, true)?;
    println!(
        "{} segments, delta {:.5}, bound {:.5}",
        lut.seg_count(),
        lut.delta(),
        lut.quantized_error_bound()
    );
    println!("code,direct,exact,quantized");
    for (k, code) in codes.iter().enumerate() {
        println!(
            "{k},{:.5},{:.5},{:.5}",
            bivalued_dot(code, &q),
            exact[k],
            quant[k]
        );
    }
    Ok(())
}
