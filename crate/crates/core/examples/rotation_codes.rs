//! Rotate a vector, quantize a residual to a 1-bit code and compare the
//! estimated squared distance with the exact one.
//!
//! ```bash
//! cargo run --release --example rotation_codes
//! ```

use qgraph::eval::gaussian_vectors;
use qgraph::quantizer::{bivalued_dot, quantize_residual};
use qgraph::Rotator;

fn sqdist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn main() -> qgraph::Result<()> {
    let dim = 100;
    let rotator = Rotator::new(7, dim)?;
    let v = gaussian_vectors(3, dim, 3);
    let (center, neighbor, query) = (v.row(0), v.row(1), v.row(2));

    let rotated = rotator.apply(neighbor)?;
    let norm = |x: &[f32]| x.iter().map(|a| a * a).sum::<f32>().sqrt();
    println!(
        "dim {dim} padded to {}, {} rounds",
        rotator.padded_dim(),
        rotator.rounds()
    );
    println!(
        "norm before {:.5} after {:.5}",
        norm(neighbor),
        norm(&rotated)
    );

    let code = quantize_residual(&rotator, neighbor, center)?;
    println!("code words {:?}", code.bits);
    println!("bias {:.4} scale {:.4}", code.bias, code.scale);

    let s = bivalued_dot(&code.bits, &rotator.apply(query)?) as f32;
    let est = code.estimate_sqdist(sqdist(query, center), s);
    println!(
        "estimated |q-o|^2 {est:.3}, exact {:.3}",
        sqdist(query, neighbor)
    );
    Ok(())
}
