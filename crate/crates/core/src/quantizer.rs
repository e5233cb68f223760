//! One-bit residual codes and the fused distance estimate.
//!
//! A neighbor `o_r` of a vertex with vector `c` is coded from the rotated unit
//! residual `P^-1 (o_r - c) / |o_r - c|`: one sign bit per code-space
//! coordinate. The bits select a bi-valued vector `x` with entries
//! `+-1/sqrt(D')`. Two scalars are stored beside the bits,
//!
//! ```text
//! scale = 2 |o_r - c| / <x, P^-1 o>
//! bias  = |o_r - c|^2 + scale * <x, P^-1 c>
//! ```
//!
//! so that for a query `q_r` with `S = <x, P^-1 q_r>` the estimated squared
//! distance collapses to `bias + |q_r - c|^2 - scale * S`. `S` does not depend
//! on the center, which lets a single lookup table per query serve every
//! vertex of the graph.

use crate::error::{Error, Result};
use crate::rotation::Rotator;

/// Sign bits plus the two precomputed factors for one (center, neighbor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCode {
    /// `padded_dim / 64` words; bit `i` lives in word `i / 64` at position `i % 64`.
    pub bits: Vec<u64>,
    pub bias: f32,
    pub scale: f32,
}

impl NeighborCode {
    pub fn zero(padded_dim: usize) -> Self {
        Self {
            bits: vec![0; padded_dim / 64],
            bias: 0.0,
            scale: 0.0,
        }
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        code_bit(&self.bits, i)
    }

    /// Fused estimate of `|o_r - q_r|^2`, clamped at zero.
    #[inline]
    pub fn estimate_sqdist(&self, d_qc_sq: f32, lut_sum: f32) -> f32 {
        estimate_sqdist(self.bias, self.scale, d_qc_sq, lut_sum)
    }
}

#[inline]
pub fn code_bit(bits: &[u64], i: usize) -> bool {
    (bits[i / 64] >> (i % 64)) & 1 == 1
}

/// Affine form of the estimator before clamping.
#[inline]
pub fn estimate_sqdist_unclamped(bias: f32, scale: f32, d_qc_sq: f32, lut_sum: f32) -> f32 {
    bias + d_qc_sq - scale * lut_sum
}

#[inline]
pub fn estimate_sqdist(bias: f32, scale: f32, d_qc_sq: f32, lut_sum: f32) -> f32 {
    estimate_sqdist_unclamped(bias, scale, d_qc_sq, lut_sum).max(0.0)
}

/// `<x, v>` where `x` is the bi-valued vector selected by `bits`.
pub fn bivalued_dot(bits: &[u64], v: &[f32]) -> f64 {
    let inv_sqrt = 1.0 / (v.len() as f64).sqrt();
    let sum: f64 = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if code_bit(bits, i) {
                x as f64
            } else {
                -(x as f64)
            }
        })
        .sum();
    sum * inv_sqrt
}

fn check_len(r: &Rotator, v: &[f32], what: &str) -> Result<()> {
    if v.len() != r.dim() {
        return Err(Error::invalid(format!(
            "{what} has {} coordinates, expected {}",
            v.len(),
            r.dim()
        )));
    }
    Ok(())
}

/// Codes `o_r` relative to the center `c`.
pub fn quantize_residual(r: &Rotator, o_r: &[f32], c: &[f32]) -> Result<NeighborCode> {
    check_len(r, o_r, "neighbor vector")?;
    check_len(r, c, "center vector")?;
    let o_rot = r.apply(o_r)?;
    let c_rot = r.apply(c)?;
    let mut scratch = vec![0.0; r.padded_dim()];
    Ok(quantize_rotated(o_r, c, &o_rot, &c_rot, &mut scratch))
}

/// Core of [`quantize_residual`] over pre-rotated inputs. By linearity the
/// rotated unit residual is `(P^-1 o_r - P^-1 c) / |o_r - c|`, so each vector
/// is rotated once no matter how many blocks code it. The norm comes from
/// the raw vectors.
pub(crate) fn quantize_rotated(
    o_r: &[f32],
    c: &[f32],
    o_rot: &[f32],
    c_rot: &[f32],
    scratch: &mut [f32],
) -> NeighborCode {
    let padded = o_rot.len();
    let norm_sq: f64 = o_r
        .iter()
        .zip(c)
        .map(|(&o, &cc)| {
            let d = o as f64 - cc as f64;
            d * d
        })
        .sum();
    if norm_sq == 0.0 {
        return NeighborCode::zero(padded);
    }
    let norm = norm_sq.sqrt();
    let inv = 1.0 / norm;
    let mut bits = vec![0u64; padded / 64];
    for (i, ((s, &o), &cc)) in scratch.iter_mut().zip(o_rot).zip(c_rot).enumerate() {
        *s = ((o as f64 - cc as f64) * inv) as f32;
        // exact zero maps to bit 0
        if *s > 0.0 {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    let dot_oo = bivalued_dot(&bits, scratch);
    let xc = bivalued_dot(&bits, c_rot);
    let scale = 2.0 * norm / dot_oo;
    let bias = norm_sq + scale * xc;
    NeighborCode {
        bits,
        bias: bias as f32,
        scale: scale as f32,
    }
}

/// Non-batched evaluation of `<x, P^-1 q> / <x, P^-1 o>` with
/// `q = (q_r - c) / |q_r - c|` and `o = (o_r - c) / |o_r - c|`, where `x` is
/// the bi-valued vector of `code`. Estimates `<o, q>`.
pub fn reference_inner_estimate(
    code: &NeighborCode,
    r: &Rotator,
    o_r: &[f32],
    q_r: &[f32],
    c: &[f32],
) -> Result<f64> {
    check_len(r, o_r, "neighbor vector")?;
    check_len(r, q_r, "query vector")?;
    check_len(r, c, "center vector")?;
    let q_rot = rotate_unit_residual(r, q_r, c)?
        .ok_or_else(|| Error::invalid("query coincides with the center"))?;
    let o_rot = rotate_unit_residual(r, o_r, c)?
        .ok_or_else(|| Error::invalid("zero residual code has no direction"))?;
    let xq = bivalued_dot(&code.bits, &q_rot);
    let xo = bivalued_dot(&code.bits, &o_rot);
    Ok(xq / xo)
}

/// `P^-1 (v - c) / |v - c|`, or `None` when `v = c`.
fn rotate_unit_residual(r: &Rotator, v: &[f32], c: &[f32]) -> Result<Option<Vec<f32>>> {
    let diff: Vec<f64> = v
        .iter()
        .zip(c)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(None);
    }
    let unit: Vec<f32> = diff.iter().map(|&x| (x / norm) as f32).collect();
    r.apply(&unit).map(Some)
}
