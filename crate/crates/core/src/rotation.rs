//! Seeded randomized-Hadamard rotation.
//!
//! Vectors are zero-padded to a power-of-two dimension (at least 64) and then
//! passed through `rounds` iterations of a coordinate-wise sign flip followed
//! by the normalized Walsh-Hadamard transform. Every round is orthogonal, so
//! the composed map preserves norms and inner products, and costs
//! `O(D' log D')` instead of the `O(D'^2)` of a dense random rotation.

use crate::error::{Error, Result};

/// Smallest padded dimension; keeps codes in whole 64-bit words.
pub const MIN_PADDED_DIM: usize = 64;

pub const DEFAULT_ROUNDS: usize = 3;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sign for coordinate `idx` of round `round`, generated from a counter so
/// that the table depends only on `(seed, round, idx)`.
fn counter_sign(seed: u64, round: usize, idx: usize) -> f32 {
    let counter = ((round as u64) << 32) | idx as u64;
    let z = seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(counter.wrapping_add(1)));
    if splitmix64(z) >> 63 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Padded code-space dimension for an input dimension.
pub fn padded_dim_for(dim: usize) -> usize {
    dim.next_power_of_two().max(MIN_PADDED_DIM)
}

/// In-place unnormalized fast Walsh-Hadamard transform. `buf.len()` must be a
/// power of two.
pub fn fwht_in_place(buf: &mut [f32]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in buf.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let x = *a;
                let y = *b;
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Orthogonal transform used to map raw vectors into code space.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotator {
    seed: u64,
    dim: usize,
    padded_dim: usize,
    rounds: usize,
    /// `rounds * padded_dim` entries, each +1 or -1.
    signs: Vec<f32>,
}

impl Rotator {
    /// Rotator with the default three rounds.
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        Self::with_rounds(seed, dim, DEFAULT_ROUNDS)
    }

    pub fn with_rounds(seed: u64, dim: usize, rounds: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("rotator dimension must be at least 1"));
        }
        let padded_dim = padded_dim_for(dim);
        let mut signs = Vec::with_capacity(rounds * padded_dim);
        for round in 0..rounds {
            signs.extend((0..padded_dim).map(|i| counter_sign(seed, round, i)));
        }
        Ok(Self {
            seed,
            dim,
            padded_dim,
            rounds,
            signs,
        })
    }

    /// Zero rounds: padding only. Useful where hand-computable codes are
    /// needed.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::with_rounds(0, dim, 0)
    }

    /// Builds a rotator from an explicit sign table of `rounds * padded_dim`
    /// entries. The seed is reported as 0.
    pub fn from_sign_table(dim: usize, padded_dim: usize, signs: Vec<f32>) -> Result<Self> {
        if dim == 0 || padded_dim < dim || !padded_dim.is_power_of_two() {
            return Err(Error::invalid(format!(
                "padded dimension {padded_dim} is not a power of two >= {dim}"
            )));
        }
        if !signs.len().is_multiple_of(padded_dim) {
            return Err(Error::invalid(
                "sign table length is not a multiple of padded_dim",
            ));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::invalid("sign table entries must be +1 or -1"));
        }
        Ok(Self {
            seed: 0,
            dim,
            padded_dim,
            rounds: signs.len() / padded_dim,
            signs,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Sign vector applied before the Hadamard step of `round`.
    pub fn signs(&self, round: usize) -> &[f32] {
        &self.signs[round * self.padded_dim..(round + 1) * self.padded_dim]
    }

    /// Rotates `v` (length `dim`) into a new `padded_dim` vector.
    pub fn apply(&self, v: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.padded_dim];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    /// Rotates `v` into `out` without allocating.
    pub fn apply_into(&self, v: &[f32], out: &mut [f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "rotator expects {} coordinates, got {}",
                self.dim,
                v.len()
            )));
        }
        if out.len() != self.padded_dim {
            return Err(Error::invalid(format!(
                "rotation output must hold {} coordinates, got {}",
                self.padded_dim,
                out.len()
            )));
        }
        out[..self.dim].copy_from_slice(v);
        out[self.dim..].fill(0.0);
        for round in 0..self.rounds {
            for (x, s) in out.iter_mut().zip(self.signs(round)) {
                *x *= s;
            }
            fwht_in_place(out);
        }
        if self.rounds > 0 {
            // one combined 1/sqrt(D') per round
            let norm = (self.padded_dim as f64).powf(-0.5 * self.rounds as f64) as f32;
            for x in out.iter_mut() {
                *x *= norm;
            }
        }
        Ok(())
    }
}
