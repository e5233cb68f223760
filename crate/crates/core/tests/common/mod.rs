#![allow(dead_code)]

use qgraph::{Rotator, Vectors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

pub fn unit(rng: &mut impl Rng, len: usize) -> Vec<f32> {
    let v = gaussian(rng, len);
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| (*x as f64 / n) as f32).collect()
}

pub fn random_bits(rng: &mut impl Rng, padded_dim: usize) -> Vec<u64> {
    (0..padded_dim / 64).map(|_| rng.random()).collect()
}

pub fn norm64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn sqdist64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

/// `(-1)^popcount(i & j) / sqrt(n)`.
pub fn hadamard(n: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if (i & j).count_ones() % 2 == 0 { s } else { -s })
                .collect()
        })
        .collect()
}

/// The rotation as an explicit matrix: product over rounds of `H * diag(signs)`.
pub fn dense_rotation(r: &Rotator) -> Vec<Vec<f64>> {
    let n = r.padded_dim();
    let h = hadamard(n);
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for round in 0..r.rounds() {
        let s = r.signs(round);
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let hik = h[i][k] * s[k] as f64;
                if hik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i][j] += hik * m[k][j];
                }
            }
        }
        m = next;
    }
    m
}

pub fn dense_apply(m: &[Vec<f64>], v: &[f32]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, &b)| a * b as f64).sum())
        .collect()
}

pub fn pad(v: &[f32], n: usize) -> Vec<f32> {
    let mut out = v.to_vec();
    out.resize(n, 0.0);
    out
}

pub fn sign(bits: &[u64], i: usize) -> f64 {
    if (bits[i / 64] >> (i % 64)) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Code fields evaluated from their defining formulas with a dense `P^-1`.
pub struct DenseCode {
    pub rotated_unit: Vec<f64>,
    pub bits: Vec<u64>,
    pub dot_oo: f64,
    pub bias: f64,
    pub scale: f64,
}

pub fn dense_code(m: &[Vec<f64>], o_r: &[f32], c: &[f32]) -> DenseCode {
    let n = m.len();
    let res: Vec<f64> = o_r
        .iter()
        .zip(c)
        .map(|(&o, &c)| o as f64 - c as f64)
        .collect();
    let norm = res.iter().map(|x| x * x).sum::<f64>().sqrt();
    let unit: Vec<f32> = res.iter().map(|x| (x / norm) as f32).collect();
    let rotated_unit = dense_apply(m, &pad(&unit, n));
    let mut bits = vec![0u64; n / 64];
    for (i, &x) in rotated_unit.iter().enumerate() {
        if x > 0.0 {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    let inv = 1.0 / (n as f64).sqrt();
    let dot_oo: f64 = (0..n).map(|i| sign(&bits, i) * rotated_unit[i] * inv).sum();
    let c_rot = dense_apply(m, &pad(c, n));
    let xc: f64 = (0..n).map(|i| sign(&bits, i) * c_rot[i] * inv).sum();
    let scale = 2.0 * norm / dot_oo;
    DenseCode {
        rotated_unit,
        bits,
        dot_oo,
        bias: norm * norm + scale * xc,
        scale,
    }
}

pub fn gaussian_set(rng: &mut impl Rng, n: usize, dim: usize) -> Vectors {
    Vectors::new(dim, gaussian(rng, n * dim)).unwrap()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}
