mod common;

use common::*;
use proptest::prelude::*;
use qgraph::rotation::{fwht_in_place, padded_dim_for, Rotator, DEFAULT_ROUNDS};

#[test]
fn padded_dim_examples() {
    assert_eq!(Rotator::new(7, 128).unwrap().padded_dim(), 128);
    assert_eq!(Rotator::new(7, 100).unwrap().padded_dim(), 128);
    assert_eq!(Rotator::new(7, 33).unwrap().padded_dim(), 64);
    for dim in 1..600 {
        let p = padded_dim_for(dim);
        assert!(p.is_power_of_two() && p >= dim && p >= 64);
        assert!(p == 64 || p / 2 < dim);
    }
}

#[test]
fn zero_dim_rejected() {
    assert!(Rotator::new(1, 0).is_err());
}

#[test]
fn length_mismatch_rejected() {
    let r = Rotator::new(1, 10).unwrap();
    assert!(r.apply(&[0.0; 9]).is_err());
    assert!(r.apply(&[0.0; 11]).is_err());
    let mut out = vec![0.0; 32];
    assert!(r.apply_into(&[0.0; 10], &mut out).is_err());
}

#[test]
fn zero_maps_to_zero() {
    let r = Rotator::new(3, 50).unwrap();
    assert!(r.apply(&[0.0; 50]).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn norm_five_preserved() {
    let r = Rotator::new(11, 77).unwrap();
    let mut v = vec![0.0f32; 77];
    v[3] = 3.0;
    v[40] = -4.0;
    let n = norm64(&r.apply(&v).unwrap());
    assert!((n - 5.0).abs() <= 1e-5 * 5.0, "{n}");
}

#[test]
fn single_round_basis_vector() {
    let r = Rotator::from_sign_table(64, 64, vec![1.0; 64]).unwrap();
    let mut e0 = vec![0.0f32; 64];
    e0[0] = 1.0;
    let out = r.apply(&e0).unwrap();
    let dense = dense_apply(&dense_rotation(&r), &e0);
    for (a, b) in out.iter().zip(&dense) {
        assert_eq!(*a, 0.125);
        assert!((*b - 0.125).abs() < 1e-12);
    }
}

#[test]
fn fwht_matches_hadamard_matrix() {
    let mut g = rng(5);
    for n in [1usize, 2, 8, 64, 128] {
        let v = gaussian(&mut g, n);
        let mut fast = v.clone();
        fwht_in_place(&mut fast);
        let h = hadamard(n);
        let scale = (n as f64).sqrt();
        for i in 0..n {
            let want: f64 = (0..n).map(|j| h[i][j] * scale * v[j] as f64).sum();
            assert!((fast[i] as f64 - want).abs() < 1e-4 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn dense_oracle_agreement() {
    let mut g = rng(17);
    for (dim, seed) in [
        (64usize, 1u64),
        (50, 2),
        (128, 3),
        (100, 4),
        (256, 5),
        (129, 6),
    ] {
        let r = Rotator::new(seed, dim).unwrap();
        assert!(r.padded_dim() <= 256);
        let m = dense_rotation(&r);
        for _ in 0..5 {
            let v = unit(&mut g, dim);
            let fast = r.apply(&v).unwrap();
            let slow = dense_apply(&m, &pad(&v, r.padded_dim()));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((*a as f64 - b).abs() <= 1e-4, "dim {dim}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn dense_matrix_is_orthogonal() {
    let r = Rotator::new(9, 64).unwrap();
    let m = dense_rotation(&r);
    for i in 0..64 {
        for j in 0..64 {
            let d: f64 = (0..64).map(|k| m[i][k] * m[j][k]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-9);
        }
    }
}

#[test]
fn sign_tables_deterministic() {
    let a = Rotator::new(42, 300).unwrap();
    let b = Rotator::new(42, 300).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rounds(), DEFAULT_ROUNDS);
    let c = Rotator::new(43, 300).unwrap();
    assert_ne!(a.signs(0), c.signs(0));
    for round in 0..a.rounds() {
        assert!(a.signs(round).iter().all(|&s| s == 1.0 || s == -1.0));
    }
    // rounds draw independent signs
    assert_ne!(a.signs(0), a.signs(1));
}

#[test]
fn sign_balance() {
    let r = Rotator::new(123, 1024).unwrap();
    let plus = (0..r.rounds())
        .flat_map(|k| r.signs(k).iter())
        .filter(|&&s| s > 0.0)
        .count();
    let total = 3 * 1024;
    // 5 standard deviations of a fair coin
    let sd = (total as f64 * 0.25).sqrt();
    assert!(((plus as f64) - total as f64 / 2.0).abs() < 5.0 * sd);
}

#[test]
fn identity_pads_only() {
    let r = Rotator::identity(5).unwrap();
    let out = r.apply(&[1.0, -2.0, 3.0, 0.5, 7.0]).unwrap();
    assert_eq!(&out[..5], &[1.0, -2.0, 3.0, 0.5, 7.0]);
    assert!(out[5..].iter().all(|&x| x == 0.0));
}

#[test]
fn sign_table_validation() {
    assert!(Rotator::from_sign_table(10, 48, vec![1.0; 48]).is_err());
    assert!(Rotator::from_sign_table(10, 64, vec![1.0; 63]).is_err());
    assert!(Rotator::from_sign_table(10, 64, vec![0.5; 64]).is_err());
    assert!(Rotator::from_sign_table(100, 64, vec![1.0; 64]).is_err());
}

fn any_vec() -> impl Strategy<Value = Vec<f32>> {
    (1usize..300).prop_flat_map(|d| prop::collection::vec(-100.0f32..100.0, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn norm_preservation(v in any_vec(), seed in any::<u64>()) {
        let r = Rotator::new(seed, v.len()).unwrap();
        let before = norm64(&v);
        let after = norm64(&r.apply(&v).unwrap());
        prop_assert!((after - before).abs() <= 1e-5 * before.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn linearity(seed in any::<u64>(), dim in 1usize..200, a in -3.0f32..3.0, b in -3.0f32..3.0, s in any::<u64>()) {
        let mut g = rng(s);
        let u = unit(&mut g, dim);
        let w = unit(&mut g, dim);
        let r = Rotator::new(seed, dim).unwrap();
        let mix: Vec<f32> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = r.apply(&mix).unwrap();
        let ru = r.apply(&u).unwrap();
        let rw = r.apply(&w).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * ru[i] + b * rw[i])).abs() <= 1e-4);
        }
    }

    #[test]
    fn apply_into_matches_apply(v in any_vec(), seed in any::<u64>()) {
        let r = Rotator::new(seed, v.len()).unwrap();
        let mut out = vec![f32::NAN; r.padded_dim()];
        r.apply_into(&v, &mut out).unwrap();
        prop_assert_eq!(out, r.apply(&v).unwrap());
    }
}
