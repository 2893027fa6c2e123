#![allow(dead_code)]

use lewis_core::{DenseMatrix, WeightVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(m: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut r)).collect();
    DenseMatrix::new(m, n, data).unwrap()
}

/// Weights spread over roughly two orders of magnitude.
pub fn weights(m: usize, seed: u64) -> WeightVector {
    let mut r = rng(seed ^ 0x9e37_79b9);
    WeightVector::optimizer((0..m).map(|_| 10f64.powf(r.random_range(-1.0..1.0))).collect()).unwrap()
}

/// Random instance with `n ≤ max_n` and `n ≤ m ≤ max_m`.
pub fn instance(seed: u64, max_m: usize, max_n: usize) -> (DenseMatrix, WeightVector) {
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(7));
    let n = r.random_range(1..=max_n);
    let m = r.random_range(n.max(2)..=max_m.max(n));
    (gaussian(m, n, seed), weights(m, seed))
}

pub fn max_rel_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max)
}

/// Gaussian instance small and well posed enough for the gradient oracle:
/// `2 ≤ n ≤ 4`, `2n ≤ m ≤ 20`. Single columns have a closed form instead and
/// spread their weights too far for plain gradient descent at large `p`.
pub fn oracle_instance(seed: u64) -> DenseMatrix {
    let mut r = rng(seed.wrapping_mul(131).wrapping_add(3));
    let n = r.random_range(2..=4);
    let m = r.random_range((2 * n).max(4)..=20);
    gaussian(m, n, seed)
}
