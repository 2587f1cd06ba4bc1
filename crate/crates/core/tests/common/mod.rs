#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sifb::spaces::{BlockLinearOperator, BlockVector, Preconditioner};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * gauss(rng))
}

pub fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn block(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> BlockVector {
    BlockVector::from_blocks(dims.iter().map(|&d| vector(rng, d, scale)).collect())
}

/// Random block sizes summing to at most `max_total`, each at most 3.
pub fn dims(rng: &mut ChaCha8Rng, max_total: usize) -> Vec<usize> {
    let mut left = rng.random_range(1..=max_total);
    let mut out = Vec::new();
    while left > 0 {
        let d = rng.random_range(1..=left.min(3));
        out.push(d);
        left -= d;
    }
    out
}

pub fn diagonal(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Preconditioner {
    Preconditioner::diagonal(dims.iter().map(|&d| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect())
        .unwrap()
}

/// One of the three preconditioner kinds at random.
pub fn preconditioner(rng: &mut ChaCha8Rng, dims: &[usize]) -> Preconditioner {
    match rng.random_range(0..3) {
        0 => Preconditioner::identity(),
        1 => Preconditioner::scalars(dims.iter().map(|_| rng.random_range(0.1..4.0)).collect()).unwrap(),
        _ => diagonal(rng, dims, 0.1, 4.0),
    }
}

pub fn coupling(rng: &mut ChaCha8Rng, primal: &[usize], dual: &[usize]) -> BlockLinearOperator {
    let mut l = BlockLinearOperator::zeros(primal, dual);
    for (k, &dk) in dual.iter().enumerate() {
        for (i, &di) in primal.iter().enumerate() {
            if rng.random_bool(0.7) {
                l.set(k, i, matrix(rng, dk, di)).unwrap();
            }
        }
    }
    if l.is_zero() {
        l.set(0, 0, matrix(rng, dual[0], primal[0])).unwrap();
    }
    l
}

/// Dense diagonal of a preconditioner over `dims`.
pub fn dense_weights(p: &Preconditioner, dims: &[usize]) -> DVector<f64> {
    let ones = BlockVector::from_blocks(dims.iter().map(|&d| DVector::from_element(d, 1.0)).collect());
    p.apply(&ones).flatten()
}

pub fn diff(a: &BlockVector, b: &BlockVector) -> BlockVector {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}
