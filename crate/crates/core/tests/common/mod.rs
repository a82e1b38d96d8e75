//! Random instances shared by the integration tests.
#![allow(dead_code)]

use obsent::entropy::equilibrium_state;
use obsent::graining::{CoarseGraining, OutcomeLabel};
use obsent::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn hermitian(rng: &mut impl Rng, n: usize) -> HermitianOperator {
    let a = complex_matrix(rng, n, n);
    HermitianOperator::new(a.add(&a.adjoint()).scale_real(0.5)).unwrap()
}

/// Eigenvectors of a random Hermitian matrix.
pub fn unitary(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    hermitian(rng, n).spectrum().unwrap().vectors.clone()
}

/// `G G^H / tr` with `G` of shape `n × rank`.
pub fn density(rng: &mut impl Rng, n: usize, rank: usize) -> DensityMatrix {
    let g = complex_matrix(rng, n, rank);
    let m = g.matmul_adjoint(&g);
    let tr = m.trace().re;
    DensityMatrix::new(m.scale_real(1.0 / tr), vec![n]).unwrap()
}

pub fn mixed_density(rng: &mut impl Rng, n: usize) -> DensityMatrix {
    density(rng, n, n)
}

/// Random orthonormal basis split into random contiguous blocks.
pub fn graining(rng: &mut impl Rng, n: usize) -> CoarseGraining {
    let basis = unitary(rng, n);
    let outcomes = rng.gen_range(1..=n);
    let mut cuts: Vec<usize> = (1..n).collect();
    for i in (1..cuts.len()).rev() {
        cuts.swap(i, rng.gen_range(0..=i));
    }
    let mut cuts: Vec<usize> = cuts.into_iter().take(outcomes - 1).collect();
    cuts.sort_unstable();
    cuts.push(n);
    let mut blocks = Vec::new();
    let mut start = 0;
    for c in cuts {
        blocks.push((start, c - start));
        start = c;
    }
    let labels = (0..blocks.len()).map(OutcomeLabel::Index).collect();
    CoarseGraining::from_blocks(basis, blocks, labels).unwrap()
}

pub fn probabilities(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random member of the equilibrium set of `x`.
pub fn member(rng: &mut impl Rng, x: &CoarseGraining) -> DensityMatrix {
    equilibrium_state(x, &probabilities(rng, x.len())).unwrap()
}

pub fn dim(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}
