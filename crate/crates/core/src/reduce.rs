//! Reductions with a fixed summation tree, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

const LEAF: usize = 1024;

/// Pairwise sum over a fixed binary tree with sequential leaves.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= LEAF {
        return x.iter().sum();
    }
    let mid = split_point(x.len());
    let (a, b) = x.split_at(mid);
    if x.len() > 64 * LEAF {
        let (sa, sb) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
        sa + sb
    } else {
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Split at a multiple of the leaf size so the tree shape depends only on length.
fn split_point(len: usize) -> usize {
    let leaves = len.div_ceil(LEAF);
    (leaves / 2) * LEAF
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(LEAF)
        .zip(b.par_chunks(LEAF))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    pairwise_sum(&partial)
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_integers() {
        let x: Vec<f64> = (0..100_003).map(|i| (i % 17) as f64).collect();
        let naive: f64 = x.iter().sum();
        assert_eq!(pairwise_sum(&x), naive);
    }

    #[test]
    fn independent_of_thread_count() {
        let x: Vec<f64> = (0..300_000).map(|i| ((i as f64) * 0.37).sin()).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| dot(&x, &x));
        let b = four.install(|| dot(&x, &x));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
