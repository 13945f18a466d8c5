//! Band-overlap combinatorics of symmetric systems.
//!
//! For a class `C` with `|C| = j`, the number of classes `U` with `|U| = l` and
//! `|C ∩ U| = m` is `binom(j, m)·binom(K - j, l - m)`. Normalised by `binom(K, l)`
//! this is the hypergeometric probability used to collapse per-class sums onto
//! per-cardinality sums.

use num_rational::Ratio;
use num_traits::Num;

use crate::error::{domain_err, Result};
use crate::profile::{all_classes, ClassSet};

/// `binom(n, k)`, zero when `k > n`.
pub fn binomial(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        // exact at every step: acc·(n-i) is divisible by (i+1)
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// `α(K, j, l, m) = binom(j, m)·binom(K - j, l - m) / binom(K, l)`: the
/// probability that a uniformly chosen `l`-subset of `K` bands shares exactly `m`
/// bands with a fixed `j`-subset.
pub fn hypergeometric_alpha(k: u32, j: u32, l: u32, m: u32) -> Result<Ratio<i64>> {
    if k == 0 || k > 62 {
        return Err(domain_err!("K must be in 1..=62, got {k}"));
    }
    if !(1..=k).contains(&j) || !(1..=k).contains(&l) {
        return Err(domain_err!("cardinalities must satisfy 1 <= j, l <= K (j={j}, l={l}, K={k})"));
    }
    if m < 1 || m > j.min(l) {
        return Err(domain_err!("overlap m={m} outside 1..=min(j, l)={}", j.min(l)));
    }
    let num = binomial(j, m) as i64 * binomial(k - j, l - m) as i64;
    let den = binomial(k, l) as i64;
    Ok(Ratio::new(num, den))
}

/// `Σ_U |C ∩ U|·y_U` over all `2^K - 1` classes, where `y` is indexed by
/// [`ClassSet::index`].
pub fn overlap_sum<T: Num + Copy>(y: &[T], c: ClassSet) -> T {
    let k = (y.len() + 1).trailing_zeros() as u8;
    debug_assert_eq!((1usize << k) - 1, y.len(), "vector is not indexed by classes");
    all_classes(k).fold(T::zero(), |acc, u| acc + times(y[u.index()], c.overlap(u)))
}

/// `Σ_U |U|·y_U`.
pub fn cardinality_sum<T: Num + Copy>(y: &[T]) -> T {
    let k = (y.len() + 1).trailing_zeros() as u8;
    all_classes(k).fold(T::zero(), |acc, u| acc + times(y[u.index()], u.len()))
}

fn times<T: Num + Copy>(x: T, n: u32) -> T {
    let mut acc = T::zero();
    for _ in 0..n {
        acc = acc + x;
    }
    acc
}
