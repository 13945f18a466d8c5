//! Classes (band subsets) and per-class traffic parameters.

use alloc::vec::Vec;

use crate::combinatorics::binomial;
use crate::error::{config_err, Result};

/// Largest supported number of bands.
pub const MAX_BANDS: u8 = 16;

/// A non-empty subset of the bands `{1..K}`, encoded as a bitmask where band
/// `b` sets bit `b - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassSet(u16);

impl ClassSet {
    pub fn from_mask(mask: u16) -> Option<Self> {
        (mask != 0).then_some(ClassSet(mask))
    }

    /// Builds a class from 1-based band numbers.
    pub fn from_bands(bands: &[u8]) -> Option<Self> {
        let mut mask = 0u16;
        for &b in bands {
            if b == 0 || b > MAX_BANDS {
                return None;
            }
            mask |= 1 << (b - 1);
        }
        Self::from_mask(mask)
    }

    #[inline]
    pub fn mask(self) -> u16 {
        self.0
    }

    /// Position of this class in per-class vectors (`mask - 1`).
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(index: usize) -> Self {
        ClassSet(index as u16 + 1)
    }

    /// `|C|`
    #[inline]
    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        false
    }

    /// `|C ∩ D|`
    #[inline]
    pub fn overlap(self, other: ClassSet) -> u32 {
        (self.0 & other.0).count_ones()
    }

    /// Sorted 1-based band numbers.
    pub fn bands(self) -> Vec<u8> {
        (0..16u8).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }

    pub fn fits(self, k: u8) -> bool {
        (self.0 as u32) < (1u32 << k)
    }
}

/// Number of classes `2^K - 1`.
#[inline]
pub fn class_count(k: u8) -> usize {
    (1usize << k) - 1
}

/// All classes of a `K`-band system in increasing bitmask order.
pub fn all_classes(k: u8) -> impl Iterator<Item = ClassSet> + Clone {
    (1..=class_count(k) as u16).map(ClassSet)
}

/// Arrival probabilities `p_C` and mean file sizes `L_C` over all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    k: u8,
    p: Vec<f64>,
    l: Vec<f64>,
    symmetric: bool,
}

impl ClassProfile {
    /// `p` and `l` are indexed by [`ClassSet::index`] and must cover all `2^K - 1` classes.
    pub fn new(k: u8, p: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if k == 0 || k > MAX_BANDS {
            return Err(config_err!("band count K must be in 1..={MAX_BANDS}, got {k}"));
        }
        let n = class_count(k);
        if p.len() != n || l.len() != n {
            return Err(config_err!(
                "expected {n} class entries for K={k}, got p:{} L:{}",
                p.len(),
                l.len()
            ));
        }
        if let Some(i) = p.iter().position(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(config_err!("p for class {:?} must be finite and >= 0", ClassSet::from_index(i).bands()));
        }
        if let Some(i) = l.iter().position(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(config_err!("L for class {:?} must be finite and > 0", ClassSet::from_index(i).bands()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(config_err!("class probabilities sum to {total}, expected 1"));
        }
        let symmetric = is_symmetric(k, &p, &l);
        Ok(ClassProfile { k, p, l, symmetric })
    }

    /// Builds a profile from explicit `(class, p, L)` entries; every class must appear once.
    pub fn from_entries(k: u8, entries: &[(ClassSet, f64, f64)]) -> Result<Self> {
        if k == 0 || k > MAX_BANDS {
            return Err(config_err!("band count K must be in 1..={MAX_BANDS}, got {k}"));
        }
        let n = class_count(k);
        let mut p = alloc::vec![f64::NAN; n];
        let mut l = alloc::vec![f64::NAN; n];
        for &(c, pc, lc) in entries {
            if !c.fits(k) {
                return Err(config_err!("class {:?} uses a band above K={k}", c.bands()));
            }
            if !p[c.index()].is_nan() {
                return Err(config_err!("class {:?} listed twice", c.bands()));
            }
            p[c.index()] = pc;
            l[c.index()] = lc;
        }
        if let Some(i) = p.iter().position(|x| x.is_nan()) {
            return Err(config_err!("class {:?} missing from profile", ClassSet::from_index(i).bands()));
        }
        Self::new(k, p, l)
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn class_count(&self) -> usize {
        self.p.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassSet> + Clone {
        all_classes(self.k)
    }

    #[inline]
    pub fn p(&self, c: ClassSet) -> f64 {
        self.p[c.index()]
    }

    #[inline]
    pub fn l(&self, c: ClassSet) -> f64 {
        self.l[c.index()]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn file_sizes(&self) -> &[f64] {
        &self.l
    }

    /// Whether classes of equal cardinality share `p` and `L` exactly.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn max_file_size(&self) -> f64 {
        self.l.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_file_size(&self) -> f64 {
        self.l.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same profile with every `L_C` multiplied by `factor`.
    pub fn scale_file_sizes(&self, factor: f64) -> Result<Self> {
        Self::new(self.k, self.p.clone(), self.l.iter().map(|x| x * factor).collect())
    }

    /// Samples a class from `p_C` given a uniform variate in `[0, 1)`.
    pub fn sample_class(&self, u: f64) -> ClassSet {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &pc) in self.p.iter().enumerate() {
            if pc <= 0.0 {
                continue;
            }
            acc += pc;
            last = i;
            if u < acc {
                return ClassSet::from_index(i);
            }
        }
        ClassSet::from_index(last)
    }
}

fn is_symmetric(k: u8, p: &[f64], l: &[f64]) -> bool {
    let mut reference: [Option<(f64, f64)>; MAX_BANDS as usize + 1] = [None; MAX_BANDS as usize + 1];
    for c in all_classes(k) {
        let card = c.len() as usize;
        let here = (p[c.index()], l[c.index()]);
        match reference[card] {
            None => reference[card] = Some(here),
            Some(r) if r == here => {}
            Some(_) => return false,
        }
    }
    true
}

/// Cardinality-indexed view of a symmetric profile: `p_j` is the probability
/// that an arrival uses `j` bands (`p_j = binom(K, j)·p_C`), `L_j` its mean file size.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricProfile {
    k: u8,
    p: Vec<f64>,
    l: Vec<f64>,
}

impl SymmetricProfile {
    /// `p[j-1]` and `l[j-1]` describe cardinality `j`.
    pub fn new(k: u8, p: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if k == 0 || k > MAX_BANDS {
            return Err(config_err!("band count K must be in 1..={MAX_BANDS}, got {k}"));
        }
        if p.len() != k as usize || l.len() != k as usize {
            return Err(config_err!("symmetric profile needs K={k} entries for p and L"));
        }
        if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(config_err!("per-cardinality probabilities must be finite and >= 0"));
        }
        if l.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(config_err!("per-cardinality file sizes must be finite and > 0"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(config_err!("per-cardinality probabilities sum to {total}, expected 1"));
        }
        Ok(SymmetricProfile { k, p, l })
    }

    /// Reduction of a symmetric class profile.
    pub fn from_class_profile(profile: &ClassProfile) -> Result<Self> {
        if !profile.is_symmetric() {
            return Err(config_err!("profile is not symmetric"));
        }
        let k = profile.k();
        let mut p = alloc::vec![0.0; k as usize];
        let mut l = alloc::vec![0.0; k as usize];
        for j in 1..=k {
            // representative class {1..j}
            let c = ClassSet::from_mask(((1u32 << j) - 1) as u16).unwrap();
            p[j as usize - 1] = profile.p(c) * binomial(k as u32, j as u32) as f64;
            l[j as usize - 1] = profile.l(c);
        }
        Ok(SymmetricProfile { k, p, l })
    }

    /// Expansion to the full `2^K - 1` class profile.
    pub fn to_class_profile(&self) -> Result<ClassProfile> {
        let n = class_count(self.k);
        let mut p = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        for c in all_classes(self.k) {
            let j = c.len();
            p.push(self.p[j as usize - 1] / binomial(self.k as u32, j) as f64);
            l.push(self.l[j as usize - 1]);
        }
        // rounding in p_j / binom may move the sum by a few ulps; ClassProfile tolerates 1e-12
        ClassProfile::new(self.k, p, l)
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    /// `p_j` for cardinality `j` in `1..=K`.
    pub fn p(&self, j: u32) -> f64 {
        self.p[j as usize - 1]
    }

    pub fn l(&self, j: u32) -> f64 {
        self.l[j as usize - 1]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn file_sizes(&self) -> &[f64] {
        &self.l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn reference_profile() -> ClassProfile {
        ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn class_set_basics() {
        let c = ClassSet::from_bands(&[1, 3]).unwrap();
        assert_eq!(c.mask(), 0b101);
        assert_eq!(c.len(), 2);
        assert_eq!(c.bands(), vec![1, 3]);
        let d = ClassSet::from_bands(&[3]).unwrap();
        assert_eq!(c.overlap(d), 1);
        assert!(ClassSet::from_bands(&[]).is_none());
        assert!(ClassSet::from_bands(&[0]).is_none());
        assert!(!c.fits(2));
        assert!(c.fits(3));
    }

    #[test]
    fn reference_profile_is_symmetric() {
        let p = reference_profile();
        assert!(p.is_symmetric());
        assert_eq!(p.class_count(), 3);
        let asym = ClassProfile::new(2, vec![0.5, 0.3, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        assert!(!asym.is_symmetric());
    }

    #[test]
    fn validation_errors() {
        assert!(ClassProfile::new(2, vec![0.5, 0.5, 0.1], vec![1.0; 3]).is_err());
        assert!(ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 0.0, 1.0]).is_err());
        assert!(ClassProfile::new(2, vec![0.4, 0.6], vec![1.0, 1.0]).is_err());
        assert!(ClassProfile::new(17, vec![], vec![]).is_err());
        let one = ClassSet::from_bands(&[1]).unwrap();
        assert!(ClassProfile::from_entries(2, &[(one, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn zero_probability_classes_are_allowed() {
        let p = ClassProfile::new(2, vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 2.0]).unwrap();
        assert!(p.is_symmetric());
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(p.sample_class(u).mask(), 3);
        }
    }

    #[test]
    fn from_entries_matches_vector_form() {
        let e = [
            (ClassSet::from_bands(&[1, 2]).unwrap(), 0.2, 2.0),
            (ClassSet::from_bands(&[1]).unwrap(), 0.4, 1.0),
            (ClassSet::from_bands(&[2]).unwrap(), 0.4, 1.0),
        ];
        assert_eq!(ClassProfile::from_entries(2, &e).unwrap(), reference_profile());
    }

    #[test]
    fn sampling_follows_cumulative_probabilities() {
        let p = reference_profile();
        assert_eq!(p.sample_class(0.1).mask(), 1);
        assert_eq!(p.sample_class(0.5).mask(), 2);
        assert_eq!(p.sample_class(0.85).mask(), 3);
    }

    #[test]
    fn symmetric_reduction() {
        let s = SymmetricProfile::from_class_profile(&reference_profile()).unwrap();
        assert!((s.p(1) - 0.8).abs() < 1e-15);
        assert!((s.p(2) - 0.2).abs() < 1e-15);
        assert_eq!(s.l(2), 2.0);
    }

    proptest! {
        #[test]
        fn expansion_then_reduction_is_identity(k in 1u8..=6,
                                                 raw in proptest::collection::vec(0.01..1.0f64, 6),
                                                 ls in proptest::collection::vec(0.1..5.0f64, 6)) {
            let total: f64 = raw[..k as usize].iter().sum();
            let p: Vec<f64> = raw[..k as usize].iter().map(|x| x / total).collect();
            let l = ls[..k as usize].to_vec();
            let sym = SymmetricProfile::new(k, p, l).unwrap();
            let full = sym.to_class_profile().unwrap();
            prop_assert!(full.is_symmetric());
            let back = SymmetricProfile::from_class_profile(&full).unwrap();
            prop_assert_eq!(back.file_sizes(), sym.file_sizes());
            for (a, b) in back.probabilities().iter().zip(sym.probabilities()) {
                prop_assert!((a - b).abs() <= 2.0 * f64::EPSILON * b.abs());
            }
        }
    }
}
