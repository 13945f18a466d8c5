//! Path-loss functions `ℓ: [0, ∞) → [0, 1]` with `ℓ(0) = 1`.

use alloc::vec::Vec;

use crate::error::{domain_err, Result};
use crate::math;

/// A non-negative, bounded, non-increasing attenuation profile with `ℓ(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum PathLoss {
    /// `ℓ(d) = (1 + d)^(-beta)`.
    PowerLaw { beta: f64 },
    /// Piecewise-linear interpolation of `(distance, gain)` samples, held
    /// constant after the last sample.
    Tabulated { distances: Vec<f64>, gains: Vec<f64> },
}

impl PathLoss {
    pub fn power_law(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(domain_err!("power-law exponent must be finite and >= 0, got {beta}"));
        }
        Ok(PathLoss::PowerLaw { beta })
    }

    /// Validates the samples: distances strictly increasing from 0, gains
    /// finite, non-negative, non-increasing, and `gain(0) = 1`.
    pub fn tabulated(distances: Vec<f64>, gains: Vec<f64>) -> Result<Self> {
        if distances.is_empty() || distances.len() != gains.len() {
            return Err(domain_err!("tabulated path loss needs matching, non-empty sample vectors"));
        }
        if distances[0] != 0.0 || gains[0] != 1.0 {
            return Err(domain_err!("tabulated path loss must start at (0, 1)"));
        }
        for w in distances.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(domain_err!("tabulated distances must be finite and strictly increasing"));
            }
        }
        for w in gains.windows(2) {
            if !(w[1] <= w[0]) || !(w[1] >= 0.0) {
                return Err(domain_err!("tabulated gains must be non-negative and non-increasing"));
            }
        }
        Ok(PathLoss::Tabulated { distances, gains })
    }

    /// `ℓ ≡ 1`.
    pub fn constant() -> Self {
        PathLoss::PowerLaw { beta: 0.0 }
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        match self {
            PathLoss::PowerLaw { beta } => {
                let b = *beta;
                if b == 0.0 {
                    1.0
                } else if b == math::round(b) && b <= 16.0 {
                    1.0 / math::powi(1.0 + d, b as u32)
                } else {
                    math::powf(1.0 + d, -b)
                }
            }
            PathLoss::Tabulated { distances, gains } => {
                let n = distances.len();
                if d >= distances[n - 1] {
                    return gains[n - 1];
                }
                // first index with distance > d
                let hi = distances.partition_point(|&x| x <= d);
                let lo = hi - 1;
                let t = (d - distances[lo]) / (distances[hi] - distances[lo]);
                gains[lo] + t * (gains[hi] - gains[lo])
            }
        }
    }

    /// Distances at which the function is not smooth (useful as quadrature breakpoints).
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            PathLoss::PowerLaw { .. } => &[],
            PathLoss::Tabulated { distances, .. } => distances,
        }
    }

    /// Sampled check that `self(d) <= other(d)` on `[0, max_distance]`.
    pub fn dominated_by(&self, other: &PathLoss, max_distance: f64) -> bool {
        const SAMPLES: usize = 2048;
        let mut grid: Vec<f64> = (0..=SAMPLES)
            .map(|i| max_distance * i as f64 / SAMPLES as f64)
            .collect();
        grid.extend(self.breakpoints().iter().copied());
        grid.extend(other.breakpoints().iter().copied());
        grid.iter()
            .filter(|&&d| d <= max_distance)
            .all(|&d| self.eval(d) <= other.eval(d))
    }
}
