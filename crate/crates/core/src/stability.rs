//! Closed-form stability quantities of the symmetric system.
//!
//! With `𝔏 = Σ_C p_C·|C|·L_C` (the load factor), the critical arrival rate is
//! `λ_c = K·ℓ(r) / (⟨ℓ_D⟩·𝔏)`; single-channel/all-channel comparison systems
//! bracket the critical rates of any (also non-symmetric) profile between
//! `ℓ(r)/(K·L̄·⟨ℓ_D⟩)` and `K·ℓ(r)/(L̲·⟨ℓ_D⟩)`.

use crate::error::Result;
use crate::geometry::TorusDomain;
use crate::pathloss::PathLoss;
use crate::profile::ClassProfile;
use crate::quadrature::{pathloss_integral, QuadratureSettings};

/// `𝔏 = Σ_C p_C·|C|·L_C`.
pub fn load_factor(profile: &ClassProfile) -> f64 {
    profile.classes().map(|c| profile.p(c) * c.len() as f64 * profile.l(c)).sum()
}

/// The critical rate together with a flag telling whether the closed form is
/// backed by the stability theorem (symmetric profiles only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalRate {
    pub value: f64,
    pub mean_pathloss: f64,
    /// Set when the profile is not symmetric: the value is then only the
    /// formula evaluated outside its proven range.
    pub non_symmetric_warning: bool,
}

/// `λ_c = K·ℓ(r)/(⟨ℓ_D⟩·𝔏)` for a precomputed `⟨ℓ_D⟩`.
pub fn critical_rate_with(profile: &ClassProfile, dom: &TorusDomain, pl: &PathLoss, mean_pathloss: f64) -> CriticalRate {
    let k = profile.k() as f64;
    CriticalRate {
        value: k * pl.eval(dom.link_length()) / (mean_pathloss * load_factor(profile)),
        mean_pathloss,
        non_symmetric_warning: !profile.is_symmetric(),
    }
}

pub fn critical_rate(
    profile: &ClassProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    settings: &QuadratureSettings,
) -> Result<CriticalRate> {
    let mean = pathloss_integral(dom, pl, settings)?.value;
    Ok(critical_rate_with(profile, dom, pl, mean))
}

/// `(ℓ(r)/(K·L̄·⟨ℓ_D⟩), K·ℓ(r)/(L̲·⟨ℓ_D⟩))` for a precomputed `⟨ℓ_D⟩`.
pub fn lambda_bounds_with(profile: &ClassProfile, dom: &TorusDomain, pl: &PathLoss, mean_pathloss: f64) -> (f64, f64) {
    let k = profile.k() as f64;
    let signal = pl.eval(dom.link_length());
    (
        signal / (k * profile.max_file_size() * mean_pathloss),
        k * signal / (profile.min_file_size() * mean_pathloss),
    )
}

pub fn lambda_bounds(
    profile: &ClassProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    settings: &QuadratureSettings,
) -> Result<(f64, f64)> {
    let mean = pathloss_integral(dom, pl, settings)?.value;
    Ok(lambda_bounds_with(profile, dom, pl, mean))
}
