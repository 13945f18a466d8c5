//! Stationary-density fixed points.
//!
//! The Poisson heuristic treats each stationary class process as an
//! independent Poisson process of intensity `μ_C` and closes the rate
//! conservation balance
//!
//! `μ_C ∫₀^∞ e^{−zN₀} e^{−Σ_U μ_U 𝓘(z, |C∩U|)} dz = λ p_C L_C / (|C| ℓ(r))`.
//!
//! The map `μ ↦ rhs / J(μ)` is componentwise non-decreasing, so a damped
//! iteration from zero climbs monotonically to the smallest solution when one
//! exists. `λ_P` is the largest `λ` for which it does.
//!
//! The cavity heuristic keeps one more moment: it couples the mean
//! interference `I_C` seen by a typical user of class `C` to a pair
//! correlation obtained from a two-point birth/death balance. The link
//! distance written `ℓ(R)` in that balance is the dipole length `r`.

use alloc::vec;
use alloc::vec::Vec;

use crate::combinatorics::hypergeometric_alpha;
use crate::error::{config_err, domain_err, Error, Result};
use crate::geometry::TorusDomain;
use crate::math;
use crate::pathloss::PathLoss;
use crate::profile::{all_classes, ClassProfile, ClassSet, SymmetricProfile};
use crate::quadrature::{interference_functional, LaplaceRule, QuadratureSettings, RadialRule};
use crate::stability::{critical_rate_with, lambda_bounds_with};

/// Fixed-point solver controls shared by both heuristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Weight of the new iterate: `μ ← (1 − d)μ + d·T(μ)`.
    pub damping: f64,
    /// Relative defect at which an iterate is accepted.
    pub tol: f64,
    pub max_iterations: usize,
    /// An iterate above this multiple of the low-λ estimate counts as divergent.
    pub divergence_factor: f64,
    /// Panel width in `ln z` of the Laplace rule.
    pub laplace_panel: f64,
    /// Panel width in `ρ` of the radial rule used by the cavity loop.
    pub radial_panel: f64,
    pub quadrature: QuadratureSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            damping: 0.5,
            tol: 1e-8,
            max_iterations: 10_000,
            divergence_factor: 1e6,
            laplace_panel: 0.5,
            radial_panel: 0.25,
            quadrature: QuadratureSettings::default(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(config_err!("damping must be in (0, 1], got {}", self.damping));
        }
        if !(self.tol > 0.0) || self.max_iterations == 0 {
            return Err(config_err!("solver needs tol > 0 and at least one iteration"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(config_err!("divergence factor must exceed 1"));
        }
        if !(self.laplace_panel > 0.0 && self.radial_panel > 0.0) {
            return Err(config_err!("panel widths must be positive"));
        }
        self.quadrature.validate()
    }
}

/// A Poisson-heuristic fixed point.
///
/// `mu` is indexed by [`ClassSet::index`] for the full system and by `j - 1`
/// for the cardinality-reduced one. `residual` is the largest class-wise
/// relative defect `|μ_C J_C(μ) − rhs_C| / rhs_C` at `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of Laplace integrals `J` evaluated.
    pub kernel_evaluations: u64,
}

/// `𝓘(z_n, m)` tabulated on the nodes of a Laplace rule with `c = N₀`.
#[derive(Debug, Clone)]
pub struct PoissonKernel {
    k: u8,
    n0: f64,
    signal: f64,
    rule: LaplaceRule,
    /// `table[m - 1][n] = 𝓘(z_n, m)`.
    table: Vec<Vec<f64>>,
}

impl PoissonKernel {
    pub fn new(k: u8, dom: &TorusDomain, pl: &PathLoss, n0: f64, settings: &SolverSettings) -> Result<Self> {
        settings.validate()?;
        if !(n0 > 0.0 && n0.is_finite()) {
            return Err(domain_err!("the heuristics need N0 > 0, got {n0}"));
        }
        let signal = pl.eval(dom.link_length());
        if !(signal > 0.0) {
            return Err(domain_err!("path loss vanishes at the link length"));
        }
        let rule = LaplaceRule::new(n0, settings.laplace_panel)?;
        let table = (1..=k as u32)
            .map(|m| {
                rule.nodes()
                    .iter()
                    .map(|&z| interference_functional(dom, pl, z, m, &settings.quadrature).map(|e| e.value))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PoissonKernel { k, n0, signal, rule, table })
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    /// `∫₀^∞ e^{−zN₀} e^{−Σ_m w_m 𝓘(z, m)} dz` for overlap weights `w[m - 1]`.
    pub fn laplace(&self, weights: &[f64]) -> f64 {
        let n = self.rule.len();
        self.rule.integrate_tabulated((0..n).map(|i| {
            let e: f64 = weights.iter().zip(&self.table).map(|(w, row)| w * row[i]).sum();
            math::exp(-e)
        }))
    }
}

/// The linear balance `λ p_C L_C / (|C| ℓ(r))` per class.
fn poisson_rhs(profile: &ClassProfile, lambda: f64, signal: f64) -> Vec<f64> {
    profile.classes().map(|c| lambda * profile.p(c) * profile.l(c) / (c.len() as f64 * signal)).collect()
}

/// Shared damped Picard loop. `laplace(mu, out)` fills `out` with `J(μ)`.
fn picard<F: FnMut(&[f64], &mut [f64])>(
    start: Vec<f64>,
    rhs: &[f64],
    ceiling: &[f64],
    settings: &SolverSettings,
    mut laplace: F,
) -> (Vec<f64>, f64, usize, bool) {
    let d = settings.damping;
    let mut mu = start;
    let mut j = vec![0.0; mu.len()];
    for it in 0..settings.max_iterations {
        laplace(&mu, &mut j);
        let mut residual = 0.0f64;
        let mut finite = true;
        for c in 0..mu.len() {
            if !(j[c] > 0.0 && j[c].is_finite()) {
                finite = false;
                break;
            }
            let defect = mu[c] * j[c] - rhs[c];
            residual = residual.max(if rhs[c] > 0.0 { defect.abs() / rhs[c] } else { defect.abs() });
        }
        if !finite {
            return (mu, f64::INFINITY, it, false);
        }
        if residual < settings.tol {
            return (mu, residual, it, true);
        }
        for c in 0..mu.len() {
            mu[c] = (1.0 - d) * mu[c] + d * rhs[c] / j[c];
        }
        if mu.iter().zip(ceiling).any(|(m, cap)| *m > *cap) {
            return (mu, f64::INFINITY, it + 1, false);
        }
    }
    let residual = {
        laplace(&mu, &mut j);
        mu.iter()
            .zip(&j)
            .zip(rhs)
            .map(|((m, jj), r)| if *r > 0.0 { (m * jj - r).abs() / r } else { (m * jj).abs() })
            .fold(0.0, f64::max)
    };
    (mu, residual, settings.max_iterations, false)
}

fn ceiling(rhs: &[f64], n0: f64, settings: &SolverSettings) -> Vec<f64> {
    // the low-λ estimate is rhs·N₀; zero classes stay at zero anyway
    rhs.iter().map(|r| settings.divergence_factor * r * n0).collect()
}

/// Overlap weights `w[m - 1] = Σ_{U : |C∩U| = m} μ_U` for every class `C`.
fn overlap_weights(k: u8, mu: &[f64], c: ClassSet, out: &mut [f64]) {
    out.iter_mut().for_each(|w| *w = 0.0);
    for u in all_classes(k) {
        let m = c.overlap(u);
        if m > 0 {
            out[m as usize - 1] += mu[u.index()];
        }
    }
}

impl PoissonKernel {
    fn check_profile(&self, k: u8) -> Result<()> {
        if k != self.k {
            return Err(config_err!("kernel tabulated for K={}, profile has K={k}", self.k));
        }
        Ok(())
    }

    /// Full `2^K − 1` system, iterated from `start` (zero for the smallest solution).
    pub fn solve_from(&self, profile: &ClassProfile, lambda: f64, start: Vec<f64>, settings: &SolverSettings) -> Result<PoissonSolution> {
        self.check_profile(profile.k())?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain_err!("arrival rate must be finite and >= 0, got {lambda}"));
        }
        if start.len() != profile.class_count() || start.iter().any(|m| !(*m >= 0.0)) {
            return Err(domain_err!("starting vector must hold one non-negative value per class"));
        }
        let rhs = poisson_rhs(profile, lambda, self.signal);
        let cap = ceiling(&rhs, self.n0, settings);
        let mut evals = 0u64;
        let mut w = vec![0.0; self.k as usize];
        let (mu, residual, iterations, converged) = picard(start, &rhs, &cap, settings, |mu, out| {
            for c in all_classes(self.k) {
                overlap_weights(self.k, mu, c, &mut w);
                out[c.index()] = self.laplace(&w);
                evals += 1;
            }
        });
        Ok(PoissonSolution { lambda, mu, residual, iterations, converged, kernel_evaluations: evals })
    }

    pub fn solve(&self, profile: &ClassProfile, lambda: f64, settings: &SolverSettings) -> Result<PoissonSolution> {
        self.solve_from(profile, lambda, vec![0.0; profile.class_count()], settings)
    }

    /// Cardinality-reduced system with `K` unknowns `μ_j = Σ_{|U| = j} μ_U`.
    pub fn solve_symmetric(&self, profile: &SymmetricProfile, lambda: f64, settings: &SolverSettings) -> Result<PoissonSolution> {
        self.check_profile(profile.k())?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain_err!("arrival rate must be finite and >= 0, got {lambda}"));
        }
        let k = self.k as u32;
        let rhs: Vec<f64> =
            (1..=k).map(|j| lambda * profile.p(j) * profile.l(j) / (j as f64 * self.signal)).collect();
        let cap = ceiling(&rhs, self.n0, settings);
        // alpha[j-1][l-1][m-1]
        let mut alpha = vec![vec![vec![0.0; k as usize]; k as usize]; k as usize];
        for j in 1..=k {
            for l in 1..=k {
                for m in 1..=j.min(l) {
                    let a = hypergeometric_alpha(k, j, l, m)?;
                    alpha[j as usize - 1][l as usize - 1][m as usize - 1] = *a.numer() as f64 / *a.denom() as f64;
                }
            }
        }
        let mut evals = 0u64;
        let mut w = vec![0.0; k as usize];
        let (mu, residual, iterations, converged) = picard(vec![0.0; k as usize], &rhs, &cap, settings, |mu, out| {
            for j in 0..k as usize {
                for (m, wm) in w.iter_mut().enumerate() {
                    *wm = (0..k as usize).map(|l| mu[l] * alpha[j][l][m]).sum();
                }
                out[j] = self.laplace(&w);
                evals += 1;
            }
        });
        Ok(PoissonSolution { lambda, mu, residual, iterations, converged, kernel_evaluations: evals })
    }

    /// Iterates down from a large start and returns the limit when it is a
    /// fixed point distinct from `smallest`.
    pub fn second_fixed_point(
        &self,
        profile: &ClassProfile,
        smallest: &PoissonSolution,
        settings: &SolverSettings,
    ) -> Result<Option<PoissonSolution>> {
        if !smallest.converged {
            return Ok(None);
        }
        let rhs = poisson_rhs(profile, smallest.lambda, self.signal);
        // strictly below the divergence ceiling
        let start: Vec<f64> = rhs.iter().map(|r| 0.5 * settings.divergence_factor * r * self.n0).collect();
        let high = self.solve_from(profile, smallest.lambda, start, settings)?;
        if !high.converged {
            return Ok(None);
        }
        let distinct = high
            .mu
            .iter()
            .zip(&smallest.mu)
            .any(|(a, b)| (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
        Ok(distinct.then_some(high))
    }
}

/// Smallest solution of the Poisson balance over all `2^K − 1` classes.
pub fn poisson_fixed_point(
    profile: &ClassProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    lambda: f64,
    n0: f64,
    settings: &SolverSettings,
) -> Result<PoissonSolution> {
    PoissonKernel::new(profile.k(), dom, pl, n0, settings)?.solve(profile, lambda, settings)
}

/// Smallest solution of the cardinality-reduced Poisson balance.
pub fn poisson_fixed_point_symmetric(
    profile: &SymmetricProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    lambda: f64,
    n0: f64,
    settings: &SolverSettings,
) -> Result<PoissonSolution> {
    PoissonKernel::new(profile.k(), dom, pl, n0, settings)?.solve_symmetric(profile, lambda, settings)
}

/// Bisection controls for `λ_P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSettings {
    /// Stop once the bracket is narrower than this fraction of `λ_c`.
    pub rel_width: f64,
    pub solver: SolverSettings,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        BisectionSettings { rel_width: 1e-3, solver: SolverSettings::default() }
    }
}

/// `λ_P` together with its final bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonCriticalRate {
    /// Largest rate found feasible.
    pub value: f64,
    /// Smallest rate found infeasible; infinite when the whole search range was feasible.
    pub infeasible_above: f64,
    pub critical_rate: f64,
    pub solves: usize,
}

/// Bisection for the largest `λ` at which the Poisson balance has a solution,
/// over `[0, 2·upper bound]`.
pub fn poisson_critical_rate(
    profile: &ClassProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    n0: f64,
    settings: &BisectionSettings,
) -> Result<PoissonCriticalRate> {
    if !(settings.rel_width > 0.0) {
        return Err(config_err!("bisection width must be positive"));
    }
    let kernel = PoissonKernel::new(profile.k(), dom, pl, n0, &settings.solver)?;
    let mean = crate::quadrature::pathloss_integral(dom, pl, &settings.solver.quadrature)?.value;
    let lc = critical_rate_with(profile, dom, pl, mean).value;
    let (_, upper) = lambda_bounds_with(profile, dom, pl, mean);
    let feasible = |lambda: f64| kernel.solve(profile, lambda, &settings.solver).map(|s| s.converged);
    let (mut lo, mut hi) = (0.0, 2.0 * upper);
    let mut solves = 1;
    if feasible(hi)? {
        return Ok(PoissonCriticalRate { value: hi, infeasible_above: f64::INFINITY, critical_rate: lc, solves });
    }
    while hi - lo >= settings.rel_width * lc {
        let mid = 0.5 * (lo + hi);
        solves += 1;
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PoissonCriticalRate { value: lo, infeasible_above: hi, critical_rate: lc, solves })
}

/// A cavity fixed point. `i` holds the mean interference `I_C` seen by a
/// typical user of each class.
#[derive(Debug, Clone, PartialEq)]
pub struct CavitySolution {
    pub lambda: f64,
    pub mu_s: Vec<f64>,
    pub i: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The two-point quantities of the cavity balance for a given `I`.
#[derive(Debug, Clone)]
pub struct CavityModel<'a> {
    profile: &'a ClassProfile,
    pl: &'a PathLoss,
    lambda: f64,
    n0: f64,
    signal: f64,
    rule: RadialRule,
    gains: Vec<f64>,
}

impl<'a> CavityModel<'a> {
    pub fn new(
        profile: &'a ClassProfile,
        dom: &TorusDomain,
        pl: &'a PathLoss,
        lambda: f64,
        n0: f64,
        settings: &SolverSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain_err!("arrival rate must be finite and >= 0, got {lambda}"));
        }
        if !(n0 > 0.0 && n0.is_finite()) {
            return Err(domain_err!("the heuristics need N0 > 0, got {n0}"));
        }
        let signal = pl.eval(dom.link_length());
        if !(signal > 0.0) {
            return Err(domain_err!("path loss vanishes at the link length"));
        }
        let rule = RadialRule::new(dom.side(), pl.breakpoints(), settings.radial_panel)?;
        let gains = rule.radii().iter().map(|&r| pl.eval(r)).collect();
        Ok(CavityModel { profile, pl, lambda, n0, signal, rule, gains })
    }

    /// `μ^s_C = λ p_C L_C (N₀ + I_C) / (|C| ℓ(r))`.
    pub fn densities(&self, i: &[f64]) -> Vec<f64> {
        self.profile
            .classes()
            .map(|c| self.lambda * self.profile.p(c) * self.profile.l(c) * (self.n0 + i[c.index()]) / (c.len() as f64 * self.signal))
            .collect()
    }

    /// Departure rate of a typical class-`C` user under interference `I_C + extra`.
    fn departure(&self, c: ClassSet, i: &[f64], extra: f64) -> f64 {
        c.len() as f64 * self.signal / (self.profile.l(c) * (self.n0 + extra + i[c.index()]))
    }

    /// `d_{C,U}` at separation `ρ`.
    pub fn pair_departure(&self, c: ClassSet, u: ClassSet, i: &[f64], rho: f64) -> f64 {
        let extra = c.overlap(u) as f64 * self.pl.eval(rho);
        self.departure(c, i, extra) + self.departure(u, i, extra)
    }

    /// `ρ⁽²⁾_{C,U}(x, 0)` at `‖x‖ = ρ`.
    pub fn pair_correlation(&self, c: ClassSet, u: ClassSet, i: &[f64], rho: f64) -> f64 {
        let mu = self.densities(i);
        let p = |v: ClassSet| self.profile.p(v);
        self.lambda * (mu[u.index()] * p(c) + mu[c.index()] * p(u)) / self.pair_departure(c, u, i, rho)
    }

    /// The interference map `I ↦ (Σ_U |C∩U|/μ_C ∫ ℓ ρ⁽²⁾_{C,U})_C`.
    ///
    /// `λ p_C / μ_C` is replaced by the typical departure rate so classes
    /// with `p_C = 0` stay finite.
    pub fn interference_map(&self, i: &[f64]) -> Vec<f64> {
        let mu = self.densities(i);
        let k = self.profile.k();
        all_classes(k)
            .map(|c| {
                let delta = self.departure(c, i, 0.0);
                all_classes(k)
                    .map(|u| {
                        let m = c.overlap(u);
                        if m == 0 {
                            return 0.0;
                        }
                        let num = mu[u.index()] * delta + self.lambda * self.profile.p(u);
                        if num == 0.0 {
                            return 0.0;
                        }
                        let mf = m as f64;
                        let integral = self.rule.integrate_tabulated(self.gains.iter().map(|&g| {
                            let extra = mf * g;
                            g * num / (self.departure(c, i, extra) + self.departure(u, i, extra))
                        }));
                        mf * integral
                    })
                    .sum()
            })
            .collect()
    }
}

/// Joint damped iteration on `(μ^s, I)` from `I = 0`.
///
/// Returns `NoConvergence` when `I` runs past `divergence_factor·N₀`.
pub fn cavity_fixed_point(
    profile: &ClassProfile,
    dom: &TorusDomain,
    pl: &PathLoss,
    lambda: f64,
    n0: f64,
    settings: &SolverSettings,
) -> Result<CavitySolution> {
    let model = CavityModel::new(profile, dom, pl, lambda, n0, settings)?;
    let d = settings.damping;
    let mut i = vec![0.0; profile.class_count()];
    let ceiling = settings.divergence_factor * n0;
    for it in 0..settings.max_iterations {
        let next = model.interference_map(&i);
        let residual = next.iter().zip(&i).map(|(a, b)| (a - b).abs() / (n0 + b)).fold(0.0, f64::max);
        if residual < settings.tol {
            return Ok(CavitySolution { lambda, mu_s: model.densities(&i), i, residual, iterations: it, converged: true });
        }
        for (cur, new) in i.iter_mut().zip(&next) {
            *cur = (1.0 - d) * *cur + d * new;
        }
        if i.iter().any(|v| !(*v <= ceiling)) {
            return Err(Error::NoConvergence {
                iterations: it + 1,
                message: alloc::format!("cavity interference exceeded {ceiling:e}; λ = {lambda} is beyond the heuristic's range"),
            });
        }
    }
    let next = model.interference_map(&i);
    let residual = next.iter().zip(&i).map(|(a, b)| (a - b).abs() / (n0 + b)).fold(0.0, f64::max);
    Ok(CavitySolution {
        lambda,
        mu_s: model.densities(&i),
        i,
        residual,
        iterations: settings.max_iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TorusDomain, PathLoss, ClassProfile) {
        (
            TorusDomain::new(10.0, 0.0).unwrap(),
            PathLoss::power_law(4.0).unwrap(),
            ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap(),
        )
    }

    #[test]
    fn zero_rate_gives_zero_density() {
        let (dom, pl, profile) = setup();
        let s = SolverSettings::default();
        let sol = poisson_fixed_point(&profile, &dom, &pl, 0.0, 0.1, &s).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.mu, vec![0.0; 3]);
        assert_eq!(sol.iterations, 0);
        let cav = cavity_fixed_point(&profile, &dom, &pl, 0.0, 0.1, &s).unwrap();
        assert_eq!(cav.mu_s, vec![0.0; 3]);
        assert_eq!(cav.i, vec![0.0; 3]);
    }

    #[test]
    fn laplace_kernel_at_zero_density_is_inverse_noise() {
        let (dom, pl, _) = setup();
        let kernel = PoissonKernel::new(2, &dom, &pl, 0.1, &SolverSettings::default()).unwrap();
        assert!((kernel.laplace(&[0.0, 0.0]) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (dom, pl, profile) = setup();
        let s = SolverSettings::default();
        assert!(poisson_fixed_point(&profile, &dom, &pl, 1.0, 0.0, &s).is_err());
        assert!(poisson_fixed_point(&profile, &dom, &pl, -1.0, 0.1, &s).is_err());
        assert!(cavity_fixed_point(&profile, &dom, &pl, f64::NAN, 0.1, &s).is_err());
        let bad = SolverSettings { damping: 0.0, ..s };
        assert!(poisson_fixed_point(&profile, &dom, &pl, 1.0, 0.1, &bad).is_err());
        let kernel = PoissonKernel::new(3, &dom, &pl, 0.1, &s).unwrap();
        assert!(kernel.solve(&profile, 1.0, &s).is_err());
    }

    #[test]
    fn far_above_the_critical_rate_is_infeasible() {
        let (dom, pl, profile) = setup();
        let s = SolverSettings::default();
        let sol = poisson_fixed_point(&profile, &dom, &pl, 20.0, 0.1, &s).unwrap();
        assert!(!sol.converged);
        assert!(matches!(cavity_fixed_point(&profile, &dom, &pl, 20.0, 0.1, &s), Err(Error::NoConvergence { .. })));
    }
}
