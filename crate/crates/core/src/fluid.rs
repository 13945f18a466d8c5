//! Fluid limit of the dominating lattice chain.
//!
//! `x'_{i,C} = λ·p_C·ε² − (1/L_C)·|C|·x_{i,C} / Σ_{k,U} |C∩U|·κ(k,i)·x_{k,U}`.
//! The death term is 0-homogeneous in `x` and undefined at `x = 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, domain_err, Error, Result};
use crate::lattice::DiscretePathLoss;
use crate::profile::{ClassProfile, ClassSet};

/// Masses `x_{i,C}` laid out row-major by cell, like the lattice counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub x: Vec<f64>,
    pub time: f64,
}

impl FluidState {
    pub fn new(x: Vec<f64>) -> Self {
        FluidState { x, time: 0.0 }
    }

    /// `x_{i,C} = scale·p_C·L_C` in every cell.
    pub fn witness(cells: usize, profile: &ClassProfile, scale: f64) -> Self {
        let row: Vec<f64> = profile.classes().map(|c| scale * profile.p(c) * profile.l(c)).collect();
        FluidState::new((0..cells).flat_map(|_| row.iter().copied()).collect())
    }

    pub fn total_mass(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// Precomputed shapes for drift evaluation.
#[derive(Debug, Clone)]
struct Layout {
    cells: usize,
    classes: usize,
    k: usize,
    birth: Vec<f64>,
    inv_l: Vec<f64>,
    size: Vec<f64>,
}

impl Layout {
    fn new(dpl: &DiscretePathLoss, profile: &ClassProfile, lambda: f64) -> Self {
        let eps = dpl.tessellation().eps();
        Layout {
            cells: dpl.tessellation().cell_count(),
            classes: profile.class_count(),
            k: profile.k() as usize,
            birth: profile.probabilities().iter().map(|p| lambda * p * eps * eps).collect(),
            inv_l: profile.file_sizes().iter().map(|l| 1.0 / l).collect(),
            size: profile.classes().map(|c| c.len() as f64).collect(),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cells * self.classes {
            return Err(domain_err!("fluid state has {} entries, expected {}", x.len(), self.cells * self.classes));
        }
        if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(domain_err!("fluid state entries must be finite and non-negative"));
        }
        Ok(())
    }

    /// `D_{i,C} = Σ_{b∈C} Σ_k κ(k,i)·Σ_{U∋b} x_{k,U}`.
    fn denominators(&self, x: &[f64], dpl: &DiscretePathLoss) -> Vec<f64> {
        let (n, m, k) = (self.cells, self.classes, self.k);
        let mut band = vec![0.0; n * k];
        for cell in 0..n {
            for u in 0..m {
                let v = x[cell * m + u];
                if v != 0.0 {
                    let mask = ClassSet::from_index(u).mask();
                    for b in 0..k {
                        if mask & (1 << b) != 0 {
                            band[cell * k + b] += v;
                        }
                    }
                }
            }
        }
        let gains = dpl.by_offset();
        let side = dpl.tessellation().per_side();
        let mut load = vec![0.0; n * k];
        for i in 0..n {
            let (ri, ci) = (i / side, i % side);
            let row = &mut load[i * k..(i + 1) * k];
            for cell in 0..n {
                let (rk, ck) = (cell / side, cell % side);
                let g = gains[((rk + side - ri) % side) * side + (ck + side - ci) % side];
                for (acc, &b) in row.iter_mut().zip(&band[cell * k..(cell + 1) * k]) {
                    *acc += g * b;
                }
            }
        }
        let mut den = vec![0.0; n * m];
        for i in 0..n {
            for c in 0..m {
                let mask = ClassSet::from_index(c).mask();
                den[i * m + c] = (0..k).filter(|b| mask & (1 << b) != 0).map(|b| load[i * k + b]).sum();
            }
        }
        den
    }

    /// Drift with `0/0` read as a zero death term.
    fn guarded(&self, x: &[f64], dpl: &DiscretePathLoss, out: &mut [f64]) {
        let den = self.denominators(x, dpl);
        for (slot, o) in out.iter_mut().enumerate() {
            let c = slot % self.classes;
            let death = if x[slot] > 0.0 { self.inv_l[c] * self.size[c] * x[slot] / den[slot] } else { 0.0 };
            *o = self.birth[c] - death;
        }
    }
}

/// Death terms `(1/L_C)·|C|·x_{i,C}/D_{i,C}`.
pub fn death_terms(x: &FluidState, dpl: &DiscretePathLoss, profile: &ClassProfile) -> Result<Vec<f64>> {
    let layout = Layout::new(dpl, profile, 0.0);
    layout.check(&x.x)?;
    if x.x.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("the fluid dynamics are not defined at x = 0".into()));
    }
    let den = layout.denominators(&x.x, dpl);
    den.iter()
        .enumerate()
        .map(|(slot, &d)| {
            if d <= 0.0 {
                return Err(Error::DegenerateInput(alloc::format!(
                    "zero interference denominator at cell {}, class index {}",
                    slot / layout.classes,
                    slot % layout.classes
                )));
            }
            let c = slot % layout.classes;
            Ok(layout.inv_l[c] * layout.size[c] * x.x[slot] / d)
        })
        .collect()
}

/// The drift `λ·p_C·ε² − death_{i,C}` for every `(i, C)`.
pub fn fluid_drift(x: &FluidState, dpl: &DiscretePathLoss, profile: &ClassProfile, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(domain_err!("arrival rate must be finite and non-negative, got {lambda}"));
    }
    let layout = Layout::new(dpl, profile, lambda);
    Ok(death_terms(x, dpl, profile)?
        .into_iter()
        .enumerate()
        .map(|(slot, d)| layout.birth[slot % layout.classes] - d)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Local error target per step, relative to `max(1, |x|∞)`. Infinite
    /// tolerance gives fixed steps of `max_step`.
    pub tol: f64,
    /// Spacing of recorded samples; every accepted step is recorded when zero.
    pub record_every: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { initial_step: 0.01, max_step: 1.0, min_step: 1e-9, tol: 1e-10, record_every: 0.0 }
    }
}

impl StepControl {
    pub fn fixed(step: f64) -> Self {
        StepControl { initial_step: step, max_step: step, min_step: step, tol: f64::INFINITY, record_every: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.min_step > 0.0 && self.min_step <= self.initial_step && self.initial_step <= self.max_step && self.max_step.is_finite();
        if !ok || !(self.tol > 0.0) || !(self.record_every >= 0.0) {
            return Err(config_err!("invalid step control {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluidOutcome {
    Completed,
    /// The whole mass vanished at this time.
    DrainedAtTime(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Set when a step produced negative masses that were clipped to zero.
    pub clipped: bool,
    pub outcome: FluidOutcome,
    pub steps: usize,
}

impl FluidTrajectory {
    pub fn terminal(&self) -> FluidState {
        FluidState { x: self.states.last().cloned().unwrap_or_default(), time: *self.times.last().unwrap_or(&0.0) }
    }

    pub fn total_mass(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.iter().sum()).collect()
    }
}

fn rk4(layout: &Layout, dpl: &DiscretePathLoss, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let stage = |base: &[f64], k: &[f64], a: f64, out: &mut [f64]| {
        for ((o, b), d) in out.iter_mut().zip(base).zip(k) {
            *o = (b + a * d).max(0.0);
        }
    };
    layout.guarded(x, dpl, &mut k1);
    stage(x, &k1, 0.5 * h, &mut tmp);
    layout.guarded(&tmp, dpl, &mut k2);
    stage(x, &k2, 0.5 * h, &mut tmp);
    layout.guarded(&tmp, dpl, &mut k3);
    stage(x, &k3, h, &mut tmp);
    layout.guarded(&tmp, dpl, &mut k4);
    (0..n).map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect()
}

/// Classical RK4 with step doubling on `[x0.time, x0.time + horizon]`.
pub fn integrate_fluid(
    x0: &FluidState,
    horizon: f64,
    dpl: &DiscretePathLoss,
    profile: &ClassProfile,
    lambda: f64,
    control: &StepControl,
) -> Result<FluidTrajectory> {
    control.validate()?;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(domain_err!("horizon must be finite and non-negative, got {horizon}"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(domain_err!("arrival rate must be finite and non-negative, got {lambda}"));
    }
    let layout = Layout::new(dpl, profile, lambda);
    layout.check(&x0.x)?;
    if x0.x.iter().any(|&v| v <= 0.0) {
        return Err(domain_err!("the initial condition must be positive in every coordinate"));
    }
    let end = x0.time + horizon;
    let mut t = x0.time;
    let mut x = x0.x.clone();
    let mut traj = FluidTrajectory { times: vec![t], states: vec![x.clone()], clipped: false, outcome: FluidOutcome::Completed, steps: 0 };
    let mut h = control.initial_step;
    let mut next_record = t + control.record_every;
    while t < end {
        let h_try = h.min(end - t);
        let full = rk4(&layout, dpl, &x, h_try);
        let half = rk4(&layout, dpl, &x, 0.5 * h_try);
        let two = rk4(&layout, dpl, &half, 0.5 * h_try);
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let err = full.iter().zip(&two).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 15.0;
        let target = control.tol * scale;
        if err > target && h_try > control.min_step {
            h = (0.5 * h_try).max(control.min_step);
            continue;
        }
        t += h_try;
        x = two;
        traj.steps += 1;
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                traj.clipped = true;
            }
        }
        let drained = x.iter().all(|&v| v == 0.0);
        if drained || t >= end || control.record_every == 0.0 || t >= next_record {
            traj.times.push(t);
            traj.states.push(x.clone());
            if control.record_every > 0.0 {
                while next_record <= t {
                    next_record += control.record_every;
                }
            }
        }
        if drained {
            traj.outcome = FluidOutcome::DrainedAtTime(t);
            return Ok(traj);
        }
        if err < target / 32.0 {
            h = (2.0 * h_try).min(control.max_step);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub enum WitnessVerdict {
    /// Every birth rate is covered by the death rate at the witness.
    Stable { witness: Vec<f64> },
    NotCertified,
}

/// Relative slack accepted in the witness inequalities.
const WITNESS_SLACK: f64 = 1e-12;

/// Tests `λ·p_C·ε² ≤ (1/L_C)·|C|·z_{i,C}/D_{i,C}(z)` at `z_{i,C} = p_C·L_C`.
pub fn stability_witness_check(dpl: &DiscretePathLoss, profile: &ClassProfile, lambda: f64) -> Result<WitnessVerdict> {
    let cells = dpl.tessellation().cell_count();
    let z = FluidState::witness(cells, profile, 1.0);
    let support: Vec<bool> = profile.probabilities().iter().map(|&p| p > 0.0).collect();
    if !support.iter().all(|&s| s) {
        return Err(config_err!("the witness needs every class to have positive probability"));
    }
    let death = death_terms(&z, dpl, profile)?;
    let eps = dpl.tessellation().eps();
    let classes = profile.class_count();
    let ok = death.iter().enumerate().all(|(slot, &d)| {
        let birth = lambda * profile.probabilities()[slot % classes] * eps * eps;
        birth <= d * (1.0 + WITNESS_SLACK)
    });
    Ok(if ok { WitnessVerdict::Stable { witness: z.x } } else { WitnessVerdict::NotCertified })
}
