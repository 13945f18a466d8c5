//! Tessellated bounding chains.
//!
//! The torus is cut into `N_ε = (side/ε)²` square cells with centers
//! `a_i = (mε, nε)`, so the origin sits at the center of its cell. Users of a
//! cell interact through a translation-invariant kernel built from perturbed
//! centers `𝒱_i = {a_i, a_i ± εe₁, a_i ± εe₂}`: the upper kernel takes the
//! largest path loss over `𝒱_i × 𝒱_j`, the lower one the smallest. The chain
//! with the upper kernel dominates the continuous process, the one with the
//! lower kernel is dominated by it.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, domain_err, Error, Result};
use crate::geometry::{Point, TorusDomain};
use crate::math;
use crate::pathloss::PathLoss;
use crate::profile::{ClassProfile, ClassSet};
use crate::rng::{Stream, StreamRng};
use crate::sim::{Budget, EventKind, StopReason, DEFAULT_POPULATION_CAP};
use crate::stability::{load_factor, CriticalRate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tessellation {
    dom: TorusDomain,
    eps: f64,
    per_side: usize,
}

impl Tessellation {
    /// `side/eps` must be a positive integer; the lattice chains model
    /// colocated dipoles, so the link length must be zero.
    pub fn new(dom: TorusDomain, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(domain_err!("cell side must be positive, got {eps}"));
        }
        let ratio = dom.side() / eps;
        let n = math::round(ratio);
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(domain_err!("side/eps must be a positive integer, got {ratio}"));
        }
        if dom.link_length() != 0.0 {
            return Err(config_err!("lattice chains need colocated dipoles (r = 0)"));
        }
        Ok(Tessellation { dom, eps, per_side: n as usize })
    }

    pub fn dom(&self) -> &TorusDomain {
        &self.dom
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn per_side(&self) -> usize {
        self.per_side
    }

    /// `N_ε`.
    pub fn cell_count(&self) -> usize {
        self.per_side * self.per_side
    }

    /// Cell `i = row·per_side + col` has center `(col·ε, row·ε)`.
    pub fn center(&self, i: usize) -> Point {
        let (row, col) = (i / self.per_side, i % self.per_side);
        Point::new(col as f64 * self.eps, row as f64 * self.eps)
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.cell_count()).map(|i| self.center(i)).collect()
    }

    /// Cell holding `p`.
    pub fn cell_of(&self, p: Point) -> usize {
        let p = self.dom.wrap(p);
        let n = self.per_side;
        let idx = |v: f64| (math::floor(v / self.eps + 0.5) as usize) % n;
        idx(p.y) * n + idx(p.x)
    }

    /// Offset index of cell `k` seen from cell `i`.
    #[inline]
    fn offset(&self, k: usize, i: usize) -> usize {
        let n = self.per_side;
        let (rk, ck, ri, ci) = (k / n, k % n, i / n, i % n);
        ((rk + n - ri) % n) * n + (ck + n - ci) % n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// `ℓ^ε`: largest path loss over perturbed centers.
    Upper,
    /// `ℓ_ε`: smallest path loss over perturbed centers.
    Lower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePathLoss {
    tess: Tessellation,
    mode: KernelMode,
    /// Gains indexed by cell offset.
    kernel: Vec<f64>,
}

/// Builds the kernel over the 5×5 perturbed center pairs of every offset.
pub fn build_discrete_pathloss(tess: &Tessellation, pl: &PathLoss, mode: KernelMode) -> DiscretePathLoss {
    let e = tess.eps;
    let moves = [(0.0, 0.0), (e, 0.0), (-e, 0.0), (0.0, e), (0.0, -e)];
    let origin = Point::ORIGIN;
    let kernel = (0..tess.cell_count())
        .map(|off| {
            let a = tess.center(off);
            let mut best = match mode {
                KernelMode::Upper => f64::NEG_INFINITY,
                KernelMode::Lower => f64::INFINITY,
            };
            for (dx1, dy1) in moves {
                for (dx2, dy2) in moves {
                    let b = tess.dom.wrap(Point::new(a.x + dx2 - dx1, a.y + dy2 - dy1));
                    let g = pl.eval(tess.dom.distance(origin, b));
                    best = match mode {
                        KernelMode::Upper => best.max(g),
                        KernelMode::Lower => best.min(g),
                    };
                }
            }
            best
        })
        .collect();
    DiscretePathLoss { tess: *tess, mode, kernel }
}

impl DiscretePathLoss {
    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    /// Gain from cell `k` to cell `i`.
    #[inline]
    pub fn kernel(&self, k: usize, i: usize) -> f64 {
        self.kernel[self.tess.offset(k, i)]
    }

    /// Gains by offset; entry `o` is the gain between cell 0 and cell `o`.
    pub fn by_offset(&self) -> &[f64] {
        &self.kernel
    }

    /// Common row sum `Σ_k kernel(k, i)`.
    pub fn row_sum(&self) -> f64 {
        self.kernel.iter().sum()
    }

    /// `Σ_k kernel(k, i)` for one given row, summed over `k` in index order.
    pub fn row_sum_of(&self, i: usize) -> f64 {
        (0..self.tess.cell_count()).map(|k| self.kernel(k, i)).sum()
    }

    /// `ε²·row_sum`, the discretized `⟨ℓ_D⟩`.
    pub fn mean_pathloss(&self) -> f64 {
        self.tess.eps * self.tess.eps * self.row_sum()
    }
}

/// `K/(⟨ℓ_ε⟩·𝔏)` for the given kernel: the domination threshold `λ̄_ε` for
/// the upper kernel and the transience threshold `λ̲_ε` for the lower one.
pub fn lattice_threshold(dpl: &DiscretePathLoss, profile: &ClassProfile) -> CriticalRate {
    let mean = dpl.mean_pathloss();
    CriticalRate {
        value: profile.k() as f64 / (mean * load_factor(profile)),
        mean_pathloss: mean,
        non_symmetric_warning: !profile.is_symmetric(),
    }
}

/// `λ̲_ε = K/(⟨ℓ_ε,D⟩·𝔏)`: above it the dominated chain is transient.
pub fn transience_threshold(tess: &Tessellation, pl: &PathLoss, profile: &ClassProfile) -> CriticalRate {
    lattice_threshold(&build_discrete_pathloss(tess, pl, KernelMode::Lower), profile)
}

/// Occupation numbers `X_{i,C}` stored row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    cells: usize,
    classes: usize,
    counts: Vec<u32>,
    pub clock: f64,
}

impl LatticeState {
    pub fn new(cells: usize, k: u8) -> Self {
        let classes = crate::profile::class_count(k);
        LatticeState { cells, classes, counts: vec![0; cells * classes], clock: 0.0 }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, i: usize, c: ClassSet) -> u32 {
        self.counts[i * self.classes + c.index()]
    }

    pub fn set(&mut self, i: usize, c: ClassSet, n: u32) {
        self.counts[i * self.classes + c.index()] = n;
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&n| n as u64).sum()
    }

    /// Population of each cell.
    pub fn cell_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().map(|&n| n as u64).sum()).collect()
    }
}

/// `|C| / (N0 + Σ_{k,U} |C∩U|·κ(k,i)·(X_{k,U} − [k=i, U=C]))`.
pub fn lattice_rate(state: &LatticeState, i: usize, c: ClassSet, dpl: &DiscretePathLoss, n0: f64) -> f64 {
    let mut interf = 0.0;
    for k in 0..state.cells {
        let g = dpl.kernel(k, i);
        for u in 0..state.classes {
            let u = ClassSet::from_index(u);
            let mut n = state.get(k, u) as f64;
            if k == i && u == c {
                n -= 1.0;
            }
            if n != 0.0 {
                interf += c.overlap(u) as f64 * g * n;
            }
        }
    }
    c.len() as f64 / (n0 + interf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeEvent {
    pub time: f64,
    pub kind: EventKind,
    pub cell: usize,
    pub class: ClassSet,
    /// Total population after the event.
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeTrajectory {
    pub start_time: f64,
    pub end_time: f64,
    pub initial_total: u64,
    pub events: Vec<LatticeEvent>,
    pub stop: StopReason,
}

impl LatticeTrajectory {
    pub fn final_total(&self) -> u64 {
        self.events.last().map_or(self.initial_total, |e| e.total)
    }

    /// Time average of the total population.
    pub fn mean_total(&self) -> f64 {
        let mut area = 0.0;
        let (mut t, mut n) = (self.start_time, self.initial_total as f64);
        for e in &self.events {
            area += n * (e.time - t);
            t = e.time;
            n = e.total as f64;
        }
        area += n * (self.end_time - t);
        area / (self.end_time - self.start_time)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LatticeError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("lattice population reached the cap of {cap} at time {time}")]
    Explosion { cap: u64, time: f64, partial: Box<LatticeTrajectory> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    pub lambda: f64,
    pub n0: f64,
    pub seed: u64,
    pub budget: Budget,
    pub population_cap: u64,
}

impl LatticeConfig {
    pub fn new(lambda: f64, n0: f64, seed: u64, budget: Budget) -> Result<Self> {
        let c = LatticeConfig { lambda, n0, seed, budget, population_cap: DEFAULT_POPULATION_CAP as u64 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config_err!("arrival rate must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.n0.is_finite() && self.n0 > 0.0) {
            return Err(config_err!("noise power must be positive, got {}", self.n0));
        }
        if let Budget::Time(t) = self.budget {
            if !(t.is_finite() && t >= 0.0) {
                return Err(config_err!("time budget must be finite and non-negative, got {t}"));
            }
        }
        Ok(())
    }
}

/// Band loads `B_{i,b} = Σ_k κ(k,i)·Σ_{U∋b} X_{k,U}` kept in step with the
/// state, so the interference of `(i, C)` is `Σ_{b∈C} B_{i,b} − |C|·κ(i,i)`.
#[derive(Debug, Clone)]
struct BandLoads {
    k: usize,
    loads: Vec<f64>,
}

impl BandLoads {
    fn new(state: &LatticeState, dpl: &DiscretePathLoss, k: u8) -> Self {
        let mut b = BandLoads { k: k as usize, loads: vec![0.0; state.cells * k as usize] };
        for cell in 0..state.cells {
            for u in 0..state.classes {
                let n = state.counts[cell * state.classes + u];
                if n > 0 {
                    b.add(cell, ClassSet::from_index(u), n as f64, dpl);
                }
            }
        }
        b
    }

    fn add(&mut self, cell: usize, u: ClassSet, n: f64, dpl: &DiscretePathLoss) {
        let bands = u.mask();
        for i in 0..dpl.tess.cell_count() {
            let g = n * dpl.kernel(cell, i);
            let row = &mut self.loads[i * self.k..(i + 1) * self.k];
            for (b, load) in row.iter_mut().enumerate() {
                if bands & (1 << b) != 0 {
                    *load += g;
                }
            }
        }
    }

    fn interference(&self, i: usize, c: ClassSet, self_gain: f64) -> f64 {
        let bands = c.mask();
        let row = &self.loads[i * self.k..(i + 1) * self.k];
        let s: f64 = row.iter().enumerate().filter(|(b, _)| bands & (1 << b) != 0).map(|(_, v)| v).sum();
        (s - c.len() as f64 * self_gain).max(0.0)
    }
}

/// Gillespie simulation of the lattice chain with kernel `dpl`.
///
/// Arrivals hit each cell-class pair at rate `λ·p_C·ε²`; the pair `(i, C)`
/// loses a user at rate `X_{i,C}·rate/L_C`.
pub fn lattice_simulate(
    dpl: &DiscretePathLoss,
    profile: &ClassProfile,
    config: &LatticeConfig,
    initial: Option<LatticeState>,
) -> core::result::Result<(LatticeTrajectory, LatticeState), LatticeError> {
    config.validate()?;
    let tess = dpl.tess;
    let cells = tess.cell_count();
    let mut state = initial.unwrap_or_else(|| LatticeState::new(cells, profile.k()));
    if state.cells != cells || state.classes != profile.class_count() {
        return Err(config_err!("lattice state does not match the tessellation and profile").into());
    }
    let mut loads = BandLoads::new(&state, dpl, profile.k());
    let self_gain = dpl.kernel(0, 0);
    let birth = config.lambda * tess.dom.area();
    let mut clock_rng = StreamRng::new(config.seed, Stream::Departures);
    let mut place_rng = StreamRng::new(config.seed, Stream::Placement);
    let mut traj = LatticeTrajectory {
        start_time: state.clock,
        end_time: state.clock,
        initial_total: state.total(),
        events: Vec::new(),
        stop: StopReason::Budget,
    };
    let mut total = state.total();
    let mut rates = vec![0.0; state.counts.len()];
    let mut since_refresh = 0usize;
    loop {
        if let Budget::Events(n) = config.budget {
            if traj.events.len() as u64 >= n {
                break;
            }
        }
        let mut death = 0.0;
        for (slot, rate) in rates.iter_mut().enumerate() {
            let n = state.counts[slot];
            *rate = if n == 0 {
                0.0
            } else {
                let (i, c) = (slot / state.classes, ClassSet::from_index(slot % state.classes));
                n as f64 * c.len() as f64 / ((config.n0 + loads.interference(i, c, self_gain)) * profile.l(c))
            };
            death += *rate;
        }
        let dt = clock_rng.exponential(birth + death);
        if !dt.is_finite() {
            traj.stop = StopReason::Quiescent;
            if let Budget::Time(h) = config.budget {
                state.clock = state.clock.max(h);
            }
            break;
        }
        if let Budget::Time(h) = config.budget {
            if state.clock + dt > h {
                state.clock = h;
                break;
            }
        }
        state.clock += dt;
        let u = clock_rng.uniform() * (birth + death);
        let event = if u < birth {
            let cell = place_rng.below(cells);
            let class = profile.sample_class(place_rng.uniform());
            state.counts[cell * state.classes + class.index()] += 1;
            loads.add(cell, class, 1.0, dpl);
            total += 1;
            LatticeEvent { time: state.clock, kind: EventKind::Arrival, cell, class, total }
        } else {
            let mut rest = u - birth;
            let mut slot = rates.iter().rposition(|&r| r > 0.0).expect("positive death rate");
            for (s, &r) in rates.iter().enumerate() {
                if rest < r {
                    slot = s;
                    break;
                }
                rest -= r;
            }
            let (cell, class) = (slot / state.classes, ClassSet::from_index(slot % state.classes));
            state.counts[slot] -= 1;
            loads.add(cell, class, -1.0, dpl);
            total -= 1;
            LatticeEvent { time: state.clock, kind: EventKind::Departure, cell, class, total }
        };
        traj.events.push(event);
        since_refresh += 1;
        if since_refresh >= 4096 {
            loads = BandLoads::new(&state, dpl, profile.k());
            since_refresh = 0;
        }
        if total >= config.population_cap {
            traj.end_time = state.clock;
            traj.stop = StopReason::Explosion;
            return Err(LatticeError::Explosion { cap: config.population_cap, time: state.clock, partial: Box::new(traj) });
        }
    }
    traj.end_time = state.clock;
    Ok((traj, state))
}

/// `r_{i,C}(x) = |C|·x_{i,C} / (p_C·L_C·ε²·Σ_{k,U} κ(k,i)·|C∩U|·x_{k,U})`, with
/// `x` laid out like [`LatticeState::counts`].
pub fn r_score(x: &[f64], i: usize, c: ClassSet, dpl: &DiscretePathLoss, profile: &ClassProfile) -> Result<f64> {
    let cells = dpl.tess.cell_count();
    let classes = profile.class_count();
    if x.len() != cells * classes {
        return Err(domain_err!("state has {} entries, expected {}", x.len(), cells * classes));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(domain_err!("state entries must be finite and non-negative"));
    }
    let mut den = 0.0;
    for k in 0..cells {
        let g = dpl.kernel(k, i);
        for u in 0..classes {
            let v = x[k * classes + u];
            if v > 0.0 {
                den += g * c.overlap(ClassSet::from_index(u)) as f64 * v;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::DegenerateInput(alloc::format!("zero interference denominator for cell {i}")));
    }
    let eps = dpl.tess.eps;
    Ok(c.len() as f64 * x[i * classes + c.index()] / (profile.p(c) * profile.l(c) * eps * eps * den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tess(eps: f64) -> Tessellation {
        Tessellation::new(TorusDomain::new(10.0, 0.0).unwrap(), eps).unwrap()
    }

    #[test]
    fn tessellation_validation_and_layout() {
        let dom = TorusDomain::new(10.0, 0.0).unwrap();
        assert!(Tessellation::new(dom, 3.0).is_err());
        assert!(Tessellation::new(dom, 0.0).is_err());
        assert!(Tessellation::new(TorusDomain::new(10.0, 0.5).unwrap(), 1.0).is_err());
        let t = tess(0.5);
        assert_eq!(t.cell_count(), 400);
        assert_eq!(t.center(0), Point::ORIGIN);
        assert_eq!(t.cell_of(Point::new(0.2, 9.9)), 0);
        for i in [0, 7, 21, 399] {
            assert_eq!(t.cell_of(t.center(i)), i);
        }
    }

    #[test]
    fn self_entries() {
        let t = tess(1.0);
        let pl = PathLoss::power_law(4.0).unwrap();
        let up = build_discrete_pathloss(&t, &pl, KernelMode::Upper);
        let lo = build_discrete_pathloss(&t, &pl, KernelMode::Lower);
        assert_eq!(up.kernel(3, 3), 1.0);
        assert_eq!(lo.kernel(3, 3), pl.eval(2.0));
        // one cell to the right: closest pair 0 apart, farthest 3ε apart
        assert_eq!(up.kernel(1, 0), 1.0);
        assert_eq!(lo.kernel(1, 0), pl.eval(3.0));
    }

    #[test]
    fn kernels_sandwich_centers_and_share_row_sums() {
        let t = tess(2.0);
        let pl = PathLoss::power_law(4.0).unwrap();
        let up = build_discrete_pathloss(&t, &pl, KernelMode::Upper);
        let lo = build_discrete_pathloss(&t, &pl, KernelMode::Lower);
        for i in 0..t.cell_count() {
            for k in 0..t.cell_count() {
                let g = pl.eval(t.dom().distance(t.center(i), t.center(k)));
                assert!(lo.kernel(k, i) <= g && g <= up.kernel(k, i));
                assert_eq!(up.kernel(k, i), up.kernel(i, k));
            }
            assert!((up.row_sum_of(i) - up.row_sum()).abs() <= 1e-12 * up.row_sum());
            assert!((lo.row_sum_of(i) - lo.row_sum()).abs() <= 1e-12 * lo.row_sum());
        }
    }

    #[test]
    fn lattice_rate_examples() {
        let t = tess(5.0);
        let pl = PathLoss::power_law(4.0).unwrap();
        let dpl = build_discrete_pathloss(&t, &pl, KernelMode::Upper);
        let c = ClassSet::from_bands(&[1, 2]).unwrap();
        let mut s = LatticeState::new(4, 2);
        s.set(2, c, 1);
        assert_eq!(lattice_rate(&s, 2, c, &dpl, 0.3), 2.0 / 0.3);
        s.set(2, c, 2);
        assert_eq!(lattice_rate(&s, 2, c, &dpl, 0.3), 2.0 / (0.3 + 2.0 * dpl.kernel(2, 2)));
    }

    #[test]
    fn band_loads_match_direct_sum() {
        let t = tess(5.0);
        let pl = PathLoss::power_law(4.0).unwrap();
        let dpl = build_discrete_pathloss(&t, &pl, KernelMode::Lower);
        let mut s = LatticeState::new(4, 2);
        let mut rng = StreamRng::new(2, Stream::Placement);
        for slot in 0..12 {
            s.counts[slot] = rng.below(4) as u32;
        }
        let loads = BandLoads::new(&s, &dpl, 2);
        for i in 0..4 {
            for c in crate::profile::all_classes(2) {
                if s.get(i, c) == 0 {
                    continue;
                }
                let direct = c.len() as f64 / lattice_rate(&s, i, c, &dpl, 1.0) - 1.0;
                assert!((loads.interference(i, c, dpl.kernel(0, 0)) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn r_score_degenerate_and_counterexample() {
        let t = tess(2.0);
        let pl = PathLoss::power_law(4.0).unwrap();
        let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        let c1 = ClassSet::from_bands(&[1]).unwrap();
        let n = t.cell_count() * 3;
        assert!(matches!(r_score(&vec![0.0; n], 0, c1, &build_discrete_pathloss(&t, &pl, KernelMode::Lower), &profile), Err(Error::DegenerateInput(_))));
        let base = 1.0 / (0.4 * 1.0 * 4.0);
        for mode in [KernelMode::Upper, KernelMode::Lower] {
            let dpl = build_discrete_pathloss(&t, &pl, mode);
            let (k00, k01) = (dpl.kernel(0, 0), dpl.kernel(1, 0));
            for m in [1.0, 1e3, 1e9] {
                let mut x = vec![0.0; n];
                x[c1.index()] = 1.0 / m;
                let rx = r_score(&x, 0, c1, &dpl, &profile).unwrap();
                x[3 + c1.index()] = 1.0 / m;
                let ry = r_score(&x, 0, c1, &dpl, &profile).unwrap();
                assert!((rx - base / k00).abs() < 1e-12 * rx);
                assert!((ry - base / (k00 + k01)).abs() < 1e-12 * ry);
            }
            if mode == KernelMode::Upper {
                assert_eq!(k00, 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn r_score_is_zero_homogeneous(xs in proptest::collection::vec(0.01..5.0f64, 75), scale in 1e-6..1e6f64, i in 0usize..25, ci in 0usize..3) {
            let t = tess(2.0);
            let pl = PathLoss::power_law(4.0).unwrap();
            let dpl = build_discrete_pathloss(&t, &pl, KernelMode::Lower);
            let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
            let c = ClassSet::from_index(ci);
            let a = r_score(&xs, i, c, &dpl, &profile).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|v| v * scale).collect();
            let b = r_score(&scaled, i, c, &dpl, &profile).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }
}
