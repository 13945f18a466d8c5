//! Event-driven simulation of the continuous-space process and its monotone
//! coupling.
//!
//! Every step draws a fresh arrival exponential of rate `λ|D|` and a fresh
//! departure exponential of rate `R(x_i)/L_{C_i}` for every dipole, then applies
//! the earliest one. Interference is cached per dipole and updated in `O(N)`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::error::{config_err, domain_err, Error, Result};
use crate::geometry::{Point, TorusDomain};
use crate::math;
use crate::pathloss::PathLoss;
use crate::profile::{ClassProfile, ClassSet};
use crate::rng::{Stream, StreamRng};

/// Default population at which a run is declared explosive.
pub const DEFAULT_POPULATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    pub id: u64,
    pub receiver: Point,
    pub transmitter: Point,
    pub class: ClassSet,
    pub arrival_time: f64,
}

/// `Σ_{z ≠ own} |C ∩ C_z|·ℓ(d(x, z))` over the transmitters of `dipoles`.
fn interference_sum<'a>(
    x: Point,
    class: ClassSet,
    own_id: Option<u64>,
    dipoles: impl Iterator<Item = &'a Dipole>,
    dom: &TorusDomain,
    pl: &PathLoss,
) -> f64 {
    let mut acc = 0.0;
    for d in dipoles {
        if Some(d.id) == own_id {
            continue;
        }
        let ov = class.overlap(d.class);
        if ov > 0 {
            acc += ov as f64 * pl.eval(dom.distance(x, d.transmitter));
        }
    }
    acc
}

/// Live dipoles kept sorted by id, with one interference accumulator each.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    k: u8,
    dipoles: Vec<Dipole>,
    interference: Vec<f64>,
    counts: Vec<usize>,
    clock: f64,
    next_id: u64,
}

impl NetworkState {
    pub fn new(k: u8) -> Self {
        NetworkState {
            k,
            dipoles: Vec::new(),
            interference: Vec::new(),
            counts: vec![0; crate::profile::class_count(k)],
            clock: 0.0,
            next_id: 0,
        }
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.dipoles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dipoles.is_empty()
    }

    pub fn dipoles(&self) -> &[Dipole] {
        &self.dipoles
    }

    /// Cached interference seen by the receiver of the `idx`-th dipole.
    pub fn cached_interference(&self, idx: usize) -> f64 {
        self.interference[idx]
    }

    /// Per-class counts indexed by [`ClassSet::index`].
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.dipoles.binary_search_by_key(&id, |d| d.id).ok()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.position(id).is_some()
    }

    /// Next id handed out by [`NetworkState::place`].
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Adds a dipole with a fresh id at the current clock.
    pub fn place(&mut self, receiver: Point, transmitter: Point, class: ClassSet, dom: &TorusDomain, pl: &PathLoss) -> Result<u64> {
        let id = self.next_id;
        self.insert(
            Dipole { id, receiver, transmitter, class, arrival_time: self.clock },
            dom,
            pl,
        )?;
        Ok(id)
    }

    /// Inserts a dipole; ids must be increasing.
    pub fn insert(&mut self, d: Dipole, dom: &TorusDomain, pl: &PathLoss) -> Result<()> {
        if !d.class.fits(self.k) {
            return Err(domain_err!("class {:#b} does not fit K = {}", d.class.mask(), self.k));
        }
        if !(dom.contains(d.receiver) && dom.contains(d.transmitter)) {
            return Err(domain_err!("dipole outside the domain"));
        }
        if let Some(last) = self.dipoles.last() {
            if d.id <= last.id {
                return Err(domain_err!("dipole ids must increase ({} after {})", d.id, last.id));
            }
        }
        let colocated = d.receiver == d.transmitter;
        let mut own = 0.0;
        for (other, acc) in self.dipoles.iter().zip(self.interference.iter_mut()) {
            let ov = d.class.overlap(other.class);
            if ov == 0 {
                continue;
            }
            let ov = ov as f64;
            let towards_other = pl.eval(dom.distance(other.receiver, d.transmitter));
            *acc += ov * towards_other;
            own += if colocated && other.receiver == other.transmitter {
                ov * towards_other
            } else {
                ov * pl.eval(dom.distance(d.receiver, other.transmitter))
            };
        }
        self.counts[d.class.index()] += 1;
        self.next_id = d.id + 1;
        self.dipoles.push(d);
        self.interference.push(own);
        Ok(())
    }

    /// Removes the `idx`-th dipole and subtracts its contribution from the others.
    pub fn remove(&mut self, idx: usize, dom: &TorusDomain, pl: &PathLoss) -> Dipole {
        let d = self.dipoles.remove(idx);
        self.interference.remove(idx);
        self.counts[d.class.index()] -= 1;
        for (other, acc) in self.dipoles.iter().zip(self.interference.iter_mut()) {
            let ov = d.class.overlap(other.class);
            if ov > 0 {
                let v = *acc - ov as f64 * pl.eval(dom.distance(other.receiver, d.transmitter));
                *acc = if v > 0.0 { v } else { 0.0 };
            }
        }
        d
    }

    /// Interference of the `idx`-th dipole recomputed from scratch.
    pub fn exact_interference(&self, idx: usize, dom: &TorusDomain, pl: &PathLoss) -> f64 {
        let d = &self.dipoles[idx];
        interference_sum(d.receiver, d.class, Some(d.id), self.dipoles.iter(), dom, pl)
    }

    /// Largest relative deviation of the caches from a full recomputation
    /// (absolute below one unit of interference).
    pub fn audit(&self, dom: &TorusDomain, pl: &PathLoss) -> f64 {
        (0..self.len())
            .map(|i| {
                let exact = self.exact_interference(i, dom, pl);
                (self.interference[i] - exact).abs() / exact.max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Replaces all caches by exact sums; `O(N²)`.
    pub fn refresh(&mut self, dom: &TorusDomain, pl: &PathLoss) {
        for i in 0..self.len() {
            self.interference[i] = self.exact_interference(i, dom, pl);
        }
    }

    pub fn total(&self) -> usize {
        self.dipoles.len()
    }
}

/// Interference at `x` for a user of class `class`, excluding the transmitter
/// of dipole `own_id`.
pub fn interference_at(x: Point, class: ClassSet, own_id: Option<u64>, state: &NetworkState, dom: &TorusDomain, pl: &PathLoss) -> f64 {
    interference_sum(x, class, own_id, state.dipoles.iter(), dom, pl)
}

/// `|C|·ℓ(r) / (N0 + I)`.
pub fn transmission_rate(
    x: Point,
    class: ClassSet,
    own_id: Option<u64>,
    state: &NetworkState,
    dom: &TorusDomain,
    pl: &PathLoss,
    n0: f64,
) -> f64 {
    class.len() as f64 * pl.eval(dom.link_length()) / (n0 + interference_at(x, class, own_id, state, dom, pl))
}

/// Single-channel and all-channel comparison rates `(R_u, R_d)` for the
/// `idx`-th dipole: `ℓ(r)/(N0 + K·Σℓ)` and `K·ℓ(r)/(N0 + Σℓ)`.
///
/// `R_u ≤ R` always holds. `R ≤ R_d` needs every other transmitter to share
/// a band with the dipole; disjoint classes can exceed it.
pub fn comparison_rates(state: &NetworkState, idx: usize, dom: &TorusDomain, pl: &PathLoss, n0: f64) -> (f64, f64) {
    let d = &state.dipoles[idx];
    let raw: f64 = state
        .dipoles
        .iter()
        .filter(|o| o.id != d.id)
        .map(|o| pl.eval(dom.distance(d.receiver, o.transmitter)))
        .sum();
    let k = state.k as f64;
    let s = pl.eval(dom.link_length());
    (s / (n0 + k * raw), k * s / (n0 + raw))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Stop after this many events.
    Events(u64),
    /// Stop at this absolute time.
    Time(f64),
}

impl Budget {
    fn validate(&self) -> Result<()> {
        match *self {
            Budget::Events(_) => Ok(()),
            Budget::Time(t) if t.is_finite() && t >= 0.0 => Ok(()),
            Budget::Time(t) => Err(config_err!("time budget must be finite and non-negative, got {t}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dom: TorusDomain,
    pub pl: PathLoss,
    pub profile: ClassProfile,
    pub lambda: f64,
    pub n0: f64,
    pub seed: u64,
    pub budget: Budget,
    pub population_cap: usize,
}

impl SimConfig {
    pub fn new(dom: TorusDomain, pl: PathLoss, profile: ClassProfile, lambda: f64, n0: f64, seed: u64, budget: Budget) -> Result<Self> {
        let c = SimConfig { dom, pl, profile, lambda, n0, seed, budget, population_cap: DEFAULT_POPULATION_CAP };
        c.validate()?;
        Ok(c)
    }

    pub fn with_population_cap(mut self, cap: usize) -> Self {
        self.population_cap = cap;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config_err!("arrival rate must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.n0.is_finite() && self.n0 > 0.0) {
            return Err(config_err!("noise power must be positive, got {}", self.n0));
        }
        if self.population_cap == 0 {
            return Err(config_err!("population cap must be positive"));
        }
        self.budget.validate()
    }

    /// Departure rate of a user of class `c` facing interference `i`.
    #[inline]
    fn departure_rate(&self, tables: &ClassTables, c: ClassSet, i: f64) -> f64 {
        tables.signal[c.index()] / ((self.n0 + i) * tables.file_size[c.index()])
    }
}

/// `|C|·ℓ(r)` and `L_C` per class index.
#[derive(Debug, Clone)]
struct ClassTables {
    signal: Vec<f64>,
    file_size: Vec<f64>,
}

impl ClassTables {
    fn new(profile: &ClassProfile, dom: &TorusDomain, pl: &PathLoss) -> Self {
        let s = pl.eval(dom.link_length());
        ClassTables {
            signal: profile.classes().map(|c| c.len() as f64 * s).collect(),
            file_size: profile.file_sizes().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub class: ClassSet,
    pub id: u64,
    /// Total population after the event.
    pub total: usize,
    /// Set on departures.
    pub staying_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The event or time budget was used up.
    Budget,
    /// No event can happen any more (`λ = 0` and an empty network).
    Quiescent,
    /// The population reached the cap.
    Explosion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub k: u8,
    pub start_time: f64,
    pub end_time: f64,
    pub initial_counts: Vec<usize>,
    pub events: Vec<Event>,
    pub stop: StopReason,
}

impl Trajectory {
    fn start(state: &NetworkState) -> Self {
        Trajectory {
            k: state.k,
            start_time: state.clock,
            end_time: state.clock,
            initial_counts: state.counts.clone(),
            events: Vec::new(),
            stop: StopReason::Budget,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn initial_total(&self) -> usize {
        self.initial_counts.iter().sum()
    }

    pub fn arrivals(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Arrival).count()
    }

    pub fn departures(&self) -> usize {
        self.events.len() - self.arrivals()
    }

    pub fn final_total(&self) -> usize {
        self.events.last().map_or(self.initial_total(), |e| e.total)
    }

    pub fn final_counts(&self) -> Vec<usize> {
        let mut counts = self.initial_counts.clone();
        for e in &self.events {
            apply_count(&mut counts, e);
        }
        counts
    }

    pub fn max_total(&self) -> usize {
        self.events.iter().map(|e| e.total).fold(self.initial_total(), usize::max)
    }

    /// Calls `f(t0, t1, counts)` on each maximal interval of `[start, end]`
    /// with constant per-class counts.
    pub fn for_each_segment(&self, mut f: impl FnMut(f64, f64, &[usize])) {
        let mut counts = self.initial_counts.clone();
        let mut t = self.start_time;
        for e in &self.events {
            f(t, e.time, &counts);
            apply_count(&mut counts, e);
            t = e.time;
        }
        f(t, self.end_time, &counts);
    }

    /// Per-class counts right after each event.
    pub fn counts_after_events(&self) -> impl Iterator<Item = (f64, Vec<usize>)> + '_ {
        let mut counts = self.initial_counts.clone();
        self.events.iter().map(move |e| {
            apply_count(&mut counts, e);
            (e.time, counts.clone())
        })
    }

    /// `∫ count dt` per class over the whole trajectory.
    pub fn class_areas(&self) -> Vec<f64> {
        let mut area = vec![0.0; self.initial_counts.len()];
        self.for_each_segment(|a, b, c| {
            for (acc, &n) in area.iter_mut().zip(c) {
                *acc += n as f64 * (b - a);
            }
        });
        area
    }
}

fn apply_count(counts: &mut [usize], e: &Event) {
    match e.kind {
        EventKind::Arrival => counts[e.class.index()] += 1,
        EventKind::Departure => counts[e.class.index()] -= 1,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("population reached the cap of {cap} at time {time}")]
    Explosion { cap: usize, time: f64, partial: Box<Trajectory> },
}

impl SimError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SimError::Explosion { partial, .. } => Some(partial),
            SimError::Invalid(_) => None,
        }
    }
}

/// The substreams one run consumes.
#[derive(Debug, Clone)]
pub struct SimRngs {
    pub arrivals: StreamRng,
    pub departures: StreamRng,
    pub placement: StreamRng,
}

impl SimRngs {
    pub fn new(seed: u64) -> Self {
        SimRngs {
            arrivals: StreamRng::new(seed, Stream::Arrivals),
            departures: StreamRng::new(seed, Stream::Departures),
            placement: StreamRng::new(seed, Stream::Placement),
        }
    }
}

/// Draws a receiver uniformly on the torus, a class from the profile and a
/// transmitter uniformly on the circle of radius `r` around the receiver.
pub fn sample_placement(rng: &mut StreamRng, dom: &TorusDomain, profile: &ClassProfile) -> (Point, Point, ClassSet) {
    let side = dom.side();
    let rx = dom.wrap(Point::new(rng.uniform() * side, rng.uniform() * side));
    let class = profile.sample_class(rng.uniform());
    let theta = TAU * rng.uniform();
    let r = dom.link_length();
    let tx = if r == 0.0 {
        rx
    } else {
        dom.wrap(Point::new(rx.x + r * math::cos(theta), rx.y + r * math::sin(theta)))
    };
    (rx, tx, class)
}

#[derive(Debug, Clone, Copy)]
enum Choice {
    Arrival,
    Departure(usize),
}

fn sample_next(state: &NetworkState, config: &SimConfig, tables: &ClassTables, rngs: &mut SimRngs) -> Option<(f64, Choice)> {
    let mut best = rngs.arrivals.exponential(config.lambda * config.dom.area());
    let mut choice = Choice::Arrival;
    for (i, (d, &interf)) in state.dipoles.iter().zip(&state.interference).enumerate() {
        let t = rngs.departures.exponential(config.departure_rate(tables, d.class, interf));
        // strict comparison keeps the lowest id on ties
        if t < best {
            best = t;
            choice = Choice::Departure(i);
        }
    }
    best.is_finite().then_some((best, choice))
}

fn apply(state: &mut NetworkState, config: &SimConfig, rngs: &mut SimRngs, dt: f64, choice: Choice) -> Event {
    state.clock += dt;
    match choice {
        Choice::Arrival => {
            let (rx, tx, class) = sample_placement(&mut rngs.placement, &config.dom, &config.profile);
            let id = state
                .place(rx, tx, class, &config.dom, &config.pl)
                .expect("sampled dipoles are valid");
            Event { time: state.clock, kind: EventKind::Arrival, class, id, total: state.len(), staying_time: None }
        }
        Choice::Departure(i) => {
            let d = state.remove(i, &config.dom, &config.pl);
            Event {
                time: state.clock,
                kind: EventKind::Departure,
                class: d.class,
                id: d.id,
                total: state.len(),
                staying_time: Some(state.clock - d.arrival_time),
            }
        }
    }
}

/// One transition of the embedded chain; `None` when no event can occur.
pub fn step(state: &mut NetworkState, config: &SimConfig, rngs: &mut SimRngs) -> Option<Event> {
    let tables = ClassTables::new(&config.profile, &config.dom, &config.pl);
    let (dt, choice) = sample_next(state, config, &tables, rngs)?;
    Some(apply(state, config, rngs, dt, choice))
}

/// Events between two full cache refreshes, at least.
const REFRESH_EVENTS: usize = 4096;

pub fn simulate(config: &SimConfig) -> core::result::Result<Trajectory, SimError> {
    simulate_from(config, NetworkState::new(config.profile.k())).map(|(t, _)| t)
}

/// Runs from a given state and also returns the final state.
pub fn simulate_from(config: &SimConfig, mut state: NetworkState) -> core::result::Result<(Trajectory, NetworkState), SimError> {
    config.validate()?;
    if state.k != config.profile.k() {
        return Err(config_err!("state has K = {} but the profile K = {}", state.k, config.profile.k()).into());
    }
    let tables = ClassTables::new(&config.profile, &config.dom, &config.pl);
    let mut rngs = SimRngs::new(config.seed);
    let mut traj = Trajectory::start(&state);
    let mut since_refresh = 0usize;
    loop {
        if let Budget::Events(n) = config.budget {
            if traj.events.len() as u64 >= n {
                break;
            }
        }
        let Some((dt, choice)) = sample_next(&state, config, &tables, &mut rngs) else {
            traj.stop = StopReason::Quiescent;
            break;
        };
        if let Budget::Time(h) = config.budget {
            if state.clock + dt > h {
                state.clock = h;
                break;
            }
        }
        let e = apply(&mut state, config, &mut rngs, dt, choice);
        traj.events.push(e);
        since_refresh += 1;
        if since_refresh >= REFRESH_EVENTS.max(state.len()) {
            debug_assert!(state.audit(&config.dom, &config.pl) < 1e-9);
            state.refresh(&config.dom, &config.pl);
            since_refresh = 0;
        }
        if state.len() >= config.population_cap {
            traj.end_time = state.clock;
            traj.stop = StopReason::Explosion;
            return Err(SimError::Explosion { cap: config.population_cap, time: state.clock, partial: Box::new(traj) });
        }
    }
    if let Budget::Time(h) = config.budget {
        if traj.stop == StopReason::Quiescent {
            state.clock = h.max(state.clock);
        }
    }
    traj.end_time = state.clock;
    Ok((traj, state))
}

/// Output of [`coupled_simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub low: Trajectory,
    pub high: Trajectory,
    /// Number of events after which the lower configuration was not a subset
    /// of the upper one.
    pub inclusion_violations: usize,
    /// Uniformization clocks that changed neither system.
    pub idle_marks: u64,
}

/// Checks that `high` is allowed to dominate `low`: same torus, link length
/// and class probabilities, `λ ≤ λ'`, `L ≤ L'`, `N0 ≤ N0'`, `ℓ ≤ ℓ'` and
/// `ℓ'(r) ≤ ℓ(r)`.
pub fn check_comparable(low: &SimConfig, high: &SimConfig) -> Result<()> {
    low.validate()?;
    high.validate()?;
    if low.dom != high.dom {
        return Err(config_err!("coupled systems must live on the same torus with the same link length"));
    }
    if low.profile.k() != high.profile.k() || low.profile.probabilities() != high.profile.probabilities() {
        return Err(config_err!("coupled systems must share K and the class probabilities"));
    }
    if low.lambda > high.lambda {
        return Err(config_err!("arrival rates are not ordered: {} > {}", low.lambda, high.lambda));
    }
    if low.profile.file_sizes().iter().zip(high.profile.file_sizes()).any(|(a, b)| a > b) {
        return Err(config_err!("file sizes are not ordered componentwise"));
    }
    if low.n0 > high.n0 {
        return Err(config_err!("noise powers are not ordered: {} > {}", low.n0, high.n0));
    }
    if !low.pl.dominated_by(&high.pl, low.dom.diameter()) {
        return Err(config_err!("path losses are not ordered on the torus"));
    }
    let r = low.dom.link_length();
    if high.pl.eval(r) > low.pl.eval(r) {
        return Err(config_err!("the upper system has a stronger useful signal"));
    }
    Ok(())
}

/// Runs two ordered systems on common randomness.
///
/// Both systems see the same base arrivals; the upper one also receives an
/// independent top-up stream of rate `(λ'−λ)|D|`. Departures are embedded in
/// one Poisson clock of rate `M` per dipole, `M` bounding every departure
/// rate: at a tick a uniform mark `u ∈ [0, M)` removes the dipole from each
/// system whose current departure rate exceeds `u`. The budget of `high`
/// counts events of the upper system.
pub fn coupled_simulate(low: &SimConfig, high: &SimConfig, seed: u64) -> core::result::Result<CoupledRun, SimError> {
    check_comparable(low, high)?;
    let dom = &low.dom;
    let area = dom.area();
    let tl = ClassTables::new(&low.profile, dom, &low.pl);
    let th = ClassTables::new(&high.profile, dom, &high.pl);
    let bound = |c: &SimConfig, t: &ClassTables| {
        (0..t.signal.len())
            .map(|i| t.signal[i] / (c.n0 * t.file_size[i]))
            .fold(0.0, f64::max)
    };
    let m = bound(low, &tl).max(bound(high, &th));

    let mut base = StreamRng::new(seed, Stream::Arrivals);
    let mut topup = StreamRng::new(seed, Stream::ArrivalsTopUp);
    let mut ticks = StreamRng::new(seed, Stream::Departures);
    let mut place_base = StreamRng::new(seed, Stream::Placement);
    let mut place_topup = StreamRng::new(seed, Stream::PlacementTopUp);

    let k = low.profile.k();
    let mut sl = NetworkState::new(k);
    let mut sh = NetworkState::new(k);
    let mut run = CoupledRun {
        low: Trajectory::start(&sl),
        high: Trajectory::start(&sh),
        inclusion_violations: 0,
        idle_marks: 0,
    };
    let mut clock = 0.0;
    let mut next_base = base.exponential(low.lambda * area);
    let mut next_topup = topup.exponential((high.lambda - low.lambda) * area);
    let mut next_id = 0u64;
    // low dipoles missing from the upper system
    let mut low_only = 0usize;
    let mut refresh = 0usize;

    loop {
        if let Budget::Events(n) = high.budget {
            if run.high.events.len() as u64 >= n {
                break;
            }
        }
        let n_ticking = sh.len() + sl.len();
        let next_tick = clock + ticks.exponential(m * n_ticking as f64);
        let t = next_base.min(next_topup).min(next_tick);
        if !t.is_finite() {
            run.high.stop = StopReason::Quiescent;
            run.low.stop = StopReason::Quiescent;
            break;
        }
        if let Budget::Time(h) = high.budget {
            if t > h {
                clock = h;
                break;
            }
        }
        clock = t;
        sl.clock = clock;
        sh.clock = clock;
        let changed;
        if t == next_base {
            let (rx, tx, class) = sample_placement(&mut place_base, dom, &low.profile);
            let d = Dipole { id: next_id, receiver: rx, transmitter: tx, class, arrival_time: clock };
            next_id += 1;
            sl.insert(d, dom, &low.pl)?;
            sh.insert(d, dom, &high.pl)?;
            run.low.events.push(arrival_event(&d, sl.len()));
            run.high.events.push(arrival_event(&d, sh.len()));
            next_base = clock + base.exponential(low.lambda * area);
            changed = true;
        } else if t == next_topup {
            let (rx, tx, class) = sample_placement(&mut place_topup, dom, &high.profile);
            let d = Dipole { id: next_id, receiver: rx, transmitter: tx, class, arrival_time: clock };
            next_id += 1;
            sh.insert(d, dom, &high.pl)?;
            run.high.events.push(arrival_event(&d, sh.len()));
            next_topup = clock + topup.exponential((high.lambda - low.lambda) * area);
            changed = true;
        } else {
            // ticks on slots [0, |high|) address upper dipoles, the remaining
            // slots the lower dipoles that the upper system lacks
            let slot = ticks.below(n_ticking);
            let u = ticks.uniform() * m;
            let (id, in_high) = if slot < sh.len() {
                (sh.dipoles[slot].id, true)
            } else {
                let d = &sl.dipoles[slot - sh.len()];
                (d.id, sh.contains(d.id))
            };
            if slot >= sh.len() && in_high {
                run.idle_marks += 1;
                continue;
            }
            let pos_low = sl.position(id);
            let pos_high = if in_high { sh.position(id) } else { None };
            let kill_low = pos_low.is_some_and(|i| u < low.departure_rate(&tl, sl.dipoles[i].class, sl.interference[i]));
            let kill_high = pos_high.is_some_and(|i| u < high.departure_rate(&th, sh.dipoles[i].class, sh.interference[i]));
            if kill_low {
                let d = sl.remove(pos_low.unwrap(), dom, &low.pl);
                run.low.events.push(departure_event(&d, clock, sl.len()));
                if !in_high {
                    low_only -= 1;
                }
            }
            if kill_high {
                let d = sh.remove(pos_high.unwrap(), dom, &high.pl);
                run.high.events.push(departure_event(&d, clock, sh.len()));
                if pos_low.is_some() && !kill_low {
                    low_only += 1;
                }
            }
            changed = kill_low || kill_high;
            if !changed {
                run.idle_marks += 1;
            }
        }
        if changed {
            if low_only > 0 {
                run.inclusion_violations += 1;
            }
            refresh += 1;
            if refresh >= REFRESH_EVENTS.max(sh.len()) {
                sl.refresh(dom, &low.pl);
                sh.refresh(dom, &high.pl);
                refresh = 0;
            }
            if sh.len() >= high.population_cap {
                run.high.stop = StopReason::Explosion;
                run.low.end_time = clock;
                run.high.end_time = clock;
                return Err(SimError::Explosion { cap: high.population_cap, time: clock, partial: Box::new(run.high) });
            }
        }
    }
    run.low.end_time = clock;
    run.high.end_time = clock;
    Ok(run)
}

fn arrival_event(d: &Dipole, total: usize) -> Event {
    Event { time: d.arrival_time, kind: EventKind::Arrival, class: d.class, id: d.id, total, staying_time: None }
}

fn departure_event(d: &Dipole, time: f64, total: usize) -> Event {
    Event { time, kind: EventKind::Departure, class: d.class, id: d.id, total, staying_time: Some(time - d.arrival_time) }
}

/// Whether the ids of `low` are a subset of those of `high` (both sorted).
pub fn is_included(low: &NetworkState, high: &NetworkState) -> bool {
    let mut it = high.dipoles.iter().map(|d| d.id);
    low.dipoles.iter().all(|d| it.by_ref().any(|h| h == d.id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(r: f64) -> TorusDomain {
        TorusDomain::new(10.0, r).unwrap()
    }

    fn pl() -> PathLoss {
        PathLoss::power_law(4.0).unwrap()
    }

    fn cls(b: &[u8]) -> ClassSet {
        ClassSet::from_bands(b).unwrap()
    }

    #[test]
    fn interference_examples() {
        let (dom, pl) = (dom(0.0), pl());
        let mut s = NetworkState::new(2);
        let x = Point::new(1.0, 1.0);
        assert_eq!(interference_at(x, cls(&[1]), None, &s, &dom, &pl), 0.0);
        let z = Point::new(9.5, 1.0);
        s.place(z, z, cls(&[2]), &dom, &pl).unwrap();
        assert_eq!(interference_at(x, cls(&[1]), None, &s, &dom, &pl), 0.0);
        let mut s = NetworkState::new(2);
        s.place(z, z, cls(&[1, 2]), &dom, &pl).unwrap();
        let d = 1.5;
        assert!((interference_at(x, cls(&[1]), None, &s, &dom, &pl) - pl.eval(d)).abs() < 1e-15);
        // own transmitter excluded
        assert_eq!(interference_at(z, cls(&[1]), Some(0), &s, &dom, &pl), 0.0);
    }

    #[test]
    fn rate_examples() {
        let (pl, n0) = (pl(), 0.3);
        let d0 = dom(0.0);
        let mut s = NetworkState::new(2);
        let x = Point::new(2.0, 3.0);
        s.place(x, x, cls(&[1]), &d0, &pl).unwrap();
        assert_eq!(transmission_rate(x, cls(&[1]), Some(0), &s, &d0, &pl, n0), 1.0 / n0);
        let d1 = dom(0.5);
        let tx = Point::new(2.5, 3.0);
        let mut s = NetworkState::new(2);
        s.place(x, tx, cls(&[1, 2]), &d1, &pl).unwrap();
        let r2 = transmission_rate(x, cls(&[1, 2]), Some(0), &s, &d1, &pl, n0);
        assert!((r2 - 2.0 * pl.eval(0.5) / n0).abs() < 1e-15);
        s.place(Point::new(7.0, 7.0), Point::new(7.5, 7.0), cls(&[2]), &d1, &pl).unwrap();
        assert!(transmission_rate(x, cls(&[1, 2]), Some(0), &s, &d1, &pl, n0) < r2);
    }

    #[test]
    fn upper_comparison_rate_fails_for_disjoint_bands() {
        let (dom, pl, n0) = (dom(0.0), pl(), 0.1);
        let mut s = NetworkState::new(2);
        let x = Point::new(1.0, 1.0);
        s.place(x, x, cls(&[1]), &dom, &pl).unwrap();
        s.place(x, x, cls(&[2]), &dom, &pl).unwrap();
        let r = transmission_rate(x, cls(&[1]), Some(0), &s, &dom, &pl, n0);
        let (ru, rd) = comparison_rates(&s, 0, &dom, &pl, n0);
        assert!(ru <= r);
        assert!(r > rd, "R = {r}, R_d = {rd}");
    }

    #[test]
    fn insert_and_remove_keep_caches_exact() {
        let (dom, pl) = (dom(0.7), pl());
        let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        let mut rng = StreamRng::new(5, Stream::Placement);
        let mut s = NetworkState::new(2);
        for step in 0..400 {
            if step % 3 == 2 {
                let i = rng.below(s.len());
                s.remove(i, &dom, &pl);
            } else {
                let (rx, tx, c) = sample_placement(&mut rng, &dom, &profile);
                assert!((dom.distance(rx, tx) - 0.7).abs() < 1e-12);
                s.place(rx, tx, c, &dom, &pl).unwrap();
            }
        }
        assert!(s.audit(&dom, &pl) < 1e-12);
        assert_eq!(s.counts().iter().sum::<usize>(), s.len());
    }

    #[test]
    fn insert_rejects_bad_input() {
        let (dom, pl) = (dom(0.0), pl());
        let mut s = NetworkState::new(1);
        let x = Point::new(1.0, 1.0);
        assert!(s.place(x, x, cls(&[2]), &dom, &pl).is_err());
        assert!(s.place(Point::new(11.0, 1.0), x, cls(&[1]), &dom, &pl).is_err());
    }

    #[test]
    fn quiescent_and_deterministic() {
        let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        let c = SimConfig::new(dom(0.0), pl(), profile, 0.0, 0.5, 1, Budget::Events(100)).unwrap();
        let t = simulate(&c).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.stop, StopReason::Quiescent);
        let c = c.with_lambda(0.8);
        assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
        assert_ne!(simulate(&c).unwrap(), simulate(&c.clone().with_seed(2)).unwrap());
    }

    #[test]
    fn time_budget_stops_at_horizon() {
        let profile = ClassProfile::new(1, vec![1.0], vec![1.0]).unwrap();
        let c = SimConfig::new(dom(0.0), pl(), profile, 0.2, 0.5, 3, Budget::Time(4.0)).unwrap();
        let t = simulate(&c).unwrap();
        assert_eq!(t.end_time, 4.0);
        assert!(t.events.iter().all(|e| e.time <= 4.0));
        assert!(t.events.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn explosion_returns_partial_trajectory() {
        let profile = ClassProfile::new(1, vec![1.0], vec![1.0]).unwrap();
        let c = SimConfig::new(dom(0.0), pl(), profile, 5.0, 0.5, 3, Budget::Events(10_000))
            .unwrap()
            .with_population_cap(50);
        let err = simulate(&c).unwrap_err();
        let partial = err.partial().unwrap();
        assert_eq!(partial.final_total(), 50);
        assert_eq!(partial.stop, StopReason::Explosion);
    }

    #[test]
    fn invalid_configs() {
        let profile = ClassProfile::new(1, vec![1.0], vec![1.0]).unwrap();
        assert!(SimConfig::new(dom(0.0), pl(), profile.clone(), -1.0, 0.5, 0, Budget::Events(1)).is_err());
        assert!(SimConfig::new(dom(0.0), pl(), profile.clone(), 1.0, 0.0, 0, Budget::Events(1)).is_err());
        assert!(SimConfig::new(dom(0.0), pl(), profile, 1.0, 0.5, 0, Budget::Time(f64::INFINITY)).is_err());
    }

    #[test]
    fn incomparable_couplings_are_rejected() {
        let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        let low = SimConfig::new(dom(0.0), pl(), profile.clone(), 1.0, 0.5, 0, Budget::Events(10)).unwrap();
        assert!(coupled_simulate(&low.clone().with_lambda(2.0), &low, 0).is_err());
        let smaller = SimConfig { profile: profile.scale_file_sizes(0.5).unwrap(), ..low.clone() };
        assert!(coupled_simulate(&low, &smaller, 0).is_err());
        let weaker = SimConfig { pl: PathLoss::power_law(5.0).unwrap(), ..low.clone() };
        assert!(coupled_simulate(&low, &weaker, 0).is_err());
        let other_p = SimConfig { profile: ClassProfile::new(2, vec![0.5, 0.3, 0.2], vec![1.0, 1.0, 2.0]).unwrap(), ..low.clone() };
        assert!(coupled_simulate(&low, &other_p, 0).is_err());
        let quieter = SimConfig { n0: 0.1, ..low.clone() };
        assert!(coupled_simulate(&low, &quieter, 0).is_err());
    }

    #[test]
    fn identical_coupling_is_trivial() {
        let profile = ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap();
        let c = SimConfig::new(dom(0.0), pl(), profile, 1.0, 0.5, 0, Budget::Events(2000)).unwrap();
        let run = coupled_simulate(&c, &c, 11).unwrap();
        assert_eq!(run.inclusion_violations, 0);
        assert_eq!(run.low.events, run.high.events);
        assert_eq!(run.high.len(), 2000);
    }
}
