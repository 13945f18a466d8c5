//! Trajectory post-processing: ergodic densities, staying times and the
//! stability verdict.
//!
//! Confidence intervals use batch means: the window is cut into equal time
//! batches, each batch yields one observation, and the batch observations are
//! treated as independent.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain_err, Result};
use crate::math;
use crate::profile::ClassSet;
use crate::sim::{EventKind, StopReason, Trajectory, DEFAULT_POPULATION_CAP};

/// Palm-bias correction factor for simulated densities; opt-in.
pub const PALM_BIAS_PRESET: f64 = 1.28;

/// Number of batches behind every batch-means error.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub class: ClassSet,
    /// Users per unit area, bias factor included.
    pub density: f64,
    /// Batch-means standard error; `None` when the window holds too few events.
    pub std_error: Option<f64>,
    pub window: (f64, f64),
    pub bias_factor: f64,
    pub warning: Option<String>,
}

impl DensityEstimate {
    /// Two-sided interval at `confidence` with `BATCHES − 1` degrees of freedom.
    pub fn interval(&self, confidence: f64) -> Option<(f64, f64)> {
        let se = self.std_error?;
        let q = student_t_quantile(0.5 + 0.5 * confidence, BATCHES as u32 - 1);
        Some((self.density - q * se, self.density + q * se))
    }
}

/// Default window: skip the first 20% of the trajectory.
pub fn default_window(traj: &Trajectory) -> (f64, f64) {
    let span = traj.end_time - traj.start_time;
    (traj.start_time + 0.2 * span, 0.8 * span)
}

/// `∫_a^b count(t) dt` of one class on each of `n` equal batches of `[a, b]`.
fn batch_areas(traj: &Trajectory, class: usize, a: f64, b: f64, n: usize) -> Vec<f64> {
    let width = (b - a) / n as f64;
    let mut out = vec![0.0; n];
    traj.for_each_segment(|t0, t1, counts| {
        let (lo, hi) = (t0.max(a), t1.min(b));
        if hi <= lo || counts[class] == 0 {
            return;
        }
        let c = counts[class] as f64;
        let first = (((lo - a) / width) as usize).min(n - 1);
        let last = (((hi - a) / width) as usize).min(n - 1);
        for (k, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let s = (a + k as f64 * width).max(lo);
            let e = if k == n - 1 { hi } else { (a + (k + 1) as f64 * width).min(hi) };
            if e > s {
                *slot += c * (e - s);
            }
        }
    });
    out
}

/// Time-average of `Φ_C(D)/|D|` over `[start, start + length]`, times `bias_factor`.
pub fn ergodic_density(
    traj: &Trajectory,
    area: f64,
    class: ClassSet,
    start: f64,
    length: f64,
    bias_factor: f64,
) -> Result<DensityEstimate> {
    if !(area > 0.0) || !(bias_factor > 0.0) || !(length > 0.0) {
        return Err(domain_err!("density needs a positive area, window and bias factor"));
    }
    if !class.fits(traj.k) {
        return Err(domain_err!("class {:?} does not fit K={}", class, traj.k));
    }
    let end = start + length;
    let slack = 1e-12 * traj.end_time.abs().max(1.0);
    if start < traj.start_time - slack || end > traj.end_time + slack {
        return Err(domain_err!(
            "window [{start}, {end}] leaves the trajectory span [{}, {}]",
            traj.start_time,
            traj.end_time
        ));
    }
    let areas = batch_areas(traj, class.index(), start, end, BATCHES);
    let width = length / BATCHES as f64;
    let means: Vec<f64> = areas.iter().map(|a| bias_factor * a / (width * area)).collect();
    let density = means.iter().sum::<f64>() / BATCHES as f64;
    let inside = traj.events.iter().filter(|e| e.time >= start && e.time <= end).count();
    let (std_error, warning) = if inside < 2 * BATCHES {
        (None, Some(alloc::format!("only {inside} events in the window; no batch-means error")))
    } else {
        (Some(math::sqrt(sample_variance(&means) / BATCHES as f64)), None)
    };
    Ok(DensityEstimate { class, density, std_error, window: (start, end), bias_factor, warning })
}

/// Running mean sojourn of departed users of one class, against departure time.
#[derive(Debug, Clone, PartialEq)]
pub struct StayingSeries {
    pub class: ClassSet,
    pub times: Vec<f64>,
    pub running_mean: Vec<f64>,
}

/// One running-mean series per class, indexed by [`ClassSet::index`]. Classes
/// without departures get empty series.
pub fn staying_times(traj: &Trajectory) -> Vec<StayingSeries> {
    let n = traj.initial_counts.len();
    let mut out: Vec<StayingSeries> = (0..n)
        .map(|i| StayingSeries { class: ClassSet::from_index(i), times: Vec::new(), running_mean: Vec::new() })
        .collect();
    let mut sums = vec![0.0; n];
    for e in &traj.events {
        if let (EventKind::Departure, Some(w)) = (e.kind, e.staying_time) {
            let i = e.class.index();
            sums[i] += w;
            let s = &mut out[i];
            s.times.push(e.time);
            s.running_mean.push(sums[i] / (s.times.len()) as f64);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilitySettings {
    /// Two-sided level of the slope interval.
    pub confidence: f64,
    pub batches: usize,
    /// Minimum trajectory span in time units.
    pub min_span: f64,
    /// Minimum departures per batch for a batch to be used.
    pub min_per_batch: usize,
    /// A Stable verdict also needs the population to stay below this.
    pub population_cap: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        StabilitySettings {
            confidence: 0.99,
            batches: BATCHES,
            min_span: 0.0,
            min_per_batch: 5,
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// Least-squares slope of batch means against batch mid-times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub interval: (f64, f64),
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    /// Fit on all classes pooled.
    pub pooled: Option<SlopeFit>,
    /// Per-class fits, indexed by [`ClassSet::index`].
    pub per_class: Vec<Option<SlopeFit>>,
    pub per_class_verdicts: Vec<Verdict>,
    pub max_total: usize,
}

fn verdict_of(fit: Option<SlopeFit>, bounded: bool) -> Verdict {
    match fit {
        Some(f) if f.interval.0 > 0.0 => Verdict::Unstable,
        Some(f) if f.interval.0 <= 0.0 && f.interval.1 >= 0.0 && bounded => Verdict::Stable,
        _ => Verdict::Inconclusive,
    }
}

/// Regresses staying times on departure time over the second half of the
/// trajectory and reads the sign of the slope.
///
/// The departures of the second half are cut into equal time batches; the
/// mean raw staying time of each batch is regressed on the batch mid-time.
/// A growing staying time means the network cannot keep up with arrivals.
pub fn classify_stability(traj: &Trajectory, settings: &StabilitySettings) -> StabilityVerdict {
    let n = traj.initial_counts.len();
    let max_total = traj.max_total();
    let span = traj.end_time - traj.start_time;
    if traj.stop == StopReason::Explosion {
        return StabilityVerdict {
            verdict: Verdict::Unstable,
            pooled: None,
            per_class: vec![None; n],
            per_class_verdicts: vec![Verdict::Unstable; n],
            max_total,
        };
    }
    if !(span > 0.0) || span < settings.min_span || settings.batches < 3 {
        return StabilityVerdict {
            verdict: Verdict::Inconclusive,
            pooled: None,
            per_class: vec![None; n],
            per_class_verdicts: vec![Verdict::Inconclusive; n],
            max_total,
        };
    }
    let mid = traj.start_time + 0.5 * span;
    let departures: Vec<(f64, f64, usize)> = traj
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Departure && e.time >= mid)
        .filter_map(|e| e.staying_time.map(|w| (e.time, w, e.class.index())))
        .collect();
    let fit = |filter: Option<usize>| {
        slope_fit(
            departures.iter().filter(|d| filter.is_none_or(|c| d.2 == c)).map(|d| (d.0, d.1)),
            mid,
            traj.end_time,
            settings,
        )
    };
    let bounded = max_total < settings.population_cap;
    let pooled = fit(None);
    let per_class: Vec<Option<SlopeFit>> = (0..n).map(|c| fit(Some(c))).collect();
    StabilityVerdict {
        verdict: verdict_of(pooled, bounded),
        pooled,
        per_class_verdicts: per_class.iter().map(|f| verdict_of(*f, bounded)).collect(),
        per_class,
        max_total,
    }
}

fn slope_fit<I: Iterator<Item = (f64, f64)>>(points: I, a: f64, b: f64, settings: &StabilitySettings) -> Option<SlopeFit> {
    let nb = settings.batches;
    let width = (b - a) / nb as f64;
    let mut sums = vec![(0.0, 0usize); nb];
    for (t, w) in points {
        let k = (((t - a) / width) as usize).min(nb - 1);
        sums[k].0 += w;
        sums[k].1 += 1;
    }
    let pts: Vec<(f64, f64)> = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 >= settings.min_per_batch)
        .map(|(k, s)| (a + (k as f64 + 0.5) * width, s.0 / s.1 as f64))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (slope, se) = linear_regression(&pts)?;
    let q = student_t_quantile(0.5 + 0.5 * settings.confidence, pts.len() as u32 - 2);
    Some(SlopeFit { slope, interval: (slope - q * se, slope + q * se), batches: pts.len() })
}

/// Ordinary least squares slope and its standard error.
pub fn linear_regression(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 3 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let resid: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    Some((slope, math::sqrt(resid / (n - 2.0) / sxx)))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * math::erfc(-x / core::f64::consts::SQRT_2)
}

/// Student-t distribution function for integer degrees of freedom, from the
/// finite trigonometric series.
pub fn student_t_cdf(t: f64, df: u32) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    let theta = math::atan(t.abs() / math::sqrt(df as f64));
    let (s, c) = (math::sin(theta), math::cos(theta));
    let c2 = c * c;
    let a = if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = c;
            sum = term;
            let mut k = 2;
            while k + 1 < df {
                term *= c2 * k as f64 / (k + 1) as f64;
                sum += term;
                k += 2;
            }
        }
        2.0 / core::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k + 1 < df {
            term *= c2 * k as f64 / (k + 1) as f64;
            sum += term;
            k += 2;
        }
        s * sum
    };
    if t >= 0.0 { 0.5 + 0.5 * a } else { 0.5 - 0.5 * a }
}

fn invert<F: Fn(f64) -> f64>(cdf: F, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -invert(cdf, 1.0 - p);
    }
    let mut hi = 1.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_quantile(p: f64) -> f64 {
    invert(normal_cdf, p)
}

pub fn student_t_quantile(p: f64, df: u32) -> f64 {
    invert(|t| student_t_cdf(t, df), p)
}
