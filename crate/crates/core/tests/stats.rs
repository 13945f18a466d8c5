use sbdnet_core::quadrature::QuadratureSettings;
use sbdnet_core::sim::{simulate, Budget, EventKind, SimConfig, Trajectory};
use sbdnet_core::stability::critical_rate;
use sbdnet_core::stats::*;
use sbdnet_core::*;

const N0: f64 = 0.1;

fn reference() -> (TorusDomain, PathLoss, ClassProfile) {
    (
        TorusDomain::new(10.0, 0.0).unwrap(),
        PathLoss::power_law(4.0).unwrap(),
        ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap(),
    )
}

fn run(rel: f64, seed: u64, events: u64) -> (Trajectory, f64) {
    let (dom, pl, profile) = reference();
    let lc = critical_rate(&profile, &dom, &pl, &QuadratureSettings::default()).unwrap().value;
    let cfg = SimConfig::new(dom, pl, profile, rel * lc, N0, seed, Budget::Events(events)).unwrap();
    (simulate(&cfg).unwrap(), rel * lc)
}

/// No interference between distinct users: every user leaves at rate
/// `|C|/(N0·L_C)`, an M/M/∞ queue per class.
fn isolated(lambda: f64, horizon: f64, seed: u64) -> (Trajectory, ClassProfile, TorusDomain) {
    let (dom, _, profile) = reference();
    let pl = PathLoss::tabulated(vec![0.0, 1e-12], vec![1.0, 0.0]).unwrap();
    let cfg = SimConfig::new(dom, pl, profile.clone(), lambda, N0, seed, Budget::Time(horizon)).unwrap();
    (simulate(&cfg).unwrap(), profile, dom)
}

#[test]
fn density_estimator_calibrates_on_independent_service() {
    let lambda = 0.5;
    let (traj, profile, dom) = isolated(lambda, 400.0, 4);
    let (start, len) = default_window(&traj);
    for c in profile.classes() {
        let est = ergodic_density(&traj, dom.area(), c, start, len, 1.0).unwrap();
        let exact = lambda * profile.p(c) * profile.l(c) * N0 / c.len() as f64;
        let se = est.std_error.unwrap();
        assert!((est.density - exact).abs() < 3.0 * se, "{c:?}: {} ± {se} vs {exact}", est.density);
    }
}

#[test]
fn density_error_shrinks_like_inverse_root_window() {
    let (short, profile, dom) = isolated(0.5, 100.0, 8);
    let (long, _, _) = isolated(0.5, 1600.0, 8);
    let c = profile.classes().next().unwrap();
    let se = |t: &Trajectory| {
        let (s, l) = default_window(t);
        ergodic_density(t, dom.area(), c, s, l, 1.0).unwrap().std_error.unwrap()
    };
    // 16 times the window: ideal ratio 4
    let ratio = se(&short) / se(&long);
    assert!((2.0..8.0).contains(&ratio), "{ratio}");
}

#[test]
fn little_balance_in_the_stable_regime() {
    let (traj, lambda) = run(0.9, 12, 200_000);
    let (dom, _, profile) = reference();
    let (start, len) = default_window(&traj);
    for c in profile.classes() {
        let est = ergodic_density(&traj, dom.area(), c, start, len, 1.0).unwrap();
        let count = est.density * dom.area();
        let count_se = est.std_error.unwrap() * dom.area();
        // batch means of the staying times of departures inside the window
        let width = len / BATCHES as f64;
        let mut batches = vec![(0.0, 0usize); BATCHES];
        for e in traj.events.iter().filter(|e| e.kind == EventKind::Departure && e.class == c && e.time >= start) {
            let k = (((e.time - start) / width) as usize).min(BATCHES - 1);
            batches[k].0 += e.staying_time.unwrap();
            batches[k].1 += 1;
        }
        let w: Vec<f64> = batches.iter().map(|b| b.0 / b.1 as f64).collect();
        let (wm, wse) = (mean(&w), (sample_variance(&w) / BATCHES as f64).sqrt());
        let rate = lambda * profile.p(c) * dom.area();
        let predicted = rate * wm;
        let se = (count_se * count_se + (rate * wse).powi(2)).sqrt();
        assert!((count - predicted).abs() < 3.0 * se, "{c:?}: {count} vs {predicted} (se {se})");
    }
}

#[test]
fn staying_time_series_levels_off_when_stable() {
    let (traj, _) = run(0.9, 3, 100_000);
    let series = staying_times(&traj);
    assert!(series.iter().all(|s| !s.times.is_empty()));
    // slope of raw staying times over the last quarter
    let t0 = traj.start_time + 0.75 * (traj.end_time - traj.start_time);
    let width = (traj.end_time - t0) / BATCHES as f64;
    let mut batches = vec![(0.0, 0usize); BATCHES];
    for e in traj.events.iter().filter(|e| e.kind == EventKind::Departure && e.time >= t0) {
        let k = (((e.time - t0) / width) as usize).min(BATCHES - 1);
        batches[k].0 += e.staying_time.unwrap();
        batches[k].1 += 1;
    }
    let pts: Vec<(f64, f64)> =
        batches.iter().enumerate().map(|(k, b)| (t0 + (k as f64 + 0.5) * width, b.0 / b.1 as f64)).collect();
    let (slope, se) = linear_regression(&pts).unwrap();
    let q = student_t_quantile(0.995, BATCHES as u32 - 2);
    assert!(slope - q * se <= 0.0 && 0.0 <= slope + q * se, "{slope} ± {}", q * se);
}

#[test]
fn running_means_are_cumulative_averages() {
    let (traj, _) = run(0.5, 1, 5_000);
    for s in staying_times(&traj) {
        let raw: Vec<f64> = traj
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Departure && e.class == s.class)
            .map(|e| e.staying_time.unwrap())
            .collect();
        assert_eq!(raw.len(), s.running_mean.len());
        let mut acc = 0.0;
        for (i, (w, m)) in raw.iter().zip(&s.running_mean).enumerate() {
            acc += w;
            assert!((acc / (i + 1) as f64 - m).abs() <= 1e-12 * m);
        }
    }
}

#[test]
fn classification_is_deterministic() {
    let (traj, _) = run(0.8, 2, 20_000);
    let s = StabilitySettings::default();
    assert_eq!(classify_stability(&traj, &s), classify_stability(&traj.clone(), &s));
}

#[test]
fn verdicts_are_monotone_across_the_rate_grid() {
    let vote = |rel: f64| {
        let verdicts: Vec<Verdict> =
            (1..=5).map(|seed| classify_stability(&run(rel, seed, 100_000).0, &StabilitySettings::default()).verdict).collect();
        let stable = verdicts.iter().filter(|v| **v == Verdict::Stable).count();
        let unstable = verdicts.iter().filter(|v| **v == Verdict::Unstable).count();
        (stable, unstable)
    };
    for rel in [0.7, 0.8, 0.9] {
        let (s, _) = vote(rel);
        assert!(s >= 3, "{rel}: {s} stable votes");
    }
    for rel in [1.1, 1.2, 1.3] {
        let (_, u) = vote(rel);
        assert!(u >= 3, "{rel}: {u} unstable votes");
    }
}
