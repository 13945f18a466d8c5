use std::collections::BTreeSet;

use sbdnet_core::rng::StreamRng;
use sbdnet_core::sim::*;
use sbdnet_core::*;

const MEAN_PATHLOSS: f64 = 0.981_288_760_396_76;

fn reference() -> (TorusDomain, PathLoss, ClassProfile) {
    (
        TorusDomain::new(10.0, 0.0).unwrap(),
        PathLoss::power_law(4.0).unwrap(),
        ClassProfile::new(2, vec![0.4, 0.4, 0.2], vec![1.0, 1.0, 2.0]).unwrap(),
    )
}

fn lambda_c() -> f64 {
    2.0 / (1.6 * MEAN_PATHLOSS)
}

fn config(rel: f64, seed: u64, events: u64) -> SimConfig {
    let (dom, pl, profile) = reference();
    SimConfig::new(dom, pl, profile, rel * lambda_c(), 0.1, seed, Budget::Events(events)).unwrap()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn mean_population(t: &Trajectory) -> Vec<f64> {
    let span = t.end_time - t.start_time;
    t.class_areas().into_iter().map(|a| a / span).collect()
}

#[test]
fn lone_dipole_sojourn_matches_exponential_race() {
    let dom = TorusDomain::new(10.0, 0.5).unwrap();
    let pl = PathLoss::power_law(4.0).unwrap();
    let profile = ClassProfile::new(2, vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 2.0]).unwrap();
    let (n0, reps) = (0.1, 10_000);
    let c = SimConfig::new(dom, pl.clone(), profile, 0.0, n0, 0, Budget::Events(1)).unwrap();
    let class = ClassSet::from_bands(&[1, 2]).unwrap();
    let mut total = 0.0;
    for rep in 0..reps {
        let mut s = NetworkState::new(2);
        s.place(Point::new(3.0, 3.0), Point::new(3.5, 3.0), class, &dom, &pl).unwrap();
        let mut rngs = SimRngs::new(rep);
        let e = step(&mut s, &c, &mut rngs).unwrap();
        assert_eq!(e.kind, EventKind::Departure);
        assert_eq!(e.staying_time, Some(e.time));
        assert!(s.is_empty());
        total += e.time;
    }
    let expected = 2.0 * n0 / (2.0 * pl.eval(0.5));
    let mean = total / reps as f64;
    // exponential: sd of the mean = mean / sqrt(n)
    assert!((mean - expected).abs() < 3.0 * expected / (reps as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn first_arrival_time_and_class_law() {
    let c = config(0.5, 0, 1);
    let reps = 10_000usize;
    let rate = c.lambda * c.dom.area();
    let mut times = 0.0;
    let mut hits = [0usize; 3];
    for rep in 0..reps {
        let mut s = NetworkState::new(2);
        let e = step(&mut s, &c, &mut SimRngs::new(rep as u64)).unwrap();
        assert_eq!(e.kind, EventKind::Arrival);
        times += e.time;
        hits[e.class.index()] += 1;
    }
    let mean = times / reps as f64;
    assert!((mean - 1.0 / rate).abs() < 3.0 / rate / (reps as f64).sqrt());
    for (i, &p) in [0.4, 0.4, 0.2].iter().enumerate() {
        let sd = (p * (1.0 - p) * reps as f64).sqrt();
        assert!((hits[i] as f64 - p * reps as f64).abs() < 3.0 * sd, "class {i}: {}", hits[i]);
    }
}

/// Competing-clocks simulation with a single total-rate exponential and a
/// categorical choice of the event, interference recomputed from scratch.
fn gillespie_mean_population(c: &SimConfig, seed: u64, events: usize) -> Vec<f64> {
    let mut rng = StreamRng::with_stream_id(seed, 1000);
    let (dom, pl, profile) = (&c.dom, &c.pl, &c.profile);
    let signal = pl.eval(dom.link_length());
    let mut users: Vec<(Point, ClassSet)> = Vec::new();
    let mut area = vec![0.0; profile.class_count()];
    let mut t = 0.0;
    for _ in 0..events {
        let rates: Vec<f64> = users
            .iter()
            .enumerate()
            .map(|(i, &(x, cl))| {
                let interf: f64 = users
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &(y, cu))| cl.overlap(cu) as f64 * pl.eval(dom.distance(x, y)))
                    .sum();
                cl.len() as f64 * signal / (c.n0 + interf) / profile.l(cl)
            })
            .collect();
        let birth = c.lambda * dom.area();
        let total = birth + rates.iter().sum::<f64>();
        let dt = rng.exponential(total);
        for &(_, cl) in &users {
            area[cl.index()] += dt;
        }
        t += dt;
        let mut u = rng.uniform() * total;
        if u < birth {
            let x = Point::new(rng.uniform() * dom.side(), rng.uniform() * dom.side());
            users.push((x, profile.sample_class(rng.uniform())));
        } else {
            u -= birth;
            let mut idx = rates.len() - 1;
            for (i, r) in rates.iter().enumerate() {
                if u < *r {
                    idx = i;
                    break;
                }
                u -= r;
            }
            users.swap_remove(idx);
        }
    }
    area.into_iter().map(|a| a / t).collect()
}

#[test]
fn redrawn_race_matches_competing_clocks() {
    let reps = 200;
    let c = config(0.9, 0, 1000);
    let ours: Vec<Vec<f64>> = (0..reps).map(|s| mean_population(&simulate(&c.clone().with_seed(s)).unwrap())).collect();
    let oracle: Vec<Vec<f64>> = (0..reps).map(|s| gillespie_mean_population(&c, s, 1000)).collect();
    for class in 0..3 {
        let a: Vec<f64> = ours.iter().map(|v| v[class]).collect();
        let b: Vec<f64> = oracle.iter().map(|v| v[class]).collect();
        let ((ma, sa), (mb, sb)) = (mean_sd(&a), mean_sd(&b));
        let se = ((sa * sa + sb * sb) / reps as f64).sqrt();
        assert!((ma - mb).abs() < 3.0 * se, "class {class}: {ma} vs {mb} (se {se})");
    }
}

#[test]
fn incremental_caches_track_exact_interference() {
    let dom = TorusDomain::new(10.0, 0.4).unwrap();
    let (_, pl, profile) = reference();
    let c = SimConfig::new(dom, pl.clone(), profile, 1.1 * lambda_c(), 0.1, 9, Budget::Events(1000)).unwrap();
    let mut state = NetworkState::new(2);
    for chunk in 0..20u64 {
        let (_, s) = simulate_from(&c.clone().with_seed(chunk), state).unwrap();
        assert!(s.audit(&dom, &pl) < 1e-9, "chunk {chunk}");
        state = s;
    }
    assert!(state.len() > 100);
}

#[test]
fn comparison_rates_bound_sampled_states() {
    let (dom, pl, _) = reference();
    let n0 = 0.1;
    // every class contains band 1, so all users share a band
    let sharing = ClassProfile::new(2, vec![0.5, 0.0, 0.5], vec![1.0, 1.0, 2.0]).unwrap();
    let general = reference().2;
    for (profile, upper_holds) in [(sharing, true), (general, false)] {
        let c = SimConfig::new(dom, pl.clone(), profile, lambda_c(), n0, 4, Budget::Events(400)).unwrap();
        let (_, s) = simulate_from(&c, NetworkState::new(2)).unwrap();
        for (i, d) in s.dipoles().iter().enumerate() {
            let r = transmission_rate(d.receiver, d.class, Some(d.id), &s, &dom, &pl, n0);
            let (ru, rd) = comparison_rates(&s, i, &dom, &pl, n0);
            assert!(ru <= r * (1.0 + 1e-12));
            if upper_holds {
                assert!(r <= rd * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn counts_telescope() {
    let t = simulate(&config(1.0, 3, 5000)).unwrap();
    assert_eq!(t.final_total(), t.initial_total() + t.arrivals() - t.departures());
    let mut prev = t.initial_total() as i64;
    let mut prev_time = t.start_time;
    for e in &t.events {
        assert_eq!((e.total as i64 - prev).abs(), 1);
        assert!(e.time > prev_time);
        prev = e.total as i64;
        prev_time = e.time;
    }
    assert_eq!(t.final_counts().iter().sum::<usize>(), t.final_total());
}

/// Replays both logs and checks low ⊆ high after every epoch.
fn replayed_violations(run: &CoupledRun) -> usize {
    let (mut lo, mut hi) = (BTreeSet::new(), BTreeSet::new());
    let (mut i, mut j, mut bad) = (0, 0, 0);
    let (le, he) = (&run.low.events, &run.high.events);
    while i < le.len() || j < he.len() {
        let t = le.get(i).map_or(f64::INFINITY, |e| e.time).min(he.get(j).map_or(f64::INFINITY, |e| e.time));
        for (set, evs, k) in [(&mut lo, le, &mut i), (&mut hi, he, &mut j)] {
            while *k < evs.len() && evs[*k].time == t {
                match evs[*k].kind {
                    EventKind::Arrival => assert!(set.insert(evs[*k].id)),
                    EventKind::Departure => assert!(set.remove(&evs[*k].id)),
                }
                *k += 1;
            }
        }
        if !lo.is_subset(&hi) {
            bad += 1;
        }
    }
    bad
}

#[test]
fn coupling_doubling_lambda() {
    let low = config(0.5, 0, 100_000);
    let high = low.clone().with_lambda(2.0 * low.lambda);
    let run = coupled_simulate(&low, &high, 17).unwrap();
    assert_eq!(run.inclusion_violations, 0);
    assert_eq!(replayed_violations(&run), 0);
    assert_eq!(run.high.len(), 100_000);
    assert!(run.low.len() < run.high.len());
}

#[test]
fn coupling_doubling_file_sizes() {
    let low = config(0.4, 0, 10_000);
    let high = SimConfig { profile: low.profile.scale_file_sizes(2.0).unwrap(), ..low.clone() };
    let run = coupled_simulate(&low, &high, 5).unwrap();
    assert_eq!(run.inclusion_violations, 0);
    assert_eq!(replayed_violations(&run), 0);
}

#[test]
fn coupling_heavier_pathloss_tail() {
    let low = config(0.4, 0, 10_000);
    let high = SimConfig { pl: PathLoss::power_law(3.0).unwrap(), ..low.clone() };
    let run = coupled_simulate(&low, &high, 6).unwrap();
    assert_eq!(run.inclusion_violations, 0);
    assert_eq!(replayed_violations(&run), 0);
    assert!(run.high.final_total() >= run.low.final_total());
}

#[test]
fn coupled_marginal_matches_plain_simulation() {
    let reps = 100;
    let low = config(0.7, 0, 2000);
    let high = low.clone().with_lambda(1.5 * low.lambda);
    let coupled: Vec<f64> = (0..reps)
        .map(|s| {
            let t = coupled_simulate(&low, &high, s).unwrap().low;
            t.class_areas().iter().sum::<f64>() / (t.end_time - t.start_time)
        })
        .collect();
    let plain: Vec<f64> = (0..reps)
        .map(|s| {
            let t = simulate(&low.clone().with_seed(1000 + s).with_budget(Budget::Time(coupled_span(&low, &high, s)))).unwrap();
            t.class_areas().iter().sum::<f64>() / (t.end_time - t.start_time)
        })
        .collect();
    let ((ma, sa), (mb, sb)) = (mean_sd(&coupled), mean_sd(&plain));
    let se = ((sa * sa + sb * sb) / reps as f64).sqrt();
    assert!((ma - mb).abs() < 3.0 * se, "{ma} vs {mb} (se {se})");
}

fn coupled_span(low: &SimConfig, high: &SimConfig, seed: u64) -> f64 {
    coupled_simulate(low, high, seed).unwrap().high.end_time
}

#[test]
fn departure_flux_balances_arrivals() {
    let seeds = 20u64;
    let c = config(0.9, 0, 60_000);
    let warm = 20_000;
    let mut flux = vec![Vec::new(); 3];
    for s in 0..seeds {
        let t = simulate(&c.clone().with_seed(s)).unwrap();
        let t0 = t.events[warm].time;
        let span = t.end_time - t0;
        let mut n = [0usize; 3];
        for e in &t.events[warm..] {
            if e.kind == EventKind::Departure {
                n[e.class.index()] += 1;
            }
        }
        for i in 0..3 {
            flux[i].push(n[i] as f64 / span);
        }
    }
    for (i, &p) in [0.4, 0.4, 0.2].iter().enumerate() {
        let target = c.lambda * p * c.dom.area();
        let (m, sd) = mean_sd(&flux[i]);
        assert!((m - target).abs() < 3.0 * sd / (seeds as f64).sqrt(), "class {i}: {m} vs {target}");
    }
}

#[test]
fn near_critical_population_stays_bounded() {
    let c = config(0.95, 1, 1_000_000);
    let t = simulate(&c).unwrap();
    assert_eq!(t.len(), 1_000_000);
    assert!(t.max_total() < c.population_cap);
}
