use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

use domcftp::cftp::{perfect_sample, DominatingTrajectory, Event, EventKind, Schedule};
use domcftp::{Boundary, MultiscaleModel, SeedPath, Window};

fn unit() -> Window {
    Window::unit_square(Boundary::Clip)
}

fn hash_events<'a>(events: impl Iterator<Item = &'a Event>) -> u64 {
    let mut h = DefaultHasher::new();
    for e in events {
        e.time.to_bits().hash(&mut h);
        e.point_id.hash(&mut h);
        if let EventKind::Birth { location, mark } = e.kind {
            location.x.to_bits().hash(&mut h);
            location.y.to_bits().hash(&mut h);
            mark.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Counts alive at `times` (ascending, inside the horizon) by forward replay.
fn alive_counts(traj: &DominatingTrajectory, times: &[f64]) -> Vec<u64> {
    let mut alive = traj.oldest_ids().len() as i64;
    let mut out = Vec::with_capacity(times.len());
    let mut events = traj.events().peekable();
    for &t in times {
        while let Some(e) = events.next_if(|e| e.time <= t) {
            alive += if e.is_birth() { 1 } else { -1 };
        }
        out.push(alive as u64);
    }
    out
}

#[test]
fn dominating_process_is_stationary_poisson() {
    let rate = 20.0;
    let horizon = 4096.0;
    let mut traj = DominatingTrajectory::new(unit(), rate, SeedPath::new(7));
    for t in Schedule::default().horizons().take_while(|&t| t <= horizon) {
        traj.extend_backward(t).unwrap();
    }
    assert_eq!(traj.horizon(), horizon);
    // spacing of four lifetimes keeps successive counts nearly independent
    let times: Vec<f64> = (0..1000).map(|k| -horizon + 4.0 * (k as f64 + 1.0)).collect();
    let counts = alive_counts(&traj, &times);

    let law = Poisson::new(rate).unwrap();
    let n = counts.len() as f64;
    // bins: <=13, 14..=26 individually, >=27 (all expected >= 5)
    let (lo, hi) = (13u64, 27u64);
    let mut observed = vec![0.0; (hi - lo + 1) as usize];
    for &c in &counts {
        observed[(c.clamp(lo, hi) - lo) as usize] += 1.0;
    }
    let mut expected: Vec<f64> = (lo..=hi).map(|k| n * law.pmf(k)).collect();
    expected[0] = n * (0..=lo).map(|k| law.pmf(k)).sum::<f64>();
    let last = expected.len() - 1;
    expected[last] = n * (1.0 - (0..hi).map(|k| law.pmf(k)).sum::<f64>());
    assert!(expected.iter().all(|&e| e >= 5.0));
    let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (expected.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat:.2} on {df} df, p = {p:.4}");
}

#[test]
fn birth_count_matches_rate_times_horizon() {
    let rate = 30.0;
    let mut traj = DominatingTrajectory::new(unit(), rate, SeedPath::new(8));
    for t in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0] {
        traj.extend_backward(t).unwrap();
    }
    let births = traj.events().filter(|e| e.is_birth()).count() as f64;
    let expected = rate * 256.0;
    assert!(
        (births - expected).abs() < 4.0 * expected.sqrt(),
        "{births} births, expected {expected}"
    );
}

#[test]
fn events_are_time_ordered_and_deaths_follow_births() {
    let mut traj = DominatingTrajectory::new(unit(), 25.0, SeedPath::new(9));
    traj.extend_backward(1.0).unwrap();
    traj.extend_backward(2.0).unwrap();
    traj.extend_backward(4.0).unwrap();
    let mut alive: HashSet<_> = traj.oldest_ids().iter().copied().collect();
    let mut last = -4.0;
    for e in traj.events() {
        assert!(e.time >= last && e.time <= 0.0);
        last = e.time;
        match e.kind {
            EventKind::Birth { mark, .. } => {
                assert!((0.0..1.0).contains(&mark));
                assert!(alive.insert(e.point_id));
            }
            EventKind::Death => assert!(alive.remove(&e.point_id)),
        }
    }
    let present: HashSet<_> = traj.state_at_zero().ids().iter().copied().collect();
    assert_eq!(alive, present);
}

#[test]
fn re_extension_reuses_recorded_randomness() {
    let seed = SeedPath::new(10);
    let mut a = DominatingTrajectory::new(unit(), 40.0, seed);
    a.extend_backward(1.0).unwrap();
    a.extend_backward(2.0).unwrap();
    let recent = hash_events(a.events());
    let recent_count = a.event_count();
    a.extend_backward(4.0).unwrap();
    a.extend_backward(8.0).unwrap();
    let tail = hash_events(a.events().skip(a.event_count() - recent_count));
    assert_eq!(recent, tail);

    // an identical schedule from the same seed gives the identical path
    let mut b = DominatingTrajectory::new(unit(), 40.0, seed);
    for t in [1.0, 2.0, 4.0, 8.0] {
        b.extend_backward(t).unwrap();
    }
    assert_eq!(hash_events(a.events()), hash_events(b.events()));
    assert_eq!(a.oldest_ids(), b.oldest_ids());
}

#[test]
fn shrinking_the_horizon_is_rejected() {
    let mut traj = DominatingTrajectory::new(unit(), 10.0, SeedPath::new(11));
    traj.extend_backward(2.0).unwrap();
    assert!(traj.extend_backward(1.0).is_err());
}

#[test]
fn perfect_samples_are_reproducible_and_seed_sensitive() {
    let model = MultiscaleModel::two_scale(60.0, 0.3, -0.3, 0.05, 0.02, unit()).unwrap();
    let a = perfect_sample(&model, SeedPath::new(12), &Schedule::default()).unwrap();
    let b = perfect_sample(&model, SeedPath::new(12), &Schedule::default()).unwrap();
    let c = perfect_sample(&model, SeedPath::new(13), &Schedule::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.sample.points(), c.sample.points());
}
