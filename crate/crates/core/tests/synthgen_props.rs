use proptest::prelude::*;
use skywatch::flightdata::{Certainty, Safety};
use skywatch::preprocess::{preprocess_flight, PreprocessConfig};
use skywatch::synthgen::*;
use std::f64::consts::PI;

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Closed-form heading rebuilt from the recorded parameters. The turn
/// shape is written as sin^2, which equals the raised cosine.
fn expected_heading(truth: &FlightTruth, t: f64) -> f64 {
    let mut h = truth.initial_heading;
    for turn in &truth.turns {
        let s = if t <= turn.start {
            0.0
        } else if t >= turn.start + turn.duration {
            1.0
        } else {
            (t - turn.start) / turn.duration
        };
        h += turn.angle * (0.5 * PI * s).sin().powi(2);
    }
    if let Some(o) = truth.oscillation {
        if (o.onset..=o.onset + o.duration).contains(&t) {
            h += o.amplitude * (2.0 * PI * (t - o.onset) / o.period).sin();
        }
    }
    h
}

fn noiseless(seed: u64) -> SynthDataset {
    let cfg = SynthConfig {
        seed,
        noise_std: 0.0,
        flight_duration: 200.0,
        ..Default::default()
    };
    generate(&cfg, ClassCounts::new(2, 2, 2, 2)).unwrap()
}

#[test]
fn noiseless_heading_matches_parameters() {
    for seed in [1, 42, 9001] {
        let ds = noiseless(seed);
        for f in &ds.flights {
            let safe = f.log.safe();
            assert_eq!(safe.len(), 1001);
            for rec in safe {
                let want = expected_heading(&f.truth, rec.timestamp);
                assert!(angle_gap(rec.r, want) < 1e-9, "{} t={}: {} vs {want}", f.truth.flight_id, rec.timestamp, rec.r);
            }
        }
    }
}

#[test]
fn geometric_distance_matches_profile_and_labels() {
    let ds = noiseless(7);
    for f in &ds.flights {
        let (_, trace) = preprocess_flight(&f.log, &ds.obstacles, &PreprocessConfig::default(), None).unwrap();
        let trace = trace.unwrap();
        for (t, d) in trace.times.iter().zip(&trace.distances) {
            assert!((d - f.truth.obstacle_distance(*t)).abs() < 1e-9);
        }
        let min = trace.distances.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(min < 1.0, f.labels.safety == Safety::Unsafe, "{}", f.truth.flight_id);
        assert_eq!(f.truth.oscillation.is_some(), f.labels.certainty == Certainty::Uncertain);
        if let Some(tu) = f.truth.distance.t_unsafe {
            let first = trace.times.iter().zip(&trace.distances).find(|(_, d)| **d < 1.0).unwrap().0;
            assert!((first - tu).abs() <= 0.2 + 1e-9, "{first} vs {tu}");
        }
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oscillation_windows_stand_out(seed in 0u64..10_000, noise in 0.0..=2.0f64) {
        let cfg = SynthConfig { seed, noise_std: noise, ..Default::default() };
        let ds = generate(&cfg, ClassCounts::new(1, 1, 1, 1)).unwrap();
        let (mut osc, mut steady) = (Vec::new(), Vec::new());
        for f in &ds.flights {
            let (wins, _) = preprocess_flight(&f.log, &ds.obstacles, &PreprocessConfig::default(), None).unwrap();
            for w in &wins {
                let inside = |a: f64, b: f64| w.start >= a && w.end <= b;
                let touches = |a: f64, b: f64| w.end >= a && w.start <= b;
                match f.truth.oscillation {
                    Some(o) if inside(o.onset, o.end()) => osc.push(std_dev(&w.values)),
                    Some(o) if touches(o.onset, o.end()) => {}
                    _ if f.truth.turns.iter().all(|t| !touches(t.start, t.start + t.duration)) => steady.push(std_dev(&w.values)),
                    _ => {}
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!(!osc.is_empty() && !steady.is_empty());
        prop_assert!(mean(&osc) >= 3.0 * mean(&steady), "{} vs {}", mean(&osc), mean(&steady));
    }

    #[test]
    fn flights_do_not_depend_on_other_classes(seed in 0u64..10_000, extra in 1usize..4) {
        let cfg = SynthConfig { seed, flight_duration: 200.0, ..Default::default() };
        let small = generate(&cfg, ClassCounts::new(2, 0, 0, 0)).unwrap();
        let big = generate(&cfg, ClassCounts::new(2, extra, 1, 1)).unwrap();
        for (a, b) in small.flights.iter().zip(&big.flights) {
            prop_assert_eq!(&a.truth, &b.truth);
            prop_assert_eq!(&a.log, &b.log);
        }
    }
}

#[test]
fn dataset_files_round_trip() {
    let ds = generate(&SynthConfig { flight_duration: 200.0, ..Default::default() }, ClassCounts::new(1, 1, 1, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = ds.write_to(dir.path()).unwrap();
    assert_eq!(written.len(), 2 * 4 + 3);
    let labels = skywatch::flightdata::parse_labels(std::fs::File::open(dir.path().join("labels.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 4);
    let truth: GroundTruthFile = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth.flights.len(), 4);
    assert_eq!(truth.flights[3], ds.flights[3].truth);
    let again = tempfile::tempdir().unwrap();
    generate(&ds.config, ds.counts).unwrap().write_to(again.path()).unwrap();
    for p in &written {
        let rel = p.strip_prefix(dir.path()).unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(again.path().join(rel)).unwrap(), "{rel:?}");
    }
}
