use proptest::prelude::*;
use skywatch::autoenc::{Architecture, AutoencoderModel};
use skywatch::detector::*;
use skywatch::preprocess::{preprocess_flight, PreprocessConfig};
use skywatch::synthgen::{generate, ClassCounts, SynthConfig};

fn model() -> AutoencoderModel {
    AutoencoderModel::new(Architecture::default(), 77).unwrap()
}

fn alarms_for(losses: &[f64], threshold: f64, n: usize) -> Vec<usize> {
    let m = model();
    let cfg = DetectorConfig {
        threshold,
        n_consecutive: n,
        ..Default::default()
    };
    let mut det = StreamDetector::new(&m, "f", cfg).unwrap();
    for (i, &l) in losses.iter().enumerate() {
        det.push_loss(i, i as f64 * 2.5, i as f64 * 2.5 + 5.0, l).unwrap();
    }
    det.finish().alarms.iter().map(|a| a.window_index).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn causal_prefix(losses in prop::collection::vec(0.0..1.0f64, 1..80), cut in 0usize..80, n in 1usize..8) {
        let full = alarms_for(&losses, 0.3, n);
        let cut = cut.min(losses.len());
        let prefix = alarms_for(&losses[..cut], 0.3, n);
        let expected: Vec<usize> = full.into_iter().filter(|&i| i < cut).collect();
        prop_assert_eq!(prefix, expected);
    }

    #[test]
    fn raising_threshold_never_adds_alarms(losses in prop::collection::vec(0.0..1.0f64, 1..80), t1 in 0.01..1.0f64, dt in 0.0..0.5f64, n in 1usize..8) {
        let low = alarms_for(&losses, t1, n);
        let high = alarms_for(&losses, t1 + dt, n);
        prop_assert!(high.iter().all(|i| low.contains(i)));
    }

    #[test]
    fn warm_up_is_silent(losses in prop::collection::vec(0.0..10.0f64, 1..40), n in 1usize..8) {
        let alarms = alarms_for(&losses, 0.01, n);
        prop_assert!(alarms.iter().all(|&i| i + 1 >= n));
    }

    #[test]
    fn alarms_exceed_threshold(losses in prop::collection::vec(0.0..1.0f64, 1..60)) {
        let m = model();
        let mut det = StreamDetector::new(&m, "f", DetectorConfig::default()).unwrap();
        for (i, &l) in losses.iter().enumerate() {
            det.push_loss(i, 0.0, 5.0, l).unwrap();
        }
        let rep = det.finish();
        prop_assert!(rep.alarms.iter().all(|a| a.rolling_mean > rep.threshold));
        prop_assert_eq!(rep.flight_uncertain, !rep.alarms.is_empty());
    }
}

#[test]
fn constant_heading_offset_leaves_report_unchanged() {
    let ds = generate(&SynthConfig::default(), ClassCounts::new(1, 1, 1, 1)).unwrap();
    let m = model();
    let pcfg = PreprocessConfig::default();
    for f in &ds.flights {
        let (base, trace) = preprocess_flight(&f.log, &ds.obstacles, &pcfg, None).unwrap();
        let losses: Vec<f64> = base.iter().map(|w| m.window_loss(&w.values).unwrap()).collect();
        let mut sorted = losses.clone();
        sorted.sort_by(f64::total_cmp);
        // threshold inside the loss range so both outcomes occur
        let cfg = DetectorConfig {
            threshold: sorted[sorted.len() / 2],
            ..Default::default()
        };
        let mut a = detect_stream(&m, &f.log.flight_id, &base, cfg).unwrap();
        a.apply_lead_time(lead_time_analysis(&a, trace.as_ref().unwrap(), &cfg));
        for offset in [37.0, -123.5, 179.0] {
            let shifted = f.log.with_heading_offset(offset);
            let (wins, trace) = preprocess_flight(&shifted, &ds.obstacles, &pcfg, None).unwrap();
            let mut b = detect_stream(&m, &f.log.flight_id, &wins, cfg).unwrap();
            b.apply_lead_time(lead_time_analysis(&b, trace.as_ref().unwrap(), &cfg));
            let idx = |r: &DetectionReport| r.alarms.iter().map(|x| x.window_index).collect::<Vec<_>>();
            assert_eq!(idx(&a), idx(&b), "{} offset {offset}", f.log.flight_id);
            assert_eq!(a.first_alarm_time, b.first_alarm_time);
            assert_eq!(a.lead_time, b.lead_time);
            for (p, q) in a.windows.iter().zip(&b.windows) {
                assert!((p.loss - q.loss).abs() <= 1e-9 * p.loss.max(1e-3));
            }
        }
    }
}

#[test]
fn out_of_order_windows_error() {
    let ds = generate(&SynthConfig::default(), ClassCounts::new(1, 0, 0, 0)).unwrap();
    let (mut wins, _) = preprocess_flight(&ds.flights[0].log, &ds.obstacles, &PreprocessConfig::default(), None).unwrap();
    wins.swap(3, 4);
    assert!(matches!(
        detect_stream(&model(), "f", &wins, DetectorConfig::default()),
        Err(skywatch::Error::OutOfOrder { last: 4, got: 3 })
    ));
}
