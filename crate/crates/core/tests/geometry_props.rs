use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skywatch::flightdata::ObstacleBox;
use skywatch::geometry::*;

/// Minimum accumulated cost over every monotone warping path, by explicit
/// recursion over path prefixes.
fn dtw_brute(a: &[Point3], b: &[Point3]) -> f64 {
    fn walk(a: &[Point3], b: &[Point3], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + a[i].dist(&b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Point3> {
    let n = rng.gen_range(1..=max_len);
    (0..n)
        .map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
        .collect()
}

#[test]
fn dtw_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let a = random_seq(&mut rng, 6);
        let b = random_seq(&mut rng, 6);
        let fast = dtw(&a, &b).unwrap();
        let slow = dtw_brute(&a, &b);
        assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn dtw_hand_example() {
    let a = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
    let b = [Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
    assert_eq!(dtw(&a, &b).unwrap(), 1.0);
    assert!(dtw(&a, &[]).is_err());
}

fn point() -> impl Strategy<Value = Point3> {
    (-10.0..10.0f64, -10.0..10.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn obstacle() -> impl Strategy<Value = ObstacleBox> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.1..6.0f64, 0.1..6.0f64, -180.0..180.0f64).prop_map(|(cx, cy, length, width, rotation)| {
        ObstacleBox {
            cx,
            cy,
            length,
            width,
            height: 10.0,
            rotation,
        }
    })
}

proptest! {
    #[test]
    fn dtw_symmetric_nonnegative(a in prop::collection::vec(point(), 1..12), b in prop::collection::vec(point(), 1..12)) {
        let ab = dtw(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dtw(&b, &a).unwrap()).abs() <= 1e-9 * ab.max(1.0));
        prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn box_distance_rotation_invariant(px in -20.0..20.0f64, py in -20.0..20.0f64, b in obstacle(), turn in -180.0..180.0f64) {
        let d = point_box_distance(px, py, &b);
        prop_assert!(d >= 0.0);
        let (s, c) = turn.to_radians().sin_cos();
        let (dx, dy) = (px - b.cx, py - b.cy);
        let rotated = ObstacleBox { rotation: b.rotation + turn, ..b };
        let d2 = point_box_distance(b.cx + c * dx - s * dy, b.cy + s * dx + c * dy, &rotated);
        prop_assert!((d - d2).abs() < 1e-9, "{} vs {}", d, d2);
    }

    #[test]
    fn fitness_monotone_in_sum_dist(s in 0.0..100.0f64, delta in 0.0..50.0f64, ave in 0.0..200.0f64) {
        prop_assert!(combine_fitness(s - delta, ave, 65.0) <= combine_fitness(s, ave, 65.0));
    }
}

#[test]
fn box_distance_examples() {
    let b = ObstacleBox {
        cx: 0.0,
        cy: 0.0,
        length: 2.0,
        width: 2.0,
        height: 10.0,
        rotation: 0.0,
    };
    assert_eq!(point_box_distance(5.0, 0.0, &b), 4.0);
    assert_eq!(point_box_distance(0.0, 0.0, &b), 0.0);
    let diamond = ObstacleBox { rotation: 45.0, ..b };
    let d = point_box_distance(2.0, 0.0, &diamond);
    assert!((d - (2.0 - 2f64.sqrt())).abs() < 1e-12);
    // dense sampling of the rotated boundary
    let (s, c) = 45f64.to_radians().sin_cos();
    let mut best = f64::INFINITY;
    for i in 0..=40_000 {
        let u = -1.0 + 2.0 * i as f64 / 40_000.0;
        for (lx, ly) in [(u, 1.0), (u, -1.0), (1.0, u), (-1.0, u)] {
            let (x, y) = (c * lx - s * ly, s * lx + c * ly);
            best = best.min(((x - 2.0).powi(2) + y * y).sqrt());
        }
    }
    assert!((d - best).abs() < 1e-6);
}

fn line(y: f64, n: usize) -> Trajectory {
    Trajectory::new(
        (0..n)
            .map(|i| TrajectoryPoint {
                t: i as f64,
                p: Point3::new(i as f64, y, 10.0),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn average_trajectory_examples() {
    let avg = average_trajectory(&[line(0.0, 11), line(2.0, 11)], 21).unwrap();
    for (k, p) in avg.iter().enumerate() {
        assert!((p.y - 1.0).abs() < 1e-12);
        assert!((p.x - k as f64 * 0.5).abs() < 1e-12);
    }
    let same = average_trajectory(&[line(3.0, 5), line(3.0, 5)], 9).unwrap();
    assert_eq!(same, resample_by_arc_length(&line(3.0, 5).positions(), 9).unwrap());
}

#[test]
fn average_of_curves_matches_independent_mean() {
    let curves: Vec<Trajectory> = (0..3)
        .map(|c| {
            Trajectory::new(
                (0..40)
                    .map(|i| {
                        let u = i as f64 / 39.0;
                        TrajectoryPoint {
                            t: i as f64,
                            p: Point3::new(10.0 * u, (c as f64 + 1.0) * (3.0 * u).sin(), 5.0 + c as f64),
                        }
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let n = 50;
    let avg = average_trajectory(&curves, n).unwrap();
    let resampled: Vec<Vec<Point3>> = curves
        .iter()
        .map(|c| resample_by_arc_length(&c.positions(), n).unwrap())
        .collect();
    for i in 0..n {
        let mx = resampled.iter().map(|r| r[i].x).sum::<f64>() / 3.0;
        let my = resampled.iter().map(|r| r[i].y).sum::<f64>() / 3.0;
        let mz = resampled.iter().map(|r| r[i].z).sum::<f64>() / 3.0;
        assert!((avg[i].x - mx).abs() < 1e-12 && (avg[i].y - my).abs() < 1e-12 && (avg[i].z - mz).abs() < 1e-12);
    }
}

#[test]
fn fitness_examples() {
    assert_eq!(combine_fitness(5.0, 60.0, 65.0), 5.0);
    assert_eq!(combine_fitness(5.0, 70.0, 65.0), -65.0);
    let wall = ObstacleBox {
        cx: 0.0,
        cy: -3.0,
        length: 100.0,
        width: 2.0,
        height: 10.0,
        rotation: 0.0,
    };
    let params = FitnessParams::default();
    let one = fitness_distance(&[line(0.0, 20)], &[wall], &params).unwrap();
    assert_eq!(one.ave_dtw, 0.0);
    assert!((one.distance - 2.0).abs() < 1e-12);
    let twice = fitness_distance(&[line(0.0, 20), line(0.0, 20)], &[wall], &params).unwrap();
    assert_eq!(twice.ave_dtw, 0.0);
    assert_eq!(twice.distance, twice.sum_dist);
    // far-apart executions trip the divergence branch
    let diverse = fitness_distance(&[line(0.0, 20), line(10.0, 20)], &[wall], &params).unwrap();
    assert!(diverse.ave_dtw > params.max_dtw);
    assert!((diverse.distance - (diverse.sum_dist - diverse.ave_dtw)).abs() < 1e-12);
}

#[test]
fn min_distance_and_sum_dist_examples() {
    let a = ObstacleBox {
        cx: 0.0,
        cy: 3.0,
        length: 100.0,
        width: 2.0,
        height: 10.0,
        rotation: 0.0,
    };
    let b = ObstacleBox { cy: -4.5, ..a };
    let (d, trace) = min_obstacle_distance(&line(0.0, 10), &[a, b]);
    assert!((d - 2.0).abs() < 1e-12);
    assert_eq!(trace.len(), 10);
    let (inf, _) = min_obstacle_distance(&line(0.0, 10), &[]);
    assert!(inf.is_infinite());
    let p = [Point3::new(0.0, 0.0, 0.0)];
    assert!((sum_dist(&p, &[a, b]).unwrap() - 5.5).abs() < 1e-12);
    assert!(sum_dist(&p, &[]).is_err());
}
