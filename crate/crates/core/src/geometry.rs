//! Trajectory and obstacle geometry, plus the test-generation fitness that
//! combines obstacle proximity with execution-to-execution divergence.

use crate::error::{Error, Result};
use crate::flightdata::{FlightLog, ObstacleBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub p: Point3,
}

/// Time-stamped positions of one flight; at least two points with strictly
/// increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("trajectory needs at least 2 points"));
        }
        if points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid("trajectory timestamps must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn from_log(log: &FlightLog) -> Result<Self> {
        Self::new(
            log.position()
                .iter()
                .map(|r| TrajectoryPoint {
                    t: r.timestamp,
                    p: Point3::new(r.x, r.y, r.z),
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.p).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessParams {
    pub max_dtw: f64,
    pub resample_n: usize,
}

impl Default for FitnessParams {
    fn default() -> Self {
        Self {
            max_dtw: 65.0,
            resample_n: 200,
        }
    }
}

/// Horizontal distance from (px, py) to the rotated footprint of `b`;
/// zero inside or on the boundary.
pub fn point_box_distance(px: f64, py: f64, b: &ObstacleBox) -> f64 {
    let (s, c) = b.rotation.to_radians().sin_cos();
    let (dx, dy) = (px - b.cx, py - b.cy);
    // rotate into the box frame
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    let ox = (lx.abs() - b.length / 2.0).max(0.0);
    let oy = (ly.abs() - b.width / 2.0).max(0.0);
    ox.hypot(oy)
}

fn nearest_obstacle(p: &Point3, obstacles: &[ObstacleBox]) -> f64 {
    obstacles
        .iter()
        .map(|o| point_box_distance(p.x, p.y, o))
        .fold(f64::INFINITY, f64::min)
}

/// Time-indexed distance to the closest obstacle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceTrace {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

impl DistanceTrace {
    pub fn new(times: Vec<f64>, distances: Vec<f64>) -> Self {
        debug_assert_eq!(times.len(), distances.len());
        Self { times, distances }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.distances.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum over samples with `start <= t <= end`; infinity if none.
    pub fn min_between(&self, start: f64, end: f64) -> f64 {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t <= end);
        self.distances[lo..hi.max(lo)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// First sample time whose distance is strictly below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.distances)
            .find(|(_, &d)| d < threshold)
            .map(|(&t, _)| t)
    }

    /// Distance at the sample closest in time to `t`.
    pub fn nearest(&self, t: f64) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let i = self.times.partition_point(|&s| s < t);
        let best = if i == 0 {
            0
        } else if i == self.len() {
            self.len() - 1
        } else if (self.times[i] - t) < (t - self.times[i - 1]) {
            i
        } else {
            i - 1
        };
        Some(self.distances[best])
    }
}

/// Flight-wide minimum obstacle distance and the per-sample trace. With no
/// obstacles every distance is infinite.
pub fn min_obstacle_distance(traj: &Trajectory, obstacles: &[ObstacleBox]) -> (f64, DistanceTrace) {
    let trace = DistanceTrace::new(
        traj.points.iter().map(|p| p.t).collect(),
        traj.points
            .iter()
            .map(|p| nearest_obstacle(&p.p, obstacles))
            .collect(),
    );
    (trace.min(), trace)
}

/// Minimum over points of the summed distance to every obstacle.
pub fn sum_dist(points: &[Point3], obstacles: &[ObstacleBox]) -> Result<f64> {
    if obstacles.is_empty() {
        return Err(Error::Empty("obstacles"));
    }
    if points.is_empty() {
        return Err(Error::Empty("trajectory points"));
    }
    Ok(points
        .iter()
        .map(|p| obstacles.iter().map(|o| point_box_distance(p.x, p.y, o)).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

/// Unconstrained dynamic time warping with Euclidean local cost. Returns the
/// total accumulated cost of the optimal alignment.
pub fn dtw(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw sequence"));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for pa in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = pa.dist(&b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Resamples a polyline to `n` points spaced uniformly by arc length.
pub fn resample_by_arc_length(points: &[Point3], n: usize) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::Empty("trajectory points"));
    }
    if n < 2 {
        return Err(Error::invalid("resample_n must be at least 2"));
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(&w[1]));
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return Ok(vec![points[0]; n]);
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let (s0, s1) = (cum[seg], cum[seg + 1]);
        let f = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        let (p0, p1) = (points[seg], points[seg + 1]);
        out.push(Point3::new(
            p0.x + f * (p1.x - p0.x),
            p0.y + f * (p1.y - p0.y),
            p0.z + f * (p1.z - p0.z),
        ));
    }
    Ok(out)
}

/// Pointwise mean of the arc-length-resampled trajectories.
pub fn average_trajectory(trajs: &[Trajectory], resample_n: usize) -> Result<Vec<Point3>> {
    let resampled = trajs
        .iter()
        .map(|t| resample_by_arc_length(&t.positions(), resample_n))
        .collect::<Result<Vec<_>>>()?;
    mean_of_resampled(&resampled)
}

fn mean_of_resampled(resampled: &[Vec<Point3>]) -> Result<Vec<Point3>> {
    let first = resampled.first().ok_or(Error::Empty("trajectories"))?;
    let k = resampled.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
            for r in resampled {
                x += r[i].x;
                y += r[i].y;
                z += r[i].z;
            }
            Point3::new(x / k, y / k, z / k)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessBreakdown {
    pub sum_dist: f64,
    pub ave_dtw: f64,
    pub distance: f64,
}

/// Combines proximity and divergence: the divergence term is subtracted only
/// once it exceeds `max_dtw`.
pub fn combine_fitness(sum_dist: f64, ave_dtw: f64, max_dtw: f64) -> f64 {
    if ave_dtw > max_dtw {
        sum_dist - ave_dtw
    } else {
        sum_dist
    }
}

/// Fitness of one test case from the trajectories of its executions. Lower
/// values mark more interesting test cases.
///
/// Every execution is resampled to `params.resample_n` points; DTW compares
/// each resampled execution to their pointwise average, and the proximity
/// term is measured along the average trajectory.
pub fn fitness_distance(
    trajs: &[Trajectory],
    obstacles: &[ObstacleBox],
    params: &FitnessParams,
) -> Result<FitnessBreakdown> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectories"));
    }
    if !(params.max_dtw > 0.0) {
        return Err(Error::invalid("max_dtw must be positive"));
    }
    let resampled = trajs
        .iter()
        .map(|t| resample_by_arc_length(&t.positions(), params.resample_n))
        .collect::<Result<Vec<_>>>()?;
    let average = mean_of_resampled(&resampled)?;
    let mut total = 0.0;
    for r in &resampled {
        total += dtw(r, &average)?;
    }
    let ave_dtw = total / trajs.len() as f64;
    let sum_dist = sum_dist(&average, obstacles)?;
    Ok(FitnessBreakdown {
        sum_dist,
        ave_dtw,
        distance: combine_fitness(sum_dist, ave_dtw, params.max_dtw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square(cx: f64, cy: f64, side: f64, rotation: f64) -> ObstacleBox {
        ObstacleBox {
            cx,
            cy,
            length: side,
            width: side,
            height: 10.0,
            rotation,
        }
    }

    fn line(points: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrajectoryPoint {
                    t: i as f64,
                    p: Point3::new(x, y, 5.0),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn box_distance_axis_aligned() {
        assert_abs_diff_eq!(point_box_distance(5.0, 0.0, &square(0.0, 0.0, 2.0, 0.0)), 4.0);
        assert_eq!(point_box_distance(0.0, 0.0, &square(0.3, -0.2, 1.0, 17.0)), 0.0);
        // corner region
        assert_abs_diff_eq!(
            point_box_distance(4.0, 5.0, &square(0.0, 0.0, 2.0, 0.0)),
            (9.0f64 + 16.0).sqrt(),
            epsilon = 1e-12
        );
    }

    /// Dense sampling of the rotated rectangle as an independent oracle.
    fn sampled_distance(px: f64, py: f64, b: &ObstacleBox) -> f64 {
        let (s, c) = b.rotation.to_radians().sin_cos();
        let n = 4000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let u = -0.5 + i as f64 / n as f64;
            for (lx, ly) in [
                (u * b.length, -b.width / 2.0),
                (u * b.length, b.width / 2.0),
                (-b.length / 2.0, u * b.width),
                (b.length / 2.0, u * b.width),
            ] {
                let (wx, wy) = (b.cx + c * lx - s * ly, b.cy + s * lx + c * ly);
                best = best.min((px - wx).hypot(py - wy));
            }
        }
        best
    }

    #[test]
    fn box_distance_rotated() {
        let b = square(0.0, 0.0, 2.0, 45.0);
        let d = point_box_distance(2.0, 0.0, &b);
        assert_abs_diff_eq!(d, 2.0 - 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, sampled_distance(2.0, 0.0, &b), epsilon = 1e-3);

        let b = ObstacleBox {
            cx: 1.5,
            cy: -2.0,
            length: 4.0,
            width: 1.0,
            height: 3.0,
            rotation: 110.0,
        };
        for (px, py) in [(6.0, 1.0), (-3.0, -4.0), (1.5, 3.0), (0.0, 0.0)] {
            assert_abs_diff_eq!(
                point_box_distance(px, py, &b),
                sampled_distance(px, py, &b),
                epsilon = 1e-3
            );
        }
    }

    #[test]
    fn min_distance_cases() {
        let b = square(0.0, 0.0, 2.0, 0.0);
        let path = line(&[(-5.0, 2.2), (0.0, 2.2), (5.0, 2.2)]);
        let (min, trace) = min_obstacle_distance(&path, &[b]);
        assert_abs_diff_eq!(min, 1.2, epsilon = 1e-9);
        assert_eq!(trace.len(), 3);

        let inside = line(&[(5.0, 5.0), (0.5, 0.0)]);
        assert_eq!(min_obstacle_distance(&inside, &[b]).0, 0.0);

        let a = square(0.0, 0.0, 2.0, 0.0);
        let far = square(0.0, 10.0, 2.0, 0.0);
        // path at x = 3: 2.0 m from A; closest approach to B is at y = 5.5 -> 3.5 m
        let path = line(&[(3.0, 0.0), (3.0, 5.5)]);
        let (_, t) = min_obstacle_distance(&path, &[far]);
        assert_abs_diff_eq!(t.min(), (2.0f64.powi(2) + 3.5f64.powi(2)).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(min_obstacle_distance(&path, &[a, far]).0, 2.0, epsilon = 1e-12);

        let (min, trace) = min_obstacle_distance(&path, &[]);
        assert!(min.is_infinite());
        assert!(trace.distances.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn sum_dist_cases() {
        let a = square(-3.0, 0.0, 2.0, 0.0); // 2 m from origin
        let b = square(4.0, 0.0, 2.0, 0.0); // 3 m from origin
        let origin = [Point3::new(0.0, 0.0, 0.0)];
        assert_abs_diff_eq!(sum_dist(&origin, &[a, b]).unwrap(), 5.0, epsilon = 1e-12);

        let path = line(&[(5.0, 3.0), (2.0, 0.0)]);
        let (min, _) = min_obstacle_distance(&path, &[a]);
        assert_abs_diff_eq!(sum_dist(&path.positions(), &[a]).unwrap(), min);

        // per-point sums: (4.0 + ...) chosen directly with a single box
        let c = square(0.0, 0.0, 2.0, 0.0);
        let pts = [Point3::new(5.0, 0.0, 0.0), Point3::new(4.2, 0.0, 0.0)];
        assert_abs_diff_eq!(sum_dist(&pts, &[c]).unwrap(), 3.2, epsilon = 1e-12);

        assert!(sum_dist(&origin, &[]).is_err());
    }

    #[test]
    fn dtw_small_cases() {
        let a = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        let b = [Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert_abs_diff_eq!(dtw(&a, &b).unwrap(), 1.0);
        assert_abs_diff_eq!(dtw(&b, &a).unwrap(), 1.0);
        assert_eq!(dtw(&a, &a).unwrap(), 0.0);
        assert!(dtw(&a, &[]).is_err());
    }

    #[test]
    fn averaging() {
        let l0 = line(&[(0.0, 0.0), (10.0, 0.0)]);
        let l2 = line(&[(0.0, 2.0), (4.0, 2.0), (10.0, 2.0)]);
        let avg = average_trajectory(&[l0.clone(), l2], 11).unwrap();
        for (i, p) in avg.iter().enumerate() {
            assert_abs_diff_eq!(p.x, i as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        }
        let same = average_trajectory(&[l0.clone(), l0.clone()], 7).unwrap();
        assert_eq!(same, resample_by_arc_length(&l0.positions(), 7).unwrap());

        let still = Trajectory::new(vec![
            TrajectoryPoint { t: 0.0, p: Point3::new(1.0, 1.0, 1.0) },
            TrajectoryPoint { t: 1.0, p: Point3::new(1.0, 1.0, 1.0) },
        ])
        .unwrap();
        let avg = average_trajectory(&[still, l0], 3).unwrap();
        assert_abs_diff_eq!(avg[2].x, 5.5);
    }

    #[test]
    fn fitness_branches() {
        assert_eq!(combine_fitness(5.0, 60.0, 65.0), 5.0);
        assert_eq!(combine_fitness(5.0, 70.0, 65.0), -65.0);

        let b = square(0.0, 0.0, 2.0, 0.0);
        let path = line(&[(-5.0, 3.0), (5.0, 3.0)]);
        let f = fitness_distance(&[path.clone(), path.clone(), path.clone()], &[b], &FitnessParams::default())
            .unwrap();
        assert!(f.ave_dtw < 1e-9);
        assert_eq!(f.distance, f.sum_dist);
        assert_abs_diff_eq!(f.sum_dist, 2.0, epsilon = 1e-12);

        let single = fitness_distance(&[path], &[b], &FitnessParams::default()).unwrap();
        assert_eq!(single.ave_dtw, 0.0);
    }

    #[test]
    fn trace_queries() {
        let tr = DistanceTrace::new(vec![0.0, 1.0, 2.0, 3.0], vec![5.0, 0.8, 2.0, 0.5]);
        assert_eq!(tr.first_below(1.0), Some(1.0));
        assert_eq!(tr.min_between(1.5, 2.5), 2.0);
        assert!(tr.min_between(3.5, 9.0).is_infinite());
        assert_eq!(tr.nearest(1.4), Some(0.8));
        assert_eq!(tr.nearest(1.6), Some(2.0));
        assert_eq!(tr.nearest(-3.0), Some(5.0));
        assert_eq!(tr.nearest(30.0), Some(0.5));
    }
}
