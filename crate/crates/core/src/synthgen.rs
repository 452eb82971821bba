//! Seeded synthetic flights with known certainty and safety ground truth.
//!
//! Certain flights hold a constant heading between a few slew-limited,
//! raised-cosine mission turns. Uncertain flights add one sinusoidal heading oscillation.
//! The vehicle moves along a long wall-shaped obstacle, so its obstacle
//! distance equals a designed profile: a slow sway above 3.5 m for safe
//! flights, plus a V-shaped dip through 1 m for unsafe ones.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flightdata::{
    wrap_degrees, write_flight_log, write_labels, Certainty, Channel, FlightLabels, FlightLog, LogDescriptor,
    LogRecord, ObstacleBox, Safety,
};
use crate::geometry::DistanceTrace;

const SAFE_BASE: f64 = 6.0;
const SAFE_SWAY: f64 = 1.5;
const DIP_FLOOR: f64 = 0.5;
const DIP_SLOPE: f64 = 0.2;
const GROUND_SPEED: f64 = 2.0;
const ALTITUDE: f64 = 10.0;
const EDGE_MARGIN: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub flight_duration: f64,
    pub sample_rate: f64,
    /// Std of Gaussian noise on the safe-waypoint heading, degrees.
    pub noise_std: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Upper bound on heading slew during turns, degrees per second.
    pub max_slew: f64,
    /// Magnitude range of a mission turn, degrees.
    pub turn_angle: (f64, f64),
    /// Peak heading rate range of a turn, degrees per second; at most `max_slew`.
    pub turn_rate: (f64, f64),
    pub amplitude: (f64, f64),
    pub period: (f64, f64),
    pub oscillation_duration: (f64, f64),
    /// Delay from oscillation onset to the 1 m crossing of uncertain unsafe flights.
    pub unsafe_delay: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            flight_duration: 300.0,
            sample_rate: 5.0,
            noise_std: 1.0,
            min_turns: 2,
            max_turns: 5,
            max_slew: 30.0,
            turn_angle: (20.0, 60.0),
            turn_rate: (5.0, 15.0),
            amplitude: (20.0, 60.0),
            period: (1.0, 4.0),
            oscillation_duration: (10.0, 30.0),
            unsafe_delay: (20.0, 60.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.turn_angle, self.turn_rate, self.amplitude, self.period, self.oscillation_duration, self.unsafe_delay];
        if ranges.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo <= hi)) {
            return Err(Error::invalid("synthetic ranges must satisfy 0 < low <= high"));
        }
        if !(self.sample_rate > 0.0 && self.noise_std >= 0.0 && self.max_slew > 0.0) {
            return Err(Error::invalid("sample_rate and max_slew must be positive, noise_std non-negative"));
        }
        if self.turn_rate.1 > self.max_slew {
            return Err(Error::invalid("turn_rate exceeds max_slew"));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return Err(Error::invalid("need 1 <= min_turns <= max_turns"));
        }
        let longest_turn = self.turn_angle.1 * PI / (2.0 * self.turn_rate.0);
        if (self.flight_duration - 2.0 * EDGE_MARGIN) / (self.max_turns as f64) <= longest_turn {
            return Err(Error::Infeasible(format!(
                "{} turns do not fit into {} s",
                self.max_turns, self.flight_duration
            )));
        }
        let onset_hi = self.onset_range().1;
        if !(self.flight_duration.is_finite()) || onset_hi < EDGE_MARGIN * 2.0 {
            return Err(Error::Infeasible(format!(
                "flight_duration {} leaves no room for an oscillation onset",
                self.flight_duration
            )));
        }
        if onset_hi + self.oscillation_duration.1.max(self.unsafe_delay.1) >= self.flight_duration {
            return Err(Error::Infeasible(
                "oscillation or unsafe crossing would extend past the end of the flight".into(),
            ));
        }
        Ok(())
    }

    fn onset_range(&self) -> (f64, f64) {
        (2.0 * EDGE_MARGIN, self.flight_duration - 90.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub certain_safe: usize,
    pub uncertain_safe: usize,
    pub uncertain_unsafe: usize,
    pub certain_unsafe: usize,
}

impl ClassCounts {
    pub fn new(certain_safe: usize, uncertain_safe: usize, uncertain_unsafe: usize, certain_unsafe: usize) -> Self {
        Self {
            certain_safe,
            uncertain_safe,
            uncertain_unsafe,
            certain_unsafe,
        }
    }

    pub fn total(&self) -> usize {
        self.certain_safe + self.uncertain_safe + self.uncertain_unsafe + self.certain_unsafe
    }

    /// Classes in generation order.
    fn classes(&self) -> [(Certainty, Safety, usize); 4] {
        [
            (Certainty::Certain, Safety::Safe, self.certain_safe),
            (Certainty::Uncertain, Safety::Safe, self.uncertain_safe),
            (Certainty::Uncertain, Safety::Unsafe, self.uncertain_unsafe),
            (Certainty::Certain, Safety::Unsafe, self.certain_unsafe),
        ]
    }
}

/// Parses `certain_safe,uncertain_safe,uncertain_unsafe,certain_unsafe`.
impl FromStr for ClassCounts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!("expected four comma-separated counts, got '{s}'")));
        }
        let mut n = [0usize; 4];
        for (slot, p) in n.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::invalid(format!("invalid class count '{p}'")))?;
        }
        Ok(Self::new(n[0], n[1], n[2], n[3]))
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.certain_safe, self.uncertain_safe, self.uncertain_unsafe, self.certain_unsafe
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub start: f64,
    pub duration: f64,
    /// Signed heading change, degrees.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl Oscillation {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub sway_period: f64,
    pub sway_phase: f64,
    /// Time the distance first reaches 1 m; absent for safe flights.
    pub t_unsafe: Option<f64>,
}

/// Everything needed to rebuild a flight's noiseless heading and distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightTruth {
    pub flight_id: String,
    pub index: usize,
    pub safety: Safety,
    pub certainty: Certainty,
    pub initial_heading: f64,
    pub turns: Vec<Turn>,
    pub oscillation: Option<Oscillation>,
    pub distance: DistanceProfile,
    /// Injected anomaly intervals `[start, end]`, seconds.
    pub anomaly_intervals: Vec<[f64; 2]>,
}

impl FlightTruth {
    /// Unwrapped mission heading without oscillation or noise.
    pub fn mission_heading(&self, t: f64) -> f64 {
        self.turns.iter().fold(self.initial_heading, |h, turn| {
            let s = ((t - turn.start) / turn.duration).clamp(0.0, 1.0);
            h + turn.angle * 0.5 * (1.0 - (PI * s).cos())
        })
    }

    pub fn oscillation_offset(&self, t: f64) -> f64 {
        match self.oscillation {
            Some(o) if t >= o.onset && t <= o.end() => o.amplitude * (2.0 * PI * (t - o.onset) / o.period).sin(),
            _ => 0.0,
        }
    }

    /// Noiseless safe-waypoint heading, wrapped.
    pub fn heading(&self, t: f64) -> f64 {
        wrap_degrees(self.mission_heading(t) + self.oscillation_offset(t))
    }

    pub fn obstacle_distance(&self, t: f64) -> f64 {
        let d = &self.distance;
        let sway = SAFE_BASE + SAFE_SWAY * (2.0 * PI * t / d.sway_period + d.sway_phase).sin();
        match d.t_unsafe {
            Some(tu) => {
                let center = tu + (1.0 - DIP_FLOOR) / DIP_SLOPE;
                sway.min(DIP_FLOOR + DIP_SLOPE * (t - center).abs())
            }
            None => sway,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFlight {
    pub log: FlightLog,
    pub labels: FlightLabels,
    pub truth: FlightTruth,
    pub trace: DistanceTrace,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub counts: ClassCounts,
    pub obstacles: Vec<ObstacleBox>,
    pub flights: Vec<SynthFlight>,
}

/// A wall along the y axis whose face sits at x = 1.
pub fn wall_obstacle() -> ObstacleBox {
    ObstacleBox {
        cx: 0.0,
        cy: 0.0,
        length: 2.0,
        width: 2000.0,
        height: 30.0,
        rotation: 0.0,
    }
}

fn class_prefix(certainty: Certainty, safety: Safety) -> String {
    format!("{certainty}_{safety}")
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn draw_turns(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Turn> {
    let k = rng.gen_range(cfg.min_turns..=cfg.max_turns);
    let span = cfg.flight_duration - 2.0 * EDGE_MARGIN;
    let slot = span / k as f64;
    (0..k)
        .map(|i| {
            let angle: f64 = uniform(rng, cfg.turn_angle) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let peak_rate = uniform(rng, cfg.turn_rate);
            // raised-cosine easing peaks at pi/2 times the mean rate
            let duration = angle.abs() * PI / (2.0 * peak_rate);
            let start = EDGE_MARGIN + slot * i as f64 + rng.gen_range(0.0..(slot - duration));
            Turn { start, duration, angle }
        })
        .collect()
}

fn draw_truth(rng: &mut ChaCha8Rng, cfg: &SynthConfig, index: usize, id: String, certainty: Certainty, safety: Safety) -> FlightTruth {
    let initial_heading = rng.gen_range(-180.0..180.0);
    let turns = draw_turns(rng, cfg);
    let oscillation = (certainty == Certainty::Uncertain).then(|| Oscillation {
        onset: uniform(rng, cfg.onset_range()),
        duration: uniform(rng, cfg.oscillation_duration),
        amplitude: uniform(rng, cfg.amplitude),
        period: uniform(rng, cfg.period),
    });
    let sway_period = rng.gen_range(40.0..120.0);
    let sway_phase = rng.gen_range(0.0..2.0 * PI);
    let t_unsafe = match (safety, oscillation) {
        (Safety::Safe, _) => None,
        (Safety::Unsafe, Some(o)) => Some(o.onset + uniform(rng, cfg.unsafe_delay)),
        (Safety::Unsafe, None) => Some(rng.gen_range(60.0..cfg.flight_duration - 30.0)),
    };
    FlightTruth {
        flight_id: id,
        index,
        safety,
        certainty,
        initial_heading,
        turns,
        anomaly_intervals: oscillation.iter().map(|o| [o.onset, o.end()]).collect(),
        oscillation,
        distance: DistanceProfile {
            sway_period,
            sway_phase,
            t_unsafe,
        },
    }
}

fn render(truth: &FlightTruth, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(FlightLog, DistanceTrace)> {
    let n = (cfg.flight_duration * cfg.sample_rate).round() as usize + 1;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let y0 = -GROUND_SPEED * cfg.flight_duration / 2.0;
    let mut records = Vec::with_capacity(3 * n);
    let mut times = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / cfg.sample_rate;
        let d = truth.obstacle_distance(t);
        let (x, y) = (1.0 + d, y0 + GROUND_SPEED * t);
        let mission = wrap_degrees(truth.mission_heading(t));
        let jitter = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
        let safe = wrap_degrees(truth.mission_heading(t) + truth.oscillation_offset(t) + jitter);
        for (channel, r) in [(Channel::Desired, mission), (Channel::Safe, safe), (Channel::Position, mission)] {
            records.push(LogRecord {
                timestamp: t,
                channel,
                x,
                y,
                z: ALTITUDE,
                r,
            });
        }
        times.push(t);
        distances.push(x - 1.0);
    }
    let log = FlightLog::from_records(LogDescriptor::from_stem(&truth.flight_id), records)?;
    Ok((log, DistanceTrace::new(times, distances)))
}

/// Generates every flight of `counts`. Flight `i` draws from its own
/// stream of a generator seeded with `config.seed`.
pub fn generate(config: &SynthConfig, counts: ClassCounts) -> Result<SynthDataset> {
    config.validate()?;
    let mut flights = Vec::with_capacity(counts.total());
    let mut index = 0;
    for (certainty, safety, count) in counts.classes() {
        for k in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(index as u64);
            let id = format!("{}_{k:04}", class_prefix(certainty, safety));
            let truth = draw_truth(&mut rng, config, index, id, certainty, safety);
            let (log, trace) = render(&truth, config, &mut rng)?;
            flights.push(SynthFlight {
                labels: FlightLabels {
                    flight_id: truth.flight_id.clone(),
                    safety,
                    certainty,
                },
                log,
                truth,
                trace,
            });
            index += 1;
        }
    }
    Ok(SynthDataset {
        config: *config,
        counts,
        obstacles: vec![wall_obstacle()],
        flights,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config: SynthConfig,
    pub counts: ClassCounts,
    pub flights: Vec<FlightTruth>,
}

impl SynthDataset {
    pub fn ground_truth_json(&self) -> Result<String> {
        let doc = GroundTruthFile {
            config: self.config,
            counts: self.counts,
            flights: self.flights.iter().map(|f| f.truth.clone()).collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn labels_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_labels(self.flights.iter().map(|f| &f.labels), &mut buf)?;
        Ok(buf)
    }

    /// Writes `logs/<id>.csv`, `distances/<id>.csv`, `obstacles.json`,
    /// `labels.csv` and `ground_truth.json` under `dir`. Returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let logs = dir.join("logs");
        let dists = dir.join("distances");
        std::fs::create_dir_all(&logs)?;
        std::fs::create_dir_all(&dists)?;
        let mut written = Vec::new();
        let mut put = |path: std::path::PathBuf, bytes: &[u8]| -> Result<()> {
            crate::write_atomic(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        for f in &self.flights {
            let mut buf = Vec::new();
            write_flight_log(&f.log, &mut buf)?;
            put(logs.join(format!("{}.csv", f.truth.flight_id)), &buf)?;
            put(dists.join(format!("{}.csv", f.truth.flight_id)), &distance_csv(&f.trace))?;
        }
        let mut obstacles = serde_json::to_string_pretty(&self.obstacles)?;
        obstacles.push('\n');
        put(dir.join("obstacles.json"), obstacles.as_bytes())?;
        put(dir.join("labels.csv"), &self.labels_csv()?)?;
        put(dir.join("ground_truth.json"), self.ground_truth_json()?.as_bytes())?;
        Ok(written)
    }
}

pub fn distance_csv(trace: &DistanceTrace) -> Vec<u8> {
    let mut s = String::from("timestamp_s,distance_m\n");
    for (t, d) in trace.times.iter().zip(&trace.distances) {
        s.push_str(&format!("{t},{d}\n"));
    }
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_safe_flights_have_no_anomalies() {
        let ds = generate(&SynthConfig::default(), ClassCounts::new(10, 0, 0, 0)).unwrap();
        assert_eq!(ds.flights.len(), 10);
        for f in &ds.flights {
            assert!(f.truth.anomaly_intervals.is_empty());
            assert!(f.trace.min() > 3.5);
            assert_eq!(f.log.safe().len(), 1501);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, ClassCounts::new(2, 2, 2, 2)).unwrap();
        let b = generate(&cfg, ClassCounts::new(2, 2, 2, 2)).unwrap();
        assert_eq!(a.ground_truth_json().unwrap(), b.ground_truth_json().unwrap());
        for (x, y) in a.flights.iter().zip(&b.flights) {
            assert_eq!(x.log, y.log);
        }
        let c = generate(&SynthConfig { seed: 43, ..cfg }, ClassCounts::new(2, 2, 2, 2)).unwrap();
        assert_ne!(a.flights[0].log, c.flights[0].log);
    }

    #[test]
    fn flights_do_not_depend_on_later_counts() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, ClassCounts::new(3, 0, 0, 0)).unwrap();
        let b = generate(&cfg, ClassCounts::new(3, 5, 5, 5)).unwrap();
        assert_eq!(a.flights[2].log, b.flights[2].log);
    }

    #[test]
    fn unsafe_iff_below_one_meter() {
        let ds = generate(&SynthConfig::default(), ClassCounts::new(5, 5, 5, 5)).unwrap();
        for f in &ds.flights {
            assert_eq!(f.labels.safety == Safety::Unsafe, f.trace.min() < 1.0, "{}", f.truth.flight_id);
            if let (Some(o), Some(tu)) = (f.truth.oscillation, f.truth.distance.t_unsafe) {
                assert!(tu - o.onset >= 20.0 && tu - o.onset <= 60.0);
            }
            if let Some(tu) = f.truth.distance.t_unsafe {
                assert!(tu < ds.config.flight_duration);
                let crossing = f.trace.first_below(1.0).unwrap();
                assert!(crossing > tu && crossing - tu <= 1.0 / ds.config.sample_rate + 1e-9);
            }
        }
    }

    #[test]
    fn infeasible_and_bad_counts() {
        let short = SynthConfig {
            flight_duration: 100.0,
            ..Default::default()
        };
        assert!(matches!(generate(&short, ClassCounts::new(1, 0, 0, 0)), Err(Error::Infeasible(_))));
        assert!("1,2,3".parse::<ClassCounts>().is_err());
        assert!("1,2,x,4".parse::<ClassCounts>().is_err());
        assert_eq!("50,50,50,25".parse::<ClassCounts>().unwrap(), ClassCounts::new(50, 50, 50, 25));
    }
}
