//! Turns the safe-waypoint heading channel into fixed-length, zero-centered
//! windows annotated with obstacle distances.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flightdata::{Certainty, FlightLabels, FlightLog, ObstacleBox, Safety};
use crate::geometry::{min_obstacle_distance, DistanceTrace, Trajectory};

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Window length, seconds.
    pub window_length: f64,
    /// Overlap between consecutive windows, seconds.
    pub overlap: f64,
    /// Resampling rate, Hz.
    pub sample_rate: f64,
    /// Windows stay nominal only while obstacles are farther than this, meters.
    pub nominal_distance: f64,
    /// How far past a window's end the nominal check looks, seconds.
    pub nominal_lookahead: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window_length: 5.0,
            overlap: 2.5,
            sample_rate: 5.0,
            nominal_distance: 3.0,
            nominal_lookahead: 50.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_length > 0.0 && self.overlap > 0.0 && self.overlap < self.window_length) {
            return Err(Error::invalid("need 0 < overlap < window_length"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if !(self.nominal_lookahead >= 0.0 && self.nominal_distance.is_finite()) {
            return Err(Error::invalid("bad nominal filter settings"));
        }
        self.samples_per_window().map(|_| ())
    }

    /// Samples per window; `sample_rate * window_length` must be an integer >= 4.
    pub fn samples_per_window(&self) -> Result<usize> {
        let w = self.sample_rate * self.window_length;
        let rounded = w.round();
        if (w - rounded).abs() > 1e-6 || rounded < 4.0 {
            return Err(Error::invalid(format!(
                "sample_rate * window_length = {w} is not an integer >= 4"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn hop(&self) -> f64 {
        self.window_length - self.overlap
    }

    /// Number of complete windows in a series lasting `duration` seconds.
    pub fn window_count(&self, duration: f64) -> usize {
        if duration + GRID_EPS < self.window_length {
            0
        } else {
            ((duration - self.window_length) / self.hop() + GRID_EPS).floor() as usize + 1
        }
    }
}

/// One row of the windowed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingWindow {
    pub flight_id: String,
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Zero-centered headings, degrees.
    pub values: Vec<f64>,
    /// Closest obstacle distance within the window.
    pub win_dist: f64,
    /// Closest obstacle distance over the whole flight.
    pub min_dist: f64,
    pub safety: Option<Safety>,
    pub certainty: Option<Certainty>,
}

/// Makes a heading sequence continuous by shifting each sample by whole
/// turns so that consecutive samples differ by at most 180 degrees.
pub fn unwrap_heading(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.len());
    let mut turns = 0.0f64;
    for (i, &v) in r.iter().enumerate() {
        if i > 0 {
            let prev: f64 = out[i - 1];
            while v + 360.0 * turns - prev > 180.0 {
                turns -= 1.0;
            }
            while v + 360.0 * turns - prev < -180.0 {
                turns += 1.0;
            }
        }
        out.push(v + 360.0 * turns);
    }
    out
}

/// Samples on a uniform clock: `t0 + i / rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub t0: f64,
    pub rate: f64,
    pub values: Vec<f64>,
}

impl UniformSeries {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.time(i)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.values.len().saturating_sub(1) as f64 / self.rate
    }

    /// Linear interpolation at a fractional sample index.
    fn at_index(&self, idx: f64) -> f64 {
        let lo = idx.floor();
        let frac = idx - lo;
        let lo = lo as usize;
        if frac < GRID_EPS || lo + 1 >= self.values.len() {
            self.values[lo.min(self.values.len() - 1)]
        } else {
            self.values[lo] + frac * (self.values[lo + 1] - self.values[lo])
        }
    }
}

/// Linear interpolation of `values` onto a `rate` Hz grid spanning the first
/// to the last timestamp; no extrapolation.
pub fn resample_uniform(times: &[f64], values: &[f64], rate: f64) -> Result<UniformSeries> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::invalid("resampling needs at least 2 records"));
    }
    if !(rate > 0.0) {
        return Err(Error::invalid("rate must be positive"));
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (span * rate + GRID_EPS).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let t = t0 + i as f64 / rate;
        while seg + 2 < times.len() && times[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (times[seg], times[seg + 1]);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(if f == 0.0 {
            values[seg]
        } else if f == 1.0 {
            values[seg + 1]
        } else {
            values[seg] + f * (values[seg + 1] - values[seg])
        });
    }
    Ok(UniformSeries {
        t0,
        rate,
        values: out,
    })
}

/// Unwrapped, uniformly resampled heading of the safe-waypoint channel.
pub fn heading_series(log: &FlightLog, rate: f64) -> Result<UniformSeries> {
    let safe = log.safe();
    let times: Vec<f64> = safe.iter().map(|r| r.timestamp).collect();
    let raw: Vec<f64> = safe.iter().map(|r| r.r).collect();
    resample_uniform(&times, &unwrap_heading(&raw), rate)
}

/// Obstacle distance trace from the position channel, if obstacles and at
/// least two positions exist.
pub fn distance_trace(log: &FlightLog, obstacles: &[ObstacleBox]) -> Result<Option<DistanceTrace>> {
    if obstacles.is_empty() || log.position().len() < 2 {
        return Ok(None);
    }
    let traj = Trajectory::from_log(log)?;
    Ok(Some(min_obstacle_distance(&traj, obstacles).1))
}

pub fn zero_center(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values {
        *v -= mean;
    }
}

/// Slices the series into overlapping windows; a trailing partial window is
/// dropped. Distances default to infinity without a trace.
pub fn make_windows(
    flight_id: &str,
    series: &UniformSeries,
    distances: Option<&DistanceTrace>,
    config: &PreprocessConfig,
    labels: Option<&FlightLabels>,
) -> Result<Vec<HeadingWindow>> {
    config.validate()?;
    let w = config.samples_per_window()?;
    let hop = config.hop();
    let count = config.window_count(series.duration());
    let min_dist = distances.map_or(f64::INFINITY, DistanceTrace::min);
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let offset = index as f64 * hop;
        let base = offset * series.rate;
        let mut values: Vec<f64> = (0..w).map(|k| series.at_index(base + k as f64)).collect();
        zero_center(&mut values);
        let start = series.t0 + offset;
        let end = start + config.window_length;
        out.push(HeadingWindow {
            flight_id: flight_id.to_string(),
            index,
            start,
            end,
            values,
            win_dist: distances.map_or(f64::INFINITY, |d| d.min_between(start, end)),
            min_dist,
            safety: labels.map(|l| l.safety),
            certainty: labels.map(|l| l.certainty),
        });
    }
    Ok(out)
}

/// Full per-flight pipeline: unwrap, resample, window, annotate.
pub fn preprocess_flight(
    log: &FlightLog,
    obstacles: &[ObstacleBox],
    config: &PreprocessConfig,
    labels: Option<&FlightLabels>,
) -> Result<(Vec<HeadingWindow>, Option<DistanceTrace>)> {
    let series = heading_series(log, config.sample_rate)?;
    let trace = distance_trace(log, obstacles)?;
    let windows = make_windows(&log.flight_id, &series, trace.as_ref(), config, labels)?;
    Ok((windows, trace))
}

/// Keeps windows whose obstacle distance stays above `nominal_distance`
/// from the window start through `nominal_lookahead` seconds past its end
/// (truncated at the end of the trace).
pub fn filter_nominal(
    windows: &[HeadingWindow],
    trace: Option<&DistanceTrace>,
    config: &PreprocessConfig,
) -> Vec<HeadingWindow> {
    windows
        .iter()
        .filter(|w| {
            let d = trace.map_or(f64::INFINITY, |t| {
                t.min_between(w.start, w.end + config.nominal_lookahead)
            });
            d > config.nominal_distance
        })
        .cloned()
        .collect()
}

/// Nominal filter from the annotations stored in a windowed dataset, for
/// when the original distance trace is gone. A window's look-ahead interval
/// is covered by the `win_dist` of windows of the same flight that overlap it.
pub fn filter_nominal_annotated(
    windows: &[HeadingWindow],
    config: &PreprocessConfig,
) -> Vec<HeadingWindow> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < windows.len() {
        let mut j = i;
        while j < windows.len() && windows[j].flight_id == windows[i].flight_id {
            j += 1;
        }
        let flight = &windows[i..j];
        for w in flight {
            let horizon = w.end + config.nominal_lookahead;
            let d = flight
                .iter()
                .filter(|o| o.end >= w.start && o.start <= horizon)
                .map(|o| o.win_dist)
                .fold(f64::INFINITY, f64::min);
            if d > config.nominal_distance {
                out.push(w.clone());
            }
        }
        i = j;
    }
    out
}

pub fn windows_header(w: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "flight_id",
        "index",
        "start_s",
        "end_s",
        "win_dist_m",
        "min_dist_m",
        "safety",
        "certainty",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..w).map(|i| format!("v{i}")));
    h
}

fn opt_label<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn window_row(win: &HeadingWindow) -> Vec<String> {
    let mut row = vec![
        win.flight_id.clone(),
        win.index.to_string(),
        win.start.to_string(),
        win.end.to_string(),
        win.win_dist.to_string(),
        win.min_dist.to_string(),
        opt_label(win.safety),
        opt_label(win.certainty),
    ];
    row.extend(win.values.iter().map(f64::to_string));
    row
}

/// Writes the windowed dataset. All windows must share one length.
pub fn write_windows(windows: &[HeadingWindow], w: usize, sink: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(windows_header(w))?;
    for win in windows {
        if win.values.len() != w {
            return Err(Error::LengthMismatch {
                expected: w,
                got: win.values.len(),
            });
        }
        out.write_record(window_row(win))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses one windowed-dataset data row; `w` comes from the header.
pub fn parse_window_row(fields: &[&str], w: usize, line: u64) -> Result<HeadingWindow> {
    if fields.len() != 8 + w {
        return Err(Error::parse(
            line,
            format!("expected {} columns, got {}", 8 + w, fields.len()),
        ));
    }
    let num = |i: usize, name: &str| -> Result<f64> {
        fields[i]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("cannot parse {name} from '{}'", fields[i])))
    };
    let label = |i: usize| fields[i].trim();
    Ok(HeadingWindow {
        flight_id: fields[0].trim().to_string(),
        index: fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad index '{}'", fields[1])))?,
        start: num(2, "start_s")?,
        end: num(3, "end_s")?,
        win_dist: num(4, "win_dist_m")?,
        min_dist: num(5, "min_dist_m")?,
        safety: match label(6) {
            "" => None,
            s => Some(s.parse()?),
        },
        certainty: match label(7) {
            "" => None,
            s => Some(s.parse()?),
        },
        values: (0..w)
            .map(|k| num(8 + k, "heading value"))
            .collect::<Result<_>>()?,
    })
}

/// Window length implied by a windowed-dataset header.
pub fn parse_windows_header(fields: &[&str]) -> Result<usize> {
    if fields.len() < 8 {
        return Err(Error::parse(1, "windowed dataset header too short"));
    }
    let w = fields.len() - 8;
    let expected = windows_header(w);
    if fields.iter().map(|f| f.trim()).ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(1, format!("unexpected header, want '{}'", expected.join(","))));
    }
    Ok(w)
}

/// Reads a whole windowed dataset, returning the windows and W.
pub fn read_windows(source: impl Read) -> Result<(Vec<HeadingWindow>, usize)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    let w = parse_windows_header(&header.iter().collect::<Vec<_>>())?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_window_row(&row.iter().collect::<Vec<_>>(), w, line)?);
    }
    Ok((out, w))
}

/// Incremental reader over a windowed dataset arriving line by line.
pub struct WindowStreamReader<R> {
    inner: R,
    w: usize,
    line: u64,
    buf: String,
}

impl<R: BufRead> WindowStreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = String::new();
        if inner.read_line(&mut buf)? == 0 {
            return Err(Error::Empty("windowed dataset header"));
        }
        let fields: Vec<&str> = buf.trim_end().split(',').collect();
        let w = parse_windows_header(&fields)?;
        Ok(Self {
            inner,
            w,
            line: 1,
            buf: String::new(),
        })
    }

    pub fn window_len(&self) -> usize {
        self.w
    }
}

impl<R: BufRead> Iterator for WindowStreamReader<R> {
    type Item = Result<HeadingWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line += 1;
                    let row = self.buf.trim_end();
                    if row.is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = row.split(',').collect();
                    return Some(parse_window_row(&fields, self.w, self.line));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform(values: Vec<f64>) -> UniformSeries {
        UniformSeries {
            t0: 0.0,
            rate: 5.0,
            values,
        }
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_heading(&[175.0, -175.0]), vec![175.0, 185.0]);
        assert_eq!(unwrap_heading(&[-170.0, 170.0]), vec![-170.0, -190.0]);
        assert_eq!(unwrap_heading(&[0.0, 10.0, 20.0]), vec![0.0, 10.0, 20.0]);
        // several full turns
        let spin: Vec<f64> = (0..100).map(|i| crate::flightdata::wrap_degrees(i as f64 * 40.0)).collect();
        let un = unwrap_heading(&spin);
        for (i, v) in un.iter().enumerate() {
            assert_abs_diff_eq!(*v, i as f64 * 40.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn resample_examples() {
        let s = resample_uniform(&[0.0, 1.0], &[0.0, 10.0], 5.0).unwrap();
        assert_eq!(s.values.len(), 6);
        for (i, v) in s.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, 2.0 * i as f64, epsilon = 1e-12);
        }
        let times: Vec<f64> = (0..30).map(|i| i as f64 / 5.0).collect();
        let vals: Vec<f64> = (0..30).map(|i| ((i * 37) % 11) as f64).collect();
        let s = resample_uniform(&times, &vals, 5.0).unwrap();
        assert_eq!(s.values.len(), 30);
        for (a, b) in s.values.iter().zip(&vals) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert!(resample_uniform(&[0.0], &[1.0], 5.0).is_err());
    }

    #[test]
    fn window_starts_and_count() {
        let cfg = PreprocessConfig::default();
        let s = uniform((0..51).map(|i| i as f64).collect());
        let wins = make_windows("f", &s, None, &cfg, None).unwrap();
        assert_eq!(wins.len(), 3);
        let starts: Vec<f64> = wins.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0.0, 2.5, 5.0]);
        for w in &wins {
            assert_eq!(w.values.len(), 25);
            assert_abs_diff_eq!(w.end - w.start, 5.0);
            assert!(w.win_dist.is_infinite());
        }
        assert_eq!(cfg.window_count(60.0), 23);
        assert_eq!(cfg.window_count(4.9), 0);
    }

    #[test]
    fn half_sample_hop_interpolates() {
        let cfg = PreprocessConfig::default();
        // a pure ramp stays a ramp after interpolation and centering
        let s = uniform((0..51).map(|i| 2.0 * i as f64).collect());
        let wins = make_windows("f", &s, None, &cfg, None).unwrap();
        assert_eq!(wins[0].values, wins[1].values);
    }

    #[test]
    fn centering() {
        let cfg = PreprocessConfig::default();
        let s = uniform((0..30).map(|i| 10.0 * (i + 1) as f64).collect());
        let w = &make_windows("f", &s, None, &cfg, None).unwrap()[0];
        assert_abs_diff_eq!(w.values.iter().sum::<f64>(), 0.0, epsilon = 1e-9);

        let s = uniform(vec![90.0; 30]);
        let w = &make_windows("f", &s, None, &cfg, None).unwrap()[0];
        assert!(w.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_empty() {
        let s = uniform(vec![0.0; 10]);
        assert!(make_windows("f", &s, None, &PreprocessConfig::default(), None)
            .unwrap()
            .is_empty());
    }

    fn windows_over(duration: f64) -> Vec<HeadingWindow> {
        let n = (duration * 5.0) as usize + 1;
        make_windows("f", &uniform(vec![0.0; n]), None, &PreprocessConfig::default(), None).unwrap()
    }

    fn trace_with_dip(duration: f64, at: f64, depth: f64) -> DistanceTrace {
        let times: Vec<f64> = (0..=(duration * 5.0) as usize).map(|i| i as f64 / 5.0).collect();
        let d = times.iter().map(|&t| if (t - at).abs() < 1e-9 { depth } else { 5.0 }).collect();
        DistanceTrace::new(times, d)
    }

    #[test]
    fn nominal_filter() {
        let cfg = PreprocessConfig::default();
        let wins = windows_over(200.0);
        let flat = trace_with_dip(200.0, -1.0, 0.0);
        assert_eq!(filter_nominal(&wins, Some(&flat), &cfg).len(), wins.len());

        // window 0 ends at 5 s; a dip at 25 s excludes it, a dip at 65 s does not
        let near = trace_with_dip(200.0, 25.0, 2.9);
        let kept = filter_nominal(&wins, Some(&near), &cfg);
        assert!(!kept.iter().any(|w| w.index == 0));
        let far = trace_with_dip(200.0, 65.0, 2.9);
        let kept = filter_nominal(&wins, Some(&far), &cfg);
        assert!(kept.iter().any(|w| w.index == 0));
        assert!(!kept.iter().any(|w| w.index == 4)); // ends at 15 s
    }

    #[test]
    fn annotated_filter_is_conservative() {
        let cfg = PreprocessConfig::default();
        let s = uniform(vec![0.0; 1001]);
        let trace = trace_with_dip(200.0, 120.2, 2.0);
        let wins = make_windows("f", &s, Some(&trace), &cfg, None).unwrap();
        let a: Vec<usize> = filter_nominal(&wins, Some(&trace), &cfg).iter().map(|w| w.index).collect();
        let b: Vec<usize> = filter_nominal_annotated(&wins, &cfg).iter().map(|w| w.index).collect();
        // window granularity can only drop extra windows, at most one hop's worth per side
        assert!(b.iter().all(|i| a.contains(i)));
        assert!(a.len() - b.len() <= 2 * (cfg.window_length / cfg.hop()).ceil() as usize);
        assert!(!b.contains(&47) && !b.contains(&48));
    }

    #[test]
    fn windowed_csv_round_trip() {
        let cfg = PreprocessConfig::default();
        let s = uniform((0..60).map(|i| (i as f64 * 0.7).sin() * 30.0).collect());
        let labels = FlightLabels {
            flight_id: "f".into(),
            safety: Safety::Unsafe,
            certainty: Certainty::Certain,
        };
        let trace = trace_with_dip(12.0, 3.0, 1.5);
        let wins = make_windows("f", &s, Some(&trace), &cfg, Some(&labels)).unwrap();
        let mut buf = Vec::new();
        write_windows(&wins, 25, &mut buf).unwrap();
        let (back, w) = read_windows(buf.as_slice()).unwrap();
        assert_eq!(w, 25);
        assert_eq!(back, wins);

        let streamed: Vec<HeadingWindow> = WindowStreamReader::new(buf.as_slice())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(streamed, wins);
    }

    #[test]
    fn config_validation() {
        let bad = PreprocessConfig {
            overlap: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let odd = PreprocessConfig {
            sample_rate: 4.1,
            ..Default::default()
        };
        assert!(odd.samples_per_window().is_err());
    }
}
