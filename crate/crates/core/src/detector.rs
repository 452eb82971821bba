//! Runtime uncertainty detection over a stream of heading windows.
//!
//! Each window is scored by its reconstruction loss. Alarms fire when the
//! mean loss of the last `n_consecutive` windows exceeds the threshold,
//! which suppresses isolated spikes from ordinary maneuvers. Decisions for a
//! window only ever use that window and earlier ones.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autoenc::AutoencoderModel;
use crate::error::{Error, Result};
use crate::flightdata::{Certainty, LabelMap, Safety};
use crate::geometry::DistanceTrace;
use crate::preprocess::HeadingWindow;

pub const ALARMS_HEADER: [&str; 5] = ["flight_id", "window_index", "timestamp_s", "loss", "rolling_mean"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub threshold: f64,
    pub n_consecutive: usize,
    /// Distance below which the flight counts as having reached a critical state.
    pub critical_distance: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            n_consecutive: 4,
            critical_distance: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::invalid("threshold must be positive"));
        }
        if self.n_consecutive == 0 {
            return Err(Error::invalid("n_consecutive must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub window_index: usize,
    /// End of the window that raised the alarm, seconds.
    pub timestamp: f64,
    pub loss: f64,
    pub rolling_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub loss: f64,
    /// Absent until `n_consecutive` windows have been seen.
    pub rolling_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub flight_id: String,
    pub threshold: f64,
    pub n_consecutive: usize,
    pub windows: Vec<WindowScore>,
    pub alarms: Vec<AlarmEvent>,
    pub flight_uncertain: bool,
    pub first_alarm_time: Option<f64>,
    pub first_critical_time: Option<f64>,
    /// First critical-distance crossing minus first alarm; negative when the
    /// alarm came late.
    pub lead_time: Option<f64>,
    pub distance_at_first_alarm: Option<f64>,
}

/// Mean of the last `n` values, available once `n` values have arrived.
#[derive(Debug, Clone)]
pub struct RollingMean {
    n: usize,
    buf: VecDeque<f64>,
}

impl RollingMean {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            buf: VecDeque::with_capacity(n),
        }
    }

    pub fn push(&mut self, v: f64) -> Option<f64> {
        if self.buf.len() == self.n {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        (self.buf.len() == self.n).then(|| self.buf.iter().sum::<f64>() / self.n as f64)
    }
}

/// Alarm logic on already-computed losses.
#[derive(Debug, Clone)]
pub struct AlarmState {
    config: DetectorConfig,
    rolling: RollingMean,
    last_index: Option<usize>,
}

impl AlarmState {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rolling: RollingMean::new(config.n_consecutive),
            config,
            last_index: None,
        })
    }

    /// Feeds the loss of window `index`; returns the rolling mean (if warmed
    /// up) and whether it crosses the threshold.
    pub fn push(&mut self, index: usize, loss: f64) -> Result<(Option<f64>, bool)> {
        if let Some(last) = self.last_index {
            if index <= last {
                return Err(Error::OutOfOrder { last, got: index });
            }
        }
        self.last_index = Some(index);
        let mean = self.rolling.push(loss);
        Ok((mean, mean.is_some_and(|m| m > self.config.threshold)))
    }
}

/// Incremental detector for one flight.
pub struct StreamDetector<'m> {
    model: &'m AutoencoderModel,
    state: AlarmState,
    report: DetectionReport,
}

impl<'m> StreamDetector<'m> {
    pub fn new(model: &'m AutoencoderModel, flight_id: &str, config: DetectorConfig) -> Result<Self> {
        Ok(Self {
            model,
            state: AlarmState::new(config)?,
            report: DetectionReport {
                flight_id: flight_id.to_string(),
                threshold: config.threshold,
                n_consecutive: config.n_consecutive,
                windows: Vec::new(),
                alarms: Vec::new(),
                flight_uncertain: false,
                first_alarm_time: None,
                first_critical_time: None,
                lead_time: None,
                distance_at_first_alarm: None,
            },
        })
    }

    /// Scores one window; returns the alarm it raised, if any.
    pub fn push(&mut self, window: &HeadingWindow) -> Result<Option<AlarmEvent>> {
        let loss = self.model.window_loss(&window.values)?;
        self.push_loss(window.index, window.start, window.end, loss)
    }

    pub fn push_loss(&mut self, index: usize, start: f64, end: f64, loss: f64) -> Result<Option<AlarmEvent>> {
        let (rolling_mean, alarm) = self.state.push(index, loss)?;
        self.report.windows.push(WindowScore {
            index,
            start,
            end,
            loss,
            rolling_mean,
        });
        if !alarm {
            return Ok(None);
        }
        let event = AlarmEvent {
            window_index: index,
            timestamp: end,
            loss,
            rolling_mean: rolling_mean.unwrap_or(loss),
        };
        if self.report.alarms.is_empty() {
            self.report.first_alarm_time = Some(end);
            self.report.flight_uncertain = true;
        }
        self.report.alarms.push(event.clone());
        Ok(Some(event))
    }

    pub fn report(&self) -> &DetectionReport {
        &self.report
    }

    pub fn finish(self) -> DetectionReport {
        self.report
    }
}

/// Runs the detector over a complete window sequence of one flight.
pub fn detect_stream<'a>(
    model: &AutoencoderModel,
    flight_id: &str,
    windows: impl IntoIterator<Item = &'a HeadingWindow>,
    config: DetectorConfig,
) -> Result<DetectionReport> {
    let mut det = StreamDetector::new(model, flight_id, config)?;
    for w in windows {
        det.push(w)?;
    }
    Ok(det.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LeadTime {
    pub first_critical_time: Option<f64>,
    pub lead_time: Option<f64>,
    pub distance_at_first_alarm: Option<f64>,
}

pub fn lead_time_analysis(report: &DetectionReport, trace: &DistanceTrace, config: &DetectorConfig) -> LeadTime {
    let first_critical_time = trace.first_below(config.critical_distance);
    let lead_time = match (report.first_alarm_time, first_critical_time) {
        (Some(alarm), Some(crossing)) => Some(crossing - alarm),
        _ => None,
    };
    let distance_at_first_alarm = report
        .first_alarm_time
        .and_then(|t| trace.nearest(t))
        .filter(|d| d.is_finite());
    LeadTime {
        first_critical_time,
        lead_time,
        distance_at_first_alarm,
    }
}

impl DetectionReport {
    pub fn apply_lead_time(&mut self, lt: LeadTime) {
        self.first_critical_time = lt.first_critical_time;
        self.lead_time = lt.lead_time;
        self.distance_at_first_alarm = lt.distance_at_first_alarm;
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_alarms_header(sink: &mut impl Write) -> Result<()> {
    writeln!(sink, "{}", ALARMS_HEADER.join(","))?;
    Ok(())
}

pub fn write_alarm_row(sink: &mut impl Write, flight_id: &str, a: &AlarmEvent) -> Result<()> {
    writeln!(
        sink,
        "{},{},{},{},{}",
        flight_id, a.window_index, a.timestamp, a.loss, a.rolling_mean
    )?;
    Ok(())
}

/// Alarms of several reports as one CSV table.
pub fn write_alarms_csv<'a>(reports: impl IntoIterator<Item = &'a DetectionReport>, mut sink: impl Write) -> Result<()> {
    write_alarms_header(&mut sink)?;
    for r in reports {
        for a in &r.alarms {
            write_alarm_row(&mut sink, &r.flight_id, a)?;
        }
    }
    sink.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// log10 of the count; absent for empty bins.
    pub log10_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub quantile: f64,
    pub threshold: f64,
    pub max_loss: f64,
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Linear-interpolated empirical quantile (`h = (n - 1) q`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn loss_histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: min + width * i as f64,
            upper: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count,
            log10_count: (count > 0).then(|| (count as f64).log10()),
        })
        .collect()
}

/// Suggests a threshold as the `q`-quantile of nominal per-window losses.
pub fn calibrate_threshold(nominal_losses: &[f64], q: f64) -> Result<Calibration> {
    let threshold = quantile(nominal_losses, q)?;
    Ok(Calibration {
        quantile: q,
        threshold,
        max_loss: nominal_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        histogram: loss_histogram(nominal_losses, HISTOGRAM_BINS),
    })
}

pub fn write_histogram_csv(hist: &[HistogramBin], mut sink: impl Write) -> Result<()> {
    writeln!(sink, "lower,upper,count,log10_count")?;
    for b in hist {
        writeln!(
            sink,
            "{},{},{},{}",
            b.lower,
            b.upper,
            b.count,
            b.log10_count.map(|v| v.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightVerdict {
    pub flight_id: String,
    pub predicted_uncertain: bool,
    /// The same signal reused as an unsafety predictor.
    pub predicted_unsafe: bool,
    pub safety: Safety,
    pub certainty: Certainty,
}

/// Pairs every report with its labels. Any flight present on only one
/// side is an error naming all such flights.
pub fn flight_verdicts(reports: &[DetectionReport], labels: &LabelMap) -> Result<Vec<FlightVerdict>> {
    let by_id: BTreeMap<&str, &DetectionReport> =
        reports.iter().map(|r| (r.flight_id.as_str(), r)).collect();
    let mut missing: Vec<String> = labels
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    missing.extend(
        by_id
            .keys()
            .filter(|id| !labels.contains_key(**id))
            .map(|id| id.to_string()),
    );
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingFlights(missing));
    }
    Ok(labels
        .values()
        .map(|l| {
            let r = by_id[l.flight_id.as_str()];
            FlightVerdict {
                flight_id: l.flight_id.clone(),
                predicted_uncertain: r.flight_uncertain,
                predicted_unsafe: r.flight_uncertain,
                safety: l.safety,
                certainty: l.certainty,
            }
        })
        .collect())
}
