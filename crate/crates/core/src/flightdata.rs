//! Flight-log, obstacle and label data model with their on-disk formats.
//!
//! Flight logs are flat CSV files with one record per row and all three
//! channels interleaved:
//!
//! ```text
//! timestamp_s,channel,x,y,z,r_deg
//! 0.0,safe,1.0,2.0,3.0,90.0
//! ```
//!
//! Timestamps are shifted so the earliest record of the flight sits at zero.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 6] = ["timestamp_s", "channel", "x", "y", "z", "r_deg"];
pub const LABELS_HEADER: [&str; 3] = ["flight_id", "safety", "certainty"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Obstacle-unaware waypoints planned by the autopilot.
    Desired,
    /// Waypoints corrected by the obstacle-avoidance module.
    Safe,
    /// Estimated vehicle position.
    Position,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Desired, Channel::Safe, Channel::Position];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Desired => "desired",
            Channel::Safe => "safe",
            Channel::Position => "position",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desired" => Ok(Channel::Desired),
            "safe" => Ok(Channel::Safe),
            "position" => Ok(Channel::Position),
            other => Err(Error::invalid(format!("unknown channel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: f64,
    pub channel: Channel,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Heading in degrees, raw range [-180, 180].
    pub r: f64,
}

/// Identity attached to a parsed log; the CSV itself carries none.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogDescriptor {
    pub flight_id: String,
    pub test_id: String,
    pub execution_index: u32,
}

impl LogDescriptor {
    pub fn new(flight_id: impl Into<String>) -> Self {
        let flight_id = flight_id.into();
        Self {
            test_id: flight_id.clone(),
            flight_id,
            execution_index: 0,
        }
    }

    /// Derives identity from a file stem of the form `<test_id>_<execution>`;
    /// stems without a numeric suffix use the whole stem as test id.
    pub fn from_stem(stem: &str) -> Self {
        match stem.rsplit_once('_') {
            Some((test, exec)) if !test.is_empty() => match exec.parse::<u32>() {
                Ok(execution_index) => Self {
                    flight_id: stem.to_string(),
                    test_id: test.to_string(),
                    execution_index,
                },
                Err(_) => Self::new(stem),
            },
            _ => Self::new(stem),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub flight_id: String,
    pub test_id: String,
    pub execution_index: u32,
    desired: Vec<LogRecord>,
    safe: Vec<LogRecord>,
    position: Vec<LogRecord>,
}

impl FlightLog {
    /// Builds a log from records in any interleaving. Timestamps are taken
    /// as already relative to flight start.
    pub fn from_records(descriptor: LogDescriptor, records: Vec<LogRecord>) -> Result<Self> {
        let mut log = FlightLog {
            flight_id: descriptor.flight_id,
            test_id: descriptor.test_id,
            execution_index: descriptor.execution_index,
            desired: Vec::new(),
            safe: Vec::new(),
            position: Vec::new(),
        };
        for rec in records {
            validate_record(&rec)?;
            let chan = log.channel_mut(rec.channel);
            if let Some(prev) = chan.last() {
                if rec.timestamp <= prev.timestamp {
                    return Err(Error::invalid(format!(
                        "non-monotone timestamp {} after {} on channel {}",
                        rec.timestamp, prev.timestamp, rec.channel
                    )));
                }
            }
            chan.push(rec);
        }
        if log.safe.is_empty() {
            return Err(Error::invalid("safe channel is empty"));
        }
        Ok(log)
    }

    pub fn channel(&self, channel: Channel) -> &[LogRecord] {
        match channel {
            Channel::Desired => &self.desired,
            Channel::Safe => &self.safe,
            Channel::Position => &self.position,
        }
    }

    fn channel_mut(&mut self, channel: Channel) -> &mut Vec<LogRecord> {
        match channel {
            Channel::Desired => &mut self.desired,
            Channel::Safe => &mut self.safe,
            Channel::Position => &mut self.position,
        }
    }

    pub fn safe(&self) -> &[LogRecord] {
        &self.safe
    }

    pub fn position(&self) -> &[LogRecord] {
        &self.position
    }

    pub fn len(&self) -> usize {
        self.desired.len() + self.safe.len() + self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records merged in time order; ties keep channel order.
    pub fn records(&self) -> Vec<LogRecord> {
        let mut all: Vec<LogRecord> = Channel::ALL
            .iter()
            .flat_map(|c| self.channel(*c).iter().copied())
            .collect();
        all.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        all
    }

    /// Same flight with every heading rotated by `offset_deg` and wrapped
    /// back into [-180, 180].
    pub fn with_heading_offset(&self, offset_deg: f64) -> FlightLog {
        let shift = |recs: &[LogRecord]| {
            recs.iter()
                .map(|r| LogRecord {
                    r: wrap_degrees(r.r + offset_deg),
                    ..*r
                })
                .collect()
        };
        FlightLog {
            flight_id: self.flight_id.clone(),
            test_id: self.test_id.clone(),
            execution_index: self.execution_index,
            desired: shift(&self.desired),
            safe: shift(&self.safe),
            position: shift(&self.position),
        }
    }
}

/// Wraps an angle into [-180, 180).
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

fn validate_record(rec: &LogRecord) -> Result<()> {
    if !(rec.timestamp.is_finite() && rec.timestamp >= 0.0) {
        return Err(Error::invalid(format!("bad timestamp {}", rec.timestamp)));
    }
    if ![rec.x, rec.y, rec.z].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    if !(rec.r.is_finite() && (-180.0..=180.0).contains(&rec.r)) {
        return Err(Error::invalid(format!(
            "heading {} outside [-180, 180]",
            rec.r
        )));
    }
    Ok(())
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            1,
            format!("expected header '{}', got '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: FromStr>(row: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T> {
    let raw = row
        .get(idx)
        .ok_or_else(|| Error::parse(line, format!("missing column '{name}'")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot parse {name} from '{raw}'")))
}

pub fn parse_flight_log(source: impl Read, descriptor: LogDescriptor) -> Result<FlightLog> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    check_header(&mut reader, &LOG_HEADER)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != LOG_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected {} columns, got {}", LOG_HEADER.len(), row.len()),
            ));
        }
        let channel: Channel = row[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("unknown channel '{}'", &row[1])))?;
        records.push(LogRecord {
            timestamp: field(&row, 0, "timestamp_s", line)?,
            channel,
            x: field(&row, 2, "x", line)?,
            y: field(&row, 3, "y", line)?,
            z: field(&row, 4, "z", line)?,
            r: field(&row, 5, "r_deg", line)?,
        });
    }
    let origin = records
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::INFINITY, f64::min);
    if origin.is_finite() && origin != 0.0 {
        for r in &mut records {
            r.timestamp -= origin;
        }
    }
    FlightLog::from_records(descriptor, records)
}

pub fn write_flight_log(log: &FlightLog, sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LOG_HEADER)?;
    for r in log.records() {
        w.write_record([
            r.timestamp.to_string(),
            r.channel.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.z.to_string(),
            r.r.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Box-shaped static obstacle. `length` runs along the box's local x axis
/// and `width` along its local y axis before rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Yaw about the vertical axis, degrees.
    pub rotation: f64,
}

impl ObstacleBox {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("height", self.height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("obstacle {name} must be > 0, got {v}")));
            }
        }
        if ![self.cx, self.cy, self.rotation].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite obstacle placement"));
        }
        Ok(())
    }
}

pub fn parse_obstacles(source: impl Read) -> Result<Vec<ObstacleBox>> {
    let boxes: Vec<ObstacleBox> =
        serde_json::from_reader(source).map_err(|e| Error::parse(e.line() as u64, e.to_string()))?;
    for b in &boxes {
        b.validate()?;
    }
    Ok(boxes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Safety {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    Certain,
    Uncertain,
}

impl FromStr for Safety {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "safe" => Ok(Safety::Safe),
            "unsafe" => Ok(Safety::Unsafe),
            other => Err(Error::invalid(format!("unknown safety label '{other}'"))),
        }
    }
}

impl FromStr for Certainty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "certain" => Ok(Certainty::Certain),
            "uncertain" => Ok(Certainty::Uncertain),
            other => Err(Error::invalid(format!("unknown certainty label '{other}'"))),
        }
    }
}

impl fmt::Display for Safety {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Safety::Safe => "safe",
            Safety::Unsafe => "unsafe",
        })
    }
}

impl fmt::Display for Certainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Certainty::Certain => "certain",
            Certainty::Uncertain => "uncertain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightLabels {
    pub flight_id: String,
    pub safety: Safety,
    pub certainty: Certainty,
}

pub type LabelMap = BTreeMap<String, FlightLabels>;

pub fn parse_labels(source: impl Read) -> Result<LabelMap> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    check_header(&mut reader, &LABELS_HEADER)?;
    let mut out = LabelMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 columns, got {}", row.len())));
        }
        let flight_id = row[0].trim().to_string();
        if flight_id.is_empty() {
            return Err(Error::parse(line, "empty flight_id"));
        }
        let labels = FlightLabels {
            flight_id: flight_id.clone(),
            safety: row[1].parse()?,
            certainty: row[2].parse()?,
        };
        if out.insert(flight_id.clone(), labels).is_some() {
            return Err(Error::invalid(format!("duplicate flight_id '{flight_id}' at line {line}")));
        }
    }
    Ok(out)
}

pub fn write_labels<'a>(
    labels: impl IntoIterator<Item = &'a FlightLabels>,
    sink: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LABELS_HEADER)?;
    for l in labels {
        w.write_record([l.flight_id.clone(), l.safety.to_string(), l.certainty.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
