//! Confusion matrices, classification metrics, Wilson intervals and the
//! dataset-level evaluation document.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{flight_verdicts, DetectionReport};
use crate::error::{Error, Result};
use crate::flightdata::{Certainty, LabelMap, Safety};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Counts predictions against truth; both maps must cover the same ids.
pub fn confusion(predicted: &BTreeMap<String, bool>, truth: &BTreeMap<String, bool>) -> Result<ConfusionMatrix> {
    let mut missing: Vec<String> = predicted
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .chain(truth.keys().filter(|k| !predicted.contains_key(*k)))
        .cloned()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingFlights(missing));
    }
    let mut cm = ConfusionMatrix::default();
    for (id, &p) in predicted {
        cm.add(p, truth[id]);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
    }
}

/// Inverse standard normal CDF by rational approximation, relative error
/// below 1.2e-9 on (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671010229528e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // one Halley step against the exact CDF brings the tails to full precision
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Two-sided critical value for confidence level `gamma`.
pub fn z_value(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("confidence level {gamma} outside (0, 1)")));
    }
    normal_quantile(1.0 - (1.0 - gamma) / 2.0)
}

pub const DEFAULT_GAMMA: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub gamma: f64,
}

pub fn wilson(k: u64, n: u64, gamma: f64) -> Result<WilsonInterval> {
    if n == 0 {
        return Err(Error::invalid("Wilson interval needs at least one trial"));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} successes out of {n} trials")));
    }
    let z = z_value(gamma)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    Ok(WilsonInterval {
        point: p,
        low: (center - half).clamp(0.0, p),
        high: (center + half).clamp(p, 1.0),
        gamma,
    })
}

/// Flight counts in the joint safety/certainty table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub unsafe_uncertain: u64,
    pub unsafe_certain: u64,
    pub safe_uncertain: u64,
    pub safe_certain: u64,
}

impl LabelCounts {
    pub fn new(unsafe_uncertain: u64, unsafe_certain: u64, safe_uncertain: u64, safe_certain: u64) -> Self {
        Self {
            unsafe_uncertain,
            unsafe_certain,
            safe_uncertain,
            safe_certain,
        }
    }

    pub fn from_labels(labels: &LabelMap) -> Self {
        let mut c = Self::default();
        for l in labels.values() {
            match (l.safety, l.certainty) {
                (Safety::Unsafe, Certainty::Uncertain) => c.unsafe_uncertain += 1,
                (Safety::Unsafe, Certainty::Certain) => c.unsafe_certain += 1,
                (Safety::Safe, Certainty::Uncertain) => c.safe_uncertain += 1,
                (Safety::Safe, Certainty::Certain) => c.safe_certain += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.unsafe_uncertain + self.unsafe_certain + self.safe_uncertain + self.safe_certain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub counts: LabelCounts,
    pub agreement_accuracy: WilsonInterval,
    pub p_unsafe_given_uncertain: Option<WilsonInterval>,
    pub p_uncertain_given_unsafe: Option<WilsonInterval>,
}

pub fn agreement_stats(counts: LabelCounts, gamma: f64) -> Result<AgreementStats> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Empty("flights"));
    }
    let both = counts.unsafe_uncertain;
    let conditional = |den: u64| (den > 0).then(|| wilson(both, den, gamma)).transpose();
    Ok(AgreementStats {
        counts,
        agreement_accuracy: wilson(counts.unsafe_uncertain + counts.safe_certain, total, gamma)?,
        p_unsafe_given_uncertain: conditional(counts.unsafe_uncertain + counts.safe_uncertain)?,
        p_uncertain_given_unsafe: conditional(counts.unsafe_uncertain + counts.unsafe_certain)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Certainty,
    Safety,
}

impl std::str::FromStr for GroundTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "certainty" => Ok(Self::Certainty),
            "safety" => Ok(Self::Safety),
            other => Err(Error::invalid(format!("unknown ground truth axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisEvaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl AxisEvaluation {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            confusion,
            metrics: metrics(&confusion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightRow {
    pub flight_id: String,
    pub safety: Safety,
    pub certainty: Certainty,
    pub predicted_uncertain: bool,
    pub alarm_count: usize,
    pub first_alarm_time: Option<f64>,
    pub lead_time: Option<f64>,
    pub distance_at_first_alarm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gamma: f64,
    pub primary_axis: GroundTruth,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            primary_axis: GroundTruth::Certainty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDoc {
    pub flights: usize,
    pub gamma: f64,
    pub primary_axis: GroundTruth,
    /// Alarms judged against certainty labels.
    pub uncertainty_detection: AxisEvaluation,
    /// The same alarms judged against safety labels.
    pub unsafety_prediction: AxisEvaluation,
    pub agreement: AgreementStats,
    pub lead_time_count: usize,
    pub lead_time_mean: Option<f64>,
    pub lead_time_median: Option<f64>,
    /// Averaged over flights that have a lead time.
    pub mean_distance_at_first_alarm: Option<f64>,
    pub rows: Vec<FlightRow>,
}

impl EvaluationDoc {
    pub fn primary(&self) -> &AxisEvaluation {
        match self.primary_axis {
            GroundTruth::Certainty => &self.uncertainty_detection,
            GroundTruth::Safety => &self.unsafety_prediction,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

pub fn dataset_report(reports: &[DetectionReport], labels: &LabelMap, config: &EvalConfig) -> Result<EvaluationDoc> {
    if labels.is_empty() && reports.is_empty() {
        return Err(Error::Empty("flights"));
    }
    let verdicts = flight_verdicts(reports, labels)?;
    let by_id: BTreeMap<&str, &DetectionReport> = reports.iter().map(|r| (r.flight_id.as_str(), r)).collect();

    let mut uncertainty = ConfusionMatrix::default();
    let mut unsafety = ConfusionMatrix::default();
    let mut rows = Vec::with_capacity(verdicts.len());
    let mut leads = Vec::new();
    let mut distances = Vec::new();
    for v in &verdicts {
        uncertainty.add(v.predicted_uncertain, v.certainty == Certainty::Uncertain);
        unsafety.add(v.predicted_unsafe, v.safety == Safety::Unsafe);
        let r = by_id[v.flight_id.as_str()];
        if let Some(lt) = r.lead_time {
            leads.push(lt);
            if let Some(d) = r.distance_at_first_alarm {
                distances.push(d);
            }
        }
        rows.push(FlightRow {
            flight_id: v.flight_id.clone(),
            safety: v.safety,
            certainty: v.certainty,
            predicted_uncertain: v.predicted_uncertain,
            alarm_count: r.alarms.len(),
            first_alarm_time: r.first_alarm_time,
            lead_time: r.lead_time,
            distance_at_first_alarm: r.distance_at_first_alarm,
        });
    }
    Ok(EvaluationDoc {
        flights: verdicts.len(),
        gamma: config.gamma,
        primary_axis: config.primary_axis,
        uncertainty_detection: AxisEvaluation::from_confusion(uncertainty),
        unsafety_prediction: AxisEvaluation::from_confusion(unsafety),
        agreement: agreement_stats(LabelCounts::from_labels(labels), config.gamma)?,
        lead_time_count: leads.len(),
        lead_time_mean: mean(&leads),
        lead_time_median: median(&leads),
        mean_distance_at_first_alarm: mean(&distances),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "n/a".into())
}

/// Flat CSV tables keyed by file stem.
pub fn evaluation_tables(doc: &EvaluationDoc) -> Vec<(&'static str, String)> {
    let c = doc.agreement.counts;
    let label_counts = format!(
        "safety,uncertain,certain\nunsafe,{},{}\nsafe,{},{}\n",
        c.unsafe_uncertain, c.unsafe_certain, c.safe_uncertain, c.safe_certain
    );

    let mut agreement = String::from("statistic,point,low,high\n");
    let mut row = |name: &str, w: Option<WilsonInterval>| {
        let (p, l, h) = w.map_or((None, None, None), |w| (Some(w.point), Some(w.low), Some(w.high)));
        let _ = writeln!(agreement, "{name},{},{},{}", opt(p), opt(l), opt(h));
    };
    row("agreement_accuracy", Some(doc.agreement.agreement_accuracy));
    row("p_unsafe_given_uncertain", doc.agreement.p_unsafe_given_uncertain);
    row("p_uncertain_given_unsafe", doc.agreement.p_uncertain_given_unsafe);

    let confusion_csv = |e: &AxisEvaluation| {
        let m = e.confusion;
        format!(
            "predicted,actual_positive,actual_negative\npositive,{},{}\nnegative,{},{}\n",
            m.tp, m.fp, m.fn_, m.tn
        )
    };
    let mut metric_rows = String::from("axis,accuracy,precision,recall,f1\n");
    for (name, e) in [
        ("uncertainty_detection", &doc.uncertainty_detection),
        ("unsafety_prediction", &doc.unsafety_prediction),
    ] {
        let m = e.metrics;
        let _ = writeln!(
            metric_rows,
            "{name},{},{},{},{}",
            opt(m.accuracy),
            opt(m.precision),
            opt(m.recall),
            opt(m.f1)
        );
    }

    let mut flights =
        String::from("flight_id,safety,certainty,predicted_uncertain,alarm_count,first_alarm_time_s,lead_time_s,distance_at_first_alarm_m\n");
    for r in &doc.rows {
        let _ = writeln!(
            flights,
            "{},{},{},{},{},{},{},{}",
            r.flight_id,
            r.safety,
            r.certainty,
            r.predicted_uncertain,
            r.alarm_count,
            opt(r.first_alarm_time),
            opt(r.lead_time),
            opt(r.distance_at_first_alarm)
        );
    }

    vec![
        ("label_counts", label_counts),
        ("agreement", agreement),
        ("uncertainty_confusion", confusion_csv(&doc.uncertainty_detection)),
        ("unsafety_confusion", confusion_csv(&doc.unsafety_prediction)),
        ("metrics", metric_rows),
        ("flights", flights),
    ]
}

/// Human-readable summary, percentages to one decimal.
pub fn summary_text(doc: &EvaluationDoc) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "flights: {}", doc.flights);
    for (name, e) in [
        ("uncertainty detection", &doc.uncertainty_detection),
        ("unsafety prediction", &doc.unsafety_prediction),
    ] {
        let (c, m) = (e.confusion, e.metrics);
        let _ = writeln!(
            s,
            "{name}: tp={} fp={} fn={} tn={} accuracy {} precision {} recall {} f1 {}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            pct(m.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1)
        );
    }
    let a = &doc.agreement;
    let interval = |w: Option<WilsonInterval>| match w {
        Some(w) => format!("{} [{}, {}]", pct(Some(w.point)), pct(Some(w.low)), pct(Some(w.high))),
        None => "n/a".into(),
    };
    let _ = writeln!(s, "agreement: {}", interval(Some(a.agreement_accuracy)));
    let _ = writeln!(s, "p(unsafe|uncertain): {}", interval(a.p_unsafe_given_uncertain));
    let _ = writeln!(s, "p(uncertain|unsafe): {}", interval(a.p_uncertain_given_unsafe));
    let secs = |v: Option<f64>| v.map(|x| format!("{x:.1} s")).unwrap_or_else(|| "n/a".into());
    let _ = writeln!(
        s,
        "lead time over {} flights: mean {}, median {}",
        doc.lead_time_count,
        secs(doc.lead_time_mean),
        secs(doc.lead_time_median)
    );
    s
}
