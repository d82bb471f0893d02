//! Medical-device readings: line protocol, threshold classification, window summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VitalKind {
    HR,
    TEMP,
    SYS,
    DIA,
}

impl VitalKind {
    pub const ALL: [VitalKind; 4] = [VitalKind::HR, VitalKind::TEMP, VitalKind::SYS, VitalKind::DIA];

    pub fn as_str(self) -> &'static str {
        match self {
            VitalKind::HR => "HR",
            VitalKind::TEMP => "TEMP",
            VitalKind::SYS => "SYS",
            VitalKind::DIA => "DIA",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            VitalKind::HR => "bpm",
            VitalKind::TEMP => "C",
            VitalKind::SYS | VitalKind::DIA => "mmHg",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VitalKind::HR => "Heart rate",
            VitalKind::TEMP => "Body temperature",
            VitalKind::SYS => "Systolic blood pressure",
            VitalKind::DIA => "Diastolic blood pressure",
        }
    }
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VitalKind {
    type Err = VitalsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HR" => Ok(VitalKind::HR),
            "TEMP" => Ok(VitalKind::TEMP),
            "SYS" => Ok(VitalKind::SYS),
            "DIA" => Ok(VitalKind::DIA),
            other => Err(VitalsError::UnknownVitalType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub device_id: String,
    pub kind: VitalKind,
    pub value: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VitalsError {
    /// `position` is the 1-based token index where parsing failed.
    #[error("parse error at token {position}")]
    ParseError { position: usize },
    #[error("unknown vital type {0:?}")]
    UnknownVitalType(String),
    #[error("non-finite value")]
    NonFiniteValue,
    #[error("no threshold for {0}")]
    MissingThreshold(VitalKind),
    #[error("threshold for {0} has low >= high")]
    BadThreshold(VitalKind),
    #[error("empty window")]
    EmptyWindow,
    #[error("window mixes vital kinds")]
    MixedKinds,
}

/// Parses `VITAL <device_id> <kind> <value> <unit> <timestamp>`.
pub fn parse_vital_line(line: &str) -> Result<VitalSample, VitalsError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let at = |i: usize| tokens.get(i).copied().ok_or(VitalsError::ParseError { position: i + 1 });
    if at(0)? != "VITAL" {
        return Err(VitalsError::ParseError { position: 1 });
    }
    let device_id = at(1)?;
    if !device_id.is_ascii() {
        return Err(VitalsError::ParseError { position: 2 });
    }
    let kind: VitalKind = at(2)?.parse()?;
    let value: f64 = at(3)?
        .parse()
        .map_err(|_| VitalsError::ParseError { position: 4 })?;
    at(4)?;
    let timestamp: u64 = at(5)?
        .parse()
        .map_err(|_| VitalsError::ParseError { position: 6 })?;
    if tokens.len() > 6 {
        return Err(VitalsError::ParseError { position: 7 });
    }
    if !value.is_finite() {
        return Err(VitalsError::NonFiniteValue);
    }
    Ok(VitalSample {
        device_id: device_id.to_string(),
        kind,
        value,
        timestamp,
    })
}

/// Formats a sample as one protocol line, without the newline.
pub fn format_vital_line(sample: &VitalSample) -> String {
    format!(
        "VITAL {} {} {} {} {}",
        sample.device_id,
        sample.kind,
        sample.value,
        sample.kind.unit(),
        sample.timestamp
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

/// Per-kind closed normal bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thresholds(BTreeMap<VitalKind, Band>);

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds(BTreeMap::from([
            (VitalKind::HR, Band { low: 40.0, high: 150.0 }),
            (VitalKind::TEMP, Band { low: 35.0, high: 38.0 }),
            (VitalKind::SYS, Band { low: 90.0, high: 180.0 }),
            (VitalKind::DIA, Band { low: 50.0, high: 110.0 }),
        ]))
    }
}

impl Thresholds {
    pub fn empty() -> Self {
        Thresholds(BTreeMap::new())
    }

    pub fn with(mut self, kind: VitalKind, low: f64, high: f64) -> Result<Self, VitalsError> {
        if !(low < high) {
            return Err(VitalsError::BadThreshold(kind));
        }
        self.0.insert(kind, Band { low, high });
        Ok(self)
    }

    pub fn band(&self, kind: VitalKind) -> Option<Band> {
        self.0.get(&kind).copied()
    }

    pub fn validate(&self) -> Result<(), VitalsError> {
        match self.0.iter().find(|(_, b)| !(b.low < b.high)) {
            Some((kind, _)) => Err(VitalsError::BadThreshold(*kind)),
            None => Ok(()),
        }
    }

    /// Defaults overlaid with the configured bands.
    pub fn merged(overrides: &Thresholds) -> Self {
        let mut out = Thresholds::default();
        out.0.extend(overrides.0.iter().map(|(k, b)| (*k, *b)));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Normal,
    AbnormalLow,
    AbnormalHigh,
}

pub fn evaluate(sample: &VitalSample, thresholds: &Thresholds) -> Result<Classification, VitalsError> {
    let band = thresholds
        .band(sample.kind)
        .ok_or(VitalsError::MissingThreshold(sample.kind))?;
    Ok(if sample.value < band.low {
        Classification::AbnormalLow
    } else if sample.value > band.high {
        Classification::AbnormalHigh
    } else {
        Classification::Normal
    })
}

/// Summary of one kind of reading for one patient over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricResult {
    pub serial: u64,
    pub kind: VitalKind,
    pub window_start: u64,
    pub window_end: u64,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn summarize(serial: u64, samples: &[VitalSample]) -> Result<BiometricResult, VitalsError> {
    let first = samples.first().ok_or(VitalsError::EmptyWindow)?;
    if samples.iter().any(|s| s.kind != first.kind) {
        return Err(VitalsError::MixedKinds);
    }
    // summing in sorted order makes the mean independent of arrival order
    let mut values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    values.sort_by(f64::total_cmp);
    let min = values[0];
    let max = values[values.len() - 1];
    let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(min, max);
    Ok(BiometricResult {
        serial,
        kind: first.kind,
        window_start: samples.iter().map(|s| s.timestamp).min().unwrap_or(0),
        window_end: samples.iter().map(|s| s.timestamp).max().unwrap_or(0),
        count: samples.len(),
        min,
        max,
        mean,
    })
}

/// Tumbling window over one patient's readings.
///
/// When `size` samples have arrived the window closes and yields one summary per
/// kind present, in kind order.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    size: usize,
    samples: Vec<VitalSample>,
}

impl SampleWindow {
    pub fn new(size: usize) -> Self {
        SampleWindow {
            size: size.max(1),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn push(&mut self, serial: u64, sample: VitalSample) -> Option<Vec<BiometricResult>> {
        self.samples.push(sample);
        if self.samples.len() < self.size {
            return None;
        }
        let mut by_kind: BTreeMap<VitalKind, Vec<VitalSample>> = BTreeMap::new();
        for s in self.samples.drain(..) {
            by_kind.entry(s.kind).or_default().push(s);
        }
        Some(
            by_kind
                .values()
                .map(|group| summarize(serial, group).expect("nonempty single-kind group"))
                .collect(),
        )
    }
}
