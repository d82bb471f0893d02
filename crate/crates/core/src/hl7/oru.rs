//! ORU^R01 result messages and their acknowledgments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::message::{check_text, components, field, Hl7Error, Hl7Message, ENCODING_CHARS, HL7_VERSION};
use crate::cip::CipCard;
use crate::vitals::{BiometricResult, VitalKind};

pub const SENDING_APP: &str = "CIPDEV";
pub const SENDING_FACILITY: &str = "DEVICE";
pub const RECEIVING_APP: &str = "SIMOPAC";
pub const RECEIVING_FACILITY: &str = "SIMOPAC";

/// Strictly increasing control ids for one process.
#[derive(Debug)]
pub struct ControlIds(AtomicU64);

impl ControlIds {
    pub fn starting_at(first: u64) -> Self {
        ControlIds(AtomicU64::new(first))
    }

    pub fn next(&self) -> String {
        self.0.fetch_add(1, Ordering::SeqCst).to_string()
    }
}

pub fn hl7_timestamp(unix: u64) -> String {
    DateTime::from_timestamp(unix as i64, 0)
        .unwrap_or_default()
        .format("%Y%m%d%H%M%S")
        .to_string()
}

pub fn parse_hl7_timestamp(s: &str) -> Option<u64> {
    let dt = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S").ok()?;
    u64::try_from(dt.and_utc().timestamp()).ok()
}

/// At most two decimals, trailing zeros dropped.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn msh(
    from: (&str, &str),
    to: (&str, &str),
    now: u64,
    message_type: &str,
    control_id: &str,
) -> Result<Vec<String>, Hl7Error> {
    if control_id.is_empty() {
        return Err(Hl7Error::MissingField("MSH-10"));
    }
    Ok(vec![
        "MSH".into(),
        ENCODING_CHARS.into(),
        check_text(from.0)?.into(),
        check_text(from.1)?.into(),
        check_text(to.0)?.into(),
        check_text(to.1)?.into(),
        hl7_timestamp(now),
        String::new(),
        message_type.into(),
        check_text(control_id)?.into(),
        "P".into(),
        HL7_VERSION.into(),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Statistic {
    Min,
    Max,
    Mean,
}

impl Statistic {
    fn code(self) -> &'static str {
        match self {
            Statistic::Min => "MIN",
            Statistic::Max => "MAX",
            Statistic::Mean => "MEAN",
        }
    }
}

/// Builds the ORU^R01 for one window summary of the card's patient.
pub fn build_oru(
    card: &CipCard,
    result: &BiometricResult,
    control_id: &str,
    now: u64,
) -> Result<Hl7Message, Hl7Error> {
    if card.serial != result.serial {
        return Err(Hl7Error::SerialMismatch {
            card: card.serial,
            result: result.serial,
        });
    }
    let kind = result.kind;
    let mut segments = vec![
        msh(
            (SENDING_APP, SENDING_FACILITY),
            (RECEIVING_APP, RECEIVING_FACILITY),
            now,
            "ORU^R01",
            control_id,
        )?,
        vec!["PID".into(), "1".into(), String::new(), card.serial.to_string()],
        vec![
            "OBR".into(),
            "1".into(),
            control_id.into(),
            String::new(),
            components(&[kind.as_str(), kind.description()])?,
            String::new(),
            String::new(),
            hl7_timestamp(result.window_start),
            hl7_timestamp(result.window_end),
        ],
    ];
    let stats = [
        (Statistic::Min, result.min),
        (Statistic::Max, result.max),
        (Statistic::Mean, result.mean),
    ];
    for (i, (stat, value)) in stats.into_iter().enumerate() {
        segments.push(vec![
            "OBX".into(),
            (i + 1).to_string(),
            "NM".into(),
            components(&[kind.as_str(), stat.code()])?,
            String::new(),
            format_value(value),
            kind.unit().into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            "F".into(),
        ]);
    }
    Ok(Hl7Message { segments })
}

/// One summarized observation carried by an ORU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedObservation {
    pub kind: VitalKind,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub window_start: u64,
    pub window_end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OruContent {
    pub serial: u64,
    pub observations: Vec<ReportedObservation>,
}

/// Extracts the patient serial and per-kind statistics from an ORU^R01.
pub fn parse_oru(msg: &Hl7Message) -> Result<OruContent, Hl7Error> {
    if msg.message_type() != "ORU^R01" {
        return Err(Hl7Error::UnexpectedType("ORU^R01"));
    }
    let pid = msg.segment("PID").ok_or(Hl7Error::MissingField("PID"))?;
    let serial: u64 = field(pid, 3)
        .parse()
        .map_err(|_| Hl7Error::InvalidField("PID-3"))?;
    let (start, end) = match msg.segment("OBR") {
        Some(obr) => (
            parse_hl7_timestamp(field(obr, 7)).ok_or(Hl7Error::InvalidField("OBR-7"))?,
            parse_hl7_timestamp(field(obr, 8)).ok_or(Hl7Error::InvalidField("OBR-8"))?,
        ),
        None => return Err(Hl7Error::MissingField("OBR")),
    };
    let mut by_kind: BTreeMap<VitalKind, BTreeMap<Statistic, f64>> = BTreeMap::new();
    for obx in msg.segments_named("OBX") {
        let mut id = field(obx, 3).split('^');
        let kind = VitalKind::from_str(id.next().unwrap_or(""))
            .map_err(|_| Hl7Error::InvalidField("OBX-3"))?;
        let stat = match id.next() {
            Some("MIN") => Statistic::Min,
            Some("MAX") => Statistic::Max,
            Some("MEAN") => Statistic::Mean,
            _ => return Err(Hl7Error::InvalidField("OBX-3")),
        };
        let value: f64 = field(obx, 5)
            .parse()
            .map_err(|_| Hl7Error::InvalidField("OBX-5"))?;
        if !value.is_finite() {
            return Err(Hl7Error::InvalidField("OBX-5"));
        }
        if by_kind.entry(kind).or_default().insert(stat, value).is_some() {
            return Err(Hl7Error::InvalidField("OBX-3"));
        }
    }
    if by_kind.is_empty() {
        return Err(Hl7Error::MissingField("OBX"));
    }
    let observations = by_kind
        .into_iter()
        .map(|(kind, stats)| {
            let get = |s: Statistic| stats.get(&s).copied().ok_or(Hl7Error::MissingField("OBX"));
            Ok(ReportedObservation {
                kind,
                min: get(Statistic::Min)?,
                max: get(Statistic::Max)?,
                mean: get(Statistic::Mean)?,
                window_start: start,
                window_end: end,
            })
        })
        .collect::<Result<_, Hl7Error>>()?;
    Ok(OruContent { serial, observations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AckCode {
    AA,
    AE,
    AR,
}

impl fmt::Display for AckCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AckCode::AA => "AA",
            AckCode::AE => "AE",
            AckCode::AR => "AR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckStatus {
    pub code: AckCode,
    pub control_id: String,
}

impl AckStatus {
    pub fn is_positive(&self) -> bool {
        self.code == AckCode::AA
    }
}

/// ACK answering `acked_control_id`; the ACK itself carries `control_id`.
pub fn build_ack(code: AckCode, acked_control_id: &str, control_id: &str, now: u64) -> Hl7Message {
    let acked = if check_text(acked_control_id).is_ok() && !acked_control_id.is_empty() {
        acked_control_id
    } else {
        "UNKNOWN"
    };
    let header = msh(
        (RECEIVING_APP, RECEIVING_FACILITY),
        (SENDING_APP, SENDING_FACILITY),
        now,
        "ACK",
        control_id,
    )
    .expect("fixed header fields are clean");
    Hl7Message {
        segments: vec![
            header,
            vec!["MSA".into(), code.to_string(), acked.to_string()],
        ],
    }
}

pub fn parse_ack(msg: &Hl7Message) -> Result<AckStatus, Hl7Error> {
    let msa = msg.segment("MSA").ok_or(Hl7Error::MissingField("MSA"))?;
    let code = match field(msa, 1) {
        "AA" | "CA" => AckCode::AA,
        "AE" | "CE" => AckCode::AE,
        "AR" | "CR" => AckCode::AR,
        _ => return Err(Hl7Error::InvalidField("MSA-1")),
    };
    Ok(AckStatus {
        code,
        control_id: field(msa, 2).to_string(),
    })
}
