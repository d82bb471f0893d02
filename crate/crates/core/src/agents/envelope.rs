use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cip::CipCard;
use crate::simopac::EhrRecordView;
use crate::vitals::{BiometricResult, Classification, VitalSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentName {
    Patient,
    Biometric,
    Physician,
    Simopac,
}

impl AgentName {
    pub const ALL: [AgentName; 4] = [
        AgentName::Patient,
        AgentName::Biometric,
        AgentName::Physician,
        AgentName::Simopac,
    ];
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentName::Patient => "patient",
            AgentName::Biometric => "biometric",
            AgentName::Physician => "physician",
            AgentName::Simopac => "simopac",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    PatientIdentified,
    ResultsAvailable,
    TestResult,
    Alarm,
    SupplementaryRequest,
    SupplementaryResponse,
    CardUpdated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub alarm_id: u64,
    pub serial: u64,
    pub sample: VitalSample,
    pub classification: Classification,
    pub acknowledged: bool,
    pub acknowledged_by: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupplementaryFailure {
    NoCurrentPatient,
    ServerUnreachable,
    Unauthorized,
    UnknownPatient,
    BadResponse,
}

impl SupplementaryFailure {
    pub fn code(self) -> &'static str {
        match self {
            SupplementaryFailure::NoCurrentPatient => "NoCurrentPatient",
            SupplementaryFailure::ServerUnreachable => "ServerUnreachable",
            SupplementaryFailure::Unauthorized => "Unauthorized",
            SupplementaryFailure::UnknownPatient => "UnknownPatient",
            SupplementaryFailure::BadResponse => "BadResponse",
        }
    }
}

/// Result of one supplementary-information request; exactly one of `record`/`error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementaryOutcome {
    pub request_id: u64,
    pub serial: u64,
    pub record: Option<EhrRecordView>,
    pub error: Option<SupplementaryFailure>,
}

impl SupplementaryOutcome {
    pub fn ok(request_id: u64, serial: u64, record: EhrRecordView) -> Self {
        SupplementaryOutcome {
            request_id,
            serial,
            record: Some(record),
            error: None,
        }
    }

    pub fn failed(request_id: u64, serial: u64, error: SupplementaryFailure) -> Self {
        SupplementaryOutcome {
            request_id,
            serial,
            record: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum Payload {
    PatientIdentified { serial: u64, uid: u64, card: CipCard },
    ResultsAvailable(BiometricResult),
    TestResult(BiometricResult),
    Alarm(AlarmEvent),
    SupplementaryRequest { request_id: u64, serial: u64 },
    SupplementaryResponse(SupplementaryOutcome),
    CardUpdated { card: CipCard },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::PatientIdentified { .. } => MessageKind::PatientIdentified,
            Payload::ResultsAvailable(_) => MessageKind::ResultsAvailable,
            Payload::TestResult(_) => MessageKind::TestResult,
            Payload::Alarm(_) => MessageKind::Alarm,
            Payload::SupplementaryRequest { .. } => MessageKind::SupplementaryRequest,
            Payload::SupplementaryResponse(_) => MessageKind::SupplementaryResponse,
            Payload::CardUpdated { .. } => MessageKind::CardUpdated,
        }
    }
}

/// An addressed message on the bus. The kind is derived from the payload, so
/// the two can never disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    pub from: AgentName,
    pub to: AgentName,
    pub timestamp: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}
