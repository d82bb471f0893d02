use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use super::envelope::{AlarmEvent, SupplementaryOutcome};
use crate::cip::CipCard;
use crate::vitals::{BiometricResult, VitalKind, VitalSample};

const VITALS_KEPT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentPatient {
    pub uid: u64,
    pub card: CipCard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AlarmError {
    #[error("unknown alarm id")]
    UnknownAlarmId,
    #[error("alarm already acknowledged")]
    AlreadyAcknowledged,
}

/// What the device currently knows: patient, alarms, results, cached records.
#[derive(Debug, Default)]
pub struct DeviceState {
    current: Option<CurrentPatient>,
    alarms: Vec<AlarmEvent>,
    latest_results: BTreeMap<VitalKind, BiometricResult>,
    vitals: VecDeque<VitalSample>,
    supplementary: HashMap<u64, SupplementaryOutcome>,
    next_alarm_id: u64,
}

impl DeviceState {
    pub fn current(&self) -> Option<&CurrentPatient> {
        self.current.as_ref()
    }

    pub fn current_serial(&self) -> Option<u64> {
        self.current.as_ref().map(|c| c.card.serial)
    }

    /// A new patient replaces the old one; per-patient readings are dropped.
    pub fn set_patient(&mut self, uid: u64, card: CipCard) {
        self.current = Some(CurrentPatient { uid, card });
        self.latest_results.clear();
        self.vitals.clear();
    }

    /// Replaces the card of the current patient if it is still `serial`.
    pub fn update_card(&mut self, card: CipCard) -> bool {
        match self.current.as_mut() {
            Some(c) if c.card.serial == card.serial => {
                c.card = card;
                true
            }
            _ => false,
        }
    }

    pub fn next_alarm_id(&mut self) -> u64 {
        self.next_alarm_id += 1;
        self.next_alarm_id
    }

    pub fn push_alarm(&mut self, alarm: AlarmEvent) {
        let at = self.alarms.partition_point(|a| a.alarm_id < alarm.alarm_id);
        if self.alarms.get(at).map(|a| a.alarm_id) == Some(alarm.alarm_id) {
            return;
        }
        self.alarms.insert(at, alarm);
    }

    pub fn alarms(&self) -> &[AlarmEvent] {
        &self.alarms
    }

    pub fn acknowledge_alarm(&mut self, alarm_id: u64, by: &str) -> Result<AlarmEvent, AlarmError> {
        let alarm = self
            .alarms
            .iter_mut()
            .find(|a| a.alarm_id == alarm_id)
            .ok_or(AlarmError::UnknownAlarmId)?;
        if alarm.acknowledged {
            return Err(AlarmError::AlreadyAcknowledged);
        }
        alarm.acknowledged = true;
        alarm.acknowledged_by = Some(by.to_string());
        Ok(alarm.clone())
    }

    pub fn record_result(&mut self, result: BiometricResult) {
        self.latest_results.insert(result.kind, result);
    }

    pub fn latest_results(&self) -> &BTreeMap<VitalKind, BiometricResult> {
        &self.latest_results
    }

    pub fn record_sample(&mut self, sample: VitalSample) {
        if self.vitals.len() == VITALS_KEPT {
            self.vitals.pop_front();
        }
        self.vitals.push_back(sample);
    }

    /// Most recent samples of `kind` (all kinds when `None`), oldest first.
    pub fn recent_vitals(&self, kind: Option<VitalKind>, limit: usize) -> Vec<VitalSample> {
        let mut out: Vec<VitalSample> = self
            .vitals
            .iter()
            .rev()
            .filter(|s| kind.is_none_or(|k| s.kind == k))
            .take(limit)
            .cloned()
            .collect();
        out.reverse();
        out
    }

    pub fn cache_supplementary(&mut self, outcome: SupplementaryOutcome) {
        self.supplementary.insert(outcome.serial, outcome);
    }

    pub fn supplementary(&self, serial: u64) -> Option<&SupplementaryOutcome> {
        self.supplementary.get(&serial)
    }
}

/// Cheaply clonable guarded owner of [`DeviceState`].
#[derive(Clone, Default)]
pub struct SharedState(Arc<Mutex<DeviceState>>);

impl SharedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut DeviceState) -> R) -> R {
        f(&mut self.0.lock())
    }
}

/// Notifications for the live event stream and for waiters inside the device.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DeviceEvent {
    PatientIdentified { serial: u64, uid: u64 },
    IdentificationFailed { uid: u64, cause: String },
    Alarm(AlarmEvent),
    AlarmAcknowledged(AlarmEvent),
    Result(BiometricResult),
    StaleResult(BiometricResult),
    Supplementary(SupplementaryOutcome),
    CardUpdated { serial: u64 },
    Delivery {
        serial: u64,
        kind: VitalKind,
        outcome: String,
        attempts: u32,
    },
}

#[derive(Debug, Default)]
pub struct Diagnostics {
    pub samples_dropped: AtomicU64,
    pub sample_parse_errors: AtomicU64,
    pub identification_failures: AtomicU64,
    pub stale_results: AtomicU64,
    pub hl7_delivered: AtomicU64,
    pub hl7_retries: AtomicU64,
    pub hl7_negative_acks: AtomicU64,
    pub hl7_failures: AtomicU64,
    pub supplementary_failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DiagnosticsSnapshot {
    pub samples_dropped: u64,
    pub sample_parse_errors: u64,
    pub identification_failures: u64,
    pub stale_results: u64,
    pub hl7_delivered: u64,
    pub hl7_retries: u64,
    pub hl7_negative_acks: u64,
    pub hl7_failures: u64,
    pub supplementary_failures: u64,
}

impl Diagnostics {
    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> DiagnosticsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        DiagnosticsSnapshot {
            samples_dropped: get(&self.samples_dropped),
            sample_parse_errors: get(&self.sample_parse_errors),
            identification_failures: get(&self.identification_failures),
            stale_results: get(&self.stale_results),
            hl7_delivered: get(&self.hl7_delivered),
            hl7_retries: get(&self.hl7_retries),
            hl7_negative_acks: get(&self.hl7_negative_acks),
            hl7_failures: get(&self.hl7_failures),
            supplementary_failures: get(&self.supplementary_failures),
        }
    }
}

pub type EventSender = broadcast::Sender<DeviceEvent>;

pub fn event_channel() -> EventSender {
    broadcast::channel(4096).0
}
