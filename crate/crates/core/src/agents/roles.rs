//! The four device agents and their task lists.

use std::sync::Arc;

use async_trait::async_trait;
use tracing::{debug, warn};

use super::envelope::{AgentName, AlarmEvent, Envelope, MessageKind, Payload, SupplementaryFailure, SupplementaryOutcome};
use super::state::{DeviceEvent, Diagnostics};
use super::DeviceContext;
use crate::cip::{decode_cip, CipCard};
use crate::hl7::{build_oru, send_with_retries, AckCode, Hl7Error};
use crate::rfid::read_full_card;
use crate::vitals::{evaluate, BiometricResult, Classification, SampleWindow, VitalSample};

/// Inputs from outside the bus: the reader, medical devices and the web API.
#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    TagArrived { uid: u64 },
    Sample(VitalSample),
    RequestSupplementary { request_id: u64 },
    CardWritten { uid: u64, card: CipCard },
}

impl Stimulus {
    pub fn target(&self) -> AgentName {
        match self {
            Stimulus::TagArrived { .. } | Stimulus::CardWritten { .. } => AgentName::Patient,
            Stimulus::Sample(_) => AgentName::Biometric,
            Stimulus::RequestSupplementary { .. } => AgentName::Physician,
        }
    }
}

/// Envelopes an agent wants published once its handler returns, in order.
#[derive(Debug, Default)]
pub struct Outbox {
    pub items: Vec<(AgentName, Payload)>,
}

impl Outbox {
    pub fn send(&mut self, to: AgentName, payload: Payload) {
        self.items.push((to, payload));
    }
}

#[async_trait]
pub trait Agent: Send {
    fn name(&self) -> AgentName;
    fn subscriptions(&self) -> Vec<MessageKind>;
    async fn on_envelope(&mut self, envelope: &Envelope, out: &mut Outbox);
    async fn on_stimulus(&mut self, stimulus: Stimulus, out: &mut Outbox);
}

fn emit(ctx: &DeviceContext, event: DeviceEvent) {
    // no live subscribers is fine
    let _ = ctx.events.send(event);
}

/// Identifies the patient and reads the card.
pub struct PatientAgent {
    ctx: Arc<DeviceContext>,
}

impl PatientAgent {
    pub fn new(ctx: Arc<DeviceContext>) -> Self {
        PatientAgent { ctx }
    }

    async fn identify(&self, uid: u64, out: &mut Outbox) {
        let image = match read_full_card(self.ctx.reader.as_ref(), uid).await {
            Ok(image) => image,
            Err(e) => return self.failed(uid, e.code()),
        };
        let card = match decode_cip(&image) {
            Ok(card) => card,
            Err(e) => return self.failed(uid, e.code()),
        };
        let serial = card.serial;
        self.ctx.state.with(|s| s.set_patient(uid, card.clone()));
        emit(&self.ctx, DeviceEvent::PatientIdentified { serial, uid });
        out.send(AgentName::Physician, Payload::PatientIdentified { serial, uid, card });
    }

    fn failed(&self, uid: u64, cause: &str) {
        debug!(uid, cause, "identification failed");
        Diagnostics::bump(&self.ctx.diag.identification_failures);
        emit(
            &self.ctx,
            DeviceEvent::IdentificationFailed {
                uid,
                cause: cause.to_string(),
            },
        );
    }
}

#[async_trait]
impl Agent for PatientAgent {
    fn name(&self) -> AgentName {
        AgentName::Patient
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        Vec::new()
    }

    async fn on_envelope(&mut self, _envelope: &Envelope, _out: &mut Outbox) {}

    async fn on_stimulus(&mut self, stimulus: Stimulus, out: &mut Outbox) {
        match stimulus {
            Stimulus::TagArrived { uid } => self.identify(uid, out).await,
            Stimulus::CardWritten { card, .. } => {
                emit(&self.ctx, DeviceEvent::CardUpdated { serial: card.serial });
                out.send(AgentName::Physician, Payload::CardUpdated { card });
            }
            other => warn!(?other, "patient agent ignores stimulus"),
        }
    }
}

/// Reads medical devices, alarms on abnormal values, summarizes windows.
pub struct BiometricAgent {
    ctx: Arc<DeviceContext>,
    serial: Option<u64>,
    window: SampleWindow,
}

impl BiometricAgent {
    pub fn new(ctx: Arc<DeviceContext>) -> Self {
        let window = SampleWindow::new(ctx.window_size);
        BiometricAgent {
            ctx,
            serial: None,
            window,
        }
    }
}

#[async_trait]
impl Agent for BiometricAgent {
    fn name(&self) -> AgentName {
        AgentName::Biometric
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![MessageKind::PatientIdentified]
    }

    async fn on_envelope(&mut self, envelope: &Envelope, _out: &mut Outbox) {
        if let Payload::PatientIdentified { serial, .. } = envelope.payload {
            self.serial = Some(serial);
            self.window.clear();
        }
    }

    async fn on_stimulus(&mut self, stimulus: Stimulus, out: &mut Outbox) {
        let Stimulus::Sample(sample) = stimulus else {
            return;
        };
        let Some(serial) = self.serial else {
            Diagnostics::bump(&self.ctx.diag.samples_dropped);
            return;
        };
        self.ctx.state.with(|s| s.record_sample(sample.clone()));
        let classification = match evaluate(&sample, &self.ctx.thresholds) {
            Ok(c) => c,
            Err(e) => {
                warn!("cannot classify sample: {e}");
                Classification::Normal
            }
        };
        // the alarm goes out before any window processing
        if classification != Classification::Normal {
            let alarm_id = self.ctx.state.with(|s| s.next_alarm_id());
            out.send(
                AgentName::Physician,
                Payload::Alarm(AlarmEvent {
                    alarm_id,
                    serial,
                    sample: sample.clone(),
                    classification,
                    acknowledged: false,
                    acknowledged_by: None,
                }),
            );
        }
        if let Some(results) = self.window.push(serial, sample) {
            for result in results {
                out.send(AgentName::Physician, Payload::ResultsAvailable(result));
            }
        }
    }
}

/// Keeps the physician informed and forwards results to the central system.
pub struct PhysicianAgent {
    ctx: Arc<DeviceContext>,
}

impl PhysicianAgent {
    pub fn new(ctx: Arc<DeviceContext>) -> Self {
        PhysicianAgent { ctx }
    }

    fn on_result(&self, result: &BiometricResult, out: &mut Outbox) {
        let current = self.ctx.state.with(|s| {
            s.record_result(result.clone());
            s.current_serial()
        });
        if current == Some(result.serial) {
            emit(&self.ctx, DeviceEvent::Result(result.clone()));
            out.send(AgentName::Simopac, Payload::TestResult(result.clone()));
        } else {
            Diagnostics::bump(&self.ctx.diag.stale_results);
            emit(&self.ctx, DeviceEvent::StaleResult(result.clone()));
        }
    }
}

#[async_trait]
impl Agent for PhysicianAgent {
    fn name(&self) -> AgentName {
        AgentName::Physician
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![
            MessageKind::PatientIdentified,
            MessageKind::ResultsAvailable,
            MessageKind::Alarm,
            MessageKind::SupplementaryResponse,
            MessageKind::CardUpdated,
        ]
    }

    async fn on_envelope(&mut self, envelope: &Envelope, out: &mut Outbox) {
        match &envelope.payload {
            Payload::ResultsAvailable(result) => self.on_result(result, out),
            Payload::Alarm(alarm) => {
                self.ctx.state.with(|s| s.push_alarm(alarm.clone()));
                emit(&self.ctx, DeviceEvent::Alarm(alarm.clone()));
            }
            Payload::SupplementaryResponse(outcome) => {
                if outcome.error.is_some() {
                    Diagnostics::bump(&self.ctx.diag.supplementary_failures);
                }
                self.ctx.state.with(|s| s.cache_supplementary(outcome.clone()));
                emit(&self.ctx, DeviceEvent::Supplementary(outcome.clone()));
            }
            // patient identification and card updates are state the API already exposes
            _ => {}
        }
    }

    async fn on_stimulus(&mut self, stimulus: Stimulus, out: &mut Outbox) {
        let Stimulus::RequestSupplementary { request_id } = stimulus else {
            return;
        };
        match self.ctx.state.with(|s| s.current_serial()) {
            Some(serial) => out.send(
                AgentName::Simopac,
                Payload::SupplementaryRequest { request_id, serial },
            ),
            None => {
                let outcome =
                    SupplementaryOutcome::failed(request_id, 0, SupplementaryFailure::NoCurrentPatient);
                Diagnostics::bump(&self.ctx.diag.supplementary_failures);
                emit(&self.ctx, DeviceEvent::Supplementary(outcome));
            }
        }
    }
}

/// Talks HL7 and HTTP to the central system.
pub struct SimopacAgent {
    ctx: Arc<DeviceContext>,
}

impl SimopacAgent {
    pub fn new(ctx: Arc<DeviceContext>) -> Self {
        SimopacAgent { ctx }
    }

    fn card_for(&self, serial: u64) -> Option<CipCard> {
        self.ctx
            .state
            .with(|s| s.current().filter(|c| c.card.serial == serial).map(|c| c.card.clone()))
    }

    async fn deliver(&self, result: &BiometricResult) {
        let diag = &self.ctx.diag;
        let report = |outcome: &str, attempts: u32| {
            emit(
                &self.ctx,
                DeviceEvent::Delivery {
                    serial: result.serial,
                    kind: result.kind,
                    outcome: outcome.to_string(),
                    attempts,
                },
            )
        };
        let Some(card) = self.card_for(result.serial) else {
            Diagnostics::bump(&diag.hl7_failures);
            return report("StalePatient", 0);
        };
        let control_id = self.ctx.control_ids.next();
        let msg = match build_oru(&card, result, &control_id, self.ctx.clock.now()) {
            Ok(m) => m,
            Err(e) => {
                Diagnostics::bump(&diag.hl7_failures);
                return report(e.code(), 0);
            }
        };
        match send_with_retries(&self.ctx.hl7_endpoint, &msg, &self.ctx.retry).await {
            Ok(d) => {
                diag.hl7_retries
                    .fetch_add(u64::from(d.attempts - 1), std::sync::atomic::Ordering::Relaxed);
                if d.ack.code == AckCode::AA {
                    Diagnostics::bump(&diag.hl7_delivered);
                    report("Delivered", d.attempts);
                } else {
                    Diagnostics::bump(&diag.hl7_negative_acks);
                    report("AckNegative", d.attempts);
                }
            }
            Err(e @ Hl7Error::Timeout { attempts }) => {
                diag.hl7_retries.fetch_add(
                    u64::from(attempts.saturating_sub(1)),
                    std::sync::atomic::Ordering::Relaxed,
                );
                Diagnostics::bump(&diag.hl7_failures);
                warn!(control_id, "hl7 delivery failed: {e}");
                report("Timeout", attempts);
            }
            Err(e) => {
                Diagnostics::bump(&diag.hl7_failures);
                report(e.code(), 1);
            }
        }
    }
}

#[async_trait]
impl Agent for SimopacAgent {
    fn name(&self) -> AgentName {
        AgentName::Simopac
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![MessageKind::TestResult, MessageKind::SupplementaryRequest]
    }

    async fn on_envelope(&mut self, envelope: &Envelope, out: &mut Outbox) {
        match &envelope.payload {
            Payload::TestResult(result) => self.deliver(result).await,
            Payload::SupplementaryRequest { request_id, serial } => {
                let outcome = match self.card_for(*serial) {
                    None => SupplementaryOutcome::failed(
                        *request_id,
                        *serial,
                        SupplementaryFailure::NoCurrentPatient,
                    ),
                    Some(card) => match self.ctx.records.fetch(&card).await {
                        Ok(record) => SupplementaryOutcome::ok(*request_id, *serial, record),
                        Err(e) => SupplementaryOutcome::failed(*request_id, *serial, e),
                    },
                };
                out.send(AgentName::Physician, Payload::SupplementaryResponse(outcome));
            }
            _ => {}
        }
    }

    async fn on_stimulus(&mut self, _stimulus: Stimulus, _out: &mut Outbox) {}
}
