//! The four device agents, the bus they talk over and the state they share.

mod bus;
mod envelope;
mod roles;
mod runtime;
mod state;
mod upstream;

use std::sync::Arc;

pub use bus::{Activity, Bus, BusError, Delivery, Subscription, TraceEntry};
pub use envelope::{
    AgentName, AlarmEvent, Envelope, MessageKind, Payload, SupplementaryFailure,
    SupplementaryOutcome,
};
pub use roles::{
    Agent, BiometricAgent, Outbox, PatientAgent, PhysicianAgent, SimopacAgent, Stimulus,
};
pub use runtime::{spawn_concurrent, spawn_deterministic, standard_agents, RuntimeHandle, StepRuntime};
pub use state::{
    event_channel, AlarmError, CurrentPatient, DeviceEvent, DeviceState, Diagnostics,
    DiagnosticsSnapshot, EventSender, SharedState,
};
pub use upstream::{RecordSource, SupplementaryClient};

use crate::clock::Clock;
use crate::hl7::{ControlIds, RetryPolicy};
use crate::rfid::TagReader;
use crate::vitals::Thresholds;

/// Everything the agents need from the device around them.
pub struct DeviceContext {
    pub state: SharedState,
    pub reader: Arc<dyn TagReader>,
    pub records: Arc<dyn RecordSource>,
    pub hl7_endpoint: String,
    pub retry: RetryPolicy,
    pub thresholds: Thresholds,
    pub window_size: usize,
    pub clock: Arc<dyn Clock>,
    pub events: EventSender,
    pub diag: Arc<Diagnostics>,
    pub control_ids: ControlIds,
}
