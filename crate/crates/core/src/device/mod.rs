//! The monitoring device: agents plus their inputs and the local web API.

mod api;
mod ingress;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use api::{device_router, serve_device_api, Access, ApiError, ROUTES};
pub use ingress::{poll_reader, serve_vitals};

use crate::agents::{
    event_channel, spawn_concurrent, spawn_deterministic, standard_agents, BusError,
    DeviceContext, Diagnostics, RecordSource, RuntimeHandle, SharedState, Stimulus,
};
use crate::auth::{Authenticator, UserEntry};
use crate::clock::Clock;
use crate::hl7::{ControlIds, RetryPolicy};
use crate::rfid::TagReader;
use crate::vitals::{parse_vital_line, Thresholds};

pub struct DeviceOptions {
    pub reader: Arc<dyn TagReader>,
    pub records: Arc<dyn RecordSource>,
    pub hl7_endpoint: String,
    pub retry: RetryPolicy,
    pub thresholds: Thresholds,
    pub window_size: usize,
    pub clock: Arc<dyn Clock>,
    pub users: Vec<UserEntry>,
    pub deterministic: bool,
    pub ui_dir: Option<PathBuf>,
}

pub struct Device {
    pub ctx: Arc<DeviceContext>,
    pub runtime: RuntimeHandle,
    pub auth: Authenticator,
    pub ui_dir: Option<PathBuf>,
    /// Serializes card writes so read-modify-write cycles do not interleave.
    pub(crate) card_writes: tokio::sync::Mutex<()>,
    next_request: AtomicU64,
}

impl Device {
    /// Builds the shared context and spawns the agents. Needs a tokio runtime.
    pub fn start(opts: DeviceOptions) -> Result<Arc<Device>, BusError> {
        let now = opts.clock.now();
        let ctx = Arc::new(DeviceContext {
            state: SharedState::new(),
            reader: opts.reader,
            records: opts.records,
            hl7_endpoint: opts.hl7_endpoint,
            retry: opts.retry,
            thresholds: opts.thresholds,
            window_size: opts.window_size,
            clock: opts.clock.clone(),
            events: event_channel(),
            diag: Arc::new(Diagnostics::default()),
            control_ids: ControlIds::starting_at(now.saturating_mul(1000) + 1),
        });
        let agents = standard_agents(&ctx);
        let runtime = if opts.deterministic {
            spawn_deterministic(agents, opts.clock)?
        } else {
            spawn_concurrent(agents, opts.clock)?
        };
        Ok(Arc::new(Device {
            ctx,
            runtime,
            auth: Authenticator::new(opts.users),
            ui_dir: opts.ui_dir,
            card_writes: tokio::sync::Mutex::new(()),
            next_request: AtomicU64::new(1),
        }))
    }

    pub fn submit(&self, stimulus: Stimulus) -> Result<(), BusError> {
        self.runtime.submit(stimulus)
    }

    /// Parses one line of the vitals protocol and hands it to the biometric agent.
    pub fn submit_vital_line(&self, line: &str) -> bool {
        match parse_vital_line(line) {
            Ok(sample) => self.submit(Stimulus::Sample(sample)).is_ok(),
            Err(e) => {
                tracing::debug!(line, "rejected vital line: {e}");
                Diagnostics::bump(&self.ctx.diag.sample_parse_errors);
                false
            }
        }
    }

    pub fn next_request_id(&self) -> u64 {
        self.next_request.fetch_add(1, Ordering::Relaxed)
    }

    /// Waits until every submitted input has been fully processed.
    pub async fn settle(&self) {
        self.runtime.settle().await
    }
}

impl DeviceOptions {
    /// Options for a device wired to the networked reader and record servers in `config`.
    pub fn from_config(config: &crate::config::Config, clock: Arc<dyn Clock>) -> Self {
        let reader = crate::rfid::ReaderClient::new(config.reader.address.clone())
            .with_timeout(std::time::Duration::from_millis(config.reader.timeout_ms));
        let d = &config.device;
        DeviceOptions {
            reader: Arc::new(reader),
            records: Arc::new(crate::agents::SupplementaryClient::new(
                &d.service_user,
                &d.service_password,
            )),
            hl7_endpoint: d.hl7_endpoint.clone(),
            retry: d.retry.clone(),
            thresholds: config.thresholds(),
            window_size: d.window_size,
            clock,
            users: config.device_users(),
            deterministic: d.deterministic,
            ui_dir: d.ui_dir.clone(),
        }
    }
}
