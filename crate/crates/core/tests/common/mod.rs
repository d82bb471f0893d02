#![allow(dead_code)]

pub mod gen;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use serde_json::Value;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use cipmon_core::agents::SupplementaryClient;
use cipmon_core::auth::{Role, UserEntry};
use cipmon_core::cip::{encode_cip, BloodGroup, CipCard, Rh};
use cipmon_core::clock::{Clock, SystemClock};
use cipmon_core::device::{device_router, Device, DeviceOptions};
use cipmon_core::hl7::RetryPolicy;
use cipmon_core::rfid::{Block, FieldHandle, LinkError, TagReader};
use cipmon_core::simopac::{http_router, read_log, serve_mllp, LogRecord, PatientSeed, SimopacState, Store};
use cipmon_core::vitals::Thresholds;

pub const SERVICE_USER: &str = "device-01";
pub const SERVICE_PASSWORD: &str = "service-secret";

pub fn seeds() -> Vec<PatientSeed> {
    vec![
        PatientSeed {
            serial: 42,
            display_name: "Ion Popescu".into(),
            birth_year: 1961,
        },
        PatientSeed {
            serial: 77,
            display_name: "Maria Ionescu".into(),
            birth_year: 1984,
        },
    ]
}

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        backoff_ms: vec![10, 20, 40],
        attempt_timeout_ms: 500,
    }
}

pub struct Simopac {
    pub state: Arc<SimopacState>,
    pub mllp: String,
    pub http: String,
    tasks: Vec<JoinHandle<()>>,
}

impl Drop for Simopac {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

pub async fn start_simopac(dir: Option<&Path>) -> Simopac {
    let users = vec![UserEntry::new(SERVICE_USER, Role::Physician, SERVICE_PASSWORD)];
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let state = match dir {
        Some(d) => SimopacState::open(d, &seeds(), users, clock).unwrap(),
        None => SimopacState::new(Store::in_memory(&seeds()), users, clock),
    };
    let mllp = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let http = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let mllp_addr = mllp.local_addr().unwrap().to_string();
    let http_addr = format!("http://{}", http.local_addr().unwrap());
    let s1 = state.clone();
    let s2 = state.clone();
    let tasks = vec![
        tokio::spawn(async move {
            let _ = serve_mllp(mllp, s1).await;
        }),
        tokio::spawn(async move {
            let app = http_router(s2).into_make_service_with_connect_info::<SocketAddr>();
            let _ = axum::serve(http, app).await;
        }),
    ];
    Simopac {
        state,
        mllp: mllp_addr,
        http: http_addr,
        tasks,
    }
}

pub fn card(serial: u64, server_uri: &str) -> CipCard {
    let mut c = CipCard::blank(serial, "ro", server_uri);
    c.blood_group = BloodGroup::O;
    c.rh = Rh::Positive;
    c.allergies = vec!["penicillin".into()];
    c.last_modified = 1_700_000_000;
    c.modifier_id = "registration".into();
    c
}

pub struct Rig {
    pub device: Arc<Device>,
    pub field: FieldHandle,
    pub simopac: Simopac,
    pub base: String,
    pub http: reqwest::Client,
    api_task: JoinHandle<()>,
}

impl Drop for Rig {
    fn drop(&mut self) {
        self.api_task.abort();
    }
}

pub struct RigOptions {
    pub deterministic: bool,
    pub hl7_endpoint: Option<String>,
    pub window_size: usize,
}

impl Default for RigOptions {
    fn default() -> Self {
        RigOptions {
            deterministic: true,
            hl7_endpoint: None,
            window_size: 10,
        }
    }
}

pub async fn rig() -> Rig {
    rig_with(RigOptions::default()).await
}

pub async fn rig_with(opts: RigOptions) -> Rig {
    let simopac = start_simopac(None).await;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let field = FieldHandle::spawn(clock.clone());
    let device = Device::start(DeviceOptions {
        reader: Arc::new(field.clone()),
        records: Arc::new(SupplementaryClient::new(SERVICE_USER, SERVICE_PASSWORD)),
        hl7_endpoint: opts.hl7_endpoint.unwrap_or_else(|| simopac.mllp.clone()),
        retry: fast_retry(),
        thresholds: Thresholds::default(),
        window_size: opts.window_size,
        clock,
        users: vec![
            UserEntry::new("dr.pop", Role::Physician, "pw-physician"),
            UserEntry::new("admin", Role::Admin, "pw-admin"),
            UserEntry::new("nurse.ana", Role::Viewer, "pw-viewer"),
        ],
        deterministic: opts.deterministic,
        ui_dir: None,
    })
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = device_router(device.clone());
    let api_task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Rig {
        device,
        field,
        simopac,
        base,
        http: reqwest::Client::new(),
        api_task,
    }
}

pub fn password_for(user: &str) -> &'static str {
    match user {
        "dr.pop" => "pw-physician",
        "admin" => "pw-admin",
        "nurse.ana" => "pw-viewer",
        _ => "nope",
    }
}

impl Rig {
    pub async fn login(&self, user: &str) -> String {
        let (status, body) = self
            .call("POST", "/login", None, Some(serde_json::json!({"user": user, "password": password_for(user)})))
            .await;
        assert_eq!(status, 200, "login {user}: {body}");
        body["token"].as_str().unwrap().to_string()
    }

    pub async fn call(&self, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> (u16, Value) {
        let method = reqwest::Method::from_bytes(method.as_bytes()).unwrap();
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let reply = req.send().await.unwrap();
        let status = reply.status().as_u16();
        let text = reply.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    /// Places a card in the field and lets the device identify it.
    pub async fn present(&self, uid: u64, card: &CipCard) {
        self.field.add_tag(uid, Some(&encode_cip(card).unwrap())).await.unwrap();
        self.device
            .submit(cipmon_core::agents::Stimulus::TagArrived { uid })
            .unwrap();
        self.device.settle().await;
    }

    pub async fn vitals(&self, lines: &[String]) {
        for l in lines {
            assert!(self.device.submit_vital_line(l), "rejected {l}");
        }
        self.device.settle().await;
    }
}

pub fn hr_lines(n: usize, value: f64, start: u64) -> Vec<String> {
    (0..n)
        .map(|i| format!("VITAL monitor-1 HR {value} bpm {}", start + i as u64))
        .collect()
}

/// Straight-line CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc_oracle(data: &[u8]) -> u16 {
    let mut crc: u32 = 0xFFFF;
    for &byte in data {
        for bit in (0..8).rev() {
            let top = (crc >> 15) & 1;
            let input = u32::from(byte >> bit) & 1;
            crc = (crc << 1) & 0xFFFF;
            if top ^ input == 1 {
                crc ^= 0x1021;
            }
        }
    }
    crc as u16
}

/// Removes the tag from the field after a number of successful block reads.
pub struct DepartingReader {
    field: FieldHandle,
    uid: u64,
    reads_before_leaving: usize,
    reads: AtomicUsize,
}

impl DepartingReader {
    pub fn new(field: FieldHandle, uid: u64, reads_before_leaving: usize) -> Self {
        DepartingReader {
            field,
            uid,
            reads_before_leaving,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn reset(&self) {
        self.reads.store(0, Ordering::SeqCst);
    }
}

#[async_trait]
impl TagReader for DepartingReader {
    async fn inventory(&self) -> Result<Vec<u64>, LinkError> {
        self.field.inventory().await
    }

    async fn read_block(&self, uid: u64, index: u8) -> Result<Block, LinkError> {
        if self.reads.fetch_add(1, Ordering::SeqCst) == self.reads_before_leaving {
            self.field.remove_tag(self.uid).await?;
        }
        self.field.read_block(uid, index).await
    }

    async fn write_block(&self, uid: u64, index: u8, data: &[u8]) -> Result<(), LinkError> {
        self.field.write_block(uid, index, data).await
    }
}

/// SIMOPAC on its own runtime so it can be torn down abruptly.
pub struct Killable {
    rt: tokio::runtime::Runtime,
    pub state: Arc<SimopacState>,
    pub mllp: String,
    pub http: String,
}

impl Killable {
    pub fn launch(dir: &Path) -> Killable {
        let users = vec![UserEntry::new(SERVICE_USER, Role::Physician, SERVICE_PASSWORD)];
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let state = SimopacState::open(dir, &seeds(), users, clock).unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let mllp = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let http = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        mllp.set_nonblocking(true).unwrap();
        http.set_nonblocking(true).unwrap();
        let mllp_addr = mllp.local_addr().unwrap().to_string();
        let http_addr = format!("http://{}", http.local_addr().unwrap());
        let s1 = state.clone();
        let s2 = state.clone();
        rt.spawn(async move {
            let l = TcpListener::from_std(mllp).unwrap();
            let _ = serve_mllp(l, s1).await;
        });
        rt.spawn(async move {
            let l = TcpListener::from_std(http).unwrap();
            let app = http_router(s2).into_make_service_with_connect_info::<SocketAddr>();
            let _ = axum::serve(l, app).await;
        });
        Killable {
            rt,
            state,
            mllp: mllp_addr,
            http: http_addr,
        }
    }

    /// Drops every task at its next await point, mid-request or not.
    pub fn kill(self) {
        self.rt.shutdown_background();
    }
}

/// (observations, audit entries) straight from the log, independent of replay.
pub fn persisted_counts(dir: &Path) -> (usize, usize) {
    let mut obs = 0;
    let mut audit = 0;
    for line in read_log(&dir.join("simopac.log")).unwrap() {
        match line.expect("every persisted line parses") {
            LogRecord::Observation { .. } => obs += 1,
            LogRecord::Audit(_) => audit += 1,
        }
    }
    (obs, audit)
}
