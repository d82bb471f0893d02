//! The central-server stub: HL7 results in over MLLP, authorized record queries over HTTP.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::Path;
use std::sync::Arc;

use axum::extract::{ConnectInfo, Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinSet;
use tracing::{debug, info, warn};

use super::store::{
    AuditEntry, AuditOutcome, Demographics, LogRecord, Observation, PatientSeed, Store,
    StoreCounts, StoreError,
};
use crate::auth::{bearer, AuthError, Authenticator, Session, UserEntry};
use crate::clock::Clock;
use crate::hl7::{
    build_ack, encode_hl7, mllp_wrap, parse_hl7, parse_oru, read_mllp_frame, AckCode,
    ControlIds, Hl7Error, Hl7Message,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrRecordView {
    pub serial: u64,
    pub demographics: Option<Demographics>,
    pub observations: Vec<Observation>,
    pub audit: Vec<AuditEntry>,
    pub language: String,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryError {
    Unauthorized,
    UnknownPatient,
    Store,
}

fn labels(language: &str) -> (String, BTreeMap<String, String>) {
    let (lang, pairs): (&str, [(&str, &str); 6]) = match language {
        "ro" => (
            "ro",
            [
                ("serial", "Număr de serie"),
                ("display_name", "Nume"),
                ("birth_year", "Anul nașterii"),
                ("observations", "Observații"),
                ("audit", "Jurnal de acces"),
                ("mean", "Medie"),
            ],
        ),
        _ => (
            "en",
            [
                ("serial", "Serial number"),
                ("display_name", "Name"),
                ("birth_year", "Birth year"),
                ("observations", "Observations"),
                ("audit", "Access log"),
                ("mean", "Mean"),
            ],
        ),
    };
    (
        lang.to_string(),
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    )
}

/// Shared server state: one guarded store owner and the session table.
pub struct SimopacState {
    store: Mutex<Store>,
    auth: Authenticator,
    clock: Arc<dyn Clock>,
    ack_ids: ControlIds,
}

impl SimopacState {
    pub fn new(store: Store, users: Vec<UserEntry>, clock: Arc<dyn Clock>) -> Arc<Self> {
        let ack_ids = ControlIds::starting_at(clock.now().saturating_mul(1000) + 1);
        Arc::new(SimopacState {
            store: Mutex::new(store),
            auth: Authenticator::new(users),
            clock,
            ack_ids,
        })
    }

    /// Restores the store from `data_dir` and builds the state.
    pub fn open(
        data_dir: &Path,
        seeds: &[PatientSeed],
        users: Vec<UserEntry>,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Self>, StoreError> {
        Ok(Self::new(Store::restore(data_dir, seeds)?, users, clock))
    }

    pub fn counts(&self) -> StoreCounts {
        self.store.lock().counts()
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&Store) -> R) -> R {
        f(&self.store.lock())
    }

    pub fn login(&self, user: &str, password: &str) -> Result<Session, AuthError> {
        self.auth.login(user, password, self.clock.now())
    }

    /// Authorized record lookup. Every call leaves exactly one audit entry.
    pub fn get_patient(
        &self,
        token: Option<&str>,
        serial: &str,
        language: Option<&str>,
        address: IpAddr,
    ) -> Result<EhrRecordView, QueryError> {
        let now = self.clock.now();
        let session = self.auth.check(token, now);
        let parsed: Option<u64> = serial.parse().ok();
        let mut store = self.store.lock();
        let (requester, outcome) = match (&session, parsed.and_then(|s| store.record(s))) {
            (Err(_), _) => ("anonymous".to_string(), AuditOutcome::Denied),
            (Ok(s), Some(_)) => (s.principal.clone(), AuditOutcome::Granted),
            (Ok(s), None) => (s.principal.clone(), AuditOutcome::UnknownPatient),
        };
        let entry = AuditEntry {
            serial: parsed.unwrap_or(0),
            requester,
            address: address.to_string(),
            timestamp: now,
            outcome,
        };
        store
            .apply(LogRecord::Audit(entry), now)
            .map_err(|_| QueryError::Store)?;
        match outcome {
            AuditOutcome::Denied => Err(QueryError::Unauthorized),
            AuditOutcome::UnknownPatient => Err(QueryError::UnknownPatient),
            AuditOutcome::Granted => {
                let serial = parsed.expect("granted implies a parsed serial");
                let record = store.record(serial).expect("granted implies a record");
                let (language, labels) = labels(language.unwrap_or("en"));
                Ok(EhrRecordView {
                    serial,
                    demographics: record.demographics.clone(),
                    observations: record.observations.clone(),
                    audit: store.audit_for(serial),
                    language,
                    labels,
                })
            }
        }
    }

    /// Handles one inbound HL7 message and returns the ACK to send back.
    pub fn handle_message(&self, text: &str, source: IpAddr) -> Hl7Message {
        let now = self.clock.now();
        let ack_id = self.ack_ids.next();
        let msg = match parse_hl7(text) {
            Ok(m) => m,
            Err(e) => {
                debug!("unparseable hl7: {e}");
                return build_ack(AckCode::AE, "UNKNOWN", &ack_id, now);
            }
        };
        let control_id = msg.control_id().to_string();
        if msg.message_type() != "ORU^R01" {
            return build_ack(AckCode::AR, &control_id, &ack_id, now);
        }
        let content = match parse_oru(&msg) {
            Ok(c) => c,
            Err(e) => {
                debug!(control_id, "rejected ORU: {e}");
                return build_ack(AckCode::AE, &control_id, &ack_id, now);
            }
        };
        let mut store = self.store.lock();
        for reported in content.observations {
            let observation = Observation {
                kind: reported.kind,
                min: reported.min,
                max: reported.max,
                mean: reported.mean,
                window_start: reported.window_start,
                window_end: reported.window_end,
                received_at: now,
                source: source.to_string(),
            };
            let record = LogRecord::Observation {
                serial: content.serial,
                observation,
            };
            if let Err(e) = store.apply(record, now) {
                warn!("persisting observation failed: {e}");
                return build_ack(AckCode::AE, &control_id, &ack_id, now);
            }
        }
        build_ack(AckCode::AA, &control_id, &ack_id, now)
    }
}

async fn handle_hl7_connection(
    mut stream: TcpStream,
    peer: SocketAddr,
    state: Arc<SimopacState>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_mllp_frame(&mut stream, &mut buf).await {
            Ok(Some(text)) => {
                let ack = state.handle_message(&text, peer.ip());
                stream.write_all(&mllp_wrap(&encode_hl7(&ack))).await?;
            }
            Ok(None) => return Ok(()),
            Err(Hl7Error::BadFraming) => {
                let ack = build_ack(AckCode::AE, "UNKNOWN", &state.ack_ids.next(), state.clock.now());
                // best effort before closing
                let _ = stream.write_all(&mllp_wrap(&encode_hl7(&ack))).await;
                return Ok(());
            }
            Err(_) => return Ok(()),
        }
    }
}

/// Accepts MLLP connections until the listener fails or this future is dropped.
pub async fn serve_mllp(listener: TcpListener, state: Arc<SimopacState>) -> std::io::Result<()> {
    let mut connections = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, peer) = accepted?;
                let state = state.clone();
                connections.spawn(async move {
                    if let Err(e) = handle_hl7_connection(stream, peer, state).await {
                        debug!(%peer, "mllp connection error: {e}");
                    }
                });
            }
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
}

fn error_json(status: StatusCode, code: &str) -> Response {
    (status, Json(serde_json::json!({ "error": code }))).into_response()
}

#[derive(Debug, Deserialize)]
pub struct LoginBody {
    pub user: String,
    pub password: String,
}

async fn login(State(state): State<Arc<SimopacState>>, Json(body): Json<LoginBody>) -> Response {
    match state.login(&body.user, &body.password) {
        Ok(s) => Json(serde_json::json!({
            "token": s.token,
            "expiry": s.expiry,
            "role": s.role,
        }))
        .into_response(),
        Err(_) => error_json(StatusCode::UNAUTHORIZED, "BadCredentials"),
    }
}

#[derive(Debug, Deserialize)]
struct LangQuery {
    lang: Option<String>,
}

async fn get_patient(
    State(state): State<Arc<SimopacState>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    UrlPath(serial): UrlPath<String>,
    Query(query): Query<LangQuery>,
    headers: HeaderMap,
) -> Response {
    let header = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok());
    match state.get_patient(bearer(header), &serial, query.lang.as_deref(), peer.ip()) {
        Ok(view) => Json(view).into_response(),
        Err(QueryError::Unauthorized) => error_json(StatusCode::UNAUTHORIZED, "Unauthorized"),
        Err(QueryError::UnknownPatient) => error_json(StatusCode::NOT_FOUND, "UnknownPatient"),
        Err(QueryError::Store) => error_json(StatusCode::INTERNAL_SERVER_ERROR, "StoreError"),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

pub fn http_router(state: Arc<SimopacState>) -> Router {
    Router::new()
        .route("/login", post(login))
        .route("/patients/{serial}", get(get_patient))
        .route("/health", get(health))
        .with_state(state)
}

pub async fn serve_http(listener: TcpListener, state: Arc<SimopacState>) -> std::io::Result<()> {
    info!(addr = ?listener.local_addr().ok(), "simopac http listening");
    axum::serve(
        listener,
        http_router(state).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .await
}
