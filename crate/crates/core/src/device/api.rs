//! The device's local web API.
//!
//! Access control is declared once in [`ROUTES`]; the router is built from
//! that table so a route cannot exist without its declared guard.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, on, MethodFilter, MethodRouter};
use axum::{Extension, Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;
use tracing::info;

use super::Device;
use crate::agents::{AlarmError, DeviceEvent, Stimulus, SupplementaryFailure};
use crate::auth::{bearer, Session};
use crate::cip::{apply_update, decode_cip, encode_cip, CipPatch};
use crate::rfid::{read_full_card, write_full_card};
use crate::vitals::VitalKind;

const SUPPLEMENTARY_WAIT: Duration = Duration::from_secs(10);
const DEFAULT_VITALS_LIMIT: usize = 100;
const TRACE_TAIL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Open,
    /// Any logged-in user.
    Session,
    /// Logged-in physician or admin.
    Editor,
}

pub const ROUTES: &[(&str, &str, Access)] = &[
    ("POST", "/login", Access::Open),
    ("GET", "/health", Access::Open),
    ("GET", "/ui/", Access::Open),
    ("GET", "/patient", Access::Session),
    ("PUT", "/cip", Access::Editor),
    ("GET", "/vitals", Access::Session),
    ("GET", "/alarms", Access::Session),
    ("POST", "/alarms/{id}/ack", Access::Editor),
    ("POST", "/supplementary", Access::Session),
    ("GET", "/events", Access::Session),
    ("GET", "/diag", Access::Session),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str) -> Self {
        ApiError {
            status,
            code: code.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.code }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn no_patient() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "NoCurrentPatient")
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn guard(
    State((device, access)): State<(Arc<Device>, Access)>,
    mut req: Request,
    next: Next,
) -> Response {
    let header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok());
    let mut token = bearer(header).map(str::to_string);
    // browsers cannot set headers on an event stream
    if token.is_none() && req.uri().path() == "/events" {
        token = Query::<TokenQuery>::try_from_uri(req.uri())
            .ok()
            .and_then(|q| q.0.token);
    }
    match device.auth.check(token.as_deref(), device.ctx.clock.now()) {
        Err(_) => ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized").into_response(),
        Ok(s) if access == Access::Editor && !s.role.can_edit() => {
            ApiError::new(StatusCode::FORBIDDEN, "Forbidden").into_response()
        }
        Ok(s) => {
            req.extensions_mut().insert(s);
            next.run(req).await
        }
    }
}

#[derive(Deserialize)]
struct LoginBody {
    user: String,
    password: String,
}

async fn login(State(device): State<Arc<Device>>, body: Result<Json<LoginBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body.map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest"))?;
    let s = device
        .auth
        .login(&body.user, &body.password, device.ctx.clock.now())
        .map_err(|_| ApiError::new(StatusCode::UNAUTHORIZED, "BadCredentials"))?;
    Ok(Json(serde_json::json!({ "token": s.token, "expiry": s.expiry, "role": s.role })).into_response())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn patient(State(device): State<Arc<Device>>) -> ApiResult {
    device
        .ctx
        .state
        .with(|s| s.current().map(|c| Json(c.card.clone()).into_response()))
        .ok_or_else(no_patient)
}

/// Patch, write, re-read, and only then commit to device state.
async fn put_cip(
    State(device): State<Arc<Device>>,
    Extension(session): Extension<Session>,
    body: Result<Json<CipPatch>, JsonRejection>,
) -> ApiResult {
    let Json(patch) = body.map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest"))?;
    let _writing = device.card_writes.lock().await;
    let ctx = &device.ctx;
    let current = ctx.state.with(|s| s.current().cloned()).ok_or_else(no_patient)?;
    let updated = apply_update(&current.card, &patch, &session.principal, ctx.clock.now())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code()))?;
    let image = encode_cip(&updated).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code()))?;
    let write_failed = || ApiError::new(StatusCode::BAD_GATEWAY, "TagWriteFailed");
    write_full_card(ctx.reader.as_ref(), current.uid, &image)
        .await
        .map_err(|_| write_failed())?;
    let confirmed = read_full_card(ctx.reader.as_ref(), current.uid)
        .await
        .ok()
        .and_then(|img| decode_cip(&img).ok())
        .filter(|c| *c == updated)
        .ok_or_else(write_failed)?;
    if !ctx.state.with(|s| s.update_card(confirmed.clone())) {
        return Err(no_patient());
    }
    let _ = device.submit(Stimulus::CardWritten {
        uid: current.uid,
        card: confirmed.clone(),
    });
    Ok(Json(confirmed).into_response())
}

#[derive(Deserialize)]
struct VitalsQuery {
    kind: Option<String>,
    limit: Option<usize>,
}

async fn vitals(State(device): State<Arc<Device>>, Query(q): Query<VitalsQuery>) -> ApiResult {
    let kind = match q.kind.as_deref() {
        None | Some("") => None,
        Some(k) => Some(
            k.parse::<VitalKind>()
                .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "UnknownVitalType"))?,
        ),
    };
    let limit = q.limit.unwrap_or(DEFAULT_VITALS_LIMIT);
    Ok(Json(device.ctx.state.with(|s| s.recent_vitals(kind, limit))).into_response())
}

async fn alarms(State(device): State<Arc<Device>>) -> Response {
    Json(device.ctx.state.with(|s| s.alarms().to_vec())).into_response()
}

async fn ack_alarm(
    State(device): State<Arc<Device>>,
    Extension(session): Extension<Session>,
    Path(id): Path<String>,
) -> ApiResult {
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, "UnknownAlarmId");
    let id: u64 = id.parse().map_err(|_| unknown())?;
    let alarm = device
        .ctx
        .state
        .with(|s| s.acknowledge_alarm(id, &session.principal))
        .map_err(|e| match e {
            AlarmError::UnknownAlarmId => unknown(),
            AlarmError::AlreadyAcknowledged => ApiError::new(StatusCode::CONFLICT, "AlreadyAcknowledged"),
        })?;
    let _ = device.ctx.events.send(DeviceEvent::AlarmAcknowledged(alarm.clone()));
    Ok(Json(alarm).into_response())
}

async fn supplementary(State(device): State<Arc<Device>>) -> ApiResult {
    if device.ctx.state.with(|s| s.current_serial()).is_none() {
        return Err(no_patient());
    }
    let request_id = device.next_request_id();
    let mut events = device.ctx.events.subscribe();
    device
        .submit(Stimulus::RequestSupplementary { request_id })
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "BusClosed"))?;
    let wait = async {
        loop {
            match events.recv().await {
                Ok(DeviceEvent::Supplementary(o)) if o.request_id == request_id => return Some(o),
                Ok(_) | Err(RecvError::Lagged(_)) => {}
                Err(RecvError::Closed) => return None,
            }
        }
    };
    let outcome = tokio::time::timeout(SUPPLEMENTARY_WAIT, wait)
        .await
        .ok()
        .flatten()
        .ok_or_else(|| ApiError::new(StatusCode::GATEWAY_TIMEOUT, "SupplementaryTimeout"))?;
    match (outcome.record, outcome.error) {
        (Some(record), _) => Ok(Json(record).into_response()),
        (None, Some(e)) => {
            let status = match e {
                SupplementaryFailure::NoCurrentPatient => StatusCode::CONFLICT,
                SupplementaryFailure::UnknownPatient => StatusCode::NOT_FOUND,
                SupplementaryFailure::Unauthorized => StatusCode::UNAUTHORIZED,
                SupplementaryFailure::ServerUnreachable | SupplementaryFailure::BadResponse => {
                    StatusCode::BAD_GATEWAY
                }
            };
            Err(ApiError::new(status, e.code()))
        }
        (None, None) => Err(ApiError::new(StatusCode::BAD_GATEWAY, "BadResponse")),
    }
}

async fn events(State(device): State<Arc<Device>>) -> Response {
    let rx = device.ctx.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = serde_json::to_string(&ev).unwrap_or_default();
                    return Some((Ok::<_, Infallible>(Event::default().data(data)), rx));
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default()).into_response()
}

async fn diag(State(device): State<Arc<Device>>) -> Response {
    let trace = device.runtime.trace();
    let tail = &trace[trace.len().saturating_sub(TRACE_TAIL)..];
    Json(serde_json::json!({
        "counters": device.ctx.diag.snapshot(),
        "in_flight": device.runtime.bus().activity().outstanding(),
        "trace": tail,
    }))
    .into_response()
}

const UI_PLACEHOLDER: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>CIP monitor</title></head>\n<body><p>The physician UI is not installed. Set device.ui_dir to its build directory.</p></body></html>\n";

async fn ui_placeholder() -> Html<&'static str> {
    Html(UI_PLACEHOLDER)
}

fn handler(method: &str, path: &str) -> MethodRouter<Arc<Device>> {
    let filter = match Method::from_bytes(method.as_bytes()).expect("method") {
        Method::GET => MethodFilter::GET,
        Method::POST => MethodFilter::POST,
        Method::PUT => MethodFilter::PUT,
        other => panic!("unsupported method {other}"),
    };
    match path {
        "/login" => on(filter, login),
        "/health" => on(filter, health),
        "/patient" => on(filter, patient),
        "/cip" => on(filter, put_cip),
        "/vitals" => on(filter, vitals),
        "/alarms" => on(filter, alarms),
        "/alarms/{id}/ack" => on(filter, ack_alarm),
        "/supplementary" => on(filter, supplementary),
        "/events" => on(filter, events),
        "/diag" => on(filter, diag),
        other => panic!("no handler for {other}"),
    }
}

pub fn device_router(device: Arc<Device>) -> Router {
    let mut router = Router::new();
    for &(method, path, access) in ROUTES {
        if path == "/ui/" {
            continue;
        }
        let mut route = handler(method, path);
        if access != Access::Open {
            route = route.route_layer(middleware::from_fn_with_state(
                (device.clone(), access),
                guard,
            ));
        }
        router = router.route(path, route);
    }
    router = match &device.ui_dir {
        Some(dir) => router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => router
            .route("/ui", get(ui_placeholder))
            .route("/ui/", get(ui_placeholder))
            .route("/ui/{*rest}", get(ui_placeholder)),
    };
    router.with_state(device)
}

pub async fn serve_device_api(listener: TcpListener, device: Arc<Device>) -> std::io::Result<()> {
    info!(addr = ?listener.local_addr().ok(), "device api listening");
    axum::serve(listener, device_router(device)).await
}
