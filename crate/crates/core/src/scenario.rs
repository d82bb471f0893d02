//! Scripted end-to-end runs against live services.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

use crate::cip::{encode_cip, CipCard};
use crate::rfid::ReaderClient;
use crate::simopac::{read_log, LogRecord};

const DEFAULT_WAIT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(25);

/// Where the services under test live. Script values override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub device: String,
    pub tagsim: String,
    pub vitals: String,
    pub simopac_log: PathBuf,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints {
            device: "http://127.0.0.1:4500".into(),
            tagsim: "127.0.0.1:4501".into(),
            vitals: "127.0.0.1:4502".into(),
            simopac_log: PathBuf::from("simopac-data/simopac.log"),
        }
    }
}

/// A GET against the device API and an assertion on the JSON it returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub get: String,
    #[serde(default)]
    pub pointer: String,
    #[serde(default)]
    pub equals: Option<Value>,
    #[serde(default)]
    pub len: Option<usize>,
}

/// Expected number of observations in the server log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogCount {
    Exactly(usize),
    /// `"delivered"`: whatever the device reports as acknowledged deliveries.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Login {
        user: String,
        password: String,
    },
    AddTag {
        uid: u64,
        /// Card JSON, relative to the script.
        card: PathBuf,
    },
    RemoveTag {
        uid: u64,
    },
    EmitVital {
        line: String,
    },
    Wait {
        #[serde(default)]
        ms: Option<u64>,
        #[serde(default)]
        until: Option<Check>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
    Request {
        method: String,
        path: String,
        #[serde(default)]
        body: Option<Value>,
        expect_status: u16,
        /// Send without the session token.
        #[serde(default)]
        anonymous: bool,
    },
    Expect(Check),
    ExpectLog {
        #[serde(default)]
        serial: Option<u64>,
        #[serde(default)]
        observations: Option<LogCount>,
        #[serde(default)]
        audit: Option<usize>,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Login { .. } => "login",
            Step::AddTag { .. } => "add_tag",
            Step::RemoveTag { .. } => "remove_tag",
            Step::EmitVital { .. } => "emit_vital",
            Step::Wait { .. } => "wait",
            Step::Request { .. } => "request",
            Step::Expect(_) => "expect",
            Step::ExpectLog { .. } => "expect_log",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub endpoints: Option<Endpoints>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("bad script {path} line {line}: {cause}")]
    BadScript { path: String, line: usize, cause: String },
}

impl ScenarioScript {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(shown.clone(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ScriptError::BadScript {
            path: shown,
            line: e.line(),
            cause: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub step: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub failed_step: Option<usize>,
    pub steps: Vec<StepReport>,
    pub elapsed_ms: u64,
}

struct Runner {
    endpoints: Endpoints,
    base_dir: PathBuf,
    http: reqwest::Client,
    token: Option<String>,
    vitals: Option<TcpStream>,
}

fn pointer<'a>(value: &'a Value, ptr: &str) -> Option<&'a Value> {
    value.pointer(ptr)
}

impl Runner {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoints.device.trim_end_matches('/'), path)
    }

    fn authed(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn get_json(&self, path: &str) -> Result<Value, String> {
        let reply = self
            .authed(self.http.get(self.url(path)))
            .send()
            .await
            .map_err(|e| format!("GET {path}: {e}"))?;
        let status = reply.status();
        let body: Value = reply.json().await.map_err(|e| format!("GET {path}: {e}"))?;
        if !status.is_success() {
            return Err(format!("GET {path}: status {} body {body}", status.as_u16()));
        }
        Ok(body)
    }

    async fn check(&self, check: &Check) -> Result<(), String> {
        let body = self.get_json(&check.get).await?;
        let found = pointer(&body, &check.pointer)
            .ok_or_else(|| format!("{}{}: no such path", check.get, check.pointer))?;
        if let Some(want) = &check.equals {
            if found != want {
                return Err(format!("{}{}: expected {want}, found {found}", check.get, check.pointer));
            }
        }
        if let Some(want) = check.len {
            let got = found.as_array().map(Vec::len);
            if got != Some(want) {
                return Err(format!(
                    "{}{}: expected length {want}, found {found}",
                    check.get, check.pointer
                ));
            }
        }
        Ok(())
    }

    async fn run_step(&mut self, step: &Step) -> Result<(), String> {
        match step {
            Step::Login { user, password } => {
                let reply = self
                    .http
                    .post(self.url("/login"))
                    .json(&serde_json::json!({ "user": user, "password": password }))
                    .send()
                    .await
                    .map_err(|e| format!("login: {e}"))?;
                if !reply.status().is_success() {
                    return Err(format!("login: status {}", reply.status().as_u16()));
                }
                let body: Value = reply.json().await.map_err(|e| e.to_string())?;
                self.token = body["token"].as_str().map(str::to_string);
                self.token.as_ref().map(|_| ()).ok_or_else(|| "login: no token".into())
            }
            Step::AddTag { uid, card } => {
                let path = self.base_dir.join(card);
                let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let card: CipCard = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                let image = encode_cip(&card).map_err(|e| e.code().to_string())?;
                ReaderClient::new(self.endpoints.tagsim.clone())
                    .add_tag(*uid, Some(&image))
                    .await
                    .map_err(|e| format!("add_tag: {}", e.code()))
            }
            Step::RemoveTag { uid } => ReaderClient::new(self.endpoints.tagsim.clone())
                .remove_tag(*uid)
                .await
                .map_err(|e| format!("remove_tag: {}", e.code())),
            Step::EmitVital { line } => {
                if self.vitals.is_none() {
                    let s = TcpStream::connect(&self.endpoints.vitals)
                        .await
                        .map_err(|e| format!("vitals: {e}"))?;
                    self.vitals = Some(s);
                }
                let stream = self.vitals.as_mut().expect("connected");
                let mut data = line.trim_end().to_string();
                data.push('\n');
                stream
                    .write_all(data.as_bytes())
                    .await
                    .map_err(|e| format!("vitals: {e}"))
            }
            Step::Wait { ms, until, timeout_ms } => {
                if let Some(ms) = ms {
                    tokio::time::sleep(Duration::from_millis(*ms)).await;
                }
                let Some(check) = until else { return Ok(()) };
                let limit = timeout_ms.map(Duration::from_millis).unwrap_or(DEFAULT_WAIT);
                let started = Instant::now();
                loop {
                    match self.check(check).await {
                        Ok(()) => return Ok(()),
                        Err(e) if started.elapsed() >= limit => {
                            return Err(format!("timed out after {} ms: {e}", limit.as_millis()))
                        }
                        Err(_) => tokio::time::sleep(POLL).await,
                    }
                }
            }
            Step::Request {
                method,
                path,
                body,
                expect_status,
                anonymous,
            } => {
                let method = reqwest::Method::from_bytes(method.as_bytes()).map_err(|e| e.to_string())?;
                let mut req = self.http.request(method, self.url(path));
                if !anonymous {
                    req = self.authed(req);
                }
                if let Some(b) = body {
                    req = req.json(b);
                }
                let reply = req.send().await.map_err(|e| format!("{path}: {e}"))?;
                let status = reply.status().as_u16();
                if status != *expect_status {
                    let text = reply.text().await.unwrap_or_default();
                    return Err(format!("{path}: expected status {expect_status}, got {status} {text}"));
                }
                Ok(())
            }
            Step::Expect(check) => self.check(check).await,
            Step::ExpectLog {
                serial,
                observations,
                audit,
            } => self.expect_log(*serial, observations.as_ref(), *audit).await,
        }
    }

    async fn expect_log(
        &self,
        serial: Option<u64>,
        observations: Option<&LogCount>,
        audit: Option<usize>,
    ) -> Result<(), String> {
        let path = &self.endpoints.simopac_log;
        let records = read_log(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut obs = 0;
        let mut aud = 0;
        for r in records.into_iter().flatten() {
            match r {
                LogRecord::Observation { serial: s, .. } if serial.is_none_or(|want| want == s) => obs += 1,
                LogRecord::Audit(a) if serial.is_none_or(|want| want == a.serial) => aud += 1,
                _ => {}
            }
        }
        if let Some(want) = observations {
            let want = match want {
                LogCount::Exactly(n) => *n,
                LogCount::Named(n) if n == "delivered" => {
                    let diag = self.get_json("/diag").await?;
                    diag.pointer("/counters/hl7_delivered")
                        .and_then(Value::as_u64)
                        .ok_or("diag: no hl7_delivered counter")? as usize
                }
                LogCount::Named(other) => return Err(format!("unknown count {other:?}")),
            };
            if obs != want {
                return Err(format!("log observations: expected {want}, found {obs}"));
            }
        }
        if let Some(want) = audit {
            if aud != want {
                return Err(format!("log audit entries: expected {want}, found {aud}"));
            }
        }
        Ok(())
    }
}

/// Runs every step in order, stopping at the first failure.
///
/// Card files in the script resolve against `base_dir`.
pub async fn run_scenario(script: &ScenarioScript, defaults: Endpoints, base_dir: &Path) -> ScenarioReport {
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(15))
        .build()
        .expect("http client");
    let mut runner = Runner {
        endpoints: script.endpoints.clone().unwrap_or(defaults),
        base_dir: base_dir.to_path_buf(),
        http,
        token: None,
        vitals: None,
    };
    let started = Instant::now();
    let mut steps = Vec::new();
    let mut failed_step = None;
    for (index, step) in script.steps.iter().enumerate() {
        let t = Instant::now();
        let result = runner.run_step(step).await;
        let failed = result.is_err();
        steps.push(StepReport {
            index,
            step: step.name().to_string(),
            outcome: if failed { "fail" } else { "pass" }.to_string(),
            detail: result.err(),
            elapsed_ms: t.elapsed().as_millis() as u64,
        });
        if failed {
            failed_step = Some(index);
            break;
        }
    }
    ScenarioReport {
        name: script.name.clone(),
        passed: failed_step.is_none(),
        failed_step,
        steps,
        elapsed_ms: started.elapsed().as_millis() as u64,
    }
}
