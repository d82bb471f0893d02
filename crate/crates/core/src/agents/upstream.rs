//! Supplementary-record queries against the server named on the card.

use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use reqwest::StatusCode;
use serde::Deserialize;

use super::envelope::SupplementaryFailure;
use crate::cip::CipCard;
use crate::simopac::EhrRecordView;

#[async_trait]
pub trait RecordSource: Send + Sync {
    async fn fetch(&self, card: &CipCard) -> Result<EhrRecordView, SupplementaryFailure>;
}

/// HTTP client logging in with the device's service account.
pub struct SupplementaryClient {
    http: reqwest::Client,
    user: String,
    password: String,
    // (base url, token)
    token: Mutex<Option<(String, String)>>,
}

#[derive(Deserialize)]
struct LoginReply {
    token: String,
}

fn base_url(uri: &str) -> &str {
    uri.trim_end_matches('/')
}

impl SupplementaryClient {
    pub fn new(user: &str, password: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        SupplementaryClient {
            http,
            user: user.to_string(),
            password: password.to_string(),
            token: Mutex::new(None),
        }
    }

    async fn login(&self, base: &str) -> Result<String, SupplementaryFailure> {
        let reply = self
            .http
            .post(format!("{base}/login"))
            .json(&serde_json::json!({ "user": self.user, "password": self.password }))
            .send()
            .await
            .map_err(|_| SupplementaryFailure::ServerUnreachable)?;
        match reply.status() {
            StatusCode::OK => {}
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                return Err(SupplementaryFailure::Unauthorized)
            }
            _ => return Err(SupplementaryFailure::BadResponse),
        }
        let body: LoginReply = reply
            .json()
            .await
            .map_err(|_| SupplementaryFailure::BadResponse)?;
        *self.token.lock() = Some((base.to_string(), body.token.clone()));
        Ok(body.token)
    }

    async fn cached_or_login(&self, base: &str) -> Result<String, SupplementaryFailure> {
        let cached = self
            .token
            .lock()
            .as_ref()
            .filter(|(b, _)| b == base)
            .map(|(_, t)| t.clone());
        match cached {
            Some(t) => Ok(t),
            None => self.login(base).await,
        }
    }

    async fn get(
        &self,
        base: &str,
        card: &CipCard,
        token: &str,
    ) -> Result<reqwest::Response, SupplementaryFailure> {
        self.http
            .get(format!("{base}/patients/{}", card.serial))
            .query(&[("lang", card.language.as_str())])
            .bearer_auth(token)
            .send()
            .await
            .map_err(|_| SupplementaryFailure::ServerUnreachable)
    }
}

#[async_trait]
impl RecordSource for SupplementaryClient {
    async fn fetch(&self, card: &CipCard) -> Result<EhrRecordView, SupplementaryFailure> {
        let base = base_url(&card.server_uri);
        let token = self.cached_or_login(base).await?;
        let mut reply = self.get(base, card, &token).await?;
        if reply.status() == StatusCode::UNAUTHORIZED {
            // the server may have restarted and forgotten the session
            let token = self.login(base).await?;
            reply = self.get(base, card, &token).await?;
        }
        match reply.status() {
            StatusCode::OK => reply
                .json()
                .await
                .map_err(|_| SupplementaryFailure::BadResponse),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(SupplementaryFailure::Unauthorized),
            StatusCode::NOT_FOUND => Err(SupplementaryFailure::UnknownPatient),
            _ => Err(SupplementaryFailure::BadResponse),
        }
    }
}
