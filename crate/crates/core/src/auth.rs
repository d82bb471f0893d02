//! Password verification and bearer-token sessions shared by both HTTP services.

use std::collections::HashMap;
use std::fmt;

use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SESSION_TTL_SECS: u64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Physician,
    Admin,
    Viewer,
}

impl Role {
    /// Whether the role may change patient data or acknowledge alarms.
    pub fn can_edit(self) -> bool {
        matches!(self, Role::Physician | Role::Admin)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Physician => "physician",
            Role::Admin => "admin",
            Role::Viewer => "viewer",
        })
    }
}

/// One configured account; the password is kept only as a salted SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    pub user: String,
    pub role: Role,
    pub salt: String,
    pub password_hash: String,
}

impl UserEntry {
    pub fn new(user: &str, role: Role, password: &str) -> Self {
        let salt = random_hex(16);
        let password_hash = hash_password(&salt, password);
        UserEntry {
            user: user.to_string(),
            role,
            salt,
            password_hash,
        }
    }
}

pub fn hash_password(salt: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(password.as_bytes());
    hex::encode(h.finalize())
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    OsRng.fill_bytes(&mut buf);
    hex::encode(buf)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub principal: String,
    pub role: Role,
    pub expiry: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("bad credentials")]
    BadCredentials,
    #[error("unauthorized")]
    Unauthorized,
    #[error("forbidden")]
    Forbidden,
}

/// Accounts plus the live sessions issued for them. Sessions live only in memory.
pub struct Authenticator {
    users: Vec<UserEntry>,
    sessions: Mutex<HashMap<String, Session>>,
    dummy_salt: String,
}

impl Authenticator {
    pub fn new(users: Vec<UserEntry>) -> Self {
        Authenticator {
            users,
            sessions: Mutex::new(HashMap::new()),
            dummy_salt: random_hex(16),
        }
    }

    /// Unknown users cost one hash like known ones, and fail the same way.
    pub fn login(&self, user: &str, password: &str, now: u64) -> Result<Session, AuthError> {
        let entry = self.users.iter().find(|u| u.user == user);
        let salt = entry.map_or(self.dummy_salt.as_str(), |e| e.salt.as_str());
        let candidate = hash_password(salt, password);
        let ok = match entry {
            Some(e) => constant_time_eq(candidate.as_bytes(), e.password_hash.as_bytes()),
            None => {
                constant_time_eq(candidate.as_bytes(), candidate.as_bytes());
                false
            }
        };
        let entry = match (ok, entry) {
            (true, Some(e)) => e,
            _ => return Err(AuthError::BadCredentials),
        };
        let session = Session {
            // 256 bits from the OS generator
            token: random_hex(32),
            principal: entry.user.clone(),
            role: entry.role,
            expiry: now + SESSION_TTL_SECS,
        };
        let mut sessions = self.sessions.lock();
        sessions.retain(|_, s| s.expiry > now);
        sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn check(&self, token: Option<&str>, now: u64) -> Result<Session, AuthError> {
        let token = token.ok_or(AuthError::Unauthorized)?;
        let sessions = self.sessions.lock();
        match sessions.get(token) {
            Some(s) if s.expiry > now => Ok(s.clone()),
            _ => Err(AuthError::Unauthorized),
        }
    }
}

/// Token from an `Authorization: Bearer <token>` header value.
pub fn bearer(header: Option<&str>) -> Option<&str> {
    let value = header?.trim();
    let token = value
        .strip_prefix("Bearer ")
        .or_else(|| value.strip_prefix("bearer "))?
        .trim();
    (!token.is_empty()).then_some(token)
}
