//! JSON configuration shared by every service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{hash_password, random_hex, Role, UserEntry};
use crate::hl7::RetryPolicy;
use crate::simopac::PatientSeed;
use crate::vitals::Thresholds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("bad config {path}: {cause}")]
    BadConfig { path: String, line: usize, cause: String },
}

/// A configured account: either a plain password (hashed on load) or a stored hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub user: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password_hash: Option<String>,
}

impl UserConfig {
    pub fn to_entry(&self) -> Result<UserEntry, String> {
        match (&self.password, &self.salt, &self.password_hash) {
            (None, Some(salt), Some(hash)) => Ok(UserEntry {
                user: self.user.clone(),
                role: self.role,
                salt: salt.clone(),
                password_hash: hash.clone(),
            }),
            (Some(pw), None, None) => {
                let salt = random_hex(16);
                Ok(UserEntry {
                    user: self.user.clone(),
                    role: self.role,
                    password_hash: hash_password(&salt, pw),
                    salt,
                })
            }
            _ => Err(format!(
                "user {}: give either password or salt + password_hash",
                self.user
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub bind: String,
    pub port: u16,
    pub window_size: usize,
    pub deterministic: bool,
    pub poll_interval_ms: u64,
    /// Where the physician UI build lives; a placeholder page is served otherwise.
    pub ui_dir: Option<PathBuf>,
    pub hl7_endpoint: String,
    pub retry: RetryPolicy,
    /// Account the device uses against the record server named on cards.
    pub service_user: String,
    pub service_password: String,
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            bind: "127.0.0.1".into(),
            port: 4500,
            window_size: 10,
            deterministic: false,
            poll_interval_ms: 200,
            ui_dir: None,
            hl7_endpoint: "127.0.0.1:4503".into(),
            retry: RetryPolicy::default(),
            service_user: "device".into(),
            service_password: "device".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderSection {
    /// Where the device finds the reader.
    pub address: String,
    /// Where the tag simulator listens.
    pub port: u16,
    pub timeout_ms: u64,
}

impl Default for ReaderSection {
    fn default() -> Self {
        ReaderSection {
            address: "127.0.0.1:4501".into(),
            port: 4501,
            timeout_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitalsSection {
    pub port: u16,
}

impl Default for VitalsSection {
    fn default() -> Self {
        VitalsSection { port: 4502 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimopacSection {
    pub bind: String,
    pub mllp_port: u16,
    pub http_port: u16,
    pub data_dir: PathBuf,
    pub patients: Vec<PatientSeed>,
    pub users: Vec<UserConfig>,
}

impl Default for SimopacSection {
    fn default() -> Self {
        SimopacSection {
            bind: "127.0.0.1".into(),
            mllp_port: 4503,
            http_port: 4504,
            data_dir: PathBuf::from("simopac-data"),
            patients: Vec::new(),
            users: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub device: DeviceSection,
    pub reader: ReaderSection,
    pub vitals: VitalsSection,
    /// Overrides on top of the default bands.
    pub thresholds: Thresholds,
    pub simopac: SimopacSection,
    /// The device's own accounts.
    pub users: Vec<UserConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            device: DeviceSection::default(),
            reader: ReaderSection::default(),
            vitals: VitalsSection::default(),
            thresholds: Thresholds::empty(),
            simopac: SimopacSection::default(),
            users: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::BadConfig {
            path: shown.clone(),
            line: 0,
            cause: e.to_string(),
        })?;
        Self::parse(&text, &shown)
    }

    pub fn parse(text: &str, path: &str) -> Result<Config, ConfigError> {
        let config: Config = serde_json::from_str(text).map_err(|e| ConfigError::BadConfig {
            path: path.to_string(),
            line: e.line(),
            cause: e.to_string(),
        })?;
        let bad = |cause: String| ConfigError::BadConfig {
            path: path.to_string(),
            line: 0,
            cause,
        };
        config.thresholds.validate().map_err(|e| bad(e.to_string()))?;
        if config.device.window_size == 0 {
            return Err(bad("device.window_size must be at least 1".into()));
        }
        for u in config.users.iter().chain(&config.simopac.users) {
            u.to_entry().map_err(bad)?;
        }
        Ok(config)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds::merged(&self.thresholds)
    }

    pub fn device_users(&self) -> Vec<UserEntry> {
        self.users.iter().filter_map(|u| u.to_entry().ok()).collect()
    }

    pub fn simopac_users(&self) -> Vec<UserEntry> {
        self.simopac
            .users
            .iter()
            .filter_map(|u| u.to_entry().ok())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vitals::VitalKind;

    #[test]
    fn empty_object_gives_defaults() {
        let c = Config::parse("{}", "x.json").unwrap();
        assert_eq!(c.device.port, 4500);
        assert_eq!(c.reader.address, "127.0.0.1:4501");
        assert_eq!(c.vitals.port, 4502);
        assert_eq!(c.simopac.mllp_port, 4503);
        assert_eq!(c.simopac.http_port, 4504);
        assert_eq!(c.thresholds().band(VitalKind::TEMP).unwrap().high, 38.0);
    }

    #[test]
    fn bad_json_reports_line() {
        let err = Config::parse("{\n  \"device\": {\n    \"port\": ,\n  }\n}", "dev.json").unwrap_err();
        let ConfigError::BadConfig { line, path, .. } = err;
        assert_eq!(line, 3);
        assert_eq!(path, "dev.json");
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(Config::parse(r#"{"devices": {}}"#, "x").is_err());
    }

    #[test]
    fn threshold_override_merges() {
        let c = Config::parse(r#"{"thresholds": {"HR": {"low": 50, "high": 120}}}"#, "x").unwrap();
        let t = c.thresholds();
        assert_eq!(t.band(VitalKind::HR).unwrap().low, 50.0);
        assert_eq!(t.band(VitalKind::SYS).unwrap().low, 90.0);
        assert!(Config::parse(r#"{"thresholds": {"HR": {"low": 9, "high": 1}}}"#, "x").is_err());
    }

    #[test]
    fn users_plain_or_hashed() {
        let c = Config::parse(
            r#"{"users": [
                {"user": "a", "role": "physician", "password": "pw"},
                {"user": "b", "role": "viewer", "salt": "s", "password_hash": "h"}
            ]}"#,
            "x",
        )
        .unwrap();
        let users = c.device_users();
        assert_eq!(users.len(), 2);
        assert_eq!(users[0].password_hash, hash_password(&users[0].salt, "pw"));
        assert_eq!(users[1].salt, "s");
        assert!(Config::parse(r#"{"users": [{"user": "a", "role": "admin"}]}"#, "x").is_err());
    }
}
