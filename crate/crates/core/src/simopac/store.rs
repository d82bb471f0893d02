//! EHR store backed by an append-only JSON-lines log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vitals::VitalKind;

pub const LOG_FILE: &str = "simopac.log";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub display_name: String,
    pub birth_year: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: VitalKind,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub window_start: u64,
    pub window_end: u64,
    pub received_at: u64,
    /// Network address the result arrived from.
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Granted,
    Denied,
    UnknownPatient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub serial: u64,
    pub requester: String,
    pub address: String,
    pub timestamp: u64,
    pub outcome: AuditOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub serial: u64,
    pub demographics: Option<Demographics>,
    pub observations: Vec<Observation>,
}

/// Preloaded demo patient from configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSeed {
    pub serial: u64,
    pub display_name: String,
    pub birth_year: u16,
}

/// One persisted mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum LogRecord {
    Observation { serial: u64, observation: Observation },
    Audit(AuditEntry),
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    #[serde(flatten)]
    record: LogRecord,
    ts: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt log line {line}")]
    CorruptLogLine { line: usize },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreCounts {
    pub observations: usize,
    pub audit: usize,
}

/// In-memory EHR state. Every mutation goes through [`Store::apply`], which logs
/// it first when a log is attached.
#[derive(Debug, Default)]
pub struct Store {
    records: BTreeMap<u64, PatientRecord>,
    audit: Vec<AuditEntry>,
    log: Option<(PathBuf, File)>,
}

impl Store {
    pub fn in_memory(seeds: &[PatientSeed]) -> Self {
        let mut store = Store::default();
        for seed in seeds {
            store.records.insert(
                seed.serial,
                PatientRecord {
                    serial: seed.serial,
                    demographics: Some(Demographics {
                        display_name: seed.display_name.clone(),
                        birth_year: seed.birth_year,
                    }),
                    observations: Vec::new(),
                },
            );
        }
        store
    }

    /// Seeds, then replays `dir/simopac.log` (if any), then appends to it.
    ///
    /// Replay stops at the first line that does not parse.
    pub fn restore(dir: &Path, seeds: &[PatientSeed]) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut store = Store::in_memory(seeds);
        if path.exists() {
            for (i, line) in read_log(&path)?.into_iter().enumerate() {
                match line {
                    Some(record) => store.mutate(record),
                    None => return Err(StoreError::CorruptLogLine { line: i + 1 }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.log = Some((path, file));
        Ok(store)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    fn mutate(&mut self, record: LogRecord) {
        match record {
            LogRecord::Observation { serial, observation } => {
                self.records
                    .entry(serial)
                    .or_insert_with(|| PatientRecord {
                        serial,
                        demographics: None,
                        observations: Vec::new(),
                    })
                    .observations
                    .push(observation);
            }
            LogRecord::Audit(entry) => self.audit.push(entry),
        }
    }

    /// Persists then applies one mutation.
    pub fn apply(&mut self, record: LogRecord, now: u64) -> Result<(), StoreError> {
        if let Some((_, file)) = self.log.as_mut() {
            let mut line = serde_json::to_string(&LogLine {
                record: record.clone(),
                ts: now,
            })
            .expect("log records serialize");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.mutate(record);
        Ok(())
    }

    pub fn record(&self, serial: u64) -> Option<&PatientRecord> {
        self.records.get(&serial)
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn audit_for(&self, serial: u64) -> Vec<AuditEntry> {
        self.audit.iter().filter(|a| a.serial == serial).cloned().collect()
    }

    pub fn counts(&self) -> StoreCounts {
        StoreCounts {
            observations: self.records.values().map(|r| r.observations.len()).sum(),
            audit: self.audit.len(),
        }
    }
}

/// Parses each log line; `None` marks a line that failed to parse.
pub fn read_log(path: &Path) -> Result<Vec<Option<LogRecord>>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.split(b'\n') {
        let line = line?;
        let parsed = serde_json::from_slice::<LogLine>(&line).ok().map(|l| l.record);
        out.push(parsed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: f64) -> Observation {
        Observation {
            kind: VitalKind::HR,
            min: v,
            max: v,
            mean: v,
            window_start: 1,
            window_end: 2,
            received_at: 3,
            source: "127.0.0.1".into(),
        }
    }

    fn seeds() -> Vec<PatientSeed> {
        vec![PatientSeed {
            serial: 42,
            display_name: "Ion Popescu".into(),
            birth_year: 1960,
        }]
    }

    #[test]
    fn replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::restore(dir.path(), &seeds()).unwrap();
            for v in [70.0, 71.0, 72.0] {
                s.apply(LogRecord::Observation { serial: 42, observation: obs(v) }, 9).unwrap();
            }
            s.apply(
                LogRecord::Audit(AuditEntry {
                    serial: 42,
                    requester: "dev".into(),
                    address: "127.0.0.1".into(),
                    timestamp: 9,
                    outcome: AuditOutcome::Granted,
                }),
                9,
            )
            .unwrap();
        }
        let s = Store::restore(dir.path(), &seeds()).unwrap();
        assert_eq!(s.record(42).unwrap().observations.len(), 3);
        assert_eq!(s.record(42).unwrap().observations[2], obs(72.0));
        assert_eq!(s.counts(), StoreCounts { observations: 3, audit: 1 });
        assert!(s.record(42).unwrap().demographics.is_some());
    }

    #[test]
    fn empty_log_is_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LOG_FILE), "").unwrap();
        let s = Store::restore(dir.path(), &[]).unwrap();
        assert_eq!(s.counts(), StoreCounts::default());
    }

    #[test]
    fn truncated_last_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::restore(dir.path(), &[]).unwrap();
            s.apply(LogRecord::Observation { serial: 7, observation: obs(1.0) }, 1).unwrap();
            s.apply(LogRecord::Observation { serial: 7, observation: obs(2.0) }, 1).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 10]).unwrap();
        match Store::restore(dir.path(), &[]) {
            Err(StoreError::CorruptLogLine { line }) => assert_eq!(line, 2),
            other => panic!("expected corrupt line, got {other:?}"),
        }
    }

    #[test]
    fn log_line_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::restore(dir.path(), &[]).unwrap();
        s.apply(LogRecord::Observation { serial: 7, observation: obs(1.0) }, 55).unwrap();
        let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["type"], "observation");
        assert_eq!(v["ts"], 55);
        assert_eq!(v["payload"]["serial"], 7);
    }
}
