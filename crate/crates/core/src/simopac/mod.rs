//! Stub of the central patient-record system.

pub mod server;
pub mod store;

pub use server::{http_router, serve_http, serve_mllp, EhrRecordView, QueryError, SimopacState};
pub use store::{
    read_log, AuditEntry, AuditOutcome, Demographics, LogRecord, Observation, PatientRecord,
    PatientSeed, Store, StoreCounts, StoreError, LOG_FILE,
};
