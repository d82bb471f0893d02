//! Patient identification and monitoring device, simulated end to end.

pub mod cip;
pub mod clock;
pub mod crc;
pub mod rfid;
pub mod hl7;
pub mod vitals;
pub mod auth;
pub mod simopac;
pub mod agents;
pub mod config;
pub mod device;
pub mod scenario;
