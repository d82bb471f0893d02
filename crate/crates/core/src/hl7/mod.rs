//! HL7 v2 subset (MSH, PID, OBR, OBX, MSA) carried over MLLP.

mod message;
pub mod mllp;
pub mod oru;

pub use message::{
    check_text, components, encode_hl7, field, parse_hl7, Hl7Error, Hl7Message, Segment,
    ENCODING_CHARS, HL7_VERSION,
};
pub use mllp::{
    mllp_unwrap, mllp_wrap, read_mllp_frame, send_and_await_ack, send_with_retries,
    take_mllp_frame, Delivered, RetryPolicy,
};
pub use oru::{
    build_ack, build_oru, format_value, parse_ack, parse_oru, AckCode, AckStatus, ControlIds,
    OruContent, ReportedObservation,
};
