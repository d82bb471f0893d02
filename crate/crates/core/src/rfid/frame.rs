//! Reader link framing: `AA len cmd payload crc_hi crc_lo 55`.
//!
//! The CRC covers the length byte, the command byte and the payload.

use thiserror::Error;

use crate::crc::compute_crc16;

pub const SOF: u8 = 0xAA;
pub const EOF: u8 = 0x55;
pub const MAX_PAYLOAD: usize = 255;
/// Framing bytes around the payload.
pub const FRAME_OVERHEAD: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload exceeds 255 bytes")]
    PayloadTooLarge,
    #[error("frame crc mismatch")]
    FrameCrcError,
    #[error("bad frame delimiter")]
    BadDelimiter,
    #[error("incomplete frame")]
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub command: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: u8, payload: impl Into<Vec<u8>>) -> Self {
        Frame {
            command,
            payload: payload.into(),
        }
    }
}

pub fn frame_encode(command: u8, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge);
    }
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.push(SOF);
    out.push(payload.len() as u8);
    out.push(command);
    out.extend_from_slice(payload);
    let crc = compute_crc16(&out[1..]);
    out.extend_from_slice(&crc.to_be_bytes());
    out.push(EOF);
    Ok(out)
}

/// Takes the first complete, valid frame off the front of `buf`.
///
/// Bytes before the first start-of-frame are discarded. On a bad frame only the
/// start byte is consumed, so the next call rescans from the following `0xAA`.
/// `Incomplete` leaves the buffer untouched.
pub fn frame_decode(buf: &mut Vec<u8>) -> Result<Frame, FrameError> {
    match buf.iter().position(|&b| b == SOF) {
        Some(0) => {}
        Some(start) => {
            buf.drain(..start);
        }
        None => {
            buf.clear();
            return Err(FrameError::Incomplete);
        }
    }
    if buf.len() < 2 {
        return Err(FrameError::Incomplete);
    }
    let len = buf[1] as usize;
    let total = len + FRAME_OVERHEAD;
    if buf.len() < total {
        return Err(FrameError::Incomplete);
    }
    let crc_at = 3 + len;
    let stored = u16::from_be_bytes([buf[crc_at], buf[crc_at + 1]]);
    if compute_crc16(&buf[1..crc_at]) != stored {
        buf.drain(..1);
        return Err(FrameError::FrameCrcError);
    }
    if buf[total - 1] != EOF {
        buf.drain(..1);
        return Err(FrameError::BadDelimiter);
    }
    let frame = Frame::new(buf[2], &buf[3..crc_at]);
    buf.drain(..total);
    Ok(frame)
}

/// Drains every recoverable frame from a finished stream.
pub fn decode_all(mut stream: Vec<u8>) -> Vec<Frame> {
    let mut frames = Vec::new();
    while !stream.is_empty() {
        match frame_decode(&mut stream) {
            Ok(f) => frames.push(f),
            // no more bytes will arrive; skip the dangling start byte
            Err(FrameError::Incomplete) if !stream.is_empty() => {
                stream.drain(..1);
            }
            Err(_) => {}
        }
    }
    frames
}
