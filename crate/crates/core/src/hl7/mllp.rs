//! MLLP framing (`0x0B` message `0x1C 0x0D`) and the acknowledging sender.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tracing::debug;

use super::message::{encode_hl7, parse_hl7, Hl7Error, Hl7Message};
use super::oru::{parse_ack, AckStatus};

pub const START_BLOCK: u8 = 0x0B;
pub const END_BLOCK: u8 = 0x1C;
pub const CARRIAGE_RETURN: u8 = 0x0D;

pub fn mllp_wrap(text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(text.len() + 3);
    out.push(START_BLOCK);
    out.extend_from_slice(text.as_bytes());
    out.push(END_BLOCK);
    out.push(CARRIAGE_RETURN);
    out
}

/// Unwraps exactly one frame; the input must be nothing but that frame.
pub fn mllp_unwrap(bytes: &[u8]) -> Result<String, Hl7Error> {
    let mut buf = bytes.to_vec();
    match take_mllp_frame(&mut buf)? {
        Some(text) if buf.is_empty() => Ok(text),
        Some(_) => Err(Hl7Error::BadFraming),
        None => Err(Hl7Error::Incomplete),
    }
}

/// Removes the first complete frame from the front of `buf`, if one is there.
pub fn take_mllp_frame(buf: &mut Vec<u8>) -> Result<Option<String>, Hl7Error> {
    let Some(&first) = buf.first() else {
        return Ok(None);
    };
    if first != START_BLOCK {
        return Err(Hl7Error::BadFraming);
    }
    let Some(end) = buf.iter().position(|&b| b == END_BLOCK) else {
        return Ok(None);
    };
    match buf.get(end + 1) {
        None => return Ok(None),
        Some(&CARRIAGE_RETURN) => {}
        Some(_) => return Err(Hl7Error::BadFraming),
    }
    let text = std::str::from_utf8(&buf[1..end])
        .map_err(|_| Hl7Error::BadFraming)?
        .to_string();
    if text.as_bytes().contains(&START_BLOCK) {
        return Err(Hl7Error::BadFraming);
    }
    buf.drain(..end + 2);
    Ok(Some(text))
}

/// Reads one frame from `stream`, keeping surplus bytes in `buf`.
pub async fn read_mllp_frame<S>(stream: &mut S, buf: &mut Vec<u8>) -> Result<Option<String>, Hl7Error>
where
    S: AsyncReadExt + Unpin,
{
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(text) = take_mllp_frame(buf)? {
            return Ok(Some(text));
        }
        let n = stream
            .read(&mut chunk)
            .await
            .map_err(|_| Hl7Error::Incomplete)?;
        if n == 0 {
            return if buf.is_empty() {
                Ok(None)
            } else {
                Err(Hl7Error::Incomplete)
            };
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Pause after failed attempt `i` before attempt `i + 1`.
    pub backoff_ms: Vec<u64>,
    /// Connect plus write plus acknowledgment, per attempt.
    pub attempt_timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_ms: vec![200, 400, 800],
            attempt_timeout_ms: 2000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempt: usize) -> Duration {
        let ms = self
            .backoff_ms
            .get(failed_attempt)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub ack: AckStatus,
    pub attempts: u32,
}

#[derive(Debug)]
enum AttemptError {
    Retryable(String),
    Fatal(Hl7Error),
}

async fn attempt(endpoint: &str, frame: &[u8]) -> Result<AckStatus, AttemptError> {
    let mut stream = TcpStream::connect(endpoint)
        .await
        .map_err(|e| AttemptError::Retryable(e.to_string()))?;
    stream
        .write_all(frame)
        .await
        .map_err(|e| AttemptError::Retryable(e.to_string()))?;
    let mut buf = Vec::new();
    let text = match read_mllp_frame(&mut stream, &mut buf).await {
        Ok(Some(text)) => text,
        Ok(None) => return Err(AttemptError::Retryable("closed before ack".into())),
        Err(e) => return Err(AttemptError::Retryable(e.to_string())),
    };
    let reply = parse_hl7(&text).map_err(AttemptError::Fatal)?;
    parse_ack(&reply).map_err(AttemptError::Fatal)
}

/// Sends `msg` over a fresh connection per attempt and waits for its MSA.
pub async fn send_with_retries(
    endpoint: &str,
    msg: &Hl7Message,
    policy: &RetryPolicy,
) -> Result<Delivered, Hl7Error> {
    let frame = mllp_wrap(&encode_hl7(msg));
    let attempts = policy.attempts.max(1);
    for n in 0..attempts {
        let limit = Duration::from_millis(policy.attempt_timeout_ms);
        let outcome = tokio::time::timeout(limit, attempt(endpoint, &frame))
            .await
            .unwrap_or_else(|_| Err(AttemptError::Retryable("timed out".into())));
        match outcome {
            Ok(ack) if ack.control_id == msg.control_id() => {
                return Ok(Delivered {
                    ack,
                    attempts: n + 1,
                })
            }
            Ok(ack) => {
                return Err(Hl7Error::ControlIdMismatch {
                    expected: msg.control_id().to_string(),
                    got: ack.control_id,
                })
            }
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Retryable(why)) => {
                debug!(endpoint, attempt = n + 1, "hl7 delivery attempt failed: {why}");
                if n + 1 < attempts {
                    tokio::time::sleep(policy.backoff(n as usize)).await;
                }
            }
        }
    }
    Err(Hl7Error::Timeout { attempts })
}

/// Negative acknowledgments come back as `AE`/`AR` statuses, not errors.
pub async fn send_and_await_ack(
    endpoint: &str,
    msg: &Hl7Message,
    policy: &RetryPolicy,
) -> Result<AckStatus, Hl7Error> {
    send_with_retries(endpoint, msg, policy).await.map(|d| d.ack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_single_char() {
        assert_eq!(mllp_wrap("M"), vec![0x0B, 0x4D, 0x1C, 0x0D]);
        assert_eq!(mllp_unwrap(&mllp_wrap("MSH|x")).unwrap(), "MSH|x");
    }

    #[test]
    fn unwrap_errors() {
        assert_eq!(mllp_unwrap(&[0x0B, 0x4D, 0x1C]), Err(Hl7Error::Incomplete));
        assert_eq!(mllp_unwrap(&[0x0B, 0x4D]), Err(Hl7Error::Incomplete));
        assert_eq!(mllp_unwrap(&[0x4D, 0x1C, 0x0D]), Err(Hl7Error::BadFraming));
        assert_eq!(mllp_unwrap(&[0x0B, 0x4D, 0x1C, 0x0A]), Err(Hl7Error::BadFraming));
        assert_eq!(
            mllp_unwrap(&[0x0B, 0x4D, 0x1C, 0x0D, 0x0B]),
            Err(Hl7Error::BadFraming)
        );
    }

    #[test]
    fn stream_takes_frames_in_order() {
        let mut buf = mllp_wrap("A");
        buf.extend(mllp_wrap("B"));
        buf.extend(&[0x0B, b'C']);
        assert_eq!(take_mllp_frame(&mut buf).unwrap().as_deref(), Some("A"));
        assert_eq!(take_mllp_frame(&mut buf).unwrap().as_deref(), Some("B"));
        assert_eq!(take_mllp_frame(&mut buf).unwrap(), None);
        assert_eq!(buf, vec![0x0B, b'C']);
    }

    #[tokio::test]
    async fn no_listener_times_out_after_three_attempts() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let policy = RetryPolicy {
            backoff_ms: vec![10, 20, 40],
            ..Default::default()
        };
        let msg = parse_hl7("MSH|^~\\&|a|b|c|d|t||ACK|1|P|2.5\r").unwrap();
        assert_eq!(
            send_and_await_ack(&addr, &msg, &policy).await,
            Err(Hl7Error::Timeout { attempts: 3 })
        );
    }
}
