//! Framed reader protocol over TCP: the tag-field service and its client.

use std::time::Duration;

use async_trait::async_trait;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Mutex;
use tracing::{debug, warn};

use super::field::{Block, FieldHandle, LinkError, TagReader, BLOCK_SIZE};
use super::frame::{frame_decode, frame_encode, Frame, FrameError};

pub const CMD_INVENTORY: u8 = 0x01;
pub const CMD_READ_BLOCK: u8 = 0x02;
pub const CMD_WRITE_BLOCK: u8 = 0x03;
pub const CMD_FIELD_ADD_TAG: u8 = 0x04;
pub const CMD_FIELD_REMOVE_TAG: u8 = 0x05;

pub const STATUS_OK: u8 = 0x00;
pub const STATUS_TAG_NOT_IN_FIELD: u8 = 0x01;
pub const STATUS_BLOCK_OUT_OF_RANGE: u8 = 0x02;
pub const STATUS_BAD_LENGTH: u8 = 0x03;
pub const STATUS_DUPLICATE_UID: u8 = 0x04;
pub const STATUS_IMAGE_TOO_LARGE: u8 = 0x05;
pub const STATUS_FIELD_FULL: u8 = 0x06;
pub const STATUS_UNKNOWN_COMMAND: u8 = 0xFE;

/// Largest image chunk that fits an ADD frame next to uid, total and offset.
pub const ADD_CHUNK: usize = 240;

fn status_of(err: &LinkError) -> u8 {
    match err {
        LinkError::TagNotInField => STATUS_TAG_NOT_IN_FIELD,
        LinkError::BlockOutOfRange => STATUS_BLOCK_OUT_OF_RANGE,
        LinkError::DuplicateUid => STATUS_DUPLICATE_UID,
        LinkError::ImageTooLarge => STATUS_IMAGE_TOO_LARGE,
        LinkError::FieldFull => STATUS_FIELD_FULL,
        LinkError::UnknownCommand(_) => STATUS_UNKNOWN_COMMAND,
        _ => STATUS_BAD_LENGTH,
    }
}

fn error_of(status: u8, command: u8) -> LinkError {
    match status {
        STATUS_TAG_NOT_IN_FIELD => LinkError::TagNotInField,
        STATUS_BLOCK_OUT_OF_RANGE => LinkError::BlockOutOfRange,
        STATUS_BAD_LENGTH => LinkError::BadLength,
        STATUS_DUPLICATE_UID => LinkError::DuplicateUid,
        STATUS_IMAGE_TOO_LARGE => LinkError::ImageTooLarge,
        STATUS_FIELD_FULL => LinkError::FieldFull,
        STATUS_UNKNOWN_COMMAND => LinkError::UnknownCommand(command),
        other => LinkError::Protocol(format!("status {other:#04x}")),
    }
}

fn uid_at(payload: &[u8]) -> u64 {
    u64::from_be_bytes(payload[..8].try_into().expect("8-byte uid"))
}

fn status_reply(command: u8, result: Result<(), LinkError>) -> Frame {
    let status = match result {
        Ok(()) => STATUS_OK,
        Err(e) => status_of(&e),
    };
    Frame::new(command, vec![status])
}

/// Executes one request frame against the field and builds the reply.
pub async fn handle_request(field: &FieldHandle, req: &Frame) -> Frame {
    let p = &req.payload;
    match req.command {
        CMD_INVENTORY => match field.inventory().await {
            Ok(uids) => {
                let mut out = vec![uids.len() as u8];
                for uid in uids {
                    out.extend_from_slice(&uid.to_be_bytes());
                }
                Frame::new(CMD_INVENTORY, out)
            }
            Err(e) => status_reply(CMD_INVENTORY, Err(e)),
        },
        CMD_READ_BLOCK => {
            if p.len() != 9 {
                return status_reply(CMD_READ_BLOCK, Err(LinkError::BadLength));
            }
            match field.read_block(uid_at(p), p[8]).await {
                Ok(block) => Frame::new(CMD_READ_BLOCK, block.to_vec()),
                Err(e) => status_reply(CMD_READ_BLOCK, Err(e)),
            }
        }
        CMD_WRITE_BLOCK => {
            if p.len() < 9 {
                return status_reply(CMD_WRITE_BLOCK, Err(LinkError::BadLength));
            }
            let r = field.write_block(uid_at(p), p[8], &p[9..]).await;
            status_reply(CMD_WRITE_BLOCK, r)
        }
        CMD_FIELD_ADD_TAG => {
            let r = match p.len() {
                8 => field.add_tag(uid_at(p), None).await,
                n if n >= 12 => {
                    let total = u16::from_be_bytes([p[8], p[9]]) as usize;
                    let offset = u16::from_be_bytes([p[10], p[11]]) as usize;
                    field
                        .stage_chunk(uid_at(p), total, offset, p[12..].to_vec())
                        .await
                        .map(|_| ())
                }
                _ => Err(LinkError::BadLength),
            };
            status_reply(CMD_FIELD_ADD_TAG, r)
        }
        CMD_FIELD_REMOVE_TAG => {
            if p.len() != 8 {
                return status_reply(CMD_FIELD_REMOVE_TAG, Err(LinkError::BadLength));
            }
            status_reply(CMD_FIELD_REMOVE_TAG, field.remove_tag(uid_at(p)).await)
        }
        other => status_reply(other, Err(LinkError::UnknownCommand(other))),
    }
}

async fn serve_connection(mut stream: TcpStream, field: FieldHandle) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(512);
    let mut chunk = [0u8; 1024];
    loop {
        loop {
            match frame_decode(&mut buf) {
                Ok(req) => {
                    let reply = handle_request(&field, &req).await;
                    let bytes = frame_encode(reply.command, &reply.payload)
                        .expect("replies fit one frame");
                    stream.write_all(&bytes).await?;
                }
                Err(FrameError::Incomplete) => break,
                Err(e) => debug!("dropping bad frame: {e}"),
            }
        }
        let n = stream.read(&mut chunk).await?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

/// Accepts reader clients until the listener fails.
pub async fn serve_tagsim(listener: TcpListener, field: FieldHandle) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let field = field.clone();
        tokio::spawn(async move {
            if let Err(e) = serve_connection(stream, field).await {
                warn!(%peer, "reader connection ended: {e}");
            }
        });
    }
}

struct Conn {
    stream: TcpStream,
    buf: Vec<u8>,
}

/// Reader-side client; one request in flight, reconnecting after failures.
pub struct ReaderClient {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
}

impl ReaderClient {
    pub fn new(addr: impl Into<String>) -> Self {
        ReaderClient {
            addr: addr.into(),
            timeout: Duration::from_secs(2),
            conn: Mutex::new(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    async fn exchange(conn: &mut Conn, request: &[u8], command: u8) -> Result<Vec<u8>, LinkError> {
        conn.stream
            .write_all(request)
            .await
            .map_err(|e| LinkError::Io(e.to_string()))?;
        let mut chunk = [0u8; 1024];
        loop {
            match frame_decode(&mut conn.buf) {
                Ok(reply) if reply.command == command => return Ok(reply.payload),
                Ok(reply) => {
                    return Err(LinkError::Protocol(format!(
                        "reply for {:#04x} to request {command:#04x}",
                        reply.command
                    )))
                }
                Err(FrameError::Incomplete) => {}
                Err(e) => return Err(e.into()),
            }
            let n = conn
                .stream
                .read(&mut chunk)
                .await
                .map_err(|e| LinkError::Io(e.to_string()))?;
            if n == 0 {
                return Err(LinkError::Io("connection closed".into()));
            }
            conn.buf.extend_from_slice(&chunk[..n]);
        }
    }

    /// Sends one request frame and returns the reply payload.
    pub async fn request(&self, command: u8, payload: &[u8]) -> Result<Vec<u8>, LinkError> {
        let bytes = frame_encode(command, payload)?;
        let mut guard = self.conn.lock().await;
        if guard.is_none() {
            let stream = tokio::time::timeout(self.timeout, TcpStream::connect(&self.addr))
                .await
                .map_err(|_| LinkError::Io("connect timeout".into()))?
                .map_err(|e| LinkError::Io(e.to_string()))?;
            stream.set_nodelay(true).ok();
            *guard = Some(Conn {
                stream,
                buf: Vec::new(),
            });
        }
        let conn = guard.as_mut().expect("connected");
        let result = tokio::time::timeout(self.timeout, Self::exchange(conn, &bytes, command))
            .await
            .unwrap_or_else(|_| Err(LinkError::Io("reply timeout".into())));
        if matches!(result, Err(LinkError::Io(_) | LinkError::Frame(_) | LinkError::Protocol(_))) {
            *guard = None;
        }
        result
    }

    async fn status(&self, command: u8, payload: &[u8]) -> Result<(), LinkError> {
        let reply = self.request(command, payload).await?;
        match reply.as_slice() {
            [STATUS_OK] => Ok(()),
            [status] => Err(error_of(*status, command)),
            _ => Err(LinkError::Protocol("malformed status reply".into())),
        }
    }

    /// Places a tag in the field, loading `image` first when given.
    pub async fn add_tag(&self, uid: u64, image: Option<&[u8]>) -> Result<(), LinkError> {
        let uid_bytes = uid.to_be_bytes();
        let Some(image) = image else {
            return self.status(CMD_FIELD_ADD_TAG, &uid_bytes).await;
        };
        if image.len() > crate::cip::MAX_IMAGE_LEN {
            return Err(LinkError::ImageTooLarge);
        }
        let total = (image.len() as u16).to_be_bytes();
        let mut offset = 0usize;
        loop {
            let end = (offset + ADD_CHUNK).min(image.len());
            let mut payload = uid_bytes.to_vec();
            payload.extend_from_slice(&total);
            payload.extend_from_slice(&(offset as u16).to_be_bytes());
            payload.extend_from_slice(&image[offset..end]);
            self.status(CMD_FIELD_ADD_TAG, &payload).await?;
            offset = end;
            if offset >= image.len() {
                return Ok(());
            }
        }
    }

    pub async fn remove_tag(&self, uid: u64) -> Result<(), LinkError> {
        self.status(CMD_FIELD_REMOVE_TAG, &uid.to_be_bytes()).await
    }
}

#[async_trait]
impl TagReader for ReaderClient {
    async fn inventory(&self) -> Result<Vec<u64>, LinkError> {
        let reply = self.request(CMD_INVENTORY, &[]).await?;
        let Some((&count, rest)) = reply.split_first() else {
            return Err(LinkError::Protocol("empty inventory reply".into()));
        };
        if rest.len() != count as usize * 8 {
            // a lone status byte
            return Err(error_of(count, CMD_INVENTORY));
        }
        Ok(rest.chunks(8).map(uid_at).collect())
    }

    async fn read_block(&self, uid: u64, index: u8) -> Result<Block, LinkError> {
        let mut payload = uid.to_be_bytes().to_vec();
        payload.push(index);
        let reply = self.request(CMD_READ_BLOCK, &payload).await?;
        match reply.len() {
            BLOCK_SIZE => Ok(reply.try_into().expect("16 bytes")),
            1 => Err(error_of(reply[0], CMD_READ_BLOCK)),
            n => Err(LinkError::Protocol(format!("read reply of {n} bytes"))),
        }
    }

    async fn write_block(&self, uid: u64, index: u8, data: &[u8]) -> Result<(), LinkError> {
        let mut payload = uid.to_be_bytes().to_vec();
        payload.push(index);
        payload.extend_from_slice(data);
        self.status(CMD_WRITE_BLOCK, &payload).await
    }
}
