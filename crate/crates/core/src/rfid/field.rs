use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};

use super::frame::FrameError;
use crate::cip::{probe_image_len, ImageProbe, MAX_IMAGE_LEN};
use crate::clock::Clock;

pub const BLOCK_SIZE: usize = 16;
pub const BLOCK_COUNT: usize = 32;
/// Inventory replies carry a count byte and 8-byte uids in one frame.
pub const MAX_TAGS_IN_FIELD: usize = 31;

pub type Block = [u8; BLOCK_SIZE];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("tag not in field")]
    TagNotInField,
    #[error("block index out of range")]
    BlockOutOfRange,
    #[error("bad data length")]
    BadLength,
    #[error("image exceeds tag memory")]
    ImageTooLarge,
    #[error("uid already in field")]
    DuplicateUid,
    #[error("field is full")]
    FieldFull,
    #[error("unknown command {0:#04x}")]
    UnknownCommand(u8),
    #[error("frame error: {0}")]
    Frame(#[from] FrameError),
    #[error("reader i/o: {0}")]
    Io(String),
    #[error("reader protocol: {0}")]
    Protocol(String),
    #[error("field simulator stopped")]
    Closed,
}

impl LinkError {
    pub fn code(&self) -> &'static str {
        match self {
            LinkError::TagNotInField => "TagNotInField",
            LinkError::BlockOutOfRange => "BlockOutOfRange",
            LinkError::BadLength => "BadLength",
            LinkError::ImageTooLarge => "ImageTooLarge",
            LinkError::DuplicateUid => "DuplicateUid",
            LinkError::FieldFull => "FieldFull",
            LinkError::UnknownCommand(_) => "UnknownCommand",
            LinkError::Frame(_) => "FrameError",
            LinkError::Io(_) => "ReaderIo",
            LinkError::Protocol(_) => "ReaderProtocol",
            LinkError::Closed => "ReaderClosed",
        }
    }
}

/// One simulated tag: a uid and 32 zero-initialized 16-byte blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMemory {
    pub uid: u64,
    blocks: [Block; BLOCK_COUNT],
}

impl TagMemory {
    pub fn new(uid: u64) -> Self {
        TagMemory {
            uid,
            blocks: [[0; BLOCK_SIZE]; BLOCK_COUNT],
        }
    }

    pub fn with_image(uid: u64, image: &[u8]) -> Result<Self, LinkError> {
        if image.len() > MAX_IMAGE_LEN {
            return Err(LinkError::ImageTooLarge);
        }
        let mut tag = TagMemory::new(uid);
        for (i, chunk) in image.chunks(BLOCK_SIZE).enumerate() {
            tag.blocks[i][..chunk.len()].copy_from_slice(chunk);
        }
        Ok(tag)
    }

    pub fn block(&self, index: usize) -> Result<&Block, LinkError> {
        self.blocks.get(index).ok_or(LinkError::BlockOutOfRange)
    }

    pub fn set_block(&mut self, index: usize, data: &[u8]) -> Result<(), LinkError> {
        let block = self.blocks.get_mut(index).ok_or(LinkError::BlockOutOfRange)?;
        if data.len() != BLOCK_SIZE {
            return Err(LinkError::BadLength);
        }
        block.copy_from_slice(data);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldEventKind {
    Enter,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldEvent {
    pub seq: u64,
    pub uid: u64,
    pub kind: FieldEventKind,
    pub at: u64,
}

/// Tags currently in the reader field plus the enter/leave history.
#[derive(Debug, Default)]
pub struct FieldState {
    tags: BTreeMap<u64, TagMemory>,
    events: Vec<FieldEvent>,
    staging: HashMap<u64, (usize, Vec<u8>)>,
}

impl FieldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[FieldEvent] {
        &self.events
    }

    fn log(&mut self, uid: u64, kind: FieldEventKind, at: u64) {
        let seq = self.events.len() as u64;
        self.events.push(FieldEvent { seq, uid, kind, at });
    }

    pub fn add_tag(&mut self, tag: TagMemory, now: u64) -> Result<(), LinkError> {
        if self.tags.contains_key(&tag.uid) {
            return Err(LinkError::DuplicateUid);
        }
        if self.tags.len() >= MAX_TAGS_IN_FIELD {
            return Err(LinkError::FieldFull);
        }
        let uid = tag.uid;
        self.tags.insert(uid, tag);
        self.log(uid, FieldEventKind::Enter, now);
        Ok(())
    }

    /// Accumulates one chunk of an initial image; the tag enters the field once
    /// `total` bytes have arrived. Returns whether the tag entered.
    pub fn stage_chunk(
        &mut self,
        uid: u64,
        total: usize,
        offset: usize,
        chunk: &[u8],
        now: u64,
    ) -> Result<bool, LinkError> {
        if total > MAX_IMAGE_LEN {
            return Err(LinkError::ImageTooLarge);
        }
        if self.tags.contains_key(&uid) {
            return Err(LinkError::DuplicateUid);
        }
        if offset == 0 {
            self.staging.insert(uid, (total, Vec::with_capacity(total)));
        }
        let Some((want, buf)) = self.staging.get_mut(&uid) else {
            return Err(LinkError::BadLength);
        };
        if *want != total || buf.len() != offset || offset + chunk.len() > total {
            self.staging.remove(&uid);
            return Err(LinkError::BadLength);
        }
        buf.extend_from_slice(chunk);
        if buf.len() < total {
            return Ok(false);
        }
        let (_, image) = self.staging.remove(&uid).expect("staged");
        self.add_tag(TagMemory::with_image(uid, &image)?, now)?;
        Ok(true)
    }

    pub fn remove_tag(&mut self, uid: u64, now: u64) -> Result<TagMemory, LinkError> {
        let tag = self.tags.remove(&uid).ok_or(LinkError::TagNotInField)?;
        self.log(uid, FieldEventKind::Leave, now);
        Ok(tag)
    }

    /// In-field uids, ascending.
    pub fn inventory(&self) -> Vec<u64> {
        self.tags.keys().copied().collect()
    }

    pub fn read_block(&self, uid: u64, index: usize) -> Result<Block, LinkError> {
        let tag = self.tags.get(&uid).ok_or(LinkError::TagNotInField)?;
        tag.block(index).copied()
    }

    pub fn write_block(&mut self, uid: u64, index: usize, data: &[u8]) -> Result<(), LinkError> {
        let tag = self.tags.get_mut(&uid).ok_or(LinkError::TagNotInField)?;
        tag.set_block(index, data)
    }
}

/// The host side of a reader: anything that can inventory and address blocks.
#[async_trait]
pub trait TagReader: Send + Sync {
    async fn inventory(&self) -> Result<Vec<u64>, LinkError>;
    async fn read_block(&self, uid: u64, index: u8) -> Result<Block, LinkError>;
    async fn write_block(&self, uid: u64, index: u8, data: &[u8]) -> Result<(), LinkError>;
}

/// Reads blocks from 0 until the card layout says the image is complete.
///
/// Memory that does not start like a card image is returned as read so far;
/// interpreting it is the codec's job.
pub async fn read_full_card(reader: &dyn TagReader, uid: u64) -> Result<Vec<u8>, LinkError> {
    let mut bytes = Vec::with_capacity(MAX_IMAGE_LEN);
    for index in 0..BLOCK_COUNT {
        let block = reader.read_block(uid, index as u8).await?;
        bytes.extend_from_slice(&block);
        match probe_image_len(&bytes) {
            ImageProbe::Complete(len) => {
                bytes.truncate(len);
                return Ok(bytes);
            }
            ImageProbe::Invalid => return Ok(bytes),
            ImageProbe::NeedMore => {}
        }
    }
    Ok(bytes)
}

/// Writes `image` from block 0, zero-padding the final block.
pub async fn write_full_card(
    reader: &dyn TagReader,
    uid: u64,
    image: &[u8],
) -> Result<(), LinkError> {
    if image.len() > MAX_IMAGE_LEN {
        return Err(LinkError::ImageTooLarge);
    }
    for (index, chunk) in image.chunks(BLOCK_SIZE).enumerate() {
        let mut block = [0u8; BLOCK_SIZE];
        block[..chunk.len()].copy_from_slice(chunk);
        reader.write_block(uid, index as u8, &block).await?;
    }
    Ok(())
}

enum FieldCommand {
    Inventory(oneshot::Sender<Vec<u64>>),
    Read(u64, usize, oneshot::Sender<Result<Block, LinkError>>),
    Write(u64, usize, Vec<u8>, oneshot::Sender<Result<(), LinkError>>),
    Add(TagMemory, oneshot::Sender<Result<(), LinkError>>),
    Stage {
        uid: u64,
        total: usize,
        offset: usize,
        chunk: Vec<u8>,
        reply: oneshot::Sender<Result<bool, LinkError>>,
    },
    Remove(u64, oneshot::Sender<Result<(), LinkError>>),
    Events(oneshot::Sender<Vec<FieldEvent>>),
}

/// Handle to the task that owns the [`FieldState`]; every access is queued.
#[derive(Clone)]
pub struct FieldHandle {
    tx: mpsc::Sender<FieldCommand>,
}

impl FieldHandle {
    /// Spawns the simulator task on the current tokio runtime.
    pub fn spawn(clock: Arc<dyn Clock>) -> Self {
        let (tx, mut rx) = mpsc::channel::<FieldCommand>(256);
        tokio::spawn(async move {
            let mut field = FieldState::new();
            while let Some(cmd) = rx.recv().await {
                // a dropped requester is not an error for the field
                match cmd {
                    FieldCommand::Inventory(r) => {
                        let _ = r.send(field.inventory());
                    }
                    FieldCommand::Read(uid, i, r) => {
                        let _ = r.send(field.read_block(uid, i));
                    }
                    FieldCommand::Write(uid, i, data, r) => {
                        let _ = r.send(field.write_block(uid, i, &data));
                    }
                    FieldCommand::Add(tag, r) => {
                        let _ = r.send(field.add_tag(tag, clock.now()));
                    }
                    FieldCommand::Stage {
                        uid,
                        total,
                        offset,
                        chunk,
                        reply,
                    } => {
                        let _ = reply.send(field.stage_chunk(uid, total, offset, &chunk, clock.now()));
                    }
                    FieldCommand::Remove(uid, r) => {
                        let _ = r.send(field.remove_tag(uid, clock.now()).map(|_| ()));
                    }
                    FieldCommand::Events(r) => {
                        let _ = r.send(field.events().to_vec());
                    }
                }
            }
        });
        FieldHandle { tx }
    }

    async fn ask<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> FieldCommand,
    ) -> Result<T, LinkError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).await.map_err(|_| LinkError::Closed)?;
        rx.await.map_err(|_| LinkError::Closed)
    }

    pub async fn add_tag(&self, uid: u64, image: Option<&[u8]>) -> Result<(), LinkError> {
        let tag = match image {
            Some(img) => TagMemory::with_image(uid, img)?,
            None => TagMemory::new(uid),
        };
        self.ask(|r| FieldCommand::Add(tag, r)).await?
    }

    pub async fn stage_chunk(
        &self,
        uid: u64,
        total: usize,
        offset: usize,
        chunk: Vec<u8>,
    ) -> Result<bool, LinkError> {
        self.ask(|reply| FieldCommand::Stage {
            uid,
            total,
            offset,
            chunk,
            reply,
        })
        .await?
    }

    pub async fn remove_tag(&self, uid: u64) -> Result<(), LinkError> {
        self.ask(|r| FieldCommand::Remove(uid, r)).await?
    }

    pub async fn events(&self) -> Result<Vec<FieldEvent>, LinkError> {
        self.ask(FieldCommand::Events).await
    }
}

#[async_trait]
impl TagReader for FieldHandle {
    async fn inventory(&self) -> Result<Vec<u64>, LinkError> {
        self.ask(FieldCommand::Inventory).await
    }

    async fn read_block(&self, uid: u64, index: u8) -> Result<Block, LinkError> {
        self.ask(|r| FieldCommand::Read(uid, index as usize, r)).await?
    }

    async fn write_block(&self, uid: u64, index: u8, data: &[u8]) -> Result<(), LinkError> {
        let data = data.to_vec();
        self.ask(|r| FieldCommand::Write(uid, index as usize, data, r))
            .await?
    }
}
