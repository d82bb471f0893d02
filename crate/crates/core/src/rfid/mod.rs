//! Simulated reader ↔ tag link.
//!
//! [`FieldState`] is the tag field; [`FieldHandle`] serializes access to it
//! from one task; [`net`] carries the framed protocol over TCP.

mod field;
pub mod frame;
pub mod net;

pub use field::{
    read_full_card, write_full_card, Block, FieldEvent, FieldEventKind, FieldHandle, FieldState,
    LinkError, TagMemory, TagReader, BLOCK_COUNT, BLOCK_SIZE, MAX_TAGS_IN_FIELD,
};
pub use frame::{frame_decode, frame_encode, Frame, FrameError};
pub use net::{serve_tagsim, ReaderClient};
