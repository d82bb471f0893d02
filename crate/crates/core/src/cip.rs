//! Binary codec for the patient card (CIP) image stored in tag memory.
//!
//! Version-1 layout, all integers big-endian, strings prefixed by one length byte:
//!
//! ```text
//! 'C' 'I' | version | serial(8) | flags | blood | rh | lang(2) | uri
//!         | n_allergies entries.. | n_conditions entries.. | last_modified(8)
//!         | modifier | crc16(2)
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crc::compute_crc16;

pub const MAGIC: [u8; 2] = [0x43, 0x49];
pub const VERSION: u8 = 1;
/// Tag user memory available for one card image.
pub const MAX_IMAGE_LEN: usize = 512;
pub const MAX_URI_LEN: usize = 128;
pub const MAX_LIST_ENTRIES: usize = 16;
pub const MAX_ENTRY_LEN: usize = 32;
pub const MAX_MODIFIER_LEN: usize = 32;

const FLAG_HIV: u8 = 0b001;
const FLAG_TRANSMITTABLE: u8 = 0b010;
const FLAG_CHRONIC: u8 = 0b100;
const UNKNOWN_CODE: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BloodGroup {
    O,
    A,
    B,
    AB,
    Unknown,
}

impl BloodGroup {
    fn code(self) -> u8 {
        match self {
            BloodGroup::O => 0,
            BloodGroup::A => 1,
            BloodGroup::B => 2,
            BloodGroup::AB => 3,
            BloodGroup::Unknown => UNKNOWN_CODE,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BloodGroup::O,
            1 => BloodGroup::A,
            2 => BloodGroup::B,
            3 => BloodGroup::AB,
            UNKNOWN_CODE => BloodGroup::Unknown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rh {
    Negative,
    Positive,
    Unknown,
}

impl Rh {
    fn code(self) -> u8 {
        match self {
            Rh::Negative => 0,
            Rh::Positive => 1,
            Rh::Unknown => UNKNOWN_CODE,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Rh::Negative,
            1 => Rh::Positive,
            UNKNOWN_CODE => Rh::Unknown,
            _ => return None,
        })
    }
}

/// Decoded patient card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipCard {
    pub serial: u64,
    pub version: u8,
    pub blood_group: BloodGroup,
    pub rh: Rh,
    pub hiv_positive: bool,
    pub transmittable_disease: bool,
    pub chronic_disease: bool,
    pub language: String,
    pub server_uri: String,
    pub allergies: Vec<String>,
    pub conditions: Vec<String>,
    pub last_modified: u64,
    pub modifier_id: String,
}

/// Card fields named in invariant errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CipField {
    Serial,
    Version,
    Flags,
    BloodGroup,
    Rh,
    Language,
    ServerUri,
    Allergies,
    Conditions,
    ModifierId,
    EncodedSize,
    ImageLength,
}

impl fmt::Display for CipField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CipField::Serial => "serial",
            CipField::Version => "version",
            CipField::Flags => "flags",
            CipField::BloodGroup => "blood_group",
            CipField::Rh => "rh",
            CipField::Language => "language",
            CipField::ServerUri => "server_uri",
            CipField::Allergies => "allergies",
            CipField::Conditions => "conditions",
            CipField::ModifierId => "modifier_id",
            CipField::EncodedSize => "encoded_size",
            CipField::ImageLength => "image_length",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CipError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported card version {0}")]
    UnsupportedVersion(u8),
    #[error("crc mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("image truncated")]
    Truncated,
    #[error("invariant violated: {0}")]
    InvariantViolation(CipField),
    #[error("field {0} cannot be modified")]
    ImmutableField(&'static str),
}

impl CipError {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            CipError::BadMagic => "BadMagic",
            CipError::UnsupportedVersion(_) => "UnsupportedVersion",
            CipError::CrcMismatch { .. } => "CrcMismatch",
            CipError::Truncated => "Truncated",
            CipError::InvariantViolation(_) => "InvariantViolation",
            CipError::ImmutableField(_) => "ImmutableField",
        }
    }
}

fn check_entries(list: &[String], field: CipField) -> Result<(), CipError> {
    if list.len() > MAX_LIST_ENTRIES
        || list
            .iter()
            .any(|e| e.is_empty() || e.len() > MAX_ENTRY_LEN)
    {
        return Err(CipError::InvariantViolation(field));
    }
    Ok(())
}

impl CipCard {
    /// A card with every medical field unknown and empty lists.
    pub fn blank(serial: u64, language: &str, server_uri: &str) -> Self {
        CipCard {
            serial,
            version: VERSION,
            blood_group: BloodGroup::Unknown,
            rh: Rh::Unknown,
            hiv_positive: false,
            transmittable_disease: false,
            chronic_disease: false,
            language: language.to_string(),
            server_uri: server_uri.to_string(),
            allergies: Vec::new(),
            conditions: Vec::new(),
            last_modified: 0,
            modifier_id: String::new(),
        }
    }

    /// Checks the per-field invariants. The size budget is checked by [`encode_cip`].
    pub fn validate(&self) -> Result<(), CipError> {
        use CipError::InvariantViolation as Bad;
        if self.serial == 0 {
            return Err(Bad(CipField::Serial));
        }
        if self.version != VERSION {
            return Err(Bad(CipField::Version));
        }
        let lang = self.language.as_bytes();
        if lang.len() != 2 || !lang.iter().all(u8::is_ascii_lowercase) {
            return Err(Bad(CipField::Language));
        }
        if self.server_uri.is_empty() || self.server_uri.len() > MAX_URI_LEN {
            return Err(Bad(CipField::ServerUri));
        }
        check_entries(&self.allergies, CipField::Allergies)?;
        check_entries(&self.conditions, CipField::Conditions)?;
        if self.modifier_id.len() > MAX_MODIFIER_LEN || !self.modifier_id.is_ascii() {
            return Err(Bad(CipField::ModifierId));
        }
        Ok(())
    }

    fn flags(&self) -> u8 {
        let mut flags = 0;
        if self.hiv_positive {
            flags |= FLAG_HIV;
        }
        if self.transmittable_disease {
            flags |= FLAG_TRANSMITTABLE;
        }
        if self.chronic_disease {
            flags |= FLAG_CHRONIC;
        }
        flags
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    // lengths are validated before encoding
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

/// Encodes a card into its version-1 image, CRC included.
pub fn encode_cip(card: &CipCard) -> Result<Vec<u8>, CipError> {
    card.validate()?;
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&MAGIC);
    out.push(card.version);
    out.extend_from_slice(&card.serial.to_be_bytes());
    out.push(card.flags());
    out.push(card.blood_group.code());
    out.push(card.rh.code());
    out.extend_from_slice(card.language.as_bytes());
    put_str(&mut out, &card.server_uri);
    for list in [&card.allergies, &card.conditions] {
        out.push(list.len() as u8);
        for entry in list.iter() {
            put_str(&mut out, entry);
        }
    }
    out.extend_from_slice(&card.last_modified.to_be_bytes());
    put_str(&mut out, &card.modifier_id);
    if out.len() + 2 > MAX_IMAGE_LEN {
        return Err(CipError::InvariantViolation(CipField::EncodedSize));
    }
    let crc = compute_crc16(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CipError> {
        let end = self.pos.checked_add(n).ok_or(CipError::Truncated)?;
        let bytes = self.buf.get(self.pos..end).ok_or(CipError::Truncated)?;
        self.pos = end;
        Ok(bytes)
    }

    fn byte(&mut self) -> Result<u8, CipError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, CipError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: CipField) -> Result<String, CipError> {
        let len = self.byte()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CipError::InvariantViolation(field))
    }

    fn list(&mut self, field: CipField) -> Result<Vec<String>, CipError> {
        let count = self.byte()? as usize;
        (0..count).map(|_| self.string(field)).collect()
    }
}

/// Decodes and validates a card image.
pub fn decode_cip(image: &[u8]) -> Result<CipCard, CipError> {
    if image.len() < 2 {
        return Err(CipError::Truncated);
    }
    if image[..2] != MAGIC {
        return Err(CipError::BadMagic);
    }
    let version = *image.get(2).ok_or(CipError::Truncated)?;
    if version != VERSION {
        return Err(CipError::UnsupportedVersion(version));
    }
    if image.len() < 5 {
        return Err(CipError::Truncated);
    }
    let (body, tail) = image.split_at(image.len() - 2);
    let stored = u16::from_be_bytes([tail[0], tail[1]]);
    let computed = compute_crc16(body);
    if stored != computed {
        return Err(CipError::CrcMismatch { stored, computed });
    }

    let mut cur = Cursor { buf: body, pos: 3 };
    let serial = cur.u64()?;
    let flags = cur.byte()?;
    if flags & !(FLAG_HIV | FLAG_TRANSMITTABLE | FLAG_CHRONIC) != 0 {
        return Err(CipError::InvariantViolation(CipField::Flags));
    }
    let blood_group = BloodGroup::from_code(cur.byte()?)
        .ok_or(CipError::InvariantViolation(CipField::BloodGroup))?;
    let rh = Rh::from_code(cur.byte()?).ok_or(CipError::InvariantViolation(CipField::Rh))?;
    let language = String::from_utf8(cur.take(2)?.to_vec())
        .map_err(|_| CipError::InvariantViolation(CipField::Language))?;
    let server_uri = cur.string(CipField::ServerUri)?;
    let allergies = cur.list(CipField::Allergies)?;
    let conditions = cur.list(CipField::Conditions)?;
    let last_modified = cur.u64()?;
    let modifier_id = cur.string(CipField::ModifierId)?;
    if cur.pos != body.len() {
        return Err(CipError::InvariantViolation(CipField::ImageLength));
    }

    let card = CipCard {
        serial,
        version,
        blood_group,
        rh,
        hiv_positive: flags & FLAG_HIV != 0,
        transmittable_disease: flags & FLAG_TRANSMITTABLE != 0,
        chronic_disease: flags & FLAG_CHRONIC != 0,
        language,
        server_uri,
        allergies,
        conditions,
        last_modified,
        modifier_id,
    };
    card.validate()?;
    if image.len() > MAX_IMAGE_LEN {
        return Err(CipError::InvariantViolation(CipField::EncodedSize));
    }
    Ok(card)
}

/// Result of probing a (possibly partial) memory dump for a card image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageProbe {
    /// The image occupies exactly this many bytes.
    Complete(usize),
    /// More bytes are required to tell.
    NeedMore,
    /// The bytes cannot be the start of a version-1 image.
    Invalid,
}

/// Walks the self-describing layout to find the image length without validating content.
pub fn probe_image_len(prefix: &[u8]) -> ImageProbe {
    fn walk(p: &[u8]) -> Result<usize, ImageProbe> {
        let at = |i: usize| p.get(i).copied().ok_or(ImageProbe::NeedMore);
        if at(0)? != MAGIC[0] || at(1)? != MAGIC[1] {
            return Err(ImageProbe::Invalid);
        }
        if at(2)? != VERSION {
            return Err(ImageProbe::Invalid);
        }
        // magic, version, serial, flags, blood, rh, language
        let mut pos = 16;
        pos += 1 + at(pos)? as usize;
        for _ in 0..2 {
            let count = at(pos)? as usize;
            pos += 1;
            for _ in 0..count {
                pos += 1 + at(pos)? as usize;
                if pos > MAX_IMAGE_LEN {
                    return Err(ImageProbe::Invalid);
                }
            }
        }
        pos += 8;
        pos += 1 + at(pos)? as usize;
        pos += 2;
        if pos > MAX_IMAGE_LEN {
            return Err(ImageProbe::Invalid);
        }
        Ok(pos)
    }
    match walk(prefix) {
        Ok(len) if len <= prefix.len() => ImageProbe::Complete(len),
        Ok(_) => ImageProbe::NeedMore,
        Err(probe) => probe,
    }
}

/// Replacement values for the mutable card fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serial: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blood_group: Option<BloodGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rh: Option<Rh>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hiv_positive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmittable_disease: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chronic_disease: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allergies: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<String>>,
}

/// Applies `patch` on behalf of an authenticated `modifier` at time `now`.
///
/// The result must still encode within the tag budget.
pub fn apply_update(
    card: &CipCard,
    patch: &CipPatch,
    modifier: &str,
    now: u64,
) -> Result<CipCard, CipError> {
    if patch.serial.is_some() {
        return Err(CipError::ImmutableField("serial"));
    }
    if patch.version.is_some() {
        return Err(CipError::ImmutableField("version"));
    }
    let mut next = card.clone();
    if let Some(v) = patch.blood_group {
        next.blood_group = v;
    }
    if let Some(v) = patch.rh {
        next.rh = v;
    }
    if let Some(v) = patch.hiv_positive {
        next.hiv_positive = v;
    }
    if let Some(v) = patch.transmittable_disease {
        next.transmittable_disease = v;
    }
    if let Some(v) = patch.chronic_disease {
        next.chronic_disease = v;
    }
    if let Some(v) = &patch.language {
        next.language = v.clone();
    }
    if let Some(v) = &patch.server_uri {
        next.server_uri = v.clone();
    }
    if let Some(v) = &patch.allergies {
        next.allergies = v.clone();
    }
    if let Some(v) = &patch.conditions {
        next.conditions = v.clone();
    }
    next.last_modified = now;
    next.modifier_id = modifier.to_string();
    encode_cip(&next)?;
    Ok(next)
}
