use thiserror::Error;

pub const FIELD_SEP: char = '|';
pub const ENCODING_CHARS: &str = "^~\\&";
pub const SEGMENT_TERMINATOR: char = '\r';
pub const HL7_VERSION: &str = "2.5";

const FORBIDDEN: [char; 6] = ['|', '^', '~', '\\', '&', '\r'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Hl7Error {
    #[error("message does not start with an MSH segment")]
    MissingMsh,
    #[error("empty segment")]
    EmptySegment,
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("invalid field {0}")]
    InvalidField(&'static str),
    #[error("field contains a delimiter character: {0:?}")]
    ForbiddenCharacter(String),
    #[error("result serial {result} does not match card serial {card}")]
    SerialMismatch { card: u64, result: u64 },
    #[error("not an {0} message")]
    UnexpectedType(&'static str),
    #[error("bad MLLP framing")]
    BadFraming,
    #[error("incomplete MLLP frame")]
    Incomplete,
    #[error("ack control id {got:?} does not match {expected:?}")]
    ControlIdMismatch { expected: String, got: String },
    #[error("no acknowledgment after {attempts} attempts")]
    Timeout { attempts: u32 },
}

impl Hl7Error {
    pub fn code(&self) -> &'static str {
        match self {
            Hl7Error::MissingMsh => "MissingMsh",
            Hl7Error::EmptySegment => "EmptySegment",
            Hl7Error::MissingField(_) => "MissingField",
            Hl7Error::InvalidField(_) => "InvalidField",
            Hl7Error::ForbiddenCharacter(_) => "ForbiddenCharacter",
            Hl7Error::SerialMismatch { .. } => "SerialMismatch",
            Hl7Error::UnexpectedType(_) => "UnexpectedType",
            Hl7Error::BadFraming => "BadFraming",
            Hl7Error::Incomplete => "Incomplete",
            Hl7Error::ControlIdMismatch { .. } => "ControlIdMismatch",
            Hl7Error::Timeout { .. } => "Timeout",
        }
    }
}

/// Rejects text that would need HL7 escaping.
pub fn check_text(s: &str) -> Result<&str, Hl7Error> {
    if s.contains(FORBIDDEN) {
        return Err(Hl7Error::ForbiddenCharacter(s.to_string()));
    }
    Ok(s)
}

/// Joins checked components with `^`.
pub fn components(parts: &[&str]) -> Result<String, Hl7Error> {
    for p in parts {
        check_text(p)?;
    }
    Ok(parts.join("^"))
}

/// One segment: the segment id followed by its fields.
///
/// For MSH, `fields[1]` holds the encoding characters (MSH-2), so `fields[i]`
/// is MSH-(i+1) for `i >= 1`; for every other segment `fields[i]` is field `i`.
pub type Segment = Vec<String>;

/// A pipe-delimited HL7 v2 message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hl7Message {
    pub segments: Vec<Segment>,
}

impl Hl7Message {
    pub fn msh(&self) -> &Segment {
        &self.segments[0]
    }

    fn msh_field(&self, n: usize) -> &str {
        self.msh().get(n - 1).map(String::as_str).unwrap_or("")
    }

    /// MSH-9, e.g. `ORU^R01`.
    pub fn message_type(&self) -> &str {
        self.msh_field(9)
    }

    /// MSH-10.
    pub fn control_id(&self) -> &str {
        self.msh_field(10)
    }

    pub fn segments_named<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Segment> + 'a {
        self.segments.iter().filter(move |s| s[0] == id)
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s[0] == id)
    }
}

/// Field `n` of a non-MSH segment, empty when absent.
pub fn field(seg: &Segment, n: usize) -> &str {
    seg.get(n).map(String::as_str).unwrap_or("")
}

pub fn encode_hl7(msg: &Hl7Message) -> String {
    let mut out = String::new();
    for seg in &msg.segments {
        out.push_str(&seg.join("|"));
        out.push(SEGMENT_TERMINATOR);
    }
    out
}

pub fn parse_hl7(text: &str) -> Result<Hl7Message, Hl7Error> {
    let body = text.strip_suffix(SEGMENT_TERMINATOR).unwrap_or(text);
    if !body.starts_with("MSH|") {
        return Err(Hl7Error::MissingMsh);
    }
    let mut segments = Vec::new();
    for raw in body.split(SEGMENT_TERMINATOR) {
        if raw.is_empty() {
            return Err(Hl7Error::EmptySegment);
        }
        let seg: Segment = raw.split(FIELD_SEP).map(str::to_string).collect();
        if seg[0].is_empty() {
            return Err(Hl7Error::EmptySegment);
        }
        segments.push(seg);
    }
    let msg = Hl7Message { segments };
    if msg.msh_field(2) != ENCODING_CHARS {
        return Err(Hl7Error::InvalidField("MSH-2"));
    }
    if msg.control_id().is_empty() {
        return Err(Hl7Error::MissingField("MSH-10"));
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ack() -> Hl7Message {
        Hl7Message {
            segments: vec![
                ["MSH", "^~\\&", "SIMOPAC", "SIMOPAC", "CIPDEV", "DEVICE", "20240101000000", "", "ACK", "9", "P", "2.5"]
                    .map(String::from)
                    .to_vec(),
                ["MSA", "AA", "42"].map(String::from).to_vec(),
            ],
        }
    }

    #[test]
    fn encode_starts_with_msh() {
        let text = encode_hl7(&ack());
        assert!(text.starts_with("MSH|^~\\&|"));
        assert!(text.ends_with("MSA|AA|42\r"));
        assert_eq!(parse_hl7(&text).unwrap(), ack());
        assert_eq!(ack().message_type(), "ACK");
        assert_eq!(ack().control_id(), "9");
    }

    #[test]
    fn parse_rejections() {
        assert_eq!(parse_hl7("PID|1\r"), Err(Hl7Error::MissingMsh));
        assert_eq!(parse_hl7(""), Err(Hl7Error::MissingMsh));
        assert_eq!(
            parse_hl7("MSH|^~\\&|a|b|c|d|t||ACK|1|P|2.5\r\rMSA|AA|1\r"),
            Err(Hl7Error::EmptySegment)
        );
        assert_eq!(
            parse_hl7("MSH|^~\\&|a|b|c|d|t||ACK||P|2.5\r"),
            Err(Hl7Error::MissingField("MSH-10"))
        );
    }

    #[test]
    fn forbidden_text() {
        assert!(check_text("ok text").is_ok());
        for bad in ["a|b", "a^b", "a~b", "a\\b", "a&b", "a\rb"] {
            assert!(check_text(bad).is_err(), "{bad:?}");
        }
    }
}
