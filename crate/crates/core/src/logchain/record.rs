use hmac::{Hmac, Mac};
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::error::{Error, Result};
use crate::keyschedule::MessageKey;

/// Serialized record: 4-byte message id, 32-byte tag, 256-byte text field.
pub const RECORD_LEN: usize = 4 + TAG_LEN + TEXT_FIELD_LEN;
pub const TAG_LEN: usize = 32;
pub const TEXT_FIELD_LEN: usize = 256;
/// Payload capacity of one text field (the rest is the 2-byte prefix).
pub const MAX_CHUNK_LEN: usize = TEXT_FIELD_LEN - 2;

const LEN_MASK: u16 = 0x0fff;
const CONTINUATION_BIT: u16 = 0x1000;
const RESERVED_MASK: u16 = 0xe000;

/// Fixed 256-byte text field: BE16 prefix {bits 0-11 used length, bit 12
/// continuation, bits 13-15 reserved (zero)}, payload, zero padding.
#[derive(Clone, PartialEq, Eq)]
pub struct TextField([u8; TEXT_FIELD_LEN]);

impl TextField {
    pub fn new(payload: &[u8], continuation: bool) -> Result<Self> {
        if payload.len() > MAX_CHUNK_LEN {
            return Err(Error::invalid(format!(
                "text chunk of {} bytes exceeds {MAX_CHUNK_LEN}",
                payload.len()
            )));
        }
        let mut prefix = payload.len() as u16;
        if continuation {
            prefix |= CONTINUATION_BIT;
        }
        let mut field = [0u8; TEXT_FIELD_LEN];
        field[..2].copy_from_slice(&prefix.to_be_bytes());
        field[2..2 + payload.len()].copy_from_slice(payload);
        Ok(TextField(field))
    }

    /// Strict parse: reserved bits clear, length in range, padding zero.
    pub fn from_bytes(bytes: &[u8; TEXT_FIELD_LEN]) -> Result<Self> {
        let prefix = u16::from_be_bytes([bytes[0], bytes[1]]);
        if prefix & RESERVED_MASK != 0 {
            return Err(Error::parse("reserved bits set in text prefix"));
        }
        let len = usize::from(prefix & LEN_MASK);
        if len > MAX_CHUNK_LEN {
            return Err(Error::parse(format!("text length {len} exceeds {MAX_CHUNK_LEN}")));
        }
        if bytes[2 + len..].iter().any(|b| *b != 0) {
            return Err(Error::parse("non-zero text padding"));
        }
        Ok(TextField(*bytes))
    }

    fn prefix(&self) -> u16 {
        u16::from_be_bytes([self.0[0], self.0[1]])
    }

    pub fn payload(&self) -> &[u8] {
        let len = usize::from(self.prefix() & LEN_MASK);
        &self.0[2..2 + len]
    }

    pub fn is_continued(&self) -> bool {
        self.prefix() & CONTINUATION_BIT != 0
    }

    pub fn as_bytes(&self) -> &[u8; TEXT_FIELD_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for TextField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextField")
            .field("payload", &String::from_utf8_lossy(self.payload()))
            .field("continued", &self.is_continued())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub msg_id: u32,
    pub tag: [u8; TAG_LEN],
    pub text: TextField,
}

impl LogRecord {
    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..4].copy_from_slice(&self.msg_id.to_be_bytes());
        out[4..4 + TAG_LEN].copy_from_slice(&self.tag);
        out[4 + TAG_LEN..].copy_from_slice(self.text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != RECORD_LEN {
            return Err(Error::parse(format!(
                "record is {} bytes, expected {RECORD_LEN}",
                bytes.len()
            )));
        }
        let msg_id = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        let tag: [u8; TAG_LEN] = bytes[4..4 + TAG_LEN].try_into().expect("32 bytes");
        let text = TextField::from_bytes(bytes[4 + TAG_LEN..].try_into().expect("256 bytes"))?;
        Ok(LogRecord { msg_id, tag, text })
    }
}

/// HMAC-SHA256 over `BE32(block_id) ‖ BE32(msg_id) ‖ text field`.
pub fn record_tag(key: &[u8; 32], block_id: u32, msg_id: u32, text: &TextField) -> [u8; TAG_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(&block_id.to_be_bytes());
    mac.update(&msg_id.to_be_bytes());
    mac.update(text.as_bytes());
    mac.finalize().into_bytes().into()
}

/// Tag a text chunk under its message key. The key is erased afterwards.
pub fn make_record(msg_id: u32, text: &[u8], continuation: bool, key: &mut MessageKey) -> Result<LogRecord> {
    let field = TextField::new(text, continuation)?;
    if key.msg_id() != msg_id {
        return Err(Error::KeyMisuse(format!(
            "key for message {} used for message {msg_id}",
            key.msg_id()
        )));
    }
    let tag = record_tag(key.live()?, key.block_id(), msg_id, &field);
    key.erase();
    Ok(LogRecord {
        msg_id,
        tag,
        text: field,
    })
}

/// Recompute the tag at a position and compare in constant time.
pub fn check_tag(key: &MessageKey, record: &LogRecord) -> bool {
    let Ok(bytes) = key.live() else {
        return false;
    };
    let expected = record_tag(bytes, key.block_id(), key.msg_id(), &record.text);
    expected.ct_eq(&record.tag).into()
}
