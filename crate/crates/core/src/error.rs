use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("key material unavailable (destroyed or erased)")]
    KeyUnavailable,

    #[error("key misuse: {0}")]
    KeyMisuse(String),

    #[error("block is full ({0} messages)")]
    BlockFull(u32),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("authentication failure")]
    AuthFailure,

    #[error("object already exists: {0}")]
    AlreadyExists(String),

    #[error("protocol negotiation failed: {0}")]
    NegotiationFailure(String),

    #[error("replay detected: {0}")]
    ReplayDetected(String),

    #[error("integrity alarm at block {block_id}: {reason}")]
    IntegrityAlarm { block_id: u32, reason: String },

    #[error("nonce budget exhausted for storage key")]
    NonceExhausted,

    #[error("store has no chain state record")]
    MissingState,

    #[error("injected crash at {0}")]
    InjectedCrash(String),

    #[error("unknown device {0}")]
    UnknownDevice(String),

    #[error("remote error {code}: {message}")]
    Remote { code: u8, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
