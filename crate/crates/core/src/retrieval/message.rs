//! Messages carried inside an established session.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::logchain::{DeviceId, VerifyMode};
use crate::sealstore::SignedState;

pub mod msg {
    pub const REQUEST: u8 = 0x20;
    pub const BLOCK: u8 = 0x21;
    pub const NOTICE: u8 = 0x22;
    pub const SUMMARY: u8 = 0x23;
    pub const ALARM: u8 = 0x24;
    pub const CLOSE: u8 = 0x25;
}

pub const REQUEST_LEN: usize = 16 + 1 + 4 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BlockRange {
    /// Blocks `start..=end`.
    Inclusive { start: u32, end: u32 },
    /// Every block from `start` to the committed head.
    Since { start: u32 },
}

impl BlockRange {
    pub fn all() -> Self {
        BlockRange::Since { start: 0 }
    }

    pub fn start(&self) -> u32 {
        match *self {
            BlockRange::Inclusive { start, .. } | BlockRange::Since { start } => start,
        }
    }

    pub fn end(&self) -> Option<u32> {
        match *self {
            BlockRange::Inclusive { end, .. } => Some(end),
            BlockRange::Since { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BlockRange::Inclusive { start, end } if start > end => {
                Err(Error::invalid(format!("range start {start} is after end {end}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RetrievalRequest {
    pub device_id: DeviceId,
    pub range: BlockRange,
    pub mode: VerifyMode,
}

impl RetrievalRequest {
    pub fn to_bytes(&self) -> [u8; REQUEST_LEN] {
        let mut out = [0u8; REQUEST_LEN];
        out[..16].copy_from_slice(&self.device_id.0);
        out[16] = match self.mode {
            VerifyMode::Public => 1,
            VerifyMode::Full => 2,
        };
        out[17..21].copy_from_slice(&self.range.start().to_be_bytes());
        if let Some(end) = self.range.end() {
            out[21] = 1;
            out[22..26].copy_from_slice(&end.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != REQUEST_LEN {
            return Err(Error::parse("request has wrong length"));
        }
        let mode = match bytes[16] {
            1 => VerifyMode::Public,
            2 => VerifyMode::Full,
            m => return Err(Error::parse(format!("unknown verification mode {m}"))),
        };
        let start = u32::from_be_bytes(bytes[17..21].try_into().expect("4 bytes"));
        let end = u32::from_be_bytes(bytes[22..26].try_into().expect("4 bytes"));
        let range = match bytes[21] {
            0 if end == 0 => BlockRange::Since { start },
            1 => BlockRange::Inclusive { start, end },
            _ => return Err(Error::parse("bad range flag")),
        };
        range.validate()?;
        Ok(RetrievalRequest {
            device_id: DeviceId(bytes[..16].try_into().expect("16 bytes")),
            range,
            mode,
        })
    }
}

/// Closing message of a transfer: blocks sent plus the signed chain state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub count: u32,
    pub state: Option<SignedState>,
}

impl Summary {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.count.to_be_bytes().to_vec();
        match &self.state {
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.to_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::parse("short summary"));
        }
        let count = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        let state = match (bytes[4], bytes.len() - 5) {
            (0, 0) => None,
            (1, _) => Some(SignedState::from_bytes(&bytes[5..])?),
            _ => return Err(Error::parse("malformed summary")),
        };
        Ok(Summary { count, state })
    }
}

pub fn encode_alarm(block_id: u32, reason: &str) -> Vec<u8> {
    let mut out = block_id.to_be_bytes().to_vec();
    out.extend_from_slice(reason.as_bytes());
    out
}

pub fn decode_alarm(bytes: &[u8]) -> Result<(u32, String)> {
    if bytes.len() < 4 {
        return Err(Error::parse("short alarm"));
    }
    Ok((
        u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")),
        String::from_utf8_lossy(&bytes[4..]).into_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        for range in [
            BlockRange::Inclusive { start: 3, end: 9 },
            BlockRange::Since { start: 4 },
            BlockRange::all(),
        ] {
            for mode in [VerifyMode::Public, VerifyMode::Full] {
                let r = RetrievalRequest {
                    device_id: DeviceId([7; 16]),
                    range,
                    mode,
                };
                assert_eq!(RetrievalRequest::from_bytes(&r.to_bytes()).unwrap(), r);
            }
        }
        let mut bad = RetrievalRequest {
            device_id: DeviceId([0; 16]),
            range: BlockRange::Inclusive { start: 0, end: 1 },
            mode: VerifyMode::Public,
        }
        .to_bytes();
        bad[20] = 5;
        assert!(RetrievalRequest::from_bytes(&bad).is_err());
    }

    #[test]
    fn summary_and_alarm() {
        let s = Summary { count: 4, state: None };
        assert_eq!(Summary::from_bytes(&s.to_bytes()).unwrap(), s);
        assert_eq!(decode_alarm(&encode_alarm(8, "bad seal")).unwrap(), (8, "bad seal".into()));
    }
}
