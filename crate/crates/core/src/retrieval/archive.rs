//! On-disk archive of a completed (or aborted) transfer, so a fetched
//! range can be audited later and elsewhere.
//!
//! ```text
//! "EMLA" ‖ version(1) ‖ request(26)
//!   ‖ BE16 cert_len ‖ peer certificate
//!   ‖ BE32 n ‖ n × (BE32 len ‖ block bytes)
//!   ‖ BE32 notice_count ‖ notices × (BE32 len ‖ utf-8)
//!   ‖ summary_flag(1) [‖ BE32 len ‖ summary]
//!   ‖ alarm_flag(1) [‖ BE32 block_id ‖ BE32 len ‖ utf-8 reason]
//! ```
//!
//! The archive is not authenticated as a whole: every block and the
//! summary carry their own signatures, and the peer certificate is never
//! trusted by `audit` (the caller supplies the device key).

use super::client::Retrieved;
use super::message::{RetrievalRequest, Summary, REQUEST_LEN};
use crate::error::{Error, Result};
use crate::logchain::{Block, Certificate};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"EMLA";
pub const ARCHIVE_VERSION: u8 = 1;

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_archive(r: &Retrieved) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(ARCHIVE_VERSION);
    out.extend_from_slice(&r.request.to_bytes());
    let cert = r.peer.to_bytes();
    out.extend_from_slice(&(cert.len() as u16).to_be_bytes());
    out.extend_from_slice(&cert);
    out.extend_from_slice(&(r.raw_blocks.len() as u32).to_be_bytes());
    for b in &r.raw_blocks {
        put_bytes(&mut out, b);
    }
    out.extend_from_slice(&(r.notices.len() as u32).to_be_bytes());
    for n in &r.notices {
        put_bytes(&mut out, n.as_bytes());
    }
    match &r.summary {
        Some(s) => {
            out.push(1);
            put_bytes(&mut out, &s.to_bytes());
        }
        None => out.push(0),
    }
    match &r.alarm {
        Some((id, reason)) => {
            out.push(1);
            out.extend_from_slice(&id.to_be_bytes());
            put_bytes(&mut out, reason.as_bytes());
        }
        None => out.push(0),
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::parse("truncated archive"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::parse("archive text is not utf-8"))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::parse(format!("bad archive flag {other}"))),
        }
    }
}

pub fn decode_archive(bytes: &[u8]) -> Result<Retrieved> {
    let mut c = Cursor(bytes);
    if c.take(4)? != ARCHIVE_MAGIC {
        return Err(Error::parse("not an archive"));
    }
    let version = c.u8()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::parse(format!("unsupported archive version {version}")));
    }
    let request = RetrievalRequest::from_bytes(c.take(REQUEST_LEN)?)?;
    let cert_len = c.u16()? as usize;
    let peer = Certificate::from_bytes(c.take(cert_len)?)?;
    let n = c.u32()?;
    let mut blocks = Vec::new();
    let mut raw_blocks = Vec::new();
    for _ in 0..n {
        let raw = c.bytes()?;
        blocks.push(Block::from_bytes(raw)?);
        raw_blocks.push(raw.to_vec());
    }
    let notice_count = c.u32()?;
    let notices = (0..notice_count).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    let summary = if c.flag()? { Some(Summary::from_bytes(c.bytes()?)?) } else { None };
    let alarm = if c.flag()? { Some((c.u32()?, c.string()?)) } else { None };
    if !c.0.is_empty() {
        return Err(Error::parse("trailing bytes after archive"));
    }
    Ok(Retrieved {
        request,
        peer,
        blocks,
        raw_blocks,
        notices,
        summary,
        alarm,
    })
}
