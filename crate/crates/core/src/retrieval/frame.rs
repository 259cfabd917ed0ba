//! Length-prefixed frames: `BE32 length ‖ type ‖ payload`, where length
//! counts the payload only.

use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub const FRAME_HEADER_LEN: usize = 5;
pub const MAX_FRAME_PAYLOAD: usize = 32 * 1024 * 1024;

/// Outer frame types.
pub mod kind {
    pub const CLIENT_HELLO: u8 = 0x01;
    pub const SERVER_HELLO: u8 = 0x02;
    pub const CLIENT_FINISH: u8 = 0x03;
    pub const SEALED: u8 = 0x10;
    pub const ERROR: u8 = 0x7f;
}

/// Wire codes carried by ERROR frames.
pub mod code {
    pub const AUTH_FAILURE: u8 = 1;
    pub const NEGOTIATION_FAILURE: u8 = 2;
    pub const REPLAY_DETECTED: u8 = 3;
    pub const PROTOCOL: u8 = 4;
    pub const INTEGRITY_ALARM: u8 = 5;
    pub const UNKNOWN_DEVICE: u8 = 6;
    pub const INTERNAL: u8 = 7;
}

/// Wire code for a local error about to be reported to the peer.
pub fn error_code(e: &Error) -> u8 {
    match e {
        Error::AuthFailure | Error::KeyUnavailable => code::AUTH_FAILURE,
        Error::NegotiationFailure(_) => code::NEGOTIATION_FAILURE,
        Error::ReplayDetected(_) => code::REPLAY_DETECTED,
        Error::Parse(_) | Error::InvalidParameter(_) => code::PROTOCOL,
        Error::IntegrityAlarm { .. } | Error::MissingState => code::INTEGRITY_ALARM,
        Error::UnknownDevice(_) => code::UNKNOWN_DEVICE,
        _ => code::INTERNAL,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: u8, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.kind);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Split a byte stream into frames; trailing partial data is an error.
    pub fn parse_stream(mut bytes: &[u8]) -> Result<Vec<Frame>> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            if bytes.len() < FRAME_HEADER_LEN {
                return Err(Error::parse("truncated frame header"));
            }
            let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
            let end = FRAME_HEADER_LEN + len;
            if bytes.len() < end {
                return Err(Error::parse("truncated frame payload"));
            }
            out.push(Frame::new(bytes[4], bytes[FRAME_HEADER_LEN..end].to_vec()));
            bytes = &bytes[end..];
        }
        Ok(out)
    }
}

/// Frame reader/writer over any byte transport.
#[derive(Debug)]
pub struct FrameIo<T> {
    inner: T,
}

impl<T: Read + Write> FrameIo<T> {
    pub fn new(inner: T) -> Self {
        FrameIo { inner }
    }

    pub fn get_mut(&mut self) -> &mut T {
        &mut self.inner
    }

    pub fn into_inner(self) -> T {
        self.inner
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        if frame.payload.len() > MAX_FRAME_PAYLOAD {
            return Err(Error::invalid("frame payload too large"));
        }
        self.inner.write_all(&frame.to_bytes())?;
        self.inner.flush()?;
        Ok(())
    }

    /// Next frame. A peer ERROR frame surfaces as [`Error::Remote`].
    pub fn recv(&mut self) -> Result<Frame> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        self.inner.read_exact(&mut header)?;
        let len = u32::from_be_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME_PAYLOAD {
            return Err(Error::parse(format!("frame of {len} bytes exceeds limit")));
        }
        let mut payload = vec![0u8; len];
        self.inner.read_exact(&mut payload)?;
        let frame = Frame::new(header[4], payload);
        if frame.kind == kind::ERROR {
            return Err(decode_error(&frame.payload));
        }
        Ok(frame)
    }

    /// Tell the peer why the exchange is ending. Best effort.
    pub fn send_error(&mut self, e: &Error) {
        let mut payload = vec![error_code(e)];
        payload.extend_from_slice(e.to_string().as_bytes());
        let _ = self.send(&Frame::new(kind::ERROR, payload));
    }

    pub fn recv_kind(&mut self, expected: u8) -> Result<Vec<u8>> {
        let f = self.recv()?;
        if f.kind != expected {
            return Err(Error::parse(format!(
                "expected frame type {expected:#04x}, got {:#04x}",
                f.kind
            )));
        }
        Ok(f.payload)
    }
}

fn decode_error(payload: &[u8]) -> Error {
    match payload.split_first() {
        Some((code, msg)) => Error::Remote {
            code: *code,
            message: String::from_utf8_lossy(msg).into_owned(),
        },
        None => Error::Remote {
            code: code::INTERNAL,
            message: String::new(),
        },
    }
}

/// Transport wrapper that copies every byte in both directions into shared
/// buffers, for inspecting exactly what crossed the wire.
#[derive(Debug)]
pub struct WireTap<T> {
    inner: T,
    pub sent: Arc<Mutex<Vec<u8>>>,
    pub received: Arc<Mutex<Vec<u8>>>,
}

impl<T> WireTap<T> {
    pub fn new(inner: T) -> Self {
        WireTap {
            inner,
            sent: Arc::default(),
            received: Arc::default(),
        }
    }
}

impl<T: Read> Read for WireTap<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.received.lock().expect("tap lock").extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<T: Write> Write for WireTap<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.sent.lock().expect("tap lock").extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
