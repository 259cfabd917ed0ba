//! Device-side export service.

use std::io::{Read, Write};
use std::net::TcpListener;

use serde::Serialize;

use super::channel::{handshake_server, AttestationPolicy, Endpoint, ReplayCache, SecureSession};
use super::message::{encode_alarm, msg, BlockRange, RetrievalRequest, Summary};
use crate::error::{Error, Result};
use crate::logchain::{DeviceIdentity, TrustAnchors};
use crate::sealstore::{LogStore, SignedState};

pub struct DeviceService<'a> {
    pub store: &'a LogStore,
    pub identity: &'a DeviceIdentity,
    pub anchors: TrustAnchors,
    pub attestation: AttestationPolicy,
    pub evidence: Vec<u8>,
    pub replay: ReplayCache,
    /// Advance the delivered watermark in the chain state after a transfer.
    pub record_delivery: bool,
}

/// What one served request produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ServeReport {
    pub blocks_sent: u32,
    pub notices: Vec<String>,
    /// Block id and reason when the transfer was aborted.
    pub alarm: Option<(u32, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SessionReport {
    pub peer: Option<String>,
    pub requests: Vec<ServeReport>,
}

impl<'a> DeviceService<'a> {
    pub fn new(store: &'a LogStore, identity: &'a DeviceIdentity, anchors: TrustAnchors) -> Self {
        DeviceService {
            store,
            identity,
            anchors,
            attestation: AttestationPolicy::AcceptAll,
            evidence: Vec::new(),
            replay: ReplayCache::default(),
            record_delivery: true,
        }
    }

    fn endpoint(&self) -> Endpoint<'_> {
        Endpoint {
            identity: self.identity,
            anchors: &self.anchors,
            attestation: &self.attestation,
            evidence: &self.evidence,
        }
    }

    /// Run one session: handshake, then answer requests until the peer
    /// closes. No block is sent before the handshake completes.
    pub fn serve_connection<T: Read + Write>(&self, transport: T) -> Result<SessionReport> {
        let mut session = handshake_server(transport, &self.endpoint(), &self.replay)?;
        let mut report = SessionReport {
            peer: Some(session.peer().device_id.to_hex()),
            requests: Vec::new(),
        };
        loop {
            let (ty, body) = match session.recv() {
                Ok(m) => m,
                Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(report),
                Err(e) => return Err(session.abort(e)),
            };
            match ty {
                msg::CLOSE => return Ok(report),
                msg::REQUEST => {
                    let request = match RetrievalRequest::from_bytes(&body) {
                        Ok(r) => r,
                        Err(e) => return Err(session.abort(e)),
                    };
                    if request.device_id != self.identity.device_id() {
                        let e = Error::UnknownDevice(request.device_id.to_hex());
                        return Err(session.abort(e));
                    }
                    let served = self.serve_range(&mut session, &request)?;
                    let aborted = served.alarm.is_some();
                    report.requests.push(served);
                    if aborted {
                        return Ok(report);
                    }
                }
                other => return Err(session.abort(Error::parse(format!("unexpected message {other:#04x}")))),
            }
        }
    }

    /// Stream the requested blocks in ascending order, then a summary with
    /// the signed chain state. A block that fails to unseal aborts the
    /// transfer with an alarm; blocks already sent stay valid.
    pub fn serve_range<T: Read + Write>(
        &self,
        session: &mut SecureSession<T>,
        request: &RetrievalRequest,
    ) -> Result<ServeReport> {
        let mut report = ServeReport::default();
        let state = self.store.read_state()?;
        let latest = state.and_then(|s| s.latest_block());
        let start = request.range.start();
        let end = match (request.range, latest) {
            (_, None) => None,
            (BlockRange::Since { .. }, Some(l)) => Some(l),
            (BlockRange::Inclusive { end, .. }, Some(l)) if end > l => {
                report.notices.push(format!("range end {end} clamped to latest block {l}"));
                Some(l)
            }
            (BlockRange::Inclusive { end, .. }, Some(_)) => Some(end),
        };
        if state.is_none() {
            report.notices.push("no chain state on device".into());
        } else if latest.is_none() {
            report.notices.push("no committed blocks".into());
        } else if end.is_some_and(|e| start > e) {
            report.notices.push(format!("range start {start} is beyond latest block {}", latest.unwrap_or(0)));
        }
        for n in &report.notices {
            session.send(msg::NOTICE, n.as_bytes())?;
        }
        if let Some(end) = end {
            for id in start..=end {
                match self.store.load_block(id) {
                    Ok(block) => {
                        session.send(msg::BLOCK, &block.to_bytes())?;
                        report.blocks_sent += 1;
                    }
                    Err(e) => {
                        let reason = format!("cannot unseal block {id}: {e}");
                        session.send(msg::ALARM, &encode_alarm(id, &reason))?;
                        report.alarm = Some((id, reason));
                        return Ok(report);
                    }
                }
            }
        }
        let mut state = state;
        if let (Some(s), Some(e), true) = (state, end, self.record_delivery) {
            if report.blocks_sent > 0 {
                let next = s.with_delivered(e);
                self.store.write_state(&next)?;
                state = Some(next);
            }
        }
        let summary = Summary {
            count: report.blocks_sent,
            state: state.map(|s| SignedState::sign(s, self.identity)),
        };
        session.send(msg::SUMMARY, &summary.to_bytes())?;
        Ok(report)
    }

    /// Accept connections one at a time. Stops after `max_sessions` if set.
    /// Failed sessions are reported through `on_session` and do not stop
    /// the loop.
    pub fn serve_tcp(
        &self,
        listener: &TcpListener,
        max_sessions: Option<usize>,
        mut on_session: impl FnMut(Result<SessionReport>),
    ) -> Result<()> {
        let mut served = 0;
        while max_sessions.is_none_or(|m| served < m) {
            let (stream, _) = listener.accept()?;
            on_session(self.serve_connection(stream));
            served += 1;
        }
        Ok(())
    }
}
