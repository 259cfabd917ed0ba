//! Verifier-side client and audit of retrieved blocks.

use std::io::{Read, Write};

use p256::ecdsa::VerifyingKey;

use super::channel::{handshake_client, AttestationPolicy, Endpoint};
use super::message::{decode_alarm, msg, BlockRange, RetrievalRequest, Summary};
use crate::error::{Error, Result};
use crate::keyschedule::{ChainParams, RootLoggingKey};
use crate::logchain::{
    Block, BlockSlot, Certificate, DeviceId, DeviceIdentity, Finding, StateWitness, TrustAnchors, VerificationReport,
    Verifier, VerifyMode,
};
use crate::par::Exec;

pub struct VerifierClient<'a> {
    pub identity: &'a DeviceIdentity,
    pub anchors: TrustAnchors,
    pub attestation: AttestationPolicy,
    pub evidence: Vec<u8>,
}

/// Everything a transfer produced, including partial results of an
/// aborted one.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub request: RetrievalRequest,
    pub peer: Certificate,
    pub blocks: Vec<Block>,
    /// Serialized blocks exactly as received.
    pub raw_blocks: Vec<Vec<u8>>,
    pub notices: Vec<String>,
    pub summary: Option<Summary>,
    pub alarm: Option<(u32, String)>,
}

impl<'a> VerifierClient<'a> {
    pub fn new(identity: &'a DeviceIdentity, anchors: TrustAnchors) -> Self {
        VerifierClient {
            identity,
            anchors,
            attestation: AttestationPolicy::AcceptAll,
            evidence: Vec::new(),
        }
    }

    /// Handshake, request `range` and collect the reply. `device` pins the
    /// expected device id; otherwise the authenticated peer's id is used.
    pub fn fetch<T: Read + Write>(
        &self,
        transport: T,
        device: Option<DeviceId>,
        range: BlockRange,
        mode: VerifyMode,
    ) -> Result<Retrieved> {
        range.validate()?;
        let ep = Endpoint {
            identity: self.identity,
            anchors: &self.anchors,
            attestation: &self.attestation,
            evidence: &self.evidence,
        };
        let mut session = handshake_client(transport, &ep)?;
        let peer = session.peer().clone();
        if device.is_some_and(|d| d != peer.device_id) {
            return Err(session.abort(Error::AuthFailure));
        }
        let request = RetrievalRequest {
            device_id: peer.device_id,
            range,
            mode,
        };
        session.send(msg::REQUEST, &request.to_bytes())?;
        let mut out = Retrieved {
            request,
            peer,
            blocks: Vec::new(),
            raw_blocks: Vec::new(),
            notices: Vec::new(),
            summary: None,
            alarm: None,
        };
        loop {
            let (ty, body) = session.recv()?;
            match ty {
                msg::NOTICE => out.notices.push(String::from_utf8_lossy(&body).into_owned()),
                msg::BLOCK => {
                    out.blocks.push(Block::from_bytes(&body)?);
                    out.raw_blocks.push(body.to_vec());
                }
                msg::ALARM => {
                    out.alarm = Some(decode_alarm(&body)?);
                    break;
                }
                msg::SUMMARY => {
                    out.summary = Some(Summary::from_bytes(&body)?);
                    let _ = session.send(msg::CLOSE, &[]);
                    break;
                }
                other => return Err(session.abort(Error::parse(format!("unexpected message {other:#04x}")))),
            }
        }
        Ok(out)
    }
}

/// Check a transfer. Public mode covers signatures, contiguity and the
/// signed summary; with an RLK every tag is recomputed as well. `params`
/// falls back to those recorded in the signed state.
pub fn audit(
    retrieved: &Retrieved,
    pk: &VerifyingKey,
    rlk: Option<&RootLoggingKey>,
    params: Option<ChainParams>,
    exec: Exec,
) -> Result<VerificationReport> {
    let signed = retrieved.summary.as_ref().and_then(|s| s.state.as_ref());
    let mut findings = Vec::new();
    let state = match signed {
        Some(s) if s.verify(pk) && s.device_id == retrieved.peer.device_id => Some(s.state),
        Some(_) => {
            findings.push(Finding::StateSignatureInvalid);
            None
        }
        None => None,
    };
    let params = params
        .or(state.map(|s| s.params))
        .ok_or_else(|| Error::invalid("chain parameters unknown: no signed state and none supplied"))?;
    let verifier = match rlk {
        Some(rlk) => Verifier::full(pk, params, rlk),
        None => Verifier::public(pk, params),
    }
    .with_exec(exec);
    let slots: Vec<BlockSlot> = retrieved.blocks.iter().cloned().map(BlockSlot::Present).collect();
    let range = retrieved.request.range;
    let mut report = verifier.verify_slots(&slots, range.start(), range.end(), StateWitness::from(state.as_ref()));
    for f in findings {
        report.push_finding(f);
    }
    if let Some((block_id, reason)) = &retrieved.alarm {
        report.push_finding(Finding::IntegrityAlarm {
            block_id: *block_id,
            reason: reason.clone(),
        });
    }
    if let Some(s) = &retrieved.summary {
        if s.count as usize != retrieved.blocks.len() {
            report.push_finding(Finding::StateMismatch {
                detail: format!("summary counts {} blocks, {} received", s.count, retrieved.blocks.len()),
            });
        }
    }
    Ok(report)
}
