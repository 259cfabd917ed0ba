//! Mutually authenticated channel: a three-message signed handshake with
//! ephemeral P-256 key agreement, then AES-256-GCM frames with per-direction
//! sequence numbers.

use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};
use std::sync::Mutex;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use p256::ecdh::EphemeralSecret;
use p256::elliptic_curve::sec1::ToEncodedPoint;
use p256::PublicKey;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use super::frame::{kind, Frame, FrameIo};
use crate::error::{Error, Result};
use crate::keyschedule::hkdf::hkdf;
use crate::logchain::identity::{verify_raw, CERT_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::logchain::{Certificate, DeviceIdentity, Role, TrustAnchors};

pub const PROTOCOL_VERSION: u8 = 1;
pub const HELLO_NONCE_LEN: usize = 32;
pub const MAX_EVIDENCE_LEN: usize = 4096;

const CTX_CLIENT_HELLO: &[u8] = b"EMLOG-HELLO-v1";
const CTX_SERVER_HELLO: &[u8] = b"EMLOG-SERVER-v1";
const CTX_CLIENT_FINISH: &[u8] = b"EMLOG-FINISH-v1";
const INFO_C2S: &[u8] = b"EMLOG c2s";
const INFO_S2C: &[u8] = b"EMLOG s2c";
const SEALED_AAD_CONTEXT: &[u8] = b"EMLOG-REC";

/// Decision hook for the opaque attestation evidence a peer presents.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AttestationPolicy {
    #[default]
    AcceptAll,
    RejectAll,
    /// Accept only evidence equal to these bytes.
    Expect(Vec<u8>),
}

impl AttestationPolicy {
    pub fn accepts(&self, evidence: &[u8]) -> bool {
        match self {
            AttestationPolicy::AcceptAll => true,
            AttestationPolicy::RejectAll => false,
            AttestationPolicy::Expect(e) => e == evidence,
        }
    }
}

/// One side's handshake configuration.
#[derive(Debug, Clone, Copy)]
pub struct Endpoint<'a> {
    pub identity: &'a DeviceIdentity,
    pub anchors: &'a TrustAnchors,
    pub attestation: &'a AttestationPolicy,
    /// Evidence this side presents.
    pub evidence: &'a [u8],
}

/// Bounded set of recently seen client hello nonces.
#[derive(Debug)]
pub struct ReplayCache {
    inner: Mutex<(HashSet<[u8; HELLO_NONCE_LEN]>, VecDeque<[u8; HELLO_NONCE_LEN]>)>,
    capacity: usize,
}

impl Default for ReplayCache {
    fn default() -> Self {
        Self::with_capacity(65536)
    }
}

impl ReplayCache {
    pub fn with_capacity(capacity: usize) -> Self {
        ReplayCache {
            inner: Mutex::new((HashSet::new(), VecDeque::new())),
            capacity: capacity.max(1),
        }
    }

    /// Record `nonce`; false if it was already present.
    pub fn insert(&self, nonce: [u8; HELLO_NONCE_LEN]) -> bool {
        let mut guard = self.inner.lock().expect("replay cache lock");
        let (set, order) = &mut *guard;
        if !set.insert(nonce) {
            return false;
        }
        order.push_back(nonce);
        if order.len() > self.capacity {
            if let Some(old) = order.pop_front() {
                set.remove(&old);
            }
        }
        true
    }
}

/// Parsed ClientHello or ServerHello body.
#[derive(Debug, Clone)]
pub struct Hello {
    pub version: u8,
    pub role: Role,
    pub certificate: Certificate,
    pub evidence: Vec<u8>,
    pub ephemeral: [u8; PUBLIC_KEY_LEN],
    pub nonce: [u8; HELLO_NONCE_LEN],
    pub signature: [u8; SIGNATURE_LEN],
}

impl Hello {
    fn unsigned_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + CERT_LEN + 2 + self.evidence.len() + PUBLIC_KEY_LEN + HELLO_NONCE_LEN);
        out.push(self.version);
        out.push(self.role.code());
        out.extend_from_slice(&self.certificate.to_bytes());
        out.extend_from_slice(&(self.evidence.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.evidence);
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.nonce);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.unsigned_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    /// Parse after checking the version byte, so a peer speaking another
    /// version gets a negotiation failure rather than a parse error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(&version) = bytes.first() else {
            return Err(Error::parse("empty hello"));
        };
        if version != PROTOCOL_VERSION {
            return Err(Error::NegotiationFailure(format!(
                "peer speaks protocol version {version}, this side speaks {PROTOCOL_VERSION}"
            )));
        }
        let fixed = 2 + CERT_LEN + 2;
        if bytes.len() < fixed {
            return Err(Error::parse("short hello"));
        }
        let role = Role::from_code(bytes[1])?;
        let certificate = Certificate::from_bytes(&bytes[2..2 + CERT_LEN])?;
        let ev_len = usize::from(u16::from_be_bytes([bytes[2 + CERT_LEN], bytes[3 + CERT_LEN]]));
        if ev_len > MAX_EVIDENCE_LEN {
            return Err(Error::parse("attestation evidence too long"));
        }
        if bytes.len() != fixed + ev_len + PUBLIC_KEY_LEN + HELLO_NONCE_LEN + SIGNATURE_LEN {
            return Err(Error::parse("hello has wrong length"));
        }
        let mut o = fixed;
        let evidence = bytes[o..o + ev_len].to_vec();
        o += ev_len;
        let ephemeral = bytes[o..o + PUBLIC_KEY_LEN].try_into().expect("65 bytes");
        o += PUBLIC_KEY_LEN;
        let nonce = bytes[o..o + HELLO_NONCE_LEN].try_into().expect("32 bytes");
        o += HELLO_NONCE_LEN;
        let signature = bytes[o..].try_into().expect("64 bytes");
        Ok(Hello {
            version,
            role,
            certificate,
            evidence,
            ephemeral,
            nonce,
            signature,
        })
    }
}

fn signed_input(context: &[u8], parts: &[&[u8]]) -> Vec<u8> {
    let mut out = context.to_vec();
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

fn make_hello(
    ep: &Endpoint<'_>,
    role: Role,
    ephemeral: &EphemeralSecret,
    context: &[u8],
    prefix: &[u8],
) -> Result<Hello> {
    if ep.evidence.len() > MAX_EVIDENCE_LEN {
        return Err(Error::invalid("attestation evidence too long"));
    }
    let mut nonce = [0u8; HELLO_NONCE_LEN];
    OsRng.fill_bytes(&mut nonce);
    let eph = ephemeral.public_key().to_encoded_point(false);
    let mut hello = Hello {
        version: PROTOCOL_VERSION,
        role,
        certificate: ep.identity.certificate().clone(),
        evidence: ep.evidence.to_vec(),
        ephemeral: eph.as_bytes().try_into().expect("uncompressed point"),
        nonce,
        signature: [0; SIGNATURE_LEN],
    };
    hello.signature = ep.identity.sign(&signed_input(context, &[prefix, &hello.unsigned_bytes()]));
    Ok(hello)
}

/// Certificate, attestation and transcript-signature checks on a peer hello.
fn check_hello(ep: &Endpoint<'_>, hello: &Hello, expected_role: Role, context: &[u8], prefix: &[u8]) -> Result<()> {
    if hello.role != expected_role {
        return Err(Error::AuthFailure);
    }
    ep.anchors.validate(&hello.certificate, expected_role)?;
    if !ep.attestation.accepts(&hello.evidence) {
        return Err(Error::AuthFailure);
    }
    let msg = signed_input(context, &[prefix, &hello.unsigned_bytes()]);
    if !verify_raw(&hello.certificate.subject_key, &msg, &hello.signature) {
        return Err(Error::AuthFailure);
    }
    Ok(())
}

fn session_keys(
    secret: &EphemeralSecret,
    peer_ephemeral: &[u8],
    transcript_hash: &[u8; 32],
) -> Result<(Zeroizing<Vec<u8>>, Zeroizing<Vec<u8>>)> {
    let peer = PublicKey::from_sec1_bytes(peer_ephemeral).map_err(|_| Error::AuthFailure)?;
    let shared = secret.diffie_hellman(&peer);
    let ikm = shared.raw_secret_bytes();
    Ok((
        hkdf(ikm, transcript_hash, INFO_C2S, 32)?,
        hkdf(ikm, transcript_hash, INFO_S2C, 32)?,
    ))
}

/// An established session. Inner messages are `type ‖ body`, sealed into
/// SEALED frames carrying `BE64 sequence ‖ ciphertext`.
pub struct SecureSession<T> {
    io: FrameIo<T>,
    send_cipher: Aes256Gcm,
    recv_cipher: Aes256Gcm,
    send_seq: u64,
    recv_seq: u64,
    peer: Certificate,
    peer_evidence: Vec<u8>,
}

impl<T> std::fmt::Debug for SecureSession<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureSession")
            .field("peer", &self.peer.device_id)
            .field("send_seq", &self.send_seq)
            .field("recv_seq", &self.recv_seq)
            .finish_non_exhaustive()
    }
}

fn nonce_for(seq: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&seq.to_be_bytes());
    n
}

fn sealed_aad(seq: u64) -> Vec<u8> {
    let mut aad = SEALED_AAD_CONTEXT.to_vec();
    aad.push(kind::SEALED);
    aad.extend_from_slice(&seq.to_be_bytes());
    aad
}

impl<T: Read + Write> SecureSession<T> {
    fn new(io: FrameIo<T>, send_key: &[u8], recv_key: &[u8], peer: Certificate, peer_evidence: Vec<u8>) -> Self {
        SecureSession {
            io,
            send_cipher: Aes256Gcm::new_from_slice(send_key).expect("32-byte key"),
            recv_cipher: Aes256Gcm::new_from_slice(recv_key).expect("32-byte key"),
            send_seq: 0,
            recv_seq: 0,
            peer,
            peer_evidence,
        }
    }

    pub fn peer(&self) -> &Certificate {
        &self.peer
    }

    pub fn peer_evidence(&self) -> &[u8] {
        &self.peer_evidence
    }

    pub fn frame_io(&mut self) -> &mut FrameIo<T> {
        &mut self.io
    }

    pub fn send(&mut self, msg_type: u8, body: &[u8]) -> Result<()> {
        let seq = self.send_seq;
        let mut plain = Zeroizing::new(Vec::with_capacity(1 + body.len()));
        plain.push(msg_type);
        plain.extend_from_slice(body);
        let aad = sealed_aad(seq);
        let ct = self
            .send_cipher
            .encrypt(&Nonce::from(nonce_for(seq)), Payload { msg: &plain, aad: &aad })
            .map_err(|_| Error::invalid("encryption failed"))?;
        let mut payload = Vec::with_capacity(8 + ct.len());
        payload.extend_from_slice(&seq.to_be_bytes());
        payload.extend_from_slice(&ct);
        self.io.send(&Frame::new(kind::SEALED, payload))?;
        self.send_seq = seq.checked_add(1).ok_or(Error::NonceExhausted)?;
        Ok(())
    }

    /// Next inner message as `(type, body)`.
    pub fn recv(&mut self) -> Result<(u8, Zeroizing<Vec<u8>>)> {
        let payload = self.io.recv_kind(kind::SEALED)?;
        if payload.len() < 8 {
            return Err(Error::parse("short sealed frame"));
        }
        let seq = u64::from_be_bytes(payload[..8].try_into().expect("8 bytes"));
        if seq < self.recv_seq {
            return Err(Error::ReplayDetected(format!(
                "frame sequence {seq} already received (expecting {})",
                self.recv_seq
            )));
        }
        if seq > self.recv_seq {
            return Err(Error::parse(format!("frame sequence gap: got {seq}, expecting {}", self.recv_seq)));
        }
        let aad = sealed_aad(seq);
        let plain = self
            .recv_cipher
            .decrypt(&Nonce::from(nonce_for(seq)), Payload { msg: &payload[8..], aad: &aad })
            .map(Zeroizing::new)
            .map_err(|_| Error::AuthFailure)?;
        self.recv_seq += 1;
        let Some((&t, body)) = plain.split_first() else {
            return Err(Error::parse("empty inner message"));
        };
        Ok((t, Zeroizing::new(body.to_vec())))
    }

    /// Report `e` to the peer in the clear and hand it back.
    pub fn abort(&mut self, e: Error) -> Error {
        self.io.send_error(&e);
        e
    }
}

fn with_abort<T: Read + Write, R>(io: &mut FrameIo<T>, r: Result<R>) -> Result<R> {
    r.map_err(|e| {
        if !matches!(e, Error::Remote { .. } | Error::Io(_)) {
            io.send_error(&e);
        }
        e
    })
}

/// Verifier side: send ClientHello, check ServerHello, send ClientFinish.
pub fn handshake_client<T: Read + Write>(transport: T, ep: &Endpoint<'_>) -> Result<SecureSession<T>> {
    handshake_client_version(transport, ep, PROTOCOL_VERSION)
}

#[doc(hidden)]
pub fn handshake_client_version<T: Read + Write>(
    transport: T,
    ep: &Endpoint<'_>,
    version: u8,
) -> Result<SecureSession<T>> {
    let mut io = FrameIo::new(transport);
    let secret = EphemeralSecret::random(&mut OsRng);
    let mut hello = make_hello(ep, ep.identity.role(), &secret, CTX_CLIENT_HELLO, &[])?;
    if version != PROTOCOL_VERSION {
        hello.version = version;
        hello.signature = ep.identity.sign(&signed_input(CTX_CLIENT_HELLO, &[&hello.unsigned_bytes()]));
    }
    let client_bytes = hello.to_bytes();
    io.send(&Frame::new(kind::CLIENT_HELLO, client_bytes.clone()))?;

    let server_bytes = io.recv_kind(kind::SERVER_HELLO)?;
    let client_hash: [u8; 32] = Sha256::digest(&client_bytes).into();
    let server = with_abort(&mut io, Hello::from_bytes(&server_bytes))?;
    with_abort(
        &mut io,
        check_hello(ep, &server, Role::Device, CTX_SERVER_HELLO, &client_hash),
    )?;

    let mut th = Sha256::new();
    th.update(&client_bytes);
    th.update(&server_bytes);
    let pre_finish: [u8; 32] = th.clone().finalize().into();
    let finish = ep.identity.sign(&signed_input(CTX_CLIENT_FINISH, &[&pre_finish]));
    io.send(&Frame::new(kind::CLIENT_FINISH, finish.to_vec()))?;
    th.update(finish);
    let transcript: [u8; 32] = th.finalize().into();
    let (c2s, s2c) = with_abort(&mut io, session_keys(&secret, &server.ephemeral, &transcript))?;
    Ok(SecureSession::new(io, &c2s, &s2c, server.certificate, server.evidence))
}

/// Device side: check ClientHello, answer with ServerHello, check
/// ClientFinish. Every failure is reported to the peer before returning.
pub fn handshake_server<T: Read + Write>(
    transport: T,
    ep: &Endpoint<'_>,
    replay: &ReplayCache,
) -> Result<SecureSession<T>> {
    let mut io = FrameIo::new(transport);
    let client_bytes = io.recv_kind(kind::CLIENT_HELLO)?;
    let client = with_abort(&mut io, Hello::from_bytes(&client_bytes))?;
    with_abort(&mut io, check_hello(ep, &client, Role::Verifier, CTX_CLIENT_HELLO, &[]))?;
    if !replay.insert(client.nonce) {
        return with_abort(&mut io, Err(Error::ReplayDetected("client hello nonce seen before".into())));
    }

    let secret = EphemeralSecret::random(&mut OsRng);
    let client_hash: [u8; 32] = Sha256::digest(&client_bytes).into();
    let server = make_hello(ep, Role::Device, &secret, CTX_SERVER_HELLO, &client_hash)?;
    let server_bytes = server.to_bytes();
    io.send(&Frame::new(kind::SERVER_HELLO, server_bytes.clone()))?;

    let finish = io.recv_kind(kind::CLIENT_FINISH)?;
    let finish: [u8; SIGNATURE_LEN] = with_abort(
        &mut io,
        finish.as_slice().try_into().map_err(|_| Error::parse("client finish has wrong length")),
    )?;
    let mut th = Sha256::new();
    th.update(&client_bytes);
    th.update(&server_bytes);
    let pre_finish: [u8; 32] = th.clone().finalize().into();
    if !verify_raw(
        &client.certificate.subject_key,
        &signed_input(CTX_CLIENT_FINISH, &[&pre_finish]),
        &finish,
    ) {
        return with_abort(&mut io, Err(Error::AuthFailure));
    }
    th.update(finish);
    let transcript: [u8; 32] = th.finalize().into();
    let (c2s, s2c) = with_abort(&mut io, session_keys(&secret, &client.ephemeral, &transcript))?;
    Ok(SecureSession::new(io, &s2c, &c2s, client.certificate, client.evidence))
}
