//! Device and verifier identities: a P-256 signing key plus a certificate
//! binding the public key to a 16-byte identifier and a role.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pem;

pub const DEVICE_ID_LEN: usize = 16;
pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 65;

pub const CERT_MAGIC: &[u8; 4] = b"EMLC";
pub const CERT_VERSION: u8 = 1;
/// magic, version, role, device id, subject key, issuer key, signature.
pub const CERT_LEN: usize = 4 + 1 + 1 + DEVICE_ID_LEN + PUBLIC_KEY_LEN * 2 + SIGNATURE_LEN;

pub const CERT_LABEL: &str = "EMLOG CERTIFICATE";
pub const SIGNING_KEY_LABEL: &str = "EMLOG SIGNING KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Device,
    Verifier,
    Authority,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Device => 1,
            Role::Verifier => 2,
            Role::Authority => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Role::Device),
            2 => Ok(Role::Verifier),
            3 => Ok(Role::Authority),
            other => Err(Error::parse(format!("unknown role code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceId(pub [u8; DEVICE_ID_LEN]);

impl DeviceId {
    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        let mut id = [0u8; DEVICE_ID_LEN];
        rng.fill_bytes(&mut id);
        DeviceId(id)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn encode_public_key(pk: &VerifyingKey) -> [u8; PUBLIC_KEY_LEN] {
    let point = pk.to_encoded_point(false);
    point.as_bytes().try_into().expect("uncompressed P-256 point is 65 bytes")
}

pub fn decode_public_key(bytes: &[u8]) -> Result<VerifyingKey> {
    VerifyingKey::from_sec1_bytes(bytes).map_err(|_| Error::parse("invalid P-256 public key"))
}

/// ECDSA-P256/SHA-256 signature in raw `r ‖ s` form.
pub fn sign_raw(sk: &SigningKey, msg: &[u8]) -> [u8; SIGNATURE_LEN] {
    let sig: Signature = sk.sign(msg);
    sig.to_bytes().into()
}

pub fn verify_raw(pk: &VerifyingKey, msg: &[u8], sig: &[u8; SIGNATURE_LEN]) -> bool {
    match Signature::from_slice(sig) {
        Ok(sig) => pk.verify(msg, &sig).is_ok(),
        Err(_) => false,
    }
}

/// Fixed-layout certificate. The issuer key equals the subject key for
/// self-signed certificates.
#[derive(Clone, PartialEq, Eq)]
pub struct Certificate {
    pub role: Role,
    pub device_id: DeviceId,
    pub subject_key: VerifyingKey,
    pub issuer_key: VerifyingKey,
    pub signature: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("role", &self.role)
            .field("device_id", &self.device_id.to_hex())
            .field("self_signed", &self.is_self_signed())
            .finish()
    }
}

impl Certificate {
    fn tbs(role: Role, device_id: &DeviceId, subject: &VerifyingKey, issuer: &VerifyingKey) -> Vec<u8> {
        let mut out = Vec::with_capacity(CERT_LEN - SIGNATURE_LEN);
        out.extend_from_slice(CERT_MAGIC);
        out.push(CERT_VERSION);
        out.push(role.code());
        out.extend_from_slice(&device_id.0);
        out.extend_from_slice(&encode_public_key(subject));
        out.extend_from_slice(&encode_public_key(issuer));
        out
    }

    pub fn issue(role: Role, device_id: DeviceId, subject: VerifyingKey, issuer: &SigningKey) -> Self {
        let issuer_key = *issuer.verifying_key();
        let signature = sign_raw(issuer, &Self::tbs(role, &device_id, &subject, &issuer_key));
        Certificate {
            role,
            device_id,
            subject_key: subject,
            issuer_key,
            signature,
        }
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject_key == self.issuer_key
    }

    pub fn signature_valid(&self) -> bool {
        let tbs = Self::tbs(self.role, &self.device_id, &self.subject_key, &self.issuer_key);
        verify_raw(&self.issuer_key, &tbs, &self.signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::tbs(self.role, &self.device_id, &self.subject_key, &self.issuer_key);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != CERT_LEN {
            return Err(Error::parse(format!("certificate is {} bytes, expected {CERT_LEN}", bytes.len())));
        }
        if &bytes[..4] != CERT_MAGIC {
            return Err(Error::parse("bad certificate magic"));
        }
        if bytes[4] != CERT_VERSION {
            return Err(Error::parse(format!("unsupported certificate version {}", bytes[4])));
        }
        let role = Role::from_code(bytes[5])?;
        let mut off = 6;
        let device_id = DeviceId(bytes[off..off + DEVICE_ID_LEN].try_into().expect("16 bytes"));
        off += DEVICE_ID_LEN;
        let subject_key = decode_public_key(&bytes[off..off + PUBLIC_KEY_LEN])?;
        off += PUBLIC_KEY_LEN;
        let issuer_key = decode_public_key(&bytes[off..off + PUBLIC_KEY_LEN])?;
        off += PUBLIC_KEY_LEN;
        let signature = bytes[off..].try_into().expect("64 bytes");
        Ok(Certificate {
            role,
            device_id,
            subject_key,
            issuer_key,
            signature,
        })
    }

    pub fn to_pem(&self) -> String {
        pem::encode(CERT_LABEL, &self.to_bytes())
    }

    pub fn from_pem(text: &str) -> Result<Self> {
        Self::from_bytes(&pem::decode_one(text, CERT_LABEL)?)
    }
}

/// A signing key with its certificate.
#[derive(Clone)]
pub struct DeviceIdentity {
    signing_key: SigningKey,
    certificate: Certificate,
}

impl fmt::Debug for DeviceIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceIdentity")
            .field("certificate", &self.certificate)
            .finish_non_exhaustive()
    }
}

impl DeviceIdentity {
    /// Fresh key-pair with a self-signed certificate.
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, role: Role, device_id: DeviceId) -> Self {
        let signing_key = SigningKey::random(rng);
        let certificate = Certificate::issue(role, device_id, *signing_key.verifying_key(), &signing_key);
        DeviceIdentity {
            signing_key,
            certificate,
        }
    }

    /// Fresh key-pair certified by `issuer`.
    pub fn generate_issued<R: RngCore + CryptoRng>(
        rng: &mut R,
        role: Role,
        device_id: DeviceId,
        issuer: &DeviceIdentity,
    ) -> Self {
        let signing_key = SigningKey::random(rng);
        let certificate = Certificate::issue(role, device_id, *signing_key.verifying_key(), &issuer.signing_key);
        DeviceIdentity {
            signing_key,
            certificate,
        }
    }

    pub fn from_parts(signing_key: SigningKey, certificate: Certificate) -> Result<Self> {
        if *signing_key.verifying_key() != certificate.subject_key {
            return Err(Error::invalid("certificate does not match signing key"));
        }
        Ok(DeviceIdentity {
            signing_key,
            certificate,
        })
    }

    pub fn device_id(&self) -> DeviceId {
        self.certificate.device_id
    }

    pub fn role(&self) -> Role {
        self.certificate.role
    }

    pub fn public_key(&self) -> &VerifyingKey {
        self.signing_key.verifying_key()
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; SIGNATURE_LEN] {
        sign_raw(&self.signing_key, msg)
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing_key.to_bytes().into()
    }

    pub fn from_secret_bytes(secret: &[u8], certificate: Certificate) -> Result<Self> {
        let signing_key = SigningKey::from_slice(secret).map_err(|_| Error::parse("invalid P-256 secret key"))?;
        Self::from_parts(signing_key, certificate)
    }

    /// Signing key and certificate as two armored blocks.
    pub fn to_pem(&self) -> String {
        let mut out = pem::encode(SIGNING_KEY_LABEL, &self.secret_bytes());
        out.push_str(&self.certificate.to_pem());
        out
    }

    pub fn from_pem(text: &str) -> Result<Self> {
        let secret = pem::decode_one(text, SIGNING_KEY_LABEL)?;
        let cert = Certificate::from_pem(text)?;
        Self::from_secret_bytes(&secret, cert)
    }
}

/// Public keys trusted to issue (or directly be) peer certificates.
#[derive(Debug, Clone, Default)]
pub struct TrustAnchors {
    keys: HashMap<[u8; PUBLIC_KEY_LEN], Certificate>,
}

impl TrustAnchors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, cert: Certificate) {
        self.keys.insert(encode_public_key(&cert.subject_key), cert);
    }

    pub fn with(mut self, cert: Certificate) -> Self {
        self.add(cert);
        self
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Load every armored certificate found in `dir` (`*.pem`, `*.cert`, `*.crt`).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut anchors = TrustAnchors::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "pem" | "cert" | "crt") {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            for (label, bytes) in pem::decode_all(&text)? {
                if label == CERT_LABEL {
                    anchors.add(Certificate::from_bytes(&bytes)?);
                }
            }
        }
        Ok(anchors)
    }

    /// A peer certificate is accepted when its signature verifies and either
    /// the subject key is pinned or the issuer key is an anchor.
    pub fn validate(&self, cert: &Certificate, expected_role: Role) -> Result<()> {
        if cert.role != expected_role {
            return Err(Error::AuthFailure);
        }
        if !cert.signature_valid() {
            return Err(Error::AuthFailure);
        }
        let subject = encode_public_key(&cert.subject_key);
        let issuer = encode_public_key(&cert.issuer_key);
        if self.keys.contains_key(&subject) || self.keys.contains_key(&issuer) {
            Ok(())
        } else {
            Err(Error::AuthFailure)
        }
    }
}
