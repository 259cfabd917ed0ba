use std::sync::atomic::{AtomicU64, Ordering};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::rngs::OsRng;
use rand::RngCore;
use zeroize::Zeroizing;

use crate::error::{Error, Result};
use crate::keyschedule::hkdf::hkdf32;

pub const SEAL_MAGIC: &[u8; 4] = b"EMLS";
pub const SEAL_VERSION: u8 = 1;
/// magic, version, object type, BE64 object id.
pub const SEAL_HEADER_LEN: usize = 4 + 1 + 1 + 8;
pub const NONCE_LEN: usize = 12;
pub const GCM_TAG_LEN: usize = 16;
/// Bytes a sealed object adds on top of its payload.
pub const SEAL_OVERHEAD: usize = SEAL_HEADER_LEN + NONCE_LEN + GCM_TAG_LEN;

pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Random nonces are safe for 2^32 encryptions under one key.
pub const MAX_WRITES_PER_KEY: u64 = 1 << 32;

pub const STORAGE_SALT: [u8; 32] = *b"emlog storage key salt, v1 2026.";
pub const LABEL_STORAGE: &[u8] = b"SSK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectType {
    Block,
    Ik,
    State,
    Manifest,
}

impl ObjectType {
    pub fn code(self) -> u8 {
        match self {
            ObjectType::Block => 1,
            ObjectType::Ik => 2,
            ObjectType::State => 3,
            ObjectType::Manifest => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ObjectType::Block),
            2 => Ok(ObjectType::Ik),
            3 => Ok(ObjectType::State),
            4 => Ok(ObjectType::Manifest),
            other => Err(Error::parse(format!("unknown sealed object type {other}"))),
        }
    }
}

/// Application-specific sealing key. Derived on demand, never persisted.
pub struct StorageKey {
    key: Zeroizing<[u8; 32]>,
    writes: AtomicU64,
}

impl std::fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StorageKey(<redacted>)")
    }
}

impl StorageKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        StorageKey {
            key: Zeroizing::new(bytes),
            writes: AtomicU64::new(0),
        }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }

    #[cfg(test)]
    pub(crate) fn set_writes(&self, n: u64) {
        self.writes.store(n, Ordering::Relaxed);
    }

    fn reserve_write(&self) -> Result<()> {
        let prev = self.writes.fetch_add(1, Ordering::Relaxed);
        if prev >= MAX_WRITES_PER_KEY {
            self.writes.store(MAX_WRITES_PER_KEY, Ordering::Relaxed);
            return Err(Error::NonceExhausted);
        }
        Ok(())
    }
}

/// `HKDF(root_storage_key, STORAGE_SALT, "SSK" ‖ app_id, 32)`.
pub fn derive_storage_key(root_storage_key: &[u8; 32], app_id: &[u8]) -> StorageKey {
    let mut info = Vec::with_capacity(LABEL_STORAGE.len() + app_id.len());
    info.extend_from_slice(LABEL_STORAGE);
    info.extend_from_slice(app_id);
    let key = hkdf32(root_storage_key, &STORAGE_SALT, &info);
    StorageKey {
        key,
        writes: AtomicU64::new(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SealedHeader {
    pub object_type: ObjectType,
    pub object_id: u64,
}

impl SealedHeader {
    pub fn to_bytes(&self) -> [u8; SEAL_HEADER_LEN] {
        let mut out = [0u8; SEAL_HEADER_LEN];
        out[..4].copy_from_slice(SEAL_MAGIC);
        out[4] = SEAL_VERSION;
        out[5] = self.object_type.code();
        out[6..].copy_from_slice(&self.object_id.to_be_bytes());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if &bytes[..4] != SEAL_MAGIC {
            return Err(Error::parse("bad sealed object magic"));
        }
        if bytes[4] != SEAL_VERSION {
            return Err(Error::parse(format!("unsupported sealed object version {}", bytes[4])));
        }
        Ok(SealedHeader {
            object_type: ObjectType::from_code(bytes[5])?,
            object_id: u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes")),
        })
    }
}

/// `header ‖ nonce ‖ AES-256-GCM(ciphertext ‖ tag)` with the header as AAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedObject {
    pub header: SealedHeader,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl SealedObject {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SEAL_HEADER_LEN + NONCE_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SEAL_OVERHEAD {
            return Err(Error::parse(format!("sealed object is only {} bytes", bytes.len())));
        }
        let header = SealedHeader::from_bytes(&bytes[..SEAL_HEADER_LEN])?;
        let nonce = bytes[SEAL_HEADER_LEN..SEAL_HEADER_LEN + NONCE_LEN]
            .try_into()
            .expect("12 bytes");
        Ok(SealedObject {
            header,
            nonce,
            ciphertext: bytes[SEAL_HEADER_LEN + NONCE_LEN..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        SEAL_HEADER_LEN + NONCE_LEN + self.ciphertext.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn seal(object_type: ObjectType, object_id: u64, payload: &[u8], key: &StorageKey) -> Result<SealedObject> {
    seal_with_limit(object_type, object_id, payload, key, DEFAULT_MAX_PAYLOAD)
}

pub fn seal_with_limit(
    object_type: ObjectType,
    object_id: u64,
    payload: &[u8],
    key: &StorageKey,
    max_payload: usize,
) -> Result<SealedObject> {
    if payload.len() > max_payload {
        return Err(Error::invalid(format!(
            "payload of {} bytes exceeds the {max_payload}-byte sealing limit",
            payload.len()
        )));
    }
    key.reserve_write()?;
    let header = SealedHeader {
        object_type,
        object_id,
    };
    let mut nonce = [0u8; NONCE_LEN];
    OsRng.fill_bytes(&mut nonce);
    let cipher = Aes256Gcm::new_from_slice(&key.key[..]).expect("32-byte key");
    let aad = header.to_bytes();
    let ciphertext = cipher
        .encrypt(&Nonce::from(nonce), Payload { msg: payload, aad: &aad })
        .map_err(|_| Error::invalid("encryption failed"))?;
    Ok(SealedObject {
        header,
        nonce,
        ciphertext,
    })
}

/// Decrypt and authenticate. Tampering and wrong keys are indistinguishable
/// and both surface as [`Error::AuthFailure`].
pub fn unseal(sealed: &SealedObject, key: &StorageKey) -> Result<Zeroizing<Vec<u8>>> {
    let cipher = Aes256Gcm::new_from_slice(&key.key[..]).expect("32-byte key");
    let aad = sealed.header.to_bytes();
    cipher
        .decrypt(
            &Nonce::from(sealed.nonce),
            Payload {
                msg: &sealed.ciphertext,
                aad: &aad,
            },
        )
        .map(Zeroizing::new)
        .map_err(|_| Error::AuthFailure)
}

/// Parse and unseal, also checking the header names the expected object.
pub fn unseal_bytes(bytes: &[u8], key: &StorageKey, object_type: ObjectType, object_id: u64) -> Result<Zeroizing<Vec<u8>>> {
    let sealed = SealedObject::from_bytes(bytes)?;
    let plain = unseal(&sealed, key)?;
    if sealed.header.object_type != object_type || sealed.header.object_id != object_id {
        return Err(Error::IntegrityAlarm {
            block_id: object_id as u32,
            reason: format!(
                "sealed header names {:?} {} but {:?} {} was expected",
                sealed.header.object_type, sealed.header.object_id, object_type, object_id
            ),
        });
    }
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(app: &[u8]) -> StorageKey {
        derive_storage_key(&[0x42; 32], app)
    }

    #[test]
    fn frozen_storage_key_vector() {
        // Independent HKDF-SHA256 computation (Python hashlib).
        assert_eq!(
            hex::encode(key(b"emlog.ta").bytes()),
            "f1af0845f4406361bb2f3efdd4b9c0337c622dc4464eea2918ede7871e456a35"
        );
        assert_eq!(key(b"a").bytes(), key(b"a").bytes());
    }

    #[test]
    fn round_trip_including_empty() {
        let k = key(b"app");
        for payload in [&b""[..], b"x", &[7u8; 5000]] {
            let s = seal(ObjectType::Block, 9, payload, &k).unwrap();
            assert_eq!(s.len(), payload.len() + SEAL_OVERHEAD);
            let back = SealedObject::from_bytes(&s.to_bytes()).unwrap();
            assert_eq!(&unseal(&back, &k).unwrap()[..], payload);
        }
    }

    #[test]
    fn every_byte_flip_fails() {
        let k = key(b"app");
        let bytes = seal(ObjectType::Block, 1, b"sealed block payload", &k).unwrap().to_bytes();
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x80;
            let r = SealedObject::from_bytes(&t).and_then(|s| unseal(&s, &k).map(|_| ()));
            assert!(r.is_err(), "flip at byte {i} went undetected");
        }
    }

    #[test]
    fn cross_app_unsealing_fails() {
        let apps: [&[u8]; 3] = [b"emlog.ta", b"emlog.tb", b"other"];
        for (i, a) in apps.iter().enumerate() {
            let s = seal(ObjectType::Ik, 0, b"ik material", &key(a)).unwrap();
            for (j, b) in apps.iter().enumerate() {
                let r = unseal(&s, &key(b));
                if i == j {
                    assert!(r.is_ok());
                } else {
                    assert!(matches!(r, Err(Error::AuthFailure)));
                }
            }
        }
    }

    #[test]
    fn header_mismatch_is_alarm() {
        let k = key(b"app");
        let bytes = seal(ObjectType::Block, 3, b"p", &k).unwrap().to_bytes();
        assert!(unseal_bytes(&bytes, &k, ObjectType::Block, 3).is_ok());
        assert!(matches!(
            unseal_bytes(&bytes, &k, ObjectType::Block, 4),
            Err(Error::IntegrityAlarm { .. })
        ));
    }

    #[test]
    fn limits() {
        let k = key(b"app");
        assert!(seal_with_limit(ObjectType::Block, 0, &[0; 11], &k, 10).is_err());
        k.set_writes(MAX_WRITES_PER_KEY - 1);
        assert!(seal(ObjectType::Block, 0, b"", &k).is_ok());
        assert!(matches!(seal(ObjectType::Block, 0, b"", &k), Err(Error::NonceExhausted)));
        assert!(matches!(SealedObject::from_bytes(&[0; 10]), Err(Error::Parse(_))));
    }
}
