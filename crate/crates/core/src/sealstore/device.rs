//! Device provisioning and the on-disk layout of a device store.
//!
//! ```text
//! <root>/
//!   tee/root_storage.key   emulated hardware root storage key (32 bytes)
//!   sealed/                sealed objects, see `store`
//!   device.cert            public device certificate
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use zeroize::Zeroize;

use super::sealed::derive_storage_key;
use super::state::ChainState;
use super::store::{LogStore, StoreConfig};
use crate::error::{Error, Result};
use crate::keyschedule::{ChainParams, RootLoggingKey};
use crate::logchain::identity::CERT_LEN;
use crate::logchain::{Certificate, DeviceId, DeviceIdentity, Role};
use crate::pem;

pub const ROOT_KEY_FILE: &str = "tee/root_storage.key";
pub const SEALED_DIR: &str = "sealed";
pub const DEVICE_CERT_FILE: &str = "device.cert";
pub const DEFAULT_APP_ID: &[u8] = b"emlog.ta";

const MANIFEST_MAGIC: &[u8; 4] = b"EMLM";
const MANIFEST_VERSION: u8 = 1;
const MANIFEST_LEN: usize = 4 + 1 + 4 + 4 + 32 + 32 + CERT_LEN;

pub const PROVISION_LABEL: &str = "EMLOG PROVISIONING";
const PROVISION_LEN: usize = 1 + 4 + 4 + 32 + CERT_LEN;

/// Secrets that live only inside the logger: RLK, signing key, parameters.
pub struct DeviceSecrets {
    pub params: ChainParams,
    pub rlk: RootLoggingKey,
    pub identity: DeviceIdentity,
}

impl DeviceSecrets {
    pub fn to_manifest(&self) -> zeroize::Zeroizing<Vec<u8>> {
        let mut out = zeroize::Zeroizing::new(Vec::with_capacity(MANIFEST_LEN));
        out.extend_from_slice(MANIFEST_MAGIC);
        out.push(MANIFEST_VERSION);
        out.extend_from_slice(&self.params.blocks_per_group.to_be_bytes());
        out.extend_from_slice(&self.params.messages_per_block.to_be_bytes());
        out.extend_from_slice(self.rlk.bytes());
        let mut sk = self.identity.secret_bytes();
        out.extend_from_slice(&sk);
        sk.zeroize();
        out.extend_from_slice(&self.identity.certificate().to_bytes());
        out
    }

    pub fn from_manifest(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != MANIFEST_LEN || &bytes[..4] != MANIFEST_MAGIC {
            return Err(Error::parse("malformed manifest"));
        }
        if bytes[4] != MANIFEST_VERSION {
            return Err(Error::parse(format!("unsupported manifest version {}", bytes[4])));
        }
        let be32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let params = ChainParams::new(be32(5), be32(9))?;
        let mut rlk: [u8; 32] = bytes[13..45].try_into().expect("32 bytes");
        let cert = Certificate::from_bytes(&bytes[77..])?;
        let identity = DeviceIdentity::from_secret_bytes(&bytes[45..77], cert)?;
        let secrets = DeviceSecrets {
            params,
            rlk: RootLoggingKey::from_bytes(rlk),
            identity,
        };
        rlk.zeroize();
        Ok(secrets)
    }
}

/// An opened device: its store and its secrets.
pub struct Device {
    pub root: PathBuf,
    pub store: LogStore,
    pub secrets: DeviceSecrets,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device").field("root", &self.root).finish_non_exhaustive()
    }
}

fn open_sealed_store(root: &Path, config: StoreConfig) -> Result<LogStore> {
    let key_path = root.join(ROOT_KEY_FILE);
    let mut raw = fs::read(&key_path)?;
    let root_key: [u8; 32] = raw
        .as_slice()
        .try_into()
        .map_err(|_| Error::parse("root storage key must be 32 bytes"))?;
    raw.zeroize();
    let storage_key = derive_storage_key(&root_key, DEFAULT_APP_ID);
    LogStore::open(root.join(SEALED_DIR), storage_key, config)
}

/// Create a new device store: root storage key, RLK, signing identity,
/// sealed manifest and a genesis chain state.
pub fn provision<R: RngCore + CryptoRng>(
    root: &Path,
    params: ChainParams,
    config: StoreConfig,
    rng: &mut R,
) -> Result<Device> {
    if root.join(SEALED_DIR).join(super::store::MANIFEST_FILE).exists() {
        return Err(Error::AlreadyExists(root.display().to_string()));
    }
    fs::create_dir_all(root.join("tee"))?;
    let mut root_key = [0u8; 32];
    rng.fill_bytes(&mut root_key);
    fs::write(root.join(ROOT_KEY_FILE), root_key)?;
    root_key.zeroize();

    let device_id = DeviceId::random(rng);
    let secrets = DeviceSecrets {
        params,
        rlk: RootLoggingKey::generate(rng),
        identity: DeviceIdentity::generate(rng, Role::Device, device_id),
    };
    let store = open_sealed_store(root, config)?;
    store.write_manifest(&secrets.to_manifest())?;
    store.write_state(&ChainState::genesis(params))?;
    fs::write(root.join(DEVICE_CERT_FILE), secrets.identity.certificate().to_pem())?;
    Ok(Device {
        root: root.to_path_buf(),
        store,
        secrets,
    })
}

pub fn open(root: &Path, config: StoreConfig) -> Result<Device> {
    let store = open_sealed_store(root, config)?;
    let manifest = store
        .read_manifest()?
        .ok_or_else(|| Error::invalid(format!("{} is not a device store", root.display())))?;
    let secrets = DeviceSecrets::from_manifest(&manifest)?;
    Ok(Device {
        root: root.to_path_buf(),
        store,
        secrets,
    })
}

/// What a full-mode verifier is provisioned with: RLK, parameters and the
/// device certificate.
pub struct VerifierProvision {
    pub params: ChainParams,
    pub rlk: RootLoggingKey,
    pub device_cert: Certificate,
}

impl VerifierProvision {
    pub fn from_device(secrets: &DeviceSecrets) -> Self {
        VerifierProvision {
            params: secrets.params,
            rlk: secrets.rlk.clone(),
            device_cert: secrets.identity.certificate().clone(),
        }
    }

    pub fn to_pem(&self) -> String {
        let mut body = zeroize::Zeroizing::new(Vec::with_capacity(PROVISION_LEN));
        body.push(1);
        body.extend_from_slice(&self.params.blocks_per_group.to_be_bytes());
        body.extend_from_slice(&self.params.messages_per_block.to_be_bytes());
        body.extend_from_slice(self.rlk.bytes());
        body.extend_from_slice(&self.device_cert.to_bytes());
        pem::encode(PROVISION_LABEL, &body)
    }

    pub fn from_pem(text: &str) -> Result<Self> {
        let mut body = pem::decode_one(text, PROVISION_LABEL)?;
        if body.len() != PROVISION_LEN || body[0] != 1 {
            body.zeroize();
            return Err(Error::parse("malformed provisioning bundle"));
        }
        let be32 = |o: usize| u32::from_be_bytes(body[o..o + 4].try_into().expect("4 bytes"));
        let params = ChainParams::new(be32(1), be32(5))?;
        let rlk = RootLoggingKey::from_bytes(body[9..41].try_into().expect("32 bytes"));
        let device_cert = Certificate::from_bytes(&body[41..])?;
        body.zeroize();
        Ok(VerifierProvision {
            params,
            rlk,
            device_cert,
        })
    }
}
