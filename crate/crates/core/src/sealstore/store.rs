//! Directory of sealed objects on the untrusted file system.
//!
//! ```text
//! <sealed dir>/
//!   manifest.seal      device secrets and chain parameters
//!   state.seal         ChainState (truncation witness)
//!   ik_<group>.seal    one per started group
//!   blk_<id>.seal      one per committed block
//! ```
//!
//! Every file is written to `<name>.tmp`, flushed, renamed into place and the
//! directory flushed, so readers only ever see complete objects.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use p256::ecdsa::VerifyingKey;
use serde::Serialize;
use zeroize::Zeroize;

use super::sealed::{seal_with_limit, unseal_bytes, ObjectType, StorageKey, DEFAULT_MAX_PAYLOAD};
use super::state::ChainState;
use crate::error::{Error, Result};
use crate::keyschedule::IntermediateKey;
use crate::logchain::{verify_block_public, Block};

pub const MANIFEST_FILE: &str = "manifest.seal";
pub const STATE_FILE: &str = "state.seal";
const TMP_SUFFIX: &str = ".tmp";

pub fn block_file_name(block_id: u32) -> String {
    format!("blk_{block_id}.seal")
}

pub fn ik_file_name(group_id: u32) -> String {
    format!("ik_{group_id}.seal")
}

fn parse_ik_file_name(name: &str) -> Option<u32> {
    name.strip_prefix("ik_")?.strip_suffix(".seal")?.parse().ok()
}

fn parse_block_file_name(name: &str) -> Option<u32> {
    name.strip_prefix("blk_")?.strip_suffix(".seal")?.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    pub max_payload: usize,
    /// fsync files and the directory on every commit.
    pub durable: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            max_payload: DEFAULT_MAX_PAYLOAD,
            durable: true,
        }
    }
}

/// Steps of the atomic write protocol at which a crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitStep {
    /// Half the temp file written.
    TempPartial,
    /// Temp file complete, not yet flushed.
    TempWritten,
    /// Temp file flushed, not yet renamed.
    TempSynced,
    /// Renamed into place, directory not yet flushed.
    Renamed,
}

/// Crash simulator: fails the `crash_at`-th step (0-based) and every step
/// after it, leaving files exactly as a killed process would.
#[derive(Debug)]
pub struct FaultInjector {
    crash_at: usize,
    seen: AtomicUsize,
    fired: AtomicBool,
}

impl FaultInjector {
    pub fn crash_at(step: usize) -> Arc<Self> {
        Arc::new(FaultInjector {
            crash_at: step,
            seen: AtomicUsize::new(0),
            fired: AtomicBool::new(false),
        })
    }

    /// Never fires; counts the steps a workload goes through.
    pub fn counting() -> Arc<Self> {
        Self::crash_at(usize::MAX)
    }

    pub fn steps_seen(&self) -> usize {
        self.seen.load(Ordering::SeqCst)
    }

    pub fn fired(&self) -> bool {
        self.fired.load(Ordering::SeqCst)
    }

    fn check(&self, file: &str, step: CommitStep) -> Result<()> {
        if self.fired() {
            return Err(Error::InjectedCrash(format!("{file} after earlier crash")));
        }
        let n = self.seen.fetch_add(1, Ordering::SeqCst);
        if n == self.crash_at {
            self.fired.store(true, Ordering::SeqCst);
            return Err(Error::InjectedCrash(format!("{file} at {step:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub removed_temp_files: Vec<String>,
    pub rolled_forward: Vec<u32>,
    pub state_missing: bool,
}

pub struct LogStore {
    dir: PathBuf,
    key: StorageKey,
    config: StoreConfig,
    faults: Option<Arc<FaultInjector>>,
}

impl std::fmt::Debug for LogStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl LogStore {
    pub fn open(dir: impl Into<PathBuf>, key: StorageKey, config: StoreConfig) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LogStore {
            dir,
            key,
            config,
            faults: None,
        })
    }

    pub fn with_faults(mut self, faults: Arc<FaultInjector>) -> Self {
        self.faults = Some(faults);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn key(&self) -> &StorageKey {
        &self.key
    }

    fn step(&self, file: &str, step: CommitStep) -> Result<()> {
        match &self.faults {
            Some(f) => f.check(file, step),
            None => Ok(()),
        }
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!("{name}{TMP_SUFFIX}"));
        let dest = self.dir.join(name);
        {
            let mut f = OpenOptions::new().write(true).create(true).truncate(true).open(&tmp)?;
            let half = bytes.len() / 2;
            f.write_all(&bytes[..half])?;
            self.step(name, CommitStep::TempPartial)?;
            f.write_all(&bytes[half..])?;
            self.step(name, CommitStep::TempWritten)?;
            if self.config.durable {
                f.sync_all()?;
            }
            self.step(name, CommitStep::TempSynced)?;
        }
        fs::rename(&tmp, &dest)?;
        self.step(name, CommitStep::Renamed)?;
        if self.config.durable {
            sync_dir(&self.dir)?;
        }
        Ok(())
    }

    fn seal_to(&self, name: &str, ty: ObjectType, id: u64, payload: &[u8]) -> Result<()> {
        let sealed = seal_with_limit(ty, id, payload, &self.key, self.config.max_payload)?;
        self.write_atomic(name, &sealed.to_bytes())
    }

    fn read_sealed(&self, name: &str, ty: ObjectType, id: u64) -> Result<Option<zeroize::Zeroizing<Vec<u8>>>> {
        match fs::read(self.dir.join(name)) {
            Ok(bytes) => unseal_bytes(&bytes, &self.key, ty, id).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_manifest(&self, payload: &[u8]) -> Result<()> {
        self.seal_to(MANIFEST_FILE, ObjectType::Manifest, 0, payload)
    }

    pub fn read_manifest(&self) -> Result<Option<zeroize::Zeroizing<Vec<u8>>>> {
        self.read_sealed(MANIFEST_FILE, ObjectType::Manifest, 0)
    }

    pub fn write_state(&self, state: &ChainState) -> Result<()> {
        self.seal_to(STATE_FILE, ObjectType::State, 0, &state.to_bytes())
    }

    /// `Ok(None)` when the state file is absent.
    pub fn read_state(&self) -> Result<Option<ChainState>> {
        self.read_sealed(STATE_FILE, ObjectType::State, 0)?
            .map(|b| ChainState::from_bytes(&b))
            .transpose()
    }

    pub fn has_block(&self, block_id: u32) -> bool {
        self.dir.join(block_file_name(block_id)).exists()
    }

    pub fn block_path(&self, block_id: u32) -> PathBuf {
        self.dir.join(block_file_name(block_id))
    }

    /// Unseal and parse a committed block, checking it is the one named.
    pub fn load_block(&self, block_id: u32) -> Result<Block> {
        let bytes = fs::read(self.block_path(block_id))?;
        let plain = unseal_bytes(&bytes, &self.key, ObjectType::Block, u64::from(block_id))?;
        let block = Block::from_bytes(&plain)?;
        if block.block_id() != block_id {
            return Err(Error::IntegrityAlarm {
                block_id,
                reason: format!("file holds block {}", block.block_id()),
            });
        }
        Ok(block)
    }

    /// Ids of all block files present, ascending.
    pub fn block_ids(&self) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if let Some(id) = entry.file_name().to_str().and_then(parse_block_file_name) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    /// Seal `block` and then advance the state record past it.
    pub fn commit_block_after(&self, state: &ChainState, block: &Block) -> Result<ChainState> {
        let next = state.advance(block)?;
        let name = block_file_name(block.block_id());
        if self.dir.join(&name).exists() {
            return Err(Error::AlreadyExists(name));
        }
        self.seal_to(&name, ObjectType::Block, u64::from(block.block_id()), &block.to_bytes())?;
        self.write_state(&next)?;
        Ok(next)
    }

    /// Seal a run of consecutive blocks, then write the state record once.
    pub fn commit_blocks_after(&self, state: &ChainState, blocks: &[Block]) -> Result<ChainState> {
        let mut next = *state;
        for block in blocks {
            next = next.advance(block)?;
        }
        for block in blocks {
            let name = block_file_name(block.block_id());
            if self.dir.join(&name).exists() {
                return Err(Error::AlreadyExists(name));
            }
            self.seal_to(&name, ObjectType::Block, u64::from(block.block_id()), &block.to_bytes())?;
        }
        if !blocks.is_empty() {
            self.write_state(&next)?;
        }
        Ok(next)
    }

    /// [`commit_block_after`](Self::commit_block_after) against the persisted
    /// state; a missing state file means genesis only if no block exists yet.
    pub fn commit_block(&self, block: &Block, params: crate::keyschedule::ChainParams) -> Result<ChainState> {
        let state = match self.read_state()? {
            Some(s) => s,
            None if self.block_ids()?.is_empty() => ChainState::genesis(params),
            None => return Err(Error::MissingState),
        };
        self.commit_block_after(&state, block)
    }

    /// Seal a freshly derived IK for its group and erase it from memory.
    pub fn seal_ik(&self, ik: &mut IntermediateKey) -> Result<()> {
        let name = ik_file_name(ik.group_id());
        if self.dir.join(&name).exists() {
            return Err(Error::AlreadyExists(name));
        }
        let r = self.seal_to(&name, ObjectType::Ik, u64::from(ik.group_id()), ik.bytes());
        ik.erase();
        r
    }

    /// Group ids of all sealed IK files present, ascending.
    pub fn ik_ids(&self) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            if let Some(id) = entry?.file_name().to_str().and_then(parse_ik_file_name) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn has_ik(&self, group_id: u32) -> bool {
        self.dir.join(ik_file_name(group_id)).exists()
    }

    pub fn unseal_ik(&self, group_id: u32) -> Result<Option<IntermediateKey>> {
        let Some(plain) = self.read_sealed(&ik_file_name(group_id), ObjectType::Ik, u64::from(group_id))? else {
            return Ok(None);
        };
        let mut bytes: [u8; 32] = plain[..]
            .try_into()
            .map_err(|_| Error::parse("sealed IK has wrong length"))?;
        let ik = IntermediateKey::from_parts(group_id, bytes);
        bytes.zeroize();
        Ok(Some(ik))
    }

    /// Post-crash cleanup: drop torn temp files and adopt any complete block
    /// files beyond the state head whose signatures verify under `pk`.
    pub fn recover(&self, pk: &VerifyingKey) -> Result<RecoveryReport> {
        let mut report = RecoveryReport::default();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(TMP_SUFFIX) {
                fs::remove_file(entry.path())?;
                report.removed_temp_files.push(name);
            }
        }
        let Some(mut state) = self.read_state()? else {
            report.state_missing = true;
            return Ok(report);
        };
        loop {
            let next = state.next_block_id();
            if !self.has_block(next) {
                break;
            }
            let block = match self.load_block(next) {
                Ok(b) if verify_block_public(&b, pk) => b,
                _ => break,
            };
            state = state.advance(&block)?;
            self.write_state(&state)?;
            report.rolled_forward.push(next);
        }
        Ok(report)
    }

    /// Total bytes of every sealed file in the store.
    pub fn sealed_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if entry.file_name().to_string_lossy().ends_with(".seal") {
                total += entry.metadata()?.len();
            }
        }
        Ok(total)
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    // Directory fsync is not supported everywhere; rename atomicity still holds.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// Commit one block into the store at `store_dir`.
pub fn commit_block(
    block: &Block,
    key: StorageKey,
    store_dir: &Path,
    params: crate::keyschedule::ChainParams,
) -> Result<ChainState> {
    LogStore::open(store_dir, key, StoreConfig::default())?.commit_block(block, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyschedule::{block_key_at, derive_ik, ChainParams, RootLoggingKey};
    use crate::logchain::{sign_block, BlockBuilder, DeviceId, DeviceIdentity, Role};
    use crate::sealstore::sealed::derive_storage_key;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn store(dir: &Path) -> LogStore {
        LogStore::open(dir, derive_storage_key(&[1; 32], b"app"), StoreConfig::default()).unwrap()
    }

    fn blocks(n: u32) -> (DeviceIdentity, ChainParams, Vec<Block>) {
        let id = DeviceIdentity::generate(&mut ChaCha20Rng::seed_from_u64(4), Role::Device, DeviceId([2; 16]));
        let p = ChainParams::new(2, 3).unwrap();
        let rlk = RootLoggingKey::from_bytes([8; 32]);
        let bs = (0..n)
            .map(|b| {
                let mut builder = BlockBuilder::new(&block_key_at(&rlk, &p, b).unwrap(), p).unwrap();
                builder.append(format!("secret-entry-{b}").as_bytes(), false).unwrap();
                sign_block(builder.finish(), &id).unwrap()
            })
            .collect();
        (id, p, bs)
    }

    #[test]
    fn commit_three_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let (_, p, bs) = blocks(3);
        let mut state = None;
        for b in &bs {
            state = Some(s.commit_block(b, p).unwrap());
        }
        assert_eq!(state.unwrap().latest_block(), Some(2));
        assert_eq!(s.block_ids().unwrap(), vec![0, 1, 2]);
        assert_eq!(s.read_state().unwrap().unwrap().latest_block(), Some(2));
        assert_eq!(s.load_block(1).unwrap(), bs[1]);
    }

    #[test]
    fn out_of_order_commit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let (_, p, bs) = blocks(6);
        for b in &bs[..4] {
            s.commit_block(b, p).unwrap();
        }
        assert!(matches!(s.commit_block(&bs[5], p), Err(Error::InvalidParameter(_))));
        assert_eq!(s.read_state().unwrap().unwrap().latest_block(), Some(3));
    }

    #[test]
    fn plaintext_never_reaches_disk() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let (_, p, bs) = blocks(4);
        for b in &bs {
            s.commit_block(b, p).unwrap();
        }
        for entry in fs::read_dir(dir.path()).unwrap() {
            let bytes = fs::read(entry.unwrap().path()).unwrap();
            assert!(!bytes.windows(12).any(|w| w == b"secret-entry"));
        }
    }

    #[test]
    fn ik_sealing() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let rlk = RootLoggingKey::from_bytes([8; 32]);
        let mut ik = derive_ik(&rlk, 0).unwrap();
        let expected = *ik.bytes();
        s.seal_ik(&mut ik).unwrap();
        assert!(ik.is_erased());
        let mut again = derive_ik(&rlk, 0).unwrap();
        assert!(matches!(s.seal_ik(&mut again), Err(Error::AlreadyExists(_))));
        assert_eq!(s.unseal_ik(0).unwrap().unwrap().bytes(), &expected);
        assert!(s.unseal_ik(1).unwrap().is_none());

        let other = LogStore::open(dir.path(), derive_storage_key(&[1; 32], b"other"), StoreConfig::default()).unwrap();
        assert!(matches!(other.unseal_ik(0), Err(Error::AuthFailure)));
    }

    #[test]
    fn crash_before_state_write_rolls_forward() {
        let dir = tempfile::tempdir().unwrap();
        let (id, p, bs) = blocks(3);
        store(dir.path()).commit_block(&bs[0], p).unwrap();
        // Block 1 write takes steps 0..=3; the state write starts at step 4.
        let faulty = store(dir.path()).with_faults(FaultInjector::crash_at(4));
        assert!(matches!(faulty.commit_block(&bs[1], p), Err(Error::InjectedCrash(_))));
        let s = store(dir.path());
        assert_eq!(s.read_state().unwrap().unwrap().latest_block(), Some(0));
        let report = s.recover(id.public_key()).unwrap();
        assert_eq!(report.rolled_forward, vec![1]);
        assert_eq!(report.removed_temp_files, vec![STATE_FILE.to_string() + ".tmp"]);
        assert_eq!(s.read_state().unwrap().unwrap().latest_block(), Some(1));
        s.commit_block(&bs[2], p).unwrap();
    }

    #[test]
    fn torn_block_write_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let (id, p, bs) = blocks(2);
        let faulty = store(dir.path()).with_faults(FaultInjector::crash_at(0));
        assert!(faulty.commit_block(&bs[0], p).is_err());
        let s = store(dir.path());
        assert!(s.block_ids().unwrap().is_empty());
        let report = s.recover(id.public_key()).unwrap();
        assert!(report.state_missing);
        assert_eq!(report.removed_temp_files.len(), 1);
        s.commit_block(&bs[0], p).unwrap();
    }

    #[test]
    fn swapped_block_files_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let (_, p, bs) = blocks(2);
        for b in &bs {
            s.commit_block(b, p).unwrap();
        }
        let a = fs::read(s.block_path(0)).unwrap();
        let b = fs::read(s.block_path(1)).unwrap();
        fs::write(s.block_path(0), b).unwrap();
        fs::write(s.block_path(1), a).unwrap();
        assert!(matches!(s.load_block(0), Err(Error::IntegrityAlarm { .. })));
        assert!(matches!(s.load_block(1), Err(Error::IntegrityAlarm { .. })));
    }
}
