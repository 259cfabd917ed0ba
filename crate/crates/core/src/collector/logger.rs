//! The protected logger: turns entries into HMAC-tagged records, signs full
//! blocks, holds up to one group of signed blocks in RAM and seals them.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::chunk::chunk_body;
use crate::error::{Error, Result};
use crate::keyschedule::{block_key_from_ik, derive_ik, first_block_key, next_block_key, BlockKey, ChainParams};
use crate::logchain::block::{block_len, BLOCK_HEADER_LEN};
use crate::logchain::{sign_block, Block, BlockBuilder, RECORD_LEN};
use crate::sealstore::{ChainState, Device, RecoveryReport};

/// Unsealed chain data currently held in memory.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Volatile {
    pub records: u64,
    pub bytes: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoggerCounters {
    pub entries: u64,
    pub records: u64,
    pub blocks_signed: u64,
    pub groups_sealed: u64,
    pub peak_volatile: Volatile,
}

/// Where the key for the first block after opening came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySource {
    /// Fresh group: IK derived from the RLK and sealed.
    DerivedIk,
    /// Mid-group resume from the group's sealed IK.
    SealedIk,
    /// Mid-group resume with no sealed IK on disk; re-derived from the RLK.
    RederivedIk,
}

pub struct Logger {
    device: Device,
    params: ChainParams,
    state: ChainState,
    builder: Option<BlockBuilder>,
    next_id: u32,
    next_key: Option<BlockKey>,
    pending: Vec<Block>,
    epoch: Option<Duration>,
    epoch_start: Instant,
    counters: LoggerCounters,
    recovery: RecoveryReport,
    key_sources: Vec<(u32, KeySource)>,
    failed: bool,
}

impl std::fmt::Debug for Logger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Logger")
            .field("next_id", &self.next_id)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Logger {
    /// Recover the store (torn temp files, uncommitted tail blocks) and
    /// resume after the last committed block.
    pub fn open(device: Device) -> Result<Self> {
        let recovery = device.store.recover(device.secrets.identity.public_key())?;
        let params = device.secrets.params;
        let state = match device.store.read_state()? {
            Some(s) => s,
            None if device.store.block_ids()?.is_empty() => ChainState::genesis(params),
            None => return Err(Error::MissingState),
        };
        if state.params != params {
            return Err(Error::IntegrityAlarm {
                block_id: state.next_block_id(),
                reason: "chain state parameters differ from the device manifest".into(),
            });
        }
        Ok(Logger {
            params,
            next_id: state.next_block_id(),
            state,
            device,
            builder: None,
            next_key: None,
            pending: Vec::new(),
            epoch: None,
            epoch_start: Instant::now(),
            counters: LoggerCounters::default(),
            recovery,
            key_sources: Vec::new(),
            failed: false,
        })
    }

    /// Seal whatever is in memory once this much time has passed since the
    /// last seal, in addition to sealing at every group end.
    pub fn set_epoch(&mut self, epoch: Option<Duration>) {
        self.epoch = epoch;
        self.epoch_start = Instant::now();
    }

    pub fn params(&self) -> ChainParams {
        self.params
    }

    /// Last committed state.
    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn into_device(self) -> Device {
        self.device
    }

    pub fn counters(&self) -> LoggerCounters {
        self.counters
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Key provenance for every block started where no in-memory successor
    /// key existed (group starts and the first block after opening).
    pub fn key_sources(&self) -> &[(u32, KeySource)] {
        &self.key_sources
    }

    pub fn volatile(&self) -> Volatile {
        let mut v = Volatile::default();
        for b in &self.pending {
            v.records += b.records().len() as u64;
            v.bytes += b.serialized_len() as u64;
        }
        if let Some(b) = &self.builder {
            v.records += b.len() as u64;
            v.bytes += (BLOCK_HEADER_LEN + b.len() * RECORD_LEN) as u64;
        }
        v
    }

    fn note_peak(&mut self) {
        let v = self.volatile();
        let peak = &mut self.counters.peak_volatile;
        peak.records = peak.records.max(v.records);
        peak.bytes = peak.bytes.max(v.bytes);
    }

    fn check_usable(&self) -> Result<()> {
        if self.failed {
            return Err(Error::invalid("logger halted after a storage failure; reopen the device"));
        }
        Ok(())
    }

    fn start_block(&mut self) -> Result<()> {
        let id = self.next_id;
        let store = &self.device.store;
        let mut bk = match self.next_key.take() {
            Some(k) => k,
            None => {
                let group = self.params.group_of(id);
                let (bk, source) = if let Some(ik) = store.unseal_ik(group)? {
                    (block_key_from_ik(&ik, id, &self.params)?, KeySource::SealedIk)
                } else {
                    let mut ik = derive_ik(&self.device.secrets.rlk, group)?;
                    let bk = if self.params.is_group_start(id) {
                        first_block_key(&ik, id, &self.params)?
                    } else {
                        block_key_from_ik(&ik, id, &self.params)?
                    };
                    store.seal_ik(&mut ik)?;
                    let source = if self.params.is_group_start(id) {
                        KeySource::DerivedIk
                    } else {
                        KeySource::RederivedIk
                    };
                    (bk, source)
                };
                self.key_sources.push((id, source));
                bk
            }
        };
        self.builder = Some(BlockBuilder::new(&bk, self.params)?);
        if self.params.is_group_end(id) {
            bk.erase();
        } else {
            self.next_key = Some(next_block_key(&mut bk, id + 1, &self.params)?);
        }
        self.next_id = id + 1;
        Ok(())
    }

    /// Append one chunk as a record; returns `(block_id, msg_id)`.
    pub fn append_chunk(&mut self, payload: &[u8], continued: bool) -> Result<(u32, u32)> {
        self.check_usable()?;
        if self.builder.is_none() {
            self.start_block()?;
        }
        let builder = self.builder.as_mut().expect("block started");
        let msg_id = builder.append(payload, continued)?;
        let block_id = builder.block_id();
        let full = builder.is_full();
        self.counters.records += 1;
        self.note_peak();
        if full {
            self.finalize_block()?;
        }
        Ok((block_id, msg_id))
    }

    /// Log one entry, split across as many records as it needs. Returns the
    /// number of records written.
    pub fn log_entry(&mut self, body: &[u8]) -> Result<usize> {
        self.check_usable()?;
        let chunks = chunk_body(body);
        for c in &chunks {
            self.append_chunk(c.payload, c.continued)?;
        }
        self.counters.entries += 1;
        Ok(chunks.len())
    }

    fn finalize_block(&mut self) -> Result<()> {
        let Some(builder) = self.builder.take() else {
            return Ok(());
        };
        let block = sign_block(builder.finish(), &self.device.secrets.identity)?;
        let group_end = self.params.is_group_end(block.block_id());
        self.pending.push(block);
        self.counters.blocks_signed += 1;
        self.note_peak();
        if group_end {
            self.commit_pending()?;
        }
        Ok(())
    }

    fn commit_pending(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        match self.device.store.commit_blocks_after(&self.state, &self.pending) {
            Ok(next) => {
                self.state = next;
                self.pending.clear();
                self.counters.groups_sealed += 1;
                self.epoch_start = Instant::now();
                Ok(())
            }
            Err(e) => {
                self.failed = true;
                Err(e)
            }
        }
    }

    /// Sign the in-progress block even if short, then seal everything held
    /// in memory.
    pub fn flush(&mut self) -> Result<()> {
        self.check_usable()?;
        self.finalize_block()?;
        self.commit_pending()
    }

    /// Apply the epoch rule at time `now`. Returns whether a seal happened.
    pub fn poll_epoch(&mut self, now: Instant) -> Result<bool> {
        let Some(epoch) = self.epoch else {
            return Ok(false);
        };
        if now.saturating_duration_since(self.epoch_start) < epoch {
            return Ok(false);
        }
        if self.volatile().records == 0 {
            self.epoch_start = now;
            return Ok(false);
        }
        self.flush()?;
        Ok(true)
    }
}

/// Bytes one block of `records` records occupies in memory before sealing.
pub fn block_memory(records: usize) -> u64 {
    block_len(records) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logchain::verify::Finding;
    use crate::par::Exec;
    use crate::sealstore::device::{open, provision};
    use crate::sealstore::{verify_store, StoreConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fresh(dir: &std::path::Path, c: u32, m: u32) -> Logger {
        let cfg = StoreConfig {
            durable: false,
            ..StoreConfig::default()
        };
        let dev = provision(dir, ChainParams::new(c, m).unwrap(), cfg, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        Logger::open(dev).unwrap()
    }

    fn audit(logger: &Logger) -> crate::logchain::VerificationReport {
        let d = logger.device();
        verify_store(
            &d.store,
            d.secrets.identity.public_key(),
            d.secrets.params,
            Some(&d.secrets.rlk),
            Exec::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn thousand_entries_c1_m100() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 1, 100);
        for i in 0..1000 {
            l.log_entry(format!("entry {i}").as_bytes()).unwrap();
        }
        let c = l.counters();
        assert_eq!((c.blocks_signed, c.groups_sealed), (10, 10));
        assert_eq!(l.volatile(), Volatile::default());
        assert_eq!(l.state().latest_block(), Some(9));
        assert!(audit(&l).is_ok());
    }

    #[test]
    fn partial_block_on_flush() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 1, 100);
        for i in 0..95 {
            l.log_entry(format!("entry {i}").as_bytes()).unwrap();
        }
        assert_eq!(l.counters().blocks_signed, 0);
        assert_eq!(l.volatile().records, 95);
        l.flush().unwrap();
        assert_eq!(l.state().latest.unwrap().msg_count, 95);
        assert_eq!(l.device().store.load_block(0).unwrap().records().len(), 95);
        assert!(audit(&l).is_ok());
    }

    #[test]
    fn volatile_window_and_group_sealing() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 3, 4);
        for i in 0..11 {
            l.log_entry(format!("e{i}").as_bytes()).unwrap();
        }
        assert_eq!(l.state().latest_block(), None);
        assert_eq!(l.volatile().records, 11);
        for i in 11..14 {
            l.log_entry(format!("e{i}").as_bytes()).unwrap();
        }
        // Blocks 0..=2 form group 0 and were sealed together.
        assert_eq!(l.state().latest_block(), Some(2));
        assert_eq!(l.state().sealed_block_count, 3);
        assert_eq!(l.volatile().records, 2);
        assert_eq!(l.counters().peak_volatile.records, 12);
        assert_eq!(l.counters().peak_volatile.bytes, 3 * block_memory(4));
    }

    #[test]
    fn resume_from_sealed_ik_without_rlk() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 4, 2);
        for i in 0..3 {
            l.log_entry(format!("first {i}").as_bytes()).unwrap();
        }
        l.flush().unwrap();
        assert_eq!(l.key_sources(), &[(0, KeySource::DerivedIk)]);
        drop(l);

        let mut dev = open(dir.path(), StoreConfig::default()).unwrap();
        dev.secrets.rlk.destroy();
        let mut l = Logger::open(dev).unwrap();
        // Blocks 2 and 3 finish group 0 from its sealed IK.
        for i in 0..4 {
            l.log_entry(format!("second {i}").as_bytes()).unwrap();
        }
        assert_eq!(l.key_sources(), &[(2, KeySource::SealedIk)]);
        assert_eq!(l.state().latest_block(), Some(3));
        // Group 1 needs the RLK.
        assert!(matches!(l.log_entry(b"x"), Err(Error::KeyUnavailable)));

        let l = Logger::open(open(dir.path(), StoreConfig::default()).unwrap()).unwrap();
        let report = audit(&l);
        assert!(report.is_ok(), "{report:?}");
    }

    #[test]
    fn unflushed_tail_is_lost_but_store_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 2, 3);
        for i in 0..10 {
            l.log_entry(format!("e{i}").as_bytes()).unwrap();
        }
        assert_eq!(l.state().latest_block(), Some(1));
        drop(l);
        let mut l = Logger::open(open(dir.path(), StoreConfig::default()).unwrap()).unwrap();
        assert_eq!(l.state().total_records, 6);
        l.log_entry(b"after restart").unwrap();
        l.flush().unwrap();
        let report = audit(&l);
        assert!(report.is_ok(), "{report:?}");
        assert!(!report.has_finding(|f| matches!(f, Finding::Truncation { .. })));
    }

    #[test]
    fn epoch_seals_early() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 10, 10);
        l.set_epoch(Some(Duration::from_secs(1)));
        l.log_entry(b"one").unwrap();
        let now = Instant::now();
        assert!(!l.poll_epoch(now).unwrap());
        assert!(l.poll_epoch(now + Duration::from_secs(2)).unwrap());
        assert_eq!(l.state().latest.unwrap().msg_count, 1);
        assert_eq!(l.volatile().records, 0);
    }

    #[test]
    fn long_entries_span_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = fresh(dir.path(), 2, 3);
        let body: Vec<u8> = (0..1500u32).map(|i| b'a' + (i % 26) as u8).collect();
        assert_eq!(l.log_entry(&body).unwrap(), 6);
        l.log_entry(b"short").unwrap();
        l.flush().unwrap();
        let d = l.device();
        let blocks: Vec<_> = d.store.block_ids().unwrap().iter().map(|id| d.store.load_block(*id).unwrap()).collect();
        let entries = crate::collector::chunk::reassemble_blocks(&blocks).unwrap();
        assert_eq!(entries, vec![body, b"short".to_vec()]);
    }
}
