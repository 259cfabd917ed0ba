//! Block and sequence verification for auditors.
//!
//! Public verification needs only the device public key and checks block
//! signatures. Full verification re-derives the key matrix from the RLK and
//! recomputes every record tag.

use p256::ecdsa::VerifyingKey;
use serde::Serialize;

use super::block::{verify_block_public, Block};
use super::record::check_tag;
use crate::error::{Error, Result};
use crate::keyschedule::{
    derive_next_message, first_message_key, BlockKey, BlockKeyCursor, ChainParams, RootLoggingKey,
};
use crate::par::Exec;
use crate::sealstore::ChainState;

pub const NOTE_HMAC_UNVERIFIED: &str = "hmac-unverified (no RLK)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BlockStatus {
    Ok,
    BadSignature,
    BadHmac { msg_id: u32 },
    OrderViolation,
    Gap,
    SealFailure,
}

impl BlockStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, BlockStatus::Ok)
    }
}

/// Result of checking one block on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCheck {
    pub block_id: u32,
    pub signature_valid: bool,
    /// `None` when no RLK was available.
    pub bad_hmacs: Option<Vec<u32>>,
    pub record_count: usize,
}

impl BlockCheck {
    pub fn status(&self) -> BlockStatus {
        if let Some(first) = self.bad_hmacs.as_ref().and_then(|b| b.first()) {
            BlockStatus::BadHmac { msg_id: *first }
        } else if !self.signature_valid {
            BlockStatus::BadSignature
        } else {
            BlockStatus::Ok
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status().is_ok()
    }

    fn all_records_bad(&self) -> bool {
        self.bad_hmacs
            .as_ref()
            .is_some_and(|b| self.record_count > 0 && b.len() == self.record_count)
    }
}

/// Recompute every tag of `block` from its block key, by position: record
/// `i` must carry msg id `i` and the tag for coordinate (block, i).
fn bad_hmacs_with_key(block: &Block, bk: &BlockKey, params: &ChainParams) -> Vec<u32> {
    let mut bad = Vec::new();
    let mut key = first_message_key(bk).ok();
    for (pos, record) in block.records().iter().enumerate() {
        let pos = pos as u32;
        let ok = match &key {
            Some(k) => record.msg_id == pos && check_tag(k, record),
            None => false,
        };
        if !ok {
            bad.push(pos);
        }
        key = key.and_then(|k| derive_next_message(&k, params).ok());
    }
    bad
}

fn check_with_key(block: &Block, bk: Option<&Result<BlockKey>>, params: &ChainParams, pk: &VerifyingKey) -> BlockCheck {
    let bad_hmacs = bk.map(|k| match k {
        Ok(k) => bad_hmacs_with_key(block, k, params),
        Err(_) => (0..block.records().len() as u32).collect(),
    });
    BlockCheck {
        block_id: block.block_id(),
        signature_valid: verify_block_public(block, pk),
        bad_hmacs,
        record_count: block.records().len(),
    }
}

/// Re-derive the block's message keys from the RLK, recompute every tag and
/// check the signature.
pub fn verify_block_full(
    block: &Block,
    rlk: &RootLoggingKey,
    params: &ChainParams,
    pk: &VerifyingKey,
) -> Result<BlockCheck> {
    if rlk.is_destroyed() {
        return Err(Error::KeyUnavailable);
    }
    let bk = crate::keyschedule::block_key_at(rlk, params, block.block_id());
    Ok(check_with_key(block, Some(&bk), params, pk))
}

/// A position in a sequence under verification: either a parsed block or a
/// block that could not be loaded (failed unseal, malformed bytes).
#[derive(Debug, Clone)]
pub enum BlockSlot {
    Present(Block),
    Unreadable { block_id: u32, reason: String },
}

impl BlockSlot {
    pub fn block_id(&self) -> u32 {
        match self {
            BlockSlot::Present(b) => b.block_id(),
            BlockSlot::Unreadable { block_id, .. } => *block_id,
        }
    }
}

impl From<Block> for BlockSlot {
    fn from(b: Block) -> Self {
        BlockSlot::Present(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    Public,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockEntry {
    pub position: usize,
    pub block_id: u32,
    pub status: BlockStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signature_valid: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bad_hmacs: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Finding {
    /// Blocks from `first_missing` up to the committed head are absent.
    Truncation { first_missing: u32, latest_committed: u32 },
    /// No chain-state witness was available; truncation cannot be ruled out.
    MissingState,
    StateMismatch { detail: String },
    StateSignatureInvalid,
    /// Every record of every block failed its tag while signatures held:
    /// the verifier's RLK is wrong rather than the log being edited.
    WholesaleKeyMismatch,
    IntegrityAlarm { block_id: u32, reason: String },
    /// A sealed file other than a block or the state (manifest, IK) fails
    /// to unseal.
    SealedObjectUnreadable { file: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailurePoint {
    pub block_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msg_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub mode: VerifyMode,
    pub expected_start: u32,
    pub blocks_checked: usize,
    pub entries: Vec<BlockEntry>,
    pub findings: Vec<Finding>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
    pub first_failure: Option<FailurePoint>,
}

impl VerificationReport {
    pub fn new(mode: VerifyMode, expected_start: u32) -> Self {
        VerificationReport {
            mode,
            expected_start,
            blocks_checked: 0,
            entries: Vec::new(),
            findings: Vec::new(),
            notes: Vec::new(),
            verdict: Verdict::Ok,
            first_failure: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }

    pub fn has_truncation(&self) -> bool {
        self.findings.iter().any(|f| matches!(f, Finding::Truncation { .. }))
    }

    pub fn truncation_start(&self) -> Option<u32> {
        self.findings.iter().find_map(|f| match f {
            Finding::Truncation { first_missing, .. } => Some(*first_missing),
            _ => None,
        })
    }

    pub fn has_finding(&self, pred: impl Fn(&Finding) -> bool) -> bool {
        self.findings.iter().any(pred)
    }

    pub fn push_finding(&mut self, f: Finding) {
        if !self.findings.contains(&f) {
            self.findings.push(f);
        }
        self.finalize();
    }

    /// Recompute verdict and first failure from entries and findings.
    pub fn finalize(&mut self) {
        self.blocks_checked = self.entries.len();
        let first_bad = self.entries.iter().find(|e| !e.status.is_ok());
        self.first_failure = first_bad.map(|e| FailurePoint {
            block_id: e.block_id,
            msg_id: match e.status {
                BlockStatus::BadHmac { msg_id } => Some(msg_id),
                _ => None,
            },
        });
        if self.first_failure.is_none() {
            self.first_failure = self.findings.iter().find_map(|f| match f {
                Finding::Truncation { first_missing, .. } => Some(FailurePoint {
                    block_id: *first_missing,
                    msg_id: None,
                }),
                Finding::IntegrityAlarm { block_id, .. } => Some(FailurePoint {
                    block_id: *block_id,
                    msg_id: None,
                }),
                _ => None,
            });
        }
        self.verdict = if first_bad.is_none() && self.findings.is_empty() {
            Verdict::Ok
        } else {
            Verdict::Failed
        };
    }
}

/// What the verifier knows about the committed head of the chain.
#[derive(Debug, Clone, Copy)]
pub enum StateWitness<'a> {
    Present(&'a ChainState),
    Missing,
}

impl<'a> From<Option<&'a ChainState>> for StateWitness<'a> {
    fn from(s: Option<&'a ChainState>) -> Self {
        match s {
            Some(s) => StateWitness::Present(s),
            None => StateWitness::Missing,
        }
    }
}

/// Sequence verifier. Public mode without an RLK, full mode with one.
pub struct Verifier<'a> {
    pk: &'a VerifyingKey,
    params: ChainParams,
    rlk: Option<&'a RootLoggingKey>,
    exec: Exec,
}

impl<'a> Verifier<'a> {
    pub fn public(pk: &'a VerifyingKey, params: ChainParams) -> Self {
        Verifier {
            pk,
            params,
            rlk: None,
            exec: Exec::default(),
        }
    }

    pub fn full(pk: &'a VerifyingKey, params: ChainParams, rlk: &'a RootLoggingKey) -> Self {
        Verifier {
            pk,
            params,
            rlk: Some(rlk),
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn mode(&self) -> VerifyMode {
        if self.rlk.is_some() {
            VerifyMode::Full
        } else {
            VerifyMode::Public
        }
    }

    /// Per-block checks, in input order.
    pub fn check_blocks(&self, blocks: &[&Block]) -> Vec<BlockCheck> {
        let keys: Option<Vec<Result<BlockKey>>> = self.rlk.map(|rlk| {
            let mut cursor = BlockKeyCursor::new(rlk, self.params);
            blocks.iter().map(|b| cursor.key_for(b.block_id())).collect()
        });
        self.exec.map_range(0..blocks.len(), |i| {
            check_with_key(blocks[i], keys.as_ref().map(|k| &k[i]), &self.params, self.pk)
        })
    }

    pub fn verify_sequence<'s>(
        &self,
        blocks: &[Block],
        expected_start: u32,
        state: impl Into<StateWitness<'s>>,
    ) -> VerificationReport {
        let slots: Vec<BlockSlot> = blocks.iter().cloned().map(BlockSlot::Present).collect();
        self.verify_slots(&slots, expected_start, None, state.into())
    }

    /// Verify an ordered run of slots that should start at `expected_start`
    /// and, when `expected_end` is given, stop there (a ranged retrieval).
    pub fn verify_slots(
        &self,
        slots: &[BlockSlot],
        expected_start: u32,
        expected_end: Option<u32>,
        state: StateWitness<'_>,
    ) -> VerificationReport {
        let mut report = VerificationReport::new(self.mode(), expected_start);
        if self.rlk.is_none() {
            report.notes.push(NOTE_HMAC_UNVERIFIED.to_string());
        }

        let present: Vec<&Block> = slots
            .iter()
            .filter_map(|s| match s {
                BlockSlot::Present(b) => Some(b),
                BlockSlot::Unreadable { .. } => None,
            })
            .collect();
        let mut checks = self.check_blocks(&present).into_iter();

        let mut expected = Some(expected_start);
        let mut present_checks = Vec::new();
        for (pos, slot) in slots.iter().enumerate() {
            let id = slot.block_id();
            let order = match expected {
                Some(e) if id == e => None,
                Some(e) if id > e && !slots[pos + 1..].iter().any(|s| s.block_id() < id) => Some(BlockStatus::Gap),
                _ => Some(BlockStatus::OrderViolation),
            };
            expected = match expected {
                Some(e) if id < e => Some(e),
                _ => id.checked_add(1),
            };
            let entry = match slot {
                BlockSlot::Unreadable { reason, .. } => BlockEntry {
                    position: pos,
                    block_id: id,
                    status: BlockStatus::SealFailure,
                    signature_valid: None,
                    bad_hmacs: Vec::new(),
                    detail: Some(reason.clone()),
                },
                BlockSlot::Present(_) => {
                    let check = checks.next().expect("one check per present block");
                    let entry = BlockEntry {
                        position: pos,
                        block_id: id,
                        status: order.unwrap_or_else(|| check.status()),
                        signature_valid: Some(check.signature_valid),
                        bad_hmacs: check.bad_hmacs.clone().unwrap_or_default(),
                        detail: None,
                    };
                    present_checks.push(check);
                    entry
                }
            };
            report.entries.push(entry);
        }

        let highest = slots.iter().map(BlockSlot::block_id).max();
        match state {
            StateWitness::Missing => report.findings.push(Finding::MissingState),
            StateWitness::Present(state) => match state.latest_block() {
                Some(latest) => {
                    let target = expected_end.map_or(latest, |e| e.min(latest));
                    let first_missing = match highest {
                        None => expected_start,
                        Some(h) => h.saturating_add(1).max(expected_start),
                    };
                    if first_missing <= target {
                        report.findings.push(Finding::Truncation {
                            first_missing,
                            latest_committed: latest,
                        });
                    }
                    if let Some(h) = highest.filter(|h| *h > latest) {
                        report.findings.push(Finding::StateMismatch {
                            detail: format!("block {h} is beyond the committed head {latest}"),
                        });
                    }
                }
                None => {
                    if let Some(h) = highest {
                        report.findings.push(Finding::StateMismatch {
                            detail: format!("block {h} present but the chain state records no commits"),
                        });
                    }
                }
            },
        }

        if self.rlk.is_some() {
            let total: usize = present_checks.iter().map(|c| c.record_count).sum();
            if total >= 2
                && present_checks
                    .iter()
                    .all(|c| c.signature_valid && c.all_records_bad())
            {
                report.findings.push(Finding::WholesaleKeyMismatch);
            }
        }

        report.finalize();
        report
    }
}

/// Full verification of an ordered block list against the chain state.
pub fn verify_sequence(
    blocks: &[Block],
    expected_start: u32,
    state: Option<&ChainState>,
    rlk: &RootLoggingKey,
    params: &ChainParams,
    pk: &VerifyingKey,
) -> VerificationReport {
    Verifier::full(pk, *params, rlk).verify_sequence(blocks, expected_start, state)
}
