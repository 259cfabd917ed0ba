//! Hierarchical forward-integrity key schedule.
//!
//! ```text
//! RLK ──► IK(g) ──► BK(g·c) ──► BK(g·c+1) ──► ... ──► BK(g·c+c-1)
//!                      │            │
//!                      ▼            ▼
//!                   MK(b,0) ──► MK(b,1) ──► ... ──► MK(b,m-1)
//! ```
//!
//! Intermediate keys are addressed by group index directly from the root
//! logging key; block keys and message keys are hash chains that can only be
//! walked forward. Every step is HKDF-SHA256 with a fixed salt and an ASCII
//! label plus big-endian coordinates in the info field.

pub mod hkdf;

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use zeroize::{Zeroize, Zeroizing};

use crate::error::{Error, Result};

/// Salt shared by every key-schedule derivation.
pub const KDF_SALT: [u8; 32] = *b"emlog key schedule salt, v1 2026";

pub const LABEL_IK: &[u8] = b"IK";
pub const LABEL_FIRST_BLOCK: &[u8] = b"BK0";
pub const LABEL_BLOCK: &[u8] = b"BK";
pub const LABEL_MESSAGE: &[u8] = b"MK";

pub const KEY_LEN: usize = 32;

/// 32 bytes of secret material that can be overwritten in place.
struct Secret {
    bytes: Zeroizing<[u8; KEY_LEN]>,
    erased: bool,
}

impl Secret {
    fn new(bytes: [u8; KEY_LEN]) -> Self {
        Secret {
            bytes: Zeroizing::new(bytes),
            erased: false,
        }
    }

    fn from_zeroizing(bytes: Zeroizing<[u8; KEY_LEN]>) -> Self {
        Secret {
            bytes,
            erased: false,
        }
    }

    fn live(&self) -> Result<&[u8; KEY_LEN]> {
        if self.erased {
            Err(Error::KeyUnavailable)
        } else {
            Ok(&self.bytes)
        }
    }

    fn erase(&mut self) {
        self.bytes.zeroize();
        self.erased = true;
    }
}

fn derive(parent: &Secret, info: &[u8]) -> Result<Secret> {
    let ikm = parent.live()?;
    Ok(Secret::from_zeroizing(hkdf::hkdf32(ikm, &KDF_SALT, info)))
}

fn label_with(label: &[u8], ids: &[u32]) -> Vec<u8> {
    let mut info = Vec::with_capacity(label.len() + 4 * ids.len());
    info.extend_from_slice(label);
    for id in ids {
        info.extend_from_slice(&id.to_be_bytes());
    }
    info
}

macro_rules! secret_accessors {
    ($ty:ident) => {
        impl $ty {
            /// Raw key buffer. Reads as all zeros once the key has been erased.
            pub fn bytes(&self) -> &[u8; KEY_LEN] {
                &self.secret.bytes
            }

            pub fn is_erased(&self) -> bool {
                self.secret.erased
            }

            /// Overwrite the key material with zeros.
            pub fn erase(&mut self) {
                self.secret.erase();
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(concat!(stringify!($ty), "(<redacted>)"))
            }
        }
    };
}

/// Device-specific root of the whole key matrix.
pub struct RootLoggingKey {
    secret: Secret,
}

impl RootLoggingKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        RootLoggingKey {
            secret: Secret::new(bytes),
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        let key = Self::from_bytes(bytes);
        bytes.zeroize();
        key
    }

    /// Irreversibly overwrite the key. Later derivations fail with
    /// [`Error::KeyUnavailable`].
    pub fn destroy(&mut self) {
        self.secret.erase();
    }

    pub fn is_destroyed(&self) -> bool {
        self.secret.erased
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.secret.bytes
    }
}

impl Clone for RootLoggingKey {
    fn clone(&self) -> Self {
        RootLoggingKey {
            secret: Secret {
                bytes: self.secret.bytes.clone(),
                erased: self.secret.erased,
            },
        }
    }
}

impl fmt::Debug for RootLoggingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RootLoggingKey(<redacted>)")
    }
}

/// Per-group key, derived from the RLK by group index.
pub struct IntermediateKey {
    group_id: u32,
    secret: Secret,
}

secret_accessors!(IntermediateKey);

impl IntermediateKey {
    /// Rebuild an IK from stored material (unsealing, or a simulated leak).
    pub fn from_parts(group_id: u32, bytes: [u8; KEY_LEN]) -> Self {
        IntermediateKey {
            group_id,
            secret: Secret::new(bytes),
        }
    }

    pub fn group_id(&self) -> u32 {
        self.group_id
    }
}

pub struct BlockKey {
    block_id: u32,
    secret: Secret,
}

secret_accessors!(BlockKey);

impl BlockKey {
    pub fn from_parts(block_id: u32, bytes: [u8; KEY_LEN]) -> Self {
        BlockKey {
            block_id,
            secret: Secret::new(bytes),
        }
    }

    pub fn block_id(&self) -> u32 {
        self.block_id
    }

    pub(crate) fn duplicate(&self) -> Result<BlockKey> {
        Ok(BlockKey {
            block_id: self.block_id,
            secret: Secret::new(*self.secret.live()?),
        })
    }
}

pub struct MessageKey {
    block_id: u32,
    msg_id: u32,
    secret: Secret,
}

secret_accessors!(MessageKey);

impl MessageKey {
    pub fn from_parts(block_id: u32, msg_id: u32, bytes: [u8; KEY_LEN]) -> Self {
        MessageKey {
            block_id,
            msg_id,
            secret: Secret::new(bytes),
        }
    }

    pub fn block_id(&self) -> u32 {
        self.block_id
    }

    pub fn msg_id(&self) -> u32 {
        self.msg_id
    }

    pub(crate) fn live(&self) -> Result<&[u8; KEY_LEN]> {
        self.secret.live()
    }
}

/// Group size `c` and block length `m`; fixed for the lifetime of a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub blocks_per_group: u32,
    pub messages_per_block: u32,
}

impl ChainParams {
    pub fn new(blocks_per_group: u32, messages_per_block: u32) -> Result<Self> {
        if blocks_per_group == 0 || messages_per_block == 0 {
            return Err(Error::invalid("chain parameters c and m must be at least 1"));
        }
        Ok(ChainParams {
            blocks_per_group,
            messages_per_block,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.blocks_per_group, self.messages_per_block).map(|_| ())
    }

    pub fn group_of(&self, block_id: u32) -> u32 {
        block_id / self.blocks_per_group
    }

    pub fn is_group_start(&self, block_id: u32) -> bool {
        block_id % self.blocks_per_group == 0
    }

    pub fn is_group_end(&self, block_id: u32) -> bool {
        block_id % self.blocks_per_group == self.blocks_per_group - 1
    }

    /// First block id served by `group_id`, if it fits in 32 bits.
    pub fn first_block_of(&self, group_id: u32) -> Option<u32> {
        group_id.checked_mul(self.blocks_per_group)
    }

    /// Inclusive block-id range owned by `group_id`.
    pub fn group_blocks(&self, group_id: u32) -> Option<std::ops::RangeInclusive<u32>> {
        let first = self.first_block_of(group_id)?;
        let last = first.saturating_add(self.blocks_per_group - 1);
        Some(first..=last)
    }

    /// Worst-case number of records held outside sealed storage: one full
    /// group of blocks plus an in-progress block one record short of full.
    pub fn volatile_record_bound(&self) -> u64 {
        let c = u64::from(self.blocks_per_group);
        let m = u64::from(self.messages_per_block);
        c * m + (m - 1)
    }
}

pub fn derive_ik(rlk: &RootLoggingKey, group_id: u32) -> Result<IntermediateKey> {
    let secret = derive(&rlk.secret, &label_with(LABEL_IK, &[group_id]))?;
    Ok(IntermediateKey { group_id, secret })
}

/// Initial block key of the group served by `ik`.
pub fn first_block_key(ik: &IntermediateKey, block_id: u32, params: &ChainParams) -> Result<BlockKey> {
    let expected = params
        .first_block_of(ik.group_id)
        .ok_or_else(|| Error::invalid(format!("group {} out of block-id range", ik.group_id)))?;
    if block_id != expected {
        return Err(Error::invalid(format!(
            "block {block_id} is not the first block of group {} (expected {expected})",
            ik.group_id
        )));
    }
    let secret = derive(&ik.secret, &label_with(LABEL_FIRST_BLOCK, &[block_id]))?;
    Ok(BlockKey { block_id, secret })
}

/// Advance the block-key chain by one block and erase the predecessor.
pub fn next_block_key(prev: &mut BlockKey, block_id: u32, params: &ChainParams) -> Result<BlockKey> {
    let next = derive_next_block(prev, block_id, params)?;
    prev.erase();
    Ok(next)
}

fn derive_next_block(prev: &BlockKey, block_id: u32, params: &ChainParams) -> Result<BlockKey> {
    if prev.block_id.checked_add(1) != Some(block_id) {
        return Err(Error::invalid(format!(
            "block {block_id} does not follow block {}",
            prev.block_id
        )));
    }
    if params.is_group_start(block_id) {
        return Err(Error::invalid(format!(
            "block {block_id} starts a new group and must be derived from that group's IK"
        )));
    }
    let secret = derive(&prev.secret, &label_with(LABEL_BLOCK, &[block_id]))?;
    Ok(BlockKey { block_id, secret })
}

/// Key for record 0 of the block. The block key itself is left intact.
pub fn first_message_key(bk: &BlockKey) -> Result<MessageKey> {
    let secret = derive(&bk.secret, &label_with(LABEL_MESSAGE, &[bk.block_id, 0]))?;
    Ok(MessageKey {
        block_id: bk.block_id,
        msg_id: 0,
        secret,
    })
}

/// Advance the message-key chain by one record and erase the predecessor.
pub fn next_message_key(prev: &mut MessageKey, params: &ChainParams) -> Result<MessageKey> {
    let next = derive_next_message(prev, params)?;
    prev.erase();
    Ok(next)
}

/// Successor derivation without touching `prev`; the caller owns erasure.
pub(crate) fn derive_next_message(prev: &MessageKey, params: &ChainParams) -> Result<MessageKey> {
    let msg_id = prev
        .msg_id
        .checked_add(1)
        .filter(|id| *id < params.messages_per_block)
        .ok_or(Error::BlockFull(params.messages_per_block))?;
    let secret = derive(&prev.secret, &label_with(LABEL_MESSAGE, &[prev.block_id, msg_id]))?;
    Ok(MessageKey {
        block_id: prev.block_id,
        msg_id,
        secret,
    })
}

/// Walk a group's block-key chain from its IK up to `block_id`.
pub fn block_key_from_ik(ik: &IntermediateKey, block_id: u32, params: &ChainParams) -> Result<BlockKey> {
    let range = params
        .group_blocks(ik.group_id)
        .ok_or_else(|| Error::invalid("group out of range"))?;
    if !range.contains(&block_id) {
        return Err(Error::invalid(format!(
            "block {block_id} is outside group {}",
            ik.group_id
        )));
    }
    let mut key = first_block_key(ik, *range.start(), params)?;
    while key.block_id < block_id {
        let next = key.block_id + 1;
        key = next_block_key(&mut key, next, params)?;
    }
    Ok(key)
}

/// Verifier-side re-derivation of any block key from the RLK.
pub fn block_key_at(rlk: &RootLoggingKey, params: &ChainParams, block_id: u32) -> Result<BlockKey> {
    let ik = derive_ik(rlk, params.group_of(block_id))?;
    block_key_from_ik(&ik, block_id, params)
}

/// First `count` message keys of a block.
pub fn message_keys(bk: &BlockKey, count: u32, params: &ChainParams) -> Result<Vec<MessageKey>> {
    if count > params.messages_per_block {
        return Err(Error::BlockFull(params.messages_per_block));
    }
    let mut keys = Vec::with_capacity(count as usize);
    if count == 0 {
        return Ok(keys);
    }
    keys.push(first_message_key(bk)?);
    while (keys.len() as u32) < count {
        let next = derive_next_message(keys.last().expect("non-empty"), params)?;
        keys.push(next);
    }
    Ok(keys)
}

/// Sequential block-key walker for verifiers scanning ascending block ids.
/// Consecutive ids inside a group cost one derivation each; anything else
/// restarts from the RLK.
pub struct BlockKeyCursor<'a> {
    rlk: &'a RootLoggingKey,
    params: ChainParams,
    current: Option<BlockKey>,
}

impl<'a> BlockKeyCursor<'a> {
    pub fn new(rlk: &'a RootLoggingKey, params: ChainParams) -> Self {
        BlockKeyCursor {
            rlk,
            params,
            current: None,
        }
    }

    pub fn key_for(&mut self, block_id: u32) -> Result<BlockKey> {
        let reuse = match &self.current {
            Some(k) if k.block_id == block_id => return k.duplicate(),
            Some(k) => {
                k.block_id < block_id && self.params.group_of(k.block_id) == self.params.group_of(block_id)
            }
            None => false,
        };
        let mut key = match (reuse, self.current.take()) {
            (true, Some(k)) => k,
            _ => block_key_at(self.rlk, &self.params, block_id)?,
        };
        while key.block_id < block_id {
            let next = key.block_id + 1;
            key = next_block_key(&mut key, next, &self.params)?;
        }
        let out = key.duplicate()?;
        self.current = Some(key);
        Ok(out)
    }
}
