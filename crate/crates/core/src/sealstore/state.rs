use p256::ecdsa::VerifyingKey;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keyschedule::ChainParams;
use crate::logchain::identity::{verify_raw, DeviceId, DeviceIdentity, SIGNATURE_LEN};
use crate::logchain::Block;

pub const STATE_VERSION: u8 = 1;
pub const STATE_LEN: usize = 58;

const HAS_LATEST: u8 = 0x01;
const HAS_DELIVERED: u8 = 0x02;

/// Position of the newest committed block plus a monotonic commit counter.
/// This is the witness that lets a verifier notice deleted tail blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainState {
    pub params: ChainParams,
    pub latest: Option<LatestBlock>,
    pub sealed_block_count: u64,
    pub total_records: u64,
    pub commit_counter: u64,
    /// Highest block id handed to a verifier, if any.
    pub delivered_watermark: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatestBlock {
    pub group_id: u32,
    pub block_id: u32,
    pub msg_count: u32,
}

impl ChainState {
    pub fn genesis(params: ChainParams) -> Self {
        ChainState {
            params,
            latest: None,
            sealed_block_count: 0,
            total_records: 0,
            commit_counter: 0,
            delivered_watermark: None,
        }
    }

    pub fn latest_block(&self) -> Option<u32> {
        self.latest.map(|l| l.block_id)
    }

    /// Id the next committed block must carry.
    pub fn next_block_id(&self) -> u32 {
        self.latest.map_or(0, |l| l.block_id + 1)
    }

    /// State after committing `block`. Rejects anything but the successor.
    pub fn advance(&self, block: &Block) -> Result<ChainState> {
        let expected = match self.latest {
            None => 0,
            Some(l) => l
                .block_id
                .checked_add(1)
                .ok_or_else(|| Error::invalid("block id space exhausted"))?,
        };
        if block.block_id() != expected {
            return Err(Error::invalid(format!(
                "out-of-order commit: block {} but next is {expected}",
                block.block_id()
            )));
        }
        let mut next = *self;
        next.latest = Some(LatestBlock {
            group_id: self.params.group_of(expected),
            block_id: expected,
            msg_count: block.records().len() as u32,
        });
        next.sealed_block_count += 1;
        next.total_records += block.records().len() as u64;
        next.commit_counter += 1;
        Ok(next)
    }

    pub fn with_delivered(&self, block_id: u32) -> ChainState {
        let mut next = *self;
        next.delivered_watermark = Some(self.delivered_watermark.map_or(block_id, |w| w.max(block_id)));
        next.commit_counter += 1;
        next
    }

    pub fn to_bytes(&self) -> [u8; STATE_LEN] {
        let mut out = [0u8; STATE_LEN];
        out[0] = STATE_VERSION;
        let mut flags = 0;
        if self.latest.is_some() {
            flags |= HAS_LATEST;
        }
        if self.delivered_watermark.is_some() {
            flags |= HAS_DELIVERED;
        }
        out[1] = flags;
        let latest = self.latest.unwrap_or(LatestBlock {
            group_id: 0,
            block_id: 0,
            msg_count: 0,
        });
        out[2..6].copy_from_slice(&latest.group_id.to_be_bytes());
        out[6..10].copy_from_slice(&latest.block_id.to_be_bytes());
        out[10..14].copy_from_slice(&latest.msg_count.to_be_bytes());
        out[14..22].copy_from_slice(&self.sealed_block_count.to_be_bytes());
        out[22..30].copy_from_slice(&self.total_records.to_be_bytes());
        out[30..38].copy_from_slice(&self.commit_counter.to_be_bytes());
        out[38..42].copy_from_slice(&self.delivered_watermark.unwrap_or(0).to_be_bytes());
        out[42..46].copy_from_slice(&self.params.blocks_per_group.to_be_bytes());
        out[46..50].copy_from_slice(&self.params.messages_per_block.to_be_bytes());
        // 50..58 reserved
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != STATE_LEN {
            return Err(Error::parse(format!("chain state is {} bytes, expected {STATE_LEN}", bytes.len())));
        }
        if bytes[0] != STATE_VERSION {
            return Err(Error::parse(format!("unsupported chain state version {}", bytes[0])));
        }
        let flags = bytes[1];
        if flags & !(HAS_LATEST | HAS_DELIVERED) != 0 || bytes[50..].iter().any(|b| *b != 0) {
            return Err(Error::parse("reserved chain state bits set"));
        }
        let be32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let be64 = |o: usize| u64::from_be_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let params = ChainParams::new(be32(42), be32(46)).map_err(|_| Error::parse("invalid chain params"))?;
        let latest = (flags & HAS_LATEST != 0).then(|| LatestBlock {
            group_id: be32(2),
            block_id: be32(6),
            msg_count: be32(10),
        });
        Ok(ChainState {
            params,
            latest,
            sealed_block_count: be64(14),
            total_records: be64(22),
            commit_counter: be64(30),
            delivered_watermark: (flags & HAS_DELIVERED != 0).then(|| be32(38)),
        })
    }
}

const SIGNED_STATE_CONTEXT: &[u8] = b"EMLOG-STATE-v1";

/// Chain state signed by the device key, as carried in retrieval summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedState {
    pub device_id: DeviceId,
    pub state: ChainState,
    pub signature: [u8; SIGNATURE_LEN],
}

impl SignedState {
    fn preimage(device_id: &DeviceId, state: &ChainState) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIGNED_STATE_CONTEXT.len() + 16 + STATE_LEN);
        out.extend_from_slice(SIGNED_STATE_CONTEXT);
        out.extend_from_slice(&device_id.0);
        out.extend_from_slice(&state.to_bytes());
        out
    }

    pub fn sign(state: ChainState, identity: &DeviceIdentity) -> Self {
        let device_id = identity.device_id();
        let signature = identity.sign(&Self::preimage(&device_id, &state));
        SignedState {
            device_id,
            state,
            signature,
        }
    }

    pub fn verify(&self, pk: &VerifyingKey) -> bool {
        verify_raw(pk, &Self::preimage(&self.device_id, &self.state), &self.signature)
    }

    pub const LEN: usize = 16 + STATE_LEN + SIGNATURE_LEN;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.device_id.0);
        out.extend_from_slice(&self.state.to_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::LEN {
            return Err(Error::parse("signed state has wrong length"));
        }
        Ok(SignedState {
            device_id: DeviceId(bytes[..16].try_into().expect("16 bytes")),
            state: ChainState::from_bytes(&bytes[16..16 + STATE_LEN])?,
            signature: bytes[16 + STATE_LEN..].try_into().expect("64 bytes"),
        })
    }
}
