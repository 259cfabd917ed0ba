use p256::ecdsa::VerifyingKey;

use super::identity::{verify_raw, DeviceIdentity, SIGNATURE_LEN};
use super::record::{make_record, LogRecord, RECORD_LEN, TAG_LEN};
use crate::error::{Error, Result};
use crate::keyschedule::{derive_next_message, first_message_key, BlockKey, ChainParams, MessageKey};

pub const BLOCK_MAGIC: &[u8; 4] = b"EMLB";
pub const BLOCK_VERSION: u8 = 1;
/// magic + version + block id + record count.
pub const BLOCK_HEADER_LEN: usize = 4 + 1 + 4 + 4;

/// Serialized size of a block holding `records` records.
pub const fn block_len(records: usize) -> usize {
    BLOCK_HEADER_LEN + records * RECORD_LEN + SIGNATURE_LEN
}

/// Bytes covered by the block signature:
/// `BE32(block_id) ‖ BE32(record_count) ‖ tag_0 ‖ ... ‖ tag_{n-1}`.
pub fn signing_preimage(block_id: u32, records: &[LogRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + records.len() * TAG_LEN);
    out.extend_from_slice(&block_id.to_be_bytes());
    out.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for r in records {
        out.extend_from_slice(&r.tag);
    }
    out
}

/// Records collected for a block that has not been signed yet.
#[derive(Debug, Clone)]
pub struct UnsignedBlock {
    pub block_id: u32,
    pub records: Vec<LogRecord>,
}

/// A finalized, signed block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    block_id: u32,
    records: Vec<LogRecord>,
    signature: [u8; SIGNATURE_LEN],
}

impl Block {
    /// Assemble a block from raw parts without checking anything.
    pub fn from_parts(block_id: u32, records: Vec<LogRecord>, signature: [u8; SIGNATURE_LEN]) -> Self {
        Block {
            block_id,
            records,
            signature,
        }
    }

    pub fn block_id(&self) -> u32 {
        self.block_id
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn signature(&self) -> &[u8; SIGNATURE_LEN] {
        &self.signature
    }

    pub fn into_parts(self) -> (u32, Vec<LogRecord>, [u8; SIGNATURE_LEN]) {
        (self.block_id, self.records, self.signature)
    }

    pub fn serialized_len(&self) -> usize {
        block_len(self.records.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(BLOCK_MAGIC);
        out.push(BLOCK_VERSION);
        out.extend_from_slice(&self.block_id.to_be_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_be_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.to_bytes());
        }
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < block_len(0) {
            return Err(Error::parse("block too short"));
        }
        if &bytes[..4] != BLOCK_MAGIC {
            return Err(Error::parse("bad block magic"));
        }
        if bytes[4] != BLOCK_VERSION {
            return Err(Error::parse(format!("unsupported block version {}", bytes[4])));
        }
        let block_id = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes"));
        let count = u32::from_be_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        if count == 0 {
            return Err(Error::parse("block has no records"));
        }
        let expected = count
            .checked_mul(RECORD_LEN)
            .and_then(|n| n.checked_add(BLOCK_HEADER_LEN + SIGNATURE_LEN))
            .ok_or_else(|| Error::parse("record count overflow"))?;
        if bytes.len() != expected {
            return Err(Error::parse(format!(
                "block is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let body = &bytes[BLOCK_HEADER_LEN..bytes.len() - SIGNATURE_LEN];
        let records = body
            .chunks_exact(RECORD_LEN)
            .map(LogRecord::from_bytes)
            .collect::<Result<Vec<_>>>()?;
        let signature = bytes[bytes.len() - SIGNATURE_LEN..].try_into().expect("64 bytes");
        Ok(Block {
            block_id,
            records,
            signature,
        })
    }

    pub fn signing_preimage(&self) -> Vec<u8> {
        signing_preimage(self.block_id, &self.records)
    }
}

/// Sign a completed block with the device key.
pub fn sign_block(block: UnsignedBlock, identity: &DeviceIdentity) -> Result<Block> {
    if block.records.is_empty() {
        return Err(Error::invalid(format!("block {} has no records", block.block_id)));
    }
    let signature = identity.sign(&signing_preimage(block.block_id, &block.records));
    Ok(Block {
        block_id: block.block_id,
        records: block.records,
        signature,
    })
}

/// Origin check without any chain secret: the signature over the header and
/// tags. Record text is not covered; only full verification checks it.
pub fn verify_block_public(block: &Block, pk: &VerifyingKey) -> bool {
    !block.records.is_empty() && verify_raw(pk, &block.signing_preimage(), &block.signature)
}

/// Same as [`verify_block_public`] starting from serialized bytes.
pub fn verify_block_bytes_public(bytes: &[u8], pk: &VerifyingKey) -> Result<bool> {
    Ok(verify_block_public(&Block::from_bytes(bytes)?, pk))
}

/// Device-side accumulator for one block. Holds only the key for the next
/// record; every used message key is erased as soon as its tag is computed.
pub struct BlockBuilder {
    block_id: u32,
    params: ChainParams,
    records: Vec<LogRecord>,
    next_key: Option<MessageKey>,
}

impl BlockBuilder {
    pub fn new(bk: &BlockKey, params: ChainParams) -> Result<Self> {
        Ok(BlockBuilder {
            block_id: bk.block_id(),
            params,
            records: Vec::with_capacity(params.messages_per_block as usize),
            next_key: Some(first_message_key(bk)?),
        })
    }

    pub fn block_id(&self) -> u32 {
        self.block_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() as u32 >= self.params.messages_per_block
    }

    /// Append one text chunk; returns its message id.
    pub fn append(&mut self, text: &[u8], continuation: bool) -> Result<u32> {
        let msg_id = self.records.len() as u32;
        let Some(mut key) = self.next_key.take() else {
            return Err(Error::BlockFull(self.params.messages_per_block));
        };
        let successor = if msg_id + 1 < self.params.messages_per_block {
            match derive_next_message(&key, &self.params) {
                Ok(k) => Some(k),
                Err(e) => {
                    self.next_key = Some(key);
                    return Err(e);
                }
            }
        } else {
            None
        };
        match make_record(msg_id, text, continuation, &mut key) {
            Ok(record) => {
                self.records.push(record);
                self.next_key = successor;
                Ok(msg_id)
            }
            Err(e) => {
                self.next_key = Some(key);
                Err(e)
            }
        }
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// Close the block. Any unused message key is erased.
    pub fn finish(mut self) -> UnsignedBlock {
        if let Some(k) = self.next_key.as_mut() {
            k.erase();
        }
        UnsignedBlock {
            block_id: self.block_id,
            records: std::mem::take(&mut self.records),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyschedule::{block_key_at, RootLoggingKey};
    use crate::logchain::identity::{DeviceId, Role};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn identity() -> DeviceIdentity {
        DeviceIdentity::generate(&mut ChaCha20Rng::seed_from_u64(1), Role::Device, DeviceId([7; 16]))
    }

    fn build(block_id: u32, texts: &[&[u8]]) -> Block {
        let p = ChainParams::new(4, 8).unwrap();
        let rlk = RootLoggingKey::from_bytes([3; 32]);
        let bk = block_key_at(&rlk, &p, block_id).unwrap();
        let mut b = BlockBuilder::new(&bk, p).unwrap();
        for t in texts {
            b.append(t, false).unwrap();
        }
        sign_block(b.finish(), &identity()).unwrap()
    }

    #[test]
    fn layout_size() {
        let block = build(0, &[b"a", b"b", b"c"]);
        assert_eq!(block.to_bytes().len(), 13 + 3 * 292 + 64);
        assert_eq!(&block.to_bytes()[..4], b"EMLB");
    }

    #[test]
    fn sign_and_verify_public() {
        let id = identity();
        let block = build(2, &[b"one", b"two"]);
        assert!(verify_block_public(&block, id.public_key()));
        for i in 0..block.records().len() {
            for bit in [0u8, 3, 7] {
                let (bid, mut recs, sig) = block.clone().into_parts();
                recs[i].tag[5] ^= 1 << bit;
                assert!(!verify_block_public(&Block::from_parts(bid, recs, sig), id.public_key()));
            }
        }
    }

    #[test]
    fn empty_block_cannot_be_signed() {
        let err = sign_block(
            UnsignedBlock {
                block_id: 0,
                records: vec![],
            },
            &identity(),
        );
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn block_id_is_bound_into_signature() {
        let id = identity();
        let a = build(1, &[b"same"]);
        let (_, recs, sig) = a.clone().into_parts();
        let moved = Block::from_parts(2, recs.clone(), sig);
        assert!(!verify_block_public(&moved, id.public_key()));

        // Same records, different id, signed honestly: signatures differ and
        // neither transplants onto the other.
        let b = sign_block(
            UnsignedBlock {
                block_id: 2,
                records: recs.clone(),
            },
            &id,
        )
        .unwrap();
        assert_ne!(a.signature(), b.signature());
        assert!(!verify_block_public(&Block::from_parts(1, recs, *b.signature()), id.public_key()));
    }

    #[test]
    fn text_is_outside_public_guarantee() {
        let id = identity();
        let block = build(0, &[b"hello"]);
        let (bid, mut recs, sig) = block.into_parts();
        recs[0].text = super::super::record::TextField::new(b"jello", false).unwrap();
        assert!(verify_block_public(&Block::from_parts(bid, recs, sig), id.public_key()));
    }

    #[test]
    fn truncated_signature_is_parse_error() {
        let bytes = build(0, &[b"x"]).to_bytes();
        assert!(matches!(
            verify_block_bytes_public(&bytes[..bytes.len() - 1], identity().public_key()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn builder_stops_at_m() {
        let p = ChainParams::new(1, 2).unwrap();
        let bk = block_key_at(&RootLoggingKey::from_bytes([1; 32]), &p, 0).unwrap();
        let mut b = BlockBuilder::new(&bk, p).unwrap();
        assert_eq!(b.append(b"a", false).unwrap(), 0);
        assert!(b.append(&[0u8; 300], false).is_err());
        assert_eq!(b.append(b"b", false).unwrap(), 1);
        assert!(b.is_full());
        assert!(matches!(b.append(b"c", false), Err(Error::BlockFull(2))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn block_round_trip(block_id in 0u32..64, texts in proptest::collection::vec(
            proptest::collection::vec(any::<u8>(), 0..=254), 1..=8)) {
            let refs: Vec<&[u8]> = texts.iter().map(|t| t.as_slice()).collect();
            let block = build(block_id, &refs);
            let back = Block::from_bytes(&block.to_bytes()).unwrap();
            prop_assert_eq!(back, block);
        }
    }
}
