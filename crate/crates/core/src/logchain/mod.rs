//! Two-dimensional signed log structure: HMAC-tagged fixed-layout records
//! grouped into ECDSA-signed blocks.

pub mod block;
pub mod identity;
pub mod record;
pub mod verify;

pub use block::{sign_block, verify_block_bytes_public, verify_block_public, Block, BlockBuilder, UnsignedBlock};
pub use identity::{Certificate, DeviceId, DeviceIdentity, Role, TrustAnchors};
pub use record::{make_record, LogRecord, TextField, MAX_CHUNK_LEN, RECORD_LEN};
pub use verify::{
    verify_block_full, verify_sequence, BlockCheck, BlockSlot, BlockStatus, Finding, StateWitness, Verdict,
    VerificationReport, Verifier, VerifyMode,
};
