//! Sealed persistent storage: authenticated encryption of blocks, IKs and
//! chain state onto an untrusted file system, with crash-safe commits.

pub mod device;
pub mod sealed;
pub mod state;
pub mod store;

pub use device::{Device, DeviceSecrets, VerifierProvision};
pub use sealed::{derive_storage_key, seal, unseal, ObjectType, SealedObject, StorageKey};
pub use state::{ChainState, LatestBlock, SignedState};
pub use store::{commit_block, CommitStep, FaultInjector, LogStore, RecoveryReport, StoreConfig};

use p256::ecdsa::VerifyingKey;

use crate::keyschedule::{ChainParams, RootLoggingKey};
use crate::logchain::{BlockSlot, Finding, StateWitness, VerificationReport, Verifier};
use crate::par::Exec;

/// Audit a local store: unseal every block file, then verify the sequence
/// from block 0 against the sealed chain state. Block files that fail to
/// unseal show up as seal failures at their block id; an unreadable manifest
/// or sealed IK is a finding of its own.
pub fn verify_store(
    store: &LogStore,
    pk: &VerifyingKey,
    params: ChainParams,
    rlk: Option<&RootLoggingKey>,
    exec: Exec,
) -> crate::Result<VerificationReport> {
    let ids = store.block_ids()?;
    let slots: Vec<BlockSlot> = exec.map(&ids, |id| match store.load_block(*id) {
        Ok(b) => BlockSlot::Present(b),
        Err(e) => BlockSlot::Unreadable {
            block_id: *id,
            reason: e.to_string(),
        },
    });
    let (state, state_error) = match store.read_state() {
        Ok(s) => (s, None),
        Err(e) => (None, Some(e.to_string())),
    };
    let verifier = match rlk {
        Some(rlk) => Verifier::full(pk, params, rlk),
        None => Verifier::public(pk, params),
    }
    .with_exec(exec);
    let mut report = verifier.verify_slots(&slots, 0, None, StateWitness::from(state.as_ref()));
    if let Err(e) = store.read_manifest() {
        report.push_finding(Finding::SealedObjectUnreadable {
            file: store::MANIFEST_FILE.into(),
            reason: e.to_string(),
        });
    }
    for g in store.ik_ids()? {
        if let Err(e) = store.unseal_ik(g) {
            report.push_finding(Finding::SealedObjectUnreadable {
                file: store::ik_file_name(g),
                reason: e.to_string(),
            });
        }
    }
    if let Some(reason) = state_error {
        report.push_finding(Finding::StateMismatch {
            detail: format!("chain state unreadable: {reason}"),
        });
    }
    Ok(report)
}
