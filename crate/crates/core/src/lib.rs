//! Tamper-evident logging for constrained devices.
//!
//! Log entries are tagged with HMACs under a forward-only key chain, grouped
//! into ECDSA-signed blocks, sealed to disk with AES-GCM, and exported to
//! remote verifiers over a mutually authenticated channel.

pub mod bench;
pub mod collector;
pub mod error;
pub mod keyschedule;
pub mod logchain;
pub mod par;
pub mod pem;
pub mod retrieval;
pub mod sealstore;

pub use error::{Error, Result};
