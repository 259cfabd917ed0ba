//! Remote retrieval: a device-side export service and a verifier-side
//! client over a mutually authenticated, encrypted frame channel.

pub mod archive;
pub mod channel;
pub mod client;
pub mod frame;
pub mod message;
pub mod service;

pub use archive::{decode_archive, encode_archive};
pub use channel::{handshake_client, handshake_server, AttestationPolicy, Endpoint, ReplayCache, SecureSession};
pub use client::{audit, Retrieved, VerifierClient};
pub use frame::{Frame, FrameIo, WireTap};
pub use message::{BlockRange, RetrievalRequest, Summary};
pub use service::{DeviceService, ServeReport, SessionReport};
