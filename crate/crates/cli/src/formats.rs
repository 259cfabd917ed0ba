use emlog_core::collector::parse::MAX_LINE_LEN;
use emlog_core::keyschedule::{KDF_SALT, KEY_LEN, LABEL_BLOCK, LABEL_FIRST_BLOCK, LABEL_IK, LABEL_MESSAGE};
use emlog_core::logchain::block::{BLOCK_HEADER_LEN, BLOCK_MAGIC, BLOCK_VERSION};
use emlog_core::logchain::identity::{CERT_LABEL, CERT_LEN, CERT_MAGIC, SIGNATURE_LEN, SIGNING_KEY_LABEL};
use emlog_core::logchain::record::{MAX_CHUNK_LEN, RECORD_LEN, TAG_LEN, TEXT_FIELD_LEN};
use emlog_core::retrieval::archive::{ARCHIVE_MAGIC, ARCHIVE_VERSION};
use emlog_core::retrieval::channel::{HELLO_NONCE_LEN, MAX_EVIDENCE_LEN, PROTOCOL_VERSION};
use emlog_core::retrieval::frame::{code, kind, FRAME_HEADER_LEN, MAX_FRAME_PAYLOAD};
use emlog_core::retrieval::message::{msg, REQUEST_LEN};
use emlog_core::sealstore::device::PROVISION_LABEL;
use emlog_core::sealstore::sealed::{SEAL_HEADER_LEN, SEAL_MAGIC, SEAL_OVERHEAD, SEAL_VERSION, STORAGE_SALT};
use emlog_core::sealstore::state::{STATE_LEN, STATE_VERSION};
use emlog_core::sealstore::SignedState;

fn text(b: &[u8]) -> String {
    format!("{:?}", String::from_utf8_lossy(b))
}

pub fn constants() -> Vec<(&'static str, String)> {
    vec![
        ("kdf.salt", text(&KDF_SALT)),
        ("kdf.label.ik", text(LABEL_IK)),
        ("kdf.label.first_block", text(LABEL_FIRST_BLOCK)),
        ("kdf.label.block", text(LABEL_BLOCK)),
        ("kdf.label.message", text(LABEL_MESSAGE)),
        ("kdf.key_len", KEY_LEN.to_string()),
        ("record.len", RECORD_LEN.to_string()),
        ("record.tag_len", TAG_LEN.to_string()),
        ("record.text_field_len", TEXT_FIELD_LEN.to_string()),
        ("record.max_chunk", MAX_CHUNK_LEN.to_string()),
        ("block.magic", text(BLOCK_MAGIC)),
        ("block.version", BLOCK_VERSION.to_string()),
        ("block.header_len", BLOCK_HEADER_LEN.to_string()),
        ("block.signature_len", SIGNATURE_LEN.to_string()),
        ("seal.magic", text(SEAL_MAGIC)),
        ("seal.version", SEAL_VERSION.to_string()),
        ("seal.header_len", SEAL_HEADER_LEN.to_string()),
        ("seal.overhead", SEAL_OVERHEAD.to_string()),
        ("seal.storage_salt", text(&STORAGE_SALT)),
        ("state.version", STATE_VERSION.to_string()),
        ("state.len", STATE_LEN.to_string()),
        ("state.signed_len", SignedState::LEN.to_string()),
        ("cert.magic", text(CERT_MAGIC)),
        ("cert.len", CERT_LEN.to_string()),
        ("armor.cert", text(CERT_LABEL.as_bytes())),
        ("armor.signing_key", text(SIGNING_KEY_LABEL.as_bytes())),
        ("armor.provisioning", text(PROVISION_LABEL.as_bytes())),
        ("archive.magic", text(ARCHIVE_MAGIC)),
        ("archive.version", ARCHIVE_VERSION.to_string()),
        ("input.max_line", MAX_LINE_LEN.to_string()),
        ("protocol.version", PROTOCOL_VERSION.to_string()),
        ("protocol.hello_nonce_len", HELLO_NONCE_LEN.to_string()),
        ("protocol.max_evidence", MAX_EVIDENCE_LEN.to_string()),
        ("frame.header_len", FRAME_HEADER_LEN.to_string()),
        ("frame.max_payload", MAX_FRAME_PAYLOAD.to_string()),
        ("frame.client_hello", format!("{:#04x}", kind::CLIENT_HELLO)),
        ("frame.server_hello", format!("{:#04x}", kind::SERVER_HELLO)),
        ("frame.client_finish", format!("{:#04x}", kind::CLIENT_FINISH)),
        ("frame.sealed", format!("{:#04x}", kind::SEALED)),
        ("frame.error", format!("{:#04x}", kind::ERROR)),
        ("msg.request", format!("{:#04x}", msg::REQUEST)),
        ("msg.request_len", REQUEST_LEN.to_string()),
        ("msg.block", format!("{:#04x}", msg::BLOCK)),
        ("msg.notice", format!("{:#04x}", msg::NOTICE)),
        ("msg.summary", format!("{:#04x}", msg::SUMMARY)),
        ("msg.alarm", format!("{:#04x}", msg::ALARM)),
        ("msg.close", format!("{:#04x}", msg::CLOSE)),
        ("error.auth_failure", code::AUTH_FAILURE.to_string()),
        ("error.negotiation_failure", code::NEGOTIATION_FAILURE.to_string()),
        ("error.replay_detected", code::REPLAY_DETECTED.to_string()),
        ("error.protocol", code::PROTOCOL.to_string()),
        ("error.integrity_alarm", code::INTEGRITY_ALARM.to_string()),
        ("error.unknown_device", code::UNKNOWN_DEVICE.to_string()),
        ("error.internal", code::INTERNAL.to_string()),
    ]
}
