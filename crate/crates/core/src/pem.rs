//! Armored text encoding for certificates, keys and provisioning bundles.
//!
//! ```text
//! -----BEGIN EMLOG CERTIFICATE-----
//! <base64, 64 columns>
//! -----END EMLOG CERTIFICATE-----
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

pub fn encode(label: &str, data: &[u8]) -> String {
    let b64 = STANDARD.encode(data);
    let mut out = format!("-----BEGIN {label}-----\n");
    for line in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(line).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

/// Every armored block in `text`, in order, as (label, bytes).
pub fn decode_all(text: &str) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(label) = line.strip_prefix("-----BEGIN ").and_then(|l| l.strip_suffix("-----")) {
            if current.is_some() {
                return Err(Error::parse("nested armor block"));
            }
            current = Some((label.to_string(), String::new()));
        } else if let Some(label) = line.strip_prefix("-----END ").and_then(|l| l.strip_suffix("-----")) {
            let (open, body) = current.take().ok_or_else(|| Error::parse("END without BEGIN"))?;
            if open != label {
                return Err(Error::parse(format!("armor label mismatch: {open} / {label}")));
            }
            let bytes = STANDARD
                .decode(body.as_bytes())
                .map_err(|e| Error::parse(format!("bad base64 in {label}: {e}")))?;
            out.push((open, bytes));
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
        }
    }
    if current.is_some() {
        return Err(Error::parse("unterminated armor block"));
    }
    Ok(out)
}

/// The single block labelled `label`.
pub fn decode_one(text: &str, label: &str) -> Result<Vec<u8>> {
    decode_all(text)?
        .into_iter()
        .find(|(l, _)| l == label)
        .map(|(_, b)| b)
        .ok_or_else(|| Error::parse(format!("no {label} block")))
}
