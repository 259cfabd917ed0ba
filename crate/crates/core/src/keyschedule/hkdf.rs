//! HKDF-SHA256 (RFC 5869) extract-then-expand.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;

pub const HASH_LEN: usize = 32;

/// Largest output the expand step can produce (255 blocks of one hash each).
pub const MAX_OUTPUT_LEN: usize = 255 * HASH_LEN;

/// `PRK = HMAC-Hash(salt, IKM)`. An empty salt is replaced by `HashLen` zeros.
pub fn extract(salt: &[u8], ikm: &[u8]) -> Zeroizing<[u8; HASH_LEN]> {
    let zero_salt = [0u8; HASH_LEN];
    let salt = if salt.is_empty() { &zero_salt[..] } else { salt };
    let mut mac = HmacSha256::new_from_slice(salt).expect("hmac accepts any key length");
    mac.update(ikm);
    let mut prk = Zeroizing::new([0u8; HASH_LEN]);
    prk.copy_from_slice(&mac.finalize().into_bytes());
    prk
}

/// `OKM = T(1) | T(2) | ...` truncated to `out_len`.
pub fn expand(prk: &[u8], info: &[u8], out_len: usize) -> Result<Zeroizing<Vec<u8>>> {
    if out_len > MAX_OUTPUT_LEN {
        return Err(Error::invalid(format!(
            "hkdf output length {out_len} exceeds {MAX_OUTPUT_LEN}"
        )));
    }
    let mut okm = Zeroizing::new(Vec::with_capacity(out_len));
    let mut previous = Zeroizing::new([0u8; HASH_LEN]);
    let mut have_previous = false;
    let mut counter = 1u8;
    while okm.len() < out_len {
        let mut mac = HmacSha256::new_from_slice(prk).expect("hmac accepts any key length");
        if have_previous {
            mac.update(&previous[..]);
        }
        mac.update(info);
        mac.update(&[counter]);
        previous.copy_from_slice(&mac.finalize().into_bytes());
        have_previous = true;
        let take = (out_len - okm.len()).min(HASH_LEN);
        okm.extend_from_slice(&previous[..take]);
        counter = counter.wrapping_add(1);
    }
    Ok(okm)
}

pub fn hkdf(ikm: &[u8], salt: &[u8], info: &[u8], out_len: usize) -> Result<Zeroizing<Vec<u8>>> {
    let prk = extract(salt, ikm);
    expand(&prk[..], info, out_len)
}

/// Fixed 32-byte output, the only size the key schedule uses.
pub(crate) fn hkdf32(ikm: &[u8], salt: &[u8], info: &[u8]) -> Zeroizing<[u8; 32]> {
    let okm = hkdf(ikm, salt, info, 32).expect("32 bytes is within the expansion limit");
    let mut out = Zeroizing::new([0u8; 32]);
    out.copy_from_slice(&okm);
    out
}
