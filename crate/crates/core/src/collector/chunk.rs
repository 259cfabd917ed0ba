//! Splitting entries into text-field chunks and joining them back.

use crate::error::{Error, Result};
use crate::logchain::{Block, TextField, MAX_CHUNK_LEN};

/// One record's worth of an entry. `continued` means more chunks follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub payload: &'a [u8],
    pub continued: bool,
}

/// Number of records an entry body of `len` bytes occupies.
pub fn chunk_count(len: usize) -> usize {
    len.div_ceil(MAX_CHUNK_LEN).max(1)
}

/// Split `body` into payloads of at most [`MAX_CHUNK_LEN`] bytes. Every chunk
/// but the last carries the continuation flag. An empty body is one empty chunk.
pub fn chunk_body(body: &[u8]) -> Vec<Chunk<'_>> {
    if body.is_empty() {
        return vec![Chunk {
            payload: body,
            continued: false,
        }];
    }
    let n = chunk_count(body.len());
    body.chunks(MAX_CHUNK_LEN)
        .enumerate()
        .map(|(i, payload)| Chunk {
            payload,
            continued: i + 1 < n,
        })
        .collect()
}

/// Incremental inverse of [`chunk_body`] over a record stream.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: Vec<u8>,
    open: bool,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed the next text field; returns an entry when it completes one.
    pub fn push(&mut self, field: &TextField) -> Option<Vec<u8>> {
        self.partial.extend_from_slice(field.payload());
        if field.is_continued() {
            self.open = true;
            None
        } else {
            self.open = false;
            Some(std::mem::take(&mut self.partial))
        }
    }

    /// Bytes of an entry whose final chunk never arrived, if any.
    pub fn finish(self) -> Option<Vec<u8>> {
        self.open.then_some(self.partial)
    }
}

/// Entries carried by consecutive blocks. A dangling continuation at the end
/// is an error since a committed chain never ends mid-entry.
pub fn reassemble_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Result<Vec<Vec<u8>>> {
    let mut r = Reassembler::new();
    let mut out = Vec::new();
    for block in blocks {
        for record in block.records() {
            out.extend(r.push(&record.text));
        }
    }
    match r.finish() {
        None => Ok(out),
        Some(tail) => Err(Error::parse(format!(
            "record stream ends inside an entry ({} bytes pending)",
            tail.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fields(body: &[u8]) -> Vec<TextField> {
        chunk_body(body)
            .iter()
            .map(|c| TextField::new(c.payload, c.continued).unwrap())
            .collect()
    }

    #[test]
    fn boundaries() {
        let one = chunk_body(&[b'x'; 100]);
        assert_eq!(one.len(), 1);
        assert!(!one[0].continued);

        let exact = chunk_body(&[b'x'; 254]);
        assert_eq!(exact.len(), 1);
        assert!(!exact[0].continued);

        let over = chunk_body(&[b'x'; 255]);
        assert_eq!(over.len(), 2);
        assert!(over[0].continued);
        assert!(!over[1].continued);
        assert_eq!((over[0].payload.len(), over[1].payload.len()), (254, 1));

        assert_eq!(chunk_count(0), 1);
        assert_eq!(chunk_count(508), 2);
        assert_eq!(chunk_count(509), 3);
    }

    #[test]
    fn reassembler_reports_dangling_tail() {
        let mut r = Reassembler::new();
        let f = fields(&[b'y'; 300]);
        assert_eq!(r.push(&f[0]), None);
        assert_eq!(r.finish(), Some(vec![b'y'; 254]));
    }

    proptest! {
        #[test]
        fn round_trip(body in proptest::collection::vec(any::<u8>(), 0..10 * 1024)) {
            let f = fields(&body);
            prop_assert_eq!(f.len(), chunk_count(body.len()));
            let mut r = Reassembler::new();
            let mut got = Vec::new();
            for field in &f {
                got.extend(r.push(field));
            }
            prop_assert_eq!(got, vec![body]);
            prop_assert!(r.finish().is_none());
        }
    }

    #[test]
    fn ten_kib_random_body() {
        use rand::{RngCore, SeedableRng};
        let mut body = vec![0u8; 10 * 1024];
        rand_chacha::ChaCha8Rng::seed_from_u64(3).fill_bytes(&mut body);
        let mut r = Reassembler::new();
        let out: Vec<_> = fields(&body).iter().filter_map(|f| r.push(f)).collect();
        assert_eq!(out, vec![body]);
    }
}
