//! `MMTK` binary token files.
//!
//! Layout, little-endian: magic `b"MMTK"`, `u16` version, `u16` vocabulary
//! size, `u64` token count, then one `u16` per token.

use std::fs;
use std::path::Path;

use crate::quantizer::TokenSequence;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMTK";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 8;

pub fn encode_tokens(ts: &TokenSequence, vocab_size: usize) -> Result<Vec<u8>> {
    let vocab = u16::try_from(vocab_size)
        .map_err(|_| Error::TokenFile(format!("vocabulary {vocab_size} exceeds u16")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * ts.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.to_le_bytes());
    out.extend_from_slice(&(ts.len() as u64).to_le_bytes());
    for &t in &ts.tokens {
        if t as usize >= vocab_size {
            return Err(Error::TokenFile(format!("token {t} outside vocabulary {vocab_size}")));
        }
        out.extend_from_slice(&(t as u16).to_le_bytes());
    }
    Ok(out)
}

/// Returns the tokens and the vocabulary size recorded in the header.
pub fn decode_tokens(bytes: &[u8]) -> Result<(TokenSequence, usize)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::TokenFile("missing MMTK header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::TokenFile(format!("unsupported version {version}")));
    }
    let vocab = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count.checked_mul(2).unwrap_or(usize::MAX) {
        return Err(Error::TokenFile(format!(
            "header declares {count} tokens, body holds {} bytes",
            body.len()
        )));
    }
    let tokens = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
        .collect();
    Ok((TokenSequence::new(tokens), vocab))
}

pub fn write_token_file<P: AsRef<Path>>(path: P, ts: &TokenSequence, vocab_size: usize) -> Result<()> {
    fs::write(path, encode_tokens(ts, vocab_size)?)?;
    Ok(())
}

pub fn read_token_file<P: AsRef<Path>>(path: P) -> Result<(TokenSequence, usize)> {
    decode_tokens(&fs::read(path)?)
}
