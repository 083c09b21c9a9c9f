//! Payload sealing at the client/server boundary.
//!
//! `Sealed` is a keyed scramble with an integrity tag, standing in for the
//! asymmetric encryption a deployment would use. It is not cryptographically
//! hiding anything; it exists so the wire path has a real encode/verify step
//! and so corrupted payloads are rejected rather than averaged in.
//!
//! Sealed layout: `"FDTS" | nonce u64 | body ⊕ keystream | sha256(key ‖ nonce ‖ body)`.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

const SEAL_MAGIC: &[u8; 4] = b"FDTS";
const TAG_LEN: usize = 32;

/// Bytes added by [`Codec::Sealed`].
pub const SEAL_OVERHEAD: usize = 4 + 8 + TAG_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Identity,
    Sealed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Codec {
    Identity,
    Sealed { key: u64 },
}

impl Codec {
    pub fn overhead(&self) -> usize {
        match self {
            Codec::Identity => 0,
            Codec::Sealed { .. } => SEAL_OVERHEAD,
        }
    }
}

fn keystream_xor(key: u64, nonce: u64, data: &mut [u8]) {
    let mut ks = vec![0u8; data.len()];
    rng::stream(key, &[rng::STREAM_SEAL, nonce]).fill_bytes(&mut ks);
    data.iter_mut().zip(ks).for_each(|(d, k)| *d ^= k);
}

fn tag(key: u64, nonce: u64, body: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(key.to_le_bytes());
    h.update(nonce.to_le_bytes());
    h.update(body);
    h.finalize().into()
}

pub fn seal(payload: &[u8], codec: Codec, nonce: u64) -> Vec<u8> {
    match codec {
        Codec::Identity => payload.to_vec(),
        Codec::Sealed { key } => {
            let mut out = Vec::with_capacity(payload.len() + SEAL_OVERHEAD);
            out.extend_from_slice(SEAL_MAGIC);
            out.extend_from_slice(&nonce.to_le_bytes());
            let mut body = payload.to_vec();
            keystream_xor(key, nonce, &mut body);
            out.extend_from_slice(&body);
            out.extend_from_slice(&tag(key, nonce, payload));
            out
        }
    }
}

pub fn unseal(bytes: &[u8], codec: Codec) -> Result<Vec<u8>> {
    match codec {
        Codec::Identity => Ok(bytes.to_vec()),
        Codec::Sealed { key } => {
            if bytes.len() < SEAL_OVERHEAD || &bytes[..4] != SEAL_MAGIC {
                return Err(Error::Integrity("sealed payload header is damaged".into()));
            }
            let nonce = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
            let (body, expected) = bytes[12..].split_at(bytes.len() - 12 - TAG_LEN);
            let mut plain = body.to_vec();
            keystream_xor(key, nonce, &mut plain);
            if tag(key, nonce, &plain)[..] != expected[..] {
                return Err(Error::Integrity(format!(
                    "checksum mismatch on {}-byte sealed payload",
                    bytes.len()
                )));
            }
            Ok(plain)
        }
    }
}
