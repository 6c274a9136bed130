//! Key-committing field encryption.
//!
//! ChaCha20-Poly1305 over the padded plaintext, followed by a commitment
//! tag `SHA-256(tag || key || nonce)`. Decryption checks the commitment
//! before touching the AEAD, so a ciphertext opens under exactly one key.
//!
//! Layout: `nonce (12) || aead body (pad_len + 1 + 16) || commitment (32)`.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{CryptoError, FieldKey};
use crate::codec::{CodecError, Decoder, Encoder};

const COMMIT_TAG: &[u8] = b"vrlog/key-commitment/v1";
pub const NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
pub const COMMITMENT_LEN: usize = 32;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldCiphertext {
    #[serde(with = "crate::codec::hex_bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "crate::codec::hex_bytes")]
    pub body: Vec<u8>,
    #[serde(with = "crate::codec::hex_bytes")]
    pub commitment: Vec<u8>,
}

impl std::fmt::Debug for FieldCiphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FieldCiphertext({} bytes)", self.len())
    }
}

/// Serialized size of a ciphertext for a column padded to `pad_len`.
pub fn ciphertext_len(pad_len: usize) -> usize {
    NONCE_LEN + pad_len + 1 + AEAD_TAG_LEN + COMMITMENT_LEN
}

fn commitment(key: &[u8; 32], nonce: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(COMMIT_TAG);
    h.update(key);
    h.update(nonce);
    h.finalize().into()
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// `plaintext || 0x80 || 0x00*`, always `pad_len + 1` bytes.
fn pad(plaintext: &[u8], pad_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(pad_len + 1);
    out.extend_from_slice(plaintext);
    out.push(0x80);
    out.resize(pad_len + 1, 0);
    out
}

fn unpad(mut padded: Vec<u8>) -> Result<Vec<u8>, CryptoError> {
    let marker = padded.iter().rposition(|&b| b != 0).ok_or(CryptoError::Corrupt)?;
    if padded[marker] != 0x80 {
        return Err(CryptoError::Corrupt);
    }
    padded.truncate(marker);
    Ok(padded)
}

pub fn encrypt_field(key: &FieldKey, plaintext: &[u8], pad_len: usize) -> Result<FieldCiphertext, CryptoError> {
    encrypt_field_with(&mut OsRng, key, plaintext, pad_len)
}

pub fn encrypt_field_with<R: RngCore + CryptoRng>(
    rng: &mut R,
    key: &FieldKey,
    plaintext: &[u8],
    pad_len: usize,
) -> Result<FieldCiphertext, CryptoError> {
    if pad_len == 0 {
        return Err(CryptoError::ZeroPadLength);
    }
    if plaintext.len() > pad_len {
        return Err(CryptoError::PlaintextTooLong { len: plaintext.len(), pad_len });
    }
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key));
    let body = cipher
        .encrypt(Nonce::from_slice(&nonce), pad(plaintext, pad_len).as_slice())
        .expect("in-memory encryption cannot fail");
    Ok(FieldCiphertext { nonce: nonce.to_vec(), body, commitment: commitment(&key.key, &nonce).to_vec() })
}

pub fn decrypt_field(key: &FieldKey, ct: &FieldCiphertext) -> Result<Vec<u8>, CryptoError> {
    if ct.nonce.len() != NONCE_LEN || ct.commitment.len() != COMMITMENT_LEN || ct.body.len() < AEAD_TAG_LEN + 1 {
        return Err(CryptoError::Corrupt);
    }
    if !ct_eq(&commitment(&key.key, &ct.nonce), &ct.commitment) {
        return Err(CryptoError::KeyMismatch);
    }
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key));
    let padded = cipher.decrypt(Nonce::from_slice(&ct.nonce), ct.body.as_slice()).map_err(|_| CryptoError::Corrupt)?;
    unpad(padded)
}

impl FieldCiphertext {
    pub fn len(&self) -> usize {
        self.nonce.len() + self.body.len() + self.commitment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&self.nonce).bytes(&self.body).bytes(&self.commitment);
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self { nonce: dec.bytes()?.to_vec(), body: dec.bytes()?.to_vec(), commitment: dec.bytes()?.to_vec() })
    }
}
