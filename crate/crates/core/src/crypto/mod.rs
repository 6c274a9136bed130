//! Key hierarchy and field-level cryptography.
//!
//! Voter IDs are HMAC-SHA256 outputs under the PRF key. Field keys come from
//! HKDF-SHA256 under the KDF key with a length-prefixed
//! `(voter id, column, epoch)` context. Commitments, records and packages
//! are signed with Ed25519.

mod field;
mod keys;

pub use field::{
    ciphertext_len, decrypt_field, encrypt_field, encrypt_field_with, FieldCiphertext, AEAD_TAG_LEN,
    COMMITMENT_LEN, NONCE_LEN,
};
pub use keys::{verify_signature, FieldKey, KeyContext, MasterKeys, PublicKey, Signature, VoterId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("base identifier is empty")]
    EmptyBaseId,
    #[error("plaintext of {len} bytes exceeds pad length {pad_len}")]
    PlaintextTooLong { len: usize, pad_len: usize },
    #[error("pad length must be positive")]
    ZeroPadLength,
    #[error("key does not match ciphertext commitment")]
    KeyMismatch,
    #[error("ciphertext is corrupt")]
    Corrupt,
    #[error("malformed key material")]
    BadKeyEncoding,
    #[error("keystore already exists")]
    KeystoreExists,
    #[error("keystore i/o: {0}")]
    Keystore(String),
}
