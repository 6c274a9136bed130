//! Voter identifiers, per-field keys and the padded, key-committing field
//! cipher. A key for one (voter, column, epoch) opens only that field.
//!
//! ```text
//! cargo run --example field_encryption
//! ```

use vrlog::crypto::{ciphertext_len, decrypt_field, encrypt_field, MasterKeys};

fn main() {
    let keys = MasterKeys::generate("county-clerk");
    let voter = keys.derive_voter_id(b"DL-4471-0923").unwrap();
    println!("voter id: {voter}");
    println!("same base id, same voter id: {}", keys.derive_voter_id(b"DL-4471-0923").unwrap() == voter);

    let k1 = keys.derive_field_key(&voter, "address", 1);
    let k2 = keys.derive_field_key(&voter, "address", 2);

    let ct = encrypt_field(&k1, b"12 MAPLE ST", 96).unwrap();
    println!("ciphertext is {} bytes for any address up to 96 bytes ({})", ct.len(), ciphertext_len(96));

    let plain = decrypt_field(&k1, &ct).unwrap();
    println!("decrypts to {:?}", String::from_utf8(plain).unwrap());
    println!("next epoch's key fails: {}", decrypt_field(&k2, &ct).unwrap_err());

    // Fresh nonce on every encryption, so rewriting the same value is unlinkable.
    let again = encrypt_field(&k1, b"12 MAPLE ST", 96).unwrap();
    println!("re-encryption differs: {}", again.body != ct.body);

    println!("too long rejected: {}", encrypt_field(&k1, &[b'x'; 97], 96).is_err());
}
