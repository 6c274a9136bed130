use std::fmt;
use std::path::Path;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::CryptoError;
use crate::codec::{Decoder, Encoder};
use crate::merkle::Digest;

const VOTER_ID_TAG: &[u8] = b"vrlog/voter-id/v1";
const FIELD_KEY_TAG: &[u8] = b"vrlog/field-key/v1";

/// Pseudorandom voter identifier derived from the jurisdiction's own ID.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoterId(pub Digest);

impl VoterId {
    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        Digest::from_hex(s).map(Self)
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn as_digest(&self) -> &Digest {
        &self.0
    }
}

impl fmt::Debug for VoterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VoterId({})", self.0.to_hex())
    }
}

impl fmt::Display for VoterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

/// Where a field key came from. Part of every disclosed key so recipients
/// know which slot it opens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyContext {
    pub voter_id: VoterId,
    pub column: String,
    pub epoch: u64,
}

impl KeyContext {
    /// Length-prefixed KDF info string. Injective over (id, column, epoch).
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(FIELD_KEY_TAG);
        enc.bytes(self.voter_id.0.as_bytes()).bytes(self.column.as_bytes()).u64(self.epoch);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(FIELD_KEY_TAG).ok()?;
        let id = Digest::from_slice(dec.bytes().ok()?)?;
        let column = String::from_utf8(dec.bytes().ok()?.to_vec()).ok()?;
        let epoch = dec.u64().ok()?;
        dec.finish().ok()?;
        Some(Self { voter_id: VoterId(id), column, epoch })
    }
}

/// Per-voter, per-column, per-epoch symmetric key.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldKey {
    #[serde(with = "hex32")]
    pub key: [u8; 32],
    pub context: KeyContext,
}

impl fmt::Debug for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldKey").field("context", &self.context).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicKey(#[serde(with = "hex32")] pub [u8; 32]);

impl PublicKey {
    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| CryptoError::BadKeyEncoding)?;
        Ok(Self(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(#[serde(with = "hex_sig")] pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

impl Signature {
    #[doc(hidden)]
    pub fn flip_bit(&mut self, i: usize) {
        self.0[i / 8] ^= 1 << (i % 8);
    }
}

/// Jurisdiction-held secrets: the PRF key for voter IDs, the KDF master key
/// for field keys, and the official signing key.
pub struct MasterKeys {
    id_key: [u8; 32],
    kdf_key: [u8; 32],
    signing: SigningKey,
    signer_id: String,
}

impl fmt::Debug for MasterKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterKeys")
            .field("signer_id", &self.signer_id)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct Keystore {
    #[serde(with = "hex32")]
    id_key: [u8; 32],
    #[serde(with = "hex32")]
    kdf_key: [u8; 32],
    #[serde(with = "hex32")]
    signing_seed: [u8; 32],
    signer_id: String,
}

impl MasterKeys {
    pub fn generate(signer_id: impl Into<String>) -> Self {
        let mut rng = OsRng;
        Self::generate_with(&mut rng, signer_id)
    }

    pub fn generate_with<R: RngCore + rand::CryptoRng>(rng: &mut R, signer_id: impl Into<String>) -> Self {
        let mut id_key = [0u8; 32];
        let mut kdf_key = [0u8; 32];
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut id_key);
        rng.fill_bytes(&mut kdf_key);
        rng.fill_bytes(&mut seed);
        Self { id_key, kdf_key, signing: SigningKey::from_bytes(&seed), signer_id: signer_id.into() }
    }

    pub fn signer_id(&self) -> &str {
        &self.signer_id
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }

    pub fn derive_voter_id(&self, base_id: &[u8]) -> Result<VoterId, CryptoError> {
        if base_id.is_empty() {
            return Err(CryptoError::EmptyBaseId);
        }
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.id_key).expect("any key length");
        mac.update(VOTER_ID_TAG);
        mac.update(base_id);
        Ok(VoterId(Digest::new(mac.finalize().into_bytes().into())))
    }

    /// `KDF(K_kdf, ID || column || epoch)` with a length-prefixed context.
    pub fn derive_field_key(&self, voter_id: &VoterId, column: &str, epoch: u64) -> FieldKey {
        let context = KeyContext { voter_id: *voter_id, column: column.to_owned(), epoch };
        let hk = Hkdf::<Sha256>::new(None, &self.kdf_key);
        let mut key = [0u8; 32];
        hk.expand(&context.encode(), &mut key).expect("32 bytes is a valid HKDF length");
        FieldKey { key, context }
    }

    pub fn to_json(&self) -> String {
        let ks = Keystore {
            id_key: self.id_key,
            kdf_key: self.kdf_key,
            signing_seed: self.signing.to_bytes(),
            signer_id: self.signer_id.clone(),
        };
        serde_json::to_string_pretty(&ks).expect("keystore serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CryptoError> {
        let ks: Keystore = serde_json::from_str(s).map_err(|_| CryptoError::BadKeyEncoding)?;
        Ok(Self {
            id_key: ks.id_key,
            kdf_key: ks.kdf_key,
            signing: SigningKey::from_bytes(&ks.signing_seed),
            signer_id: ks.signer_id,
        })
    }

    /// Reads a keystore. On unix, refuses files readable by group or others.
    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let meta = std::fs::metadata(path).map_err(|e| CryptoError::Keystore(e.to_string()))?;
            if meta.permissions().mode() & 0o077 != 0 {
                return Err(CryptoError::Keystore(format!(
                    "{} must not be accessible by group or others (mode {:o})",
                    path.display(),
                    meta.permissions().mode() & 0o777
                )));
            }
        }
        let s = std::fs::read_to_string(path).map_err(|e| CryptoError::Keystore(e.to_string()))?;
        Self::from_json(&s)
    }

    /// Writes the keystore with owner-only permissions. Refuses to replace an
    /// existing file unless `force` is set.
    pub fn save(&self, path: &Path, force: bool) -> Result<(), CryptoError> {
        use std::io::Write;
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true);
        if force {
            opts.create(true).truncate(true);
        } else {
            opts.create_new(true);
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => CryptoError::KeystoreExists,
            _ => CryptoError::Keystore(e.to_string()),
        })?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            f.set_permissions(std::fs::Permissions::from_mode(0o600)).map_err(|e| CryptoError::Keystore(e.to_string()))?;
        }
        f.write_all(self.to_json().as_bytes()).map_err(|e| CryptoError::Keystore(e.to_string()))?;
        Ok(())
    }
}

pub fn verify_signature(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(msg, &sig).is_ok() && vk.verify_strict(msg, &sig).is_ok()
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

mod hex_sig {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 64];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}
