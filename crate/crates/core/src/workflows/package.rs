use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::crypto::{verify_signature, MasterKeys, PublicKey, Signature};

/// A package body with a fixed signing domain.
pub trait PackageBody: Serialize {
    const TAG: &'static [u8];
}

/// A body signed as one canonical serialization: the domain tag, the
/// signer id and the compact JSON of the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signed<T> {
    pub body: T,
    pub signer_id: String,
    pub signature: Signature,
}

fn message<T: PackageBody>(body: &T, signer_id: &str) -> Vec<u8> {
    let json = serde_json::to_vec(body).expect("package bodies serialize");
    let mut enc = Encoder::with_tag(T::TAG);
    enc.bytes(signer_id.as_bytes()).bytes(&json);
    enc.finish()
}

impl<T: PackageBody> Signed<T> {
    pub fn sign(keys: &MasterKeys, body: T) -> Self {
        let signature = keys.sign(&message(&body, keys.signer_id()));
        Self { body, signer_id: keys.signer_id().to_owned(), signature }
    }

    pub fn verify(&self, pk: &PublicKey) -> bool {
        verify_signature(pk, &message(&self.body, &self.signer_id), &self.signature)
    }
}
