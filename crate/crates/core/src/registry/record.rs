use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{ColumnSchema, PublicPredicate, RegistryError};
use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{encrypt_field_with, verify_signature, FieldCiphertext, MasterKeys, PublicKey, Signature, VoterId};
use crate::merkle::Digest;
use crate::pprl::{encode_field, Encoding, EncodingParams};

const RECORD_TAG: &[u8] = b"vrlog/record/v1";
const RECORD_SIG_TAG: &[u8] = b"vrlog/record-sig/v1";
const MUTATION_TAG: &[u8] = b"vrlog/mutation/v1";
const MAP_ENTRY_TAG: &[u8] = b"vrlog/map-entry/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Add,
    Update,
    Deregister,
}

impl Opcode {
    fn code(self) -> u8 {
        match self {
            Opcode::Add => 0,
            Opcode::Update => 1,
            Opcode::Deregister => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, CodecError> {
        Ok(match c {
            0 => Opcode::Add,
            1 => Opcode::Update,
            2 => Opcode::Deregister,
            _ => return Err(CodecError::Invalid("opcode")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Public {
        #[serde(with = "crate::codec::hex_bytes")]
        value: Vec<u8>,
    },
    Sealed {
        ciphertext: FieldCiphertext,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        encoding: Option<Encoding>,
    },
}

impl Slot {
    pub fn ciphertext(&self) -> Option<&FieldCiphertext> {
        match self {
            Slot::Sealed { ciphertext, .. } => Some(ciphertext),
            Slot::Public { .. } => None,
        }
    }

    pub fn encoding(&self) -> Option<&Encoding> {
        match self {
            Slot::Sealed { encoding, .. } => encoding.as_ref(),
            Slot::Public { .. } => None,
        }
    }

    pub fn is_sealed(&self) -> bool {
        matches!(self, Slot::Sealed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// Seconds since the Unix epoch at enqueue time.
    pub timestamp: u64,
    pub epoch: u64,
    pub opcode: Opcode,
    pub signer_id: String,
    /// Jurisdiction-specific data. Never interpreted.
    #[serde(with = "crate::codec::hex_bytes", default)]
    pub blob: Vec<u8>,
}

/// One epoch's obfuscated snapshot of a voter's row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub voter_id: VoterId,
    pub slots: Vec<Slot>,
    pub meta: RecordMeta,
    pub signature: Signature,
}

impl UpdateRecord {
    fn encode_body(&self, enc: &mut Encoder) {
        enc.digest(&self.voter_id.0).u32(self.slots.len() as u32);
        for slot in &self.slots {
            match slot {
                Slot::Public { value } => {
                    enc.u8(0).bytes(value);
                }
                Slot::Sealed { ciphertext, encoding: None } => {
                    enc.u8(1);
                    ciphertext.encode_into(enc);
                }
                Slot::Sealed { ciphertext, encoding: Some(e) } => {
                    enc.u8(2);
                    ciphertext.encode_into(enc);
                    enc.bytes(e.column.as_bytes()).u32(e.bits as u32).bytes(&e.to_bytes());
                }
            }
        }
        let m = &self.meta;
        enc.u64(m.timestamp).u64(m.epoch).u8(m.opcode.code()).bytes(m.signer_id.as_bytes()).bytes(&m.blob);
    }

    /// Bytes covered by the signer's signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(RECORD_SIG_TAG);
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(RECORD_TAG);
        self.encode_body(&mut enc);
        enc.bytes(&self.signature.0);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(RECORD_TAG)?;
        let voter_id = VoterId(dec.digest()?);
        let n = dec.u32()? as usize;
        if n > bytes.len() {
            return Err(CodecError::Truncated);
        }
        let mut slots = Vec::with_capacity(n);
        for _ in 0..n {
            slots.push(match dec.u8()? {
                0 => Slot::Public { value: dec.bytes()?.to_vec() },
                1 => Slot::Sealed { ciphertext: FieldCiphertext::decode_from(&mut dec)?, encoding: None },
                2 => {
                    let ciphertext = FieldCiphertext::decode_from(&mut dec)?;
                    let column = String::from_utf8(dec.bytes()?.to_vec()).map_err(|_| CodecError::Invalid("utf-8"))?;
                    let bits = dec.u32()? as usize;
                    let e = Encoding::from_bytes(column, bits, dec.bytes()?).ok_or(CodecError::Invalid("encoding"))?;
                    Slot::Sealed { ciphertext, encoding: Some(e) }
                }
                _ => return Err(CodecError::Invalid("slot kind")),
            });
        }
        let timestamp = dec.u64()?;
        let epoch = dec.u64()?;
        let opcode = Opcode::from_code(dec.u8()?)?;
        let signer_id = String::from_utf8(dec.bytes()?.to_vec()).map_err(|_| CodecError::Invalid("utf-8"))?;
        let blob = dec.bytes()?.to_vec();
        let sig: [u8; 64] = dec.bytes()?.try_into().map_err(|_| CodecError::Invalid("signature length"))?;
        dec.finish()?;
        Ok(Self {
            voter_id,
            slots,
            meta: RecordMeta { timestamp, epoch, opcode, signer_id, blob },
            signature: Signature(sig),
        })
    }

    pub fn digest(&self) -> Digest {
        Digest::hash(&self.to_bytes())
    }

    pub fn verify_signature(&self, pk: &PublicKey) -> bool {
        verify_signature(pk, &self.signing_bytes(), &self.signature)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Everything a record build needs besides the voter's data.
pub struct RecordContext<'a> {
    pub keys: &'a MasterKeys,
    pub schema: &'a ColumnSchema,
    pub predicate: &'a PublicPredicate,
    pub encoding: Option<&'a EncodingParams>,
}

/// Builds and signs a record. Every sensitive field is freshly encrypted
/// under its `(voter, column, epoch)` key, changed or not.
#[allow(clippy::too_many_arguments)]
pub fn build_update_record<R: RngCore + CryptoRng>(
    rng: &mut R,
    ctx: &RecordContext<'_>,
    voter_id: VoterId,
    data: &[String],
    epoch: u64,
    opcode: Opcode,
    timestamp: u64,
    blob: Vec<u8>,
) -> Result<UpdateRecord, RegistryError> {
    if data.len() != ctx.schema.len() {
        return Err(RegistryError::SchemaMismatch(format!("expected {} fields, got {}", ctx.schema.len(), data.len())));
    }
    let mut slots = Vec::with_capacity(data.len());
    for (i, (col, value)) in ctx.schema.columns().iter().zip(data).enumerate() {
        if value.len() > col.pad_len {
            return Err(RegistryError::SchemaMismatch(format!(
                "{} is {} bytes, pad length is {}",
                col.label,
                value.len(),
                col.pad_len
            )));
        }
        if ctx.predicate.is_public(ctx.schema, &voter_id, i) {
            slots.push(Slot::Public { value: value.as_bytes().to_vec() });
        } else {
            let key = ctx.keys.derive_field_key(&voter_id, &col.label, epoch);
            let ciphertext = encrypt_field_with(rng, &key, value.as_bytes(), col.pad_len)?;
            let encoding = ctx.encoding.map(|p| encode_field(&col.label, value, p));
            slots.push(Slot::Sealed { ciphertext, encoding });
        }
    }
    let mut record = UpdateRecord {
        voter_id,
        slots,
        meta: RecordMeta { timestamp, epoch, opcode, signer_id: ctx.keys.signer_id().to_owned(), blob },
        signature: Signature([0; 64]),
    };
    record.signature = ctx.keys.sign(&record.signing_bytes());
    Ok(record)
}

/// Mutation-log leaf. Chains a voter's updates through `prev_index` so a
/// history can be shown complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEntry {
    pub voter_id: VoterId,
    pub epoch: u64,
    /// Zero for the voter's first mutation, then +1 each time.
    pub seq: u64,
    pub prev_index: Option<u64>,
    pub record_digest: Digest,
}

impl MutationEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(MUTATION_TAG);
        enc.digest(&self.voter_id.0).u64(self.epoch).u64(self.seq);
        match self.prev_index {
            Some(p) => enc.u8(1).u64(p),
            None => enc.u8(0),
        };
        enc.digest(&self.record_digest);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(MUTATION_TAG)?;
        let voter_id = VoterId(dec.digest()?);
        let epoch = dec.u64()?;
        let seq = dec.u64()?;
        let prev_index = match dec.u8()? {
            0 => None,
            1 => Some(dec.u64()?),
            _ => return Err(CodecError::Invalid("prev flag")),
        };
        let record_digest = dec.digest()?;
        dec.finish()?;
        Ok(Self { voter_id, epoch, seq, prev_index, record_digest })
    }
}

/// Map value: points at the voter's newest mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub log_index: u64,
    pub seq: u64,
    pub epoch: u64,
    pub record_digest: Digest,
}

impl MapEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(MAP_ENTRY_TAG);
        enc.u64(self.log_index).u64(self.seq).u64(self.epoch).digest(&self.record_digest);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(MAP_ENTRY_TAG)?;
        let e = Self { log_index: dec.u64()?, seq: dec.u64()?, epoch: dec.u64()?, record_digest: dec.digest()? };
        dec.finish()?;
        Ok(e)
    }
}
