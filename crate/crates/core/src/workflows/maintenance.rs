use serde::{Deserialize, Serialize};

use super::{PackageBody, Signed, WorkflowError};
use crate::crypto::{decrypt_field, FieldKey, PublicKey, VoterId};
use crate::registry::{verify_lookup, LookupProof, Registry, SnapshotCommitment, Slot};

/// Disclosure to a third party. `voters` and `proofs` have one slot per
/// requested voter; `keys` is voter-major with one slot per column. `None`
/// marks entries the third party may not see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureBody {
    pub third_party: String,
    pub epoch: u64,
    pub columns: Vec<String>,
    pub voters: Vec<Option<VoterId>>,
    pub proofs: Vec<Option<LookupProof>>,
    pub keys: Vec<Option<FieldKey>>,
}

impl PackageBody for DisclosureBody {
    const TAG: &'static [u8] = b"vrlog/disclosure/v1";
}

pub type DisclosurePackage = Signed<DisclosureBody>;

/// Builds the package for `third_party`. A voter is included only if at
/// least one column is both granted and sensitive for them; keys are
/// released exactly for those columns.
pub fn maintenance_disclose(
    reg: &Registry,
    third_party: &str,
    voter_set: &[VoterId],
) -> Result<DisclosurePackage, WorkflowError> {
    let policy = reg.policy();
    if !policy.access.knows(third_party) {
        return Err(WorkflowError::UnknownThirdParty(third_party.to_owned()));
    }
    let schema = reg.schema();
    let n = schema.len();
    let mut body = DisclosureBody {
        third_party: third_party.to_owned(),
        epoch: reg.epoch(),
        columns: schema.labels().map(str::to_owned).collect(),
        voters: Vec::with_capacity(voter_set.len()),
        proofs: Vec::with_capacity(voter_set.len()),
        keys: Vec::with_capacity(voter_set.len() * n),
    };
    for voter in voter_set {
        let lookup = reg.lookup(voter);
        let record_epoch = lookup.record.as_ref().map(|r| r.meta.epoch);
        let mut approved = false;
        for (j, col) in schema.columns().iter().enumerate() {
            let grant = record_epoch.filter(|_| {
                policy.access.allows(third_party, voter, &col.label) && !policy.public.is_public(schema, voter, j)
            });
            // The predicate may have changed since the record was built; only
            // slots that are actually sealed get a key.
            let sealed = lookup.record.as_ref().is_some_and(|r| r.slots[j].is_sealed());
            match grant.filter(|_| sealed) {
                Some(e) => {
                    approved = true;
                    body.keys.push(Some(reg.keys().derive_field_key(voter, &col.label, e)));
                }
                None => body.keys.push(None),
            }
        }
        if approved {
            body.voters.push(Some(*voter));
            body.proofs.push(Some(lookup));
        } else {
            body.voters.push(None);
            body.proofs.push(None);
        }
    }
    Ok(Signed::sign(reg.keys(), body))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum MaintenanceFailure {
    #[error("package signature does not verify")]
    BadSignature,
    #[error("proof for voter slot {index} does not verify: {reason}")]
    ProofMismatch { index: usize, reason: String },
    #[error("key for voter slot {index}, column {column} does not open the committed ciphertext")]
    KeyMismatch { index: usize, column: String },
}

/// One disclosed voter. `fields[j]` is the decrypted value of every keyed
/// column and the clear value of every public column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosedRow {
    pub voter_id: VoterId,
    pub epoch: u64,
    pub fields: Vec<Option<String>>,
}

/// Third-party side: checks the signature, every lookup proof against the
/// latest commitment, then opens the keyed slots.
pub fn maintenance_receive(
    package: &DisclosurePackage,
    commitment: &SnapshotCommitment,
    pk: &PublicKey,
) -> Result<Vec<DisclosedRow>, MaintenanceFailure> {
    if !package.verify(pk) {
        return Err(MaintenanceFailure::BadSignature);
    }
    let b = &package.body;
    let n = b.columns.len();
    let shape = |reason: &str| MaintenanceFailure::ProofMismatch { index: 0, reason: reason.to_owned() };
    if b.proofs.len() != b.voters.len() || b.keys.len() != b.voters.len() * n {
        return Err(shape("package lists have inconsistent lengths"));
    }
    let mut rows = Vec::new();
    for (i, voter) in b.voters.iter().enumerate() {
        let keys = &b.keys[i * n..(i + 1) * n];
        let Some(voter) = voter else {
            if b.proofs[i].is_some() || keys.iter().any(Option::is_some) {
                return Err(MaintenanceFailure::ProofMismatch { index: i, reason: "entries for an omitted voter".into() });
            }
            continue;
        };
        let mismatch = |reason: String| MaintenanceFailure::ProofMismatch { index: i, reason };
        let proof = b.proofs[i].as_ref().ok_or_else(|| mismatch("missing proof".into()))?;
        if proof.voter_id != *voter {
            return Err(mismatch("proof is for another voter".into()));
        }
        verify_lookup(commitment, pk, proof).map_err(|e| mismatch(e.to_string()))?;
        let record = proof.record.as_ref().ok_or_else(|| mismatch("voter is not in the registry".into()))?;
        if record.slots.len() != n {
            return Err(mismatch("record does not match the column list".into()));
        }
        let mut fields = Vec::with_capacity(n);
        for (j, (slot, key)) in record.slots.iter().zip(keys).enumerate() {
            let key_mismatch = || MaintenanceFailure::KeyMismatch { index: i, column: b.columns[j].clone() };
            fields.push(match (slot, key) {
                (Slot::Public { value }, None) => Some(String::from_utf8_lossy(value).into_owned()),
                (Slot::Sealed { .. }, None) => None,
                (Slot::Public { .. }, Some(_)) => return Err(key_mismatch()),
                (Slot::Sealed { ciphertext, .. }, Some(k)) => {
                    let ctx = &k.context;
                    if ctx.voter_id != *voter || ctx.column != b.columns[j] || ctx.epoch != record.meta.epoch {
                        return Err(key_mismatch());
                    }
                    let pt = decrypt_field(k, ciphertext).map_err(|_| key_mismatch())?;
                    Some(String::from_utf8(pt).map_err(|_| key_mismatch())?)
                }
            });
        }
        rows.push(DisclosedRow { voter_id: *voter, epoch: record.meta.epoch, fields });
    }
    Ok(rows)
}
