use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PackageBody, Signed, WorkflowError};
use crate::crypto::{decrypt_field, FieldKey, PublicKey, VoterId};
use crate::pprl::{verify_encoding, EncodingParams};
use crate::registry::{verify_history, History, ProofError, Registry, SnapshotCommitment, Slot};

/// Every field key of one epoch, in column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochKeys {
    pub epoch: u64,
    pub keys: Vec<FieldKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBody {
    pub voter_id: VoterId,
    pub from_epoch: u64,
    pub to_epoch: u64,
    pub columns: Vec<String>,
    pub history: History,
    /// One row per distinct epoch among the served records.
    pub keys: Vec<EpochKeys>,
    /// Present for registries that store linkage encodings, so the voter
    /// can recompute them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<EncodingParams>,
}

impl PackageBody for QueryBody {
    const TAG: &'static [u8] = b"vrlog/query/v1";
}

pub type QueryPackage = Signed<QueryBody>;

/// Builds a voter's signed history with all keys needed to open it. Keys
/// are derived on demand, never stored.
pub fn query_prepare(reg: &Registry, voter: &VoterId, from: u64, to: u64) -> Result<QueryPackage, WorkflowError> {
    if reg.head_entry(voter).is_none() {
        return Err(WorkflowError::UnknownVoter(*voter));
    }
    let history = reg.history(voter, from, to)?;
    let mut keys: Vec<EpochKeys> = Vec::new();
    for r in &history.records {
        let e = r.meta.epoch;
        if keys.last().is_some_and(|k| k.epoch == e) {
            continue;
        }
        keys.push(EpochKeys {
            epoch: e,
            keys: reg.schema().labels().map(|c| reg.keys().derive_field_key(voter, c, e)).collect(),
        });
    }
    let body = QueryBody {
        voter_id: *voter,
        from_epoch: from,
        to_epoch: to,
        columns: reg.schema().labels().map(str::to_owned).collect(),
        history,
        keys,
        encoding: reg.encoding_params().cloned(),
    };
    Ok(Signed::sign(reg.keys(), body))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum QueryFailure {
    #[error("package signature does not verify")]
    BadSignature,
    #[error("bulletin has no commitment for epoch {epoch}")]
    MissingCommitment { epoch: u64 },
    #[error("history does not match the bulletin: {reason}")]
    HistoryMismatch { reason: String },
    #[error("key for epoch {epoch}, column {column} does not open the committed ciphertext")]
    KeyMismatch { epoch: u64, column: String },
    #[error("epoch {epoch}, column {column} differs from the expected value")]
    DataMismatch { epoch: u64, column: String },
    #[error("stored encoding for epoch {epoch}, column {column} does not match the decrypted value")]
    EncodingMismatch { epoch: u64, column: String },
}

impl From<ProofError> for QueryFailure {
    fn from(e: ProofError) -> Self {
        match e {
            ProofError::MissingCommitment(epoch) => QueryFailure::MissingCommitment { epoch },
            other => QueryFailure::HistoryMismatch { reason: other.to_string() },
        }
    }
}

/// What the voter believes their data was at the end of each epoch. Only
/// the last record of an epoch is compared.
pub type ExpectedData = BTreeMap<u64, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryReport {
    pub voter_id: VoterId,
    pub head_epoch: u64,
    /// `(epoch, decrypted row)` per served record, oldest first.
    pub rows: Vec<(u64, Vec<String>)>,
}

/// Voter side. `commitments[e]` is the bulletin commitment for epoch `e`
/// and the package must be anchored at the last one.
pub fn query_verify(
    package: &QueryPackage,
    commitments: &[SnapshotCommitment],
    pk: &PublicKey,
    expected: Option<&ExpectedData>,
) -> Result<QueryReport, QueryFailure> {
    if !package.verify(pk) {
        return Err(QueryFailure::BadSignature);
    }
    let b = &package.body;
    let h = &b.history;
    if h.voter_id != b.voter_id || h.proof.from_epoch != b.from_epoch || h.proof.to_epoch != b.to_epoch {
        return Err(QueryFailure::HistoryMismatch { reason: "package header disagrees with its history".into() });
    }
    verify_history(commitments, pk, h)?;

    let mut rows = Vec::with_capacity(h.records.len());
    for (i, record) in h.records.iter().enumerate() {
        let epoch = record.meta.epoch;
        let closes_epoch = h.records.get(i + 1).is_none_or(|n| n.meta.epoch != epoch);
        let key_mismatch = |j: usize| QueryFailure::KeyMismatch {
            epoch,
            column: b.columns.get(j).cloned().unwrap_or_default(),
        };
        let keys = b.keys.iter().find(|k| k.epoch == epoch).ok_or_else(|| key_mismatch(0))?;
        if keys.keys.len() != b.columns.len() || record.slots.len() != b.columns.len() {
            return Err(key_mismatch(0));
        }
        let mut row = Vec::with_capacity(b.columns.len());
        for (j, (slot, key)) in record.slots.iter().zip(&keys.keys).enumerate() {
            let column = &b.columns[j];
            let value = match slot {
                Slot::Public { value } => String::from_utf8_lossy(value).into_owned(),
                Slot::Sealed { ciphertext, encoding } => {
                    let ctx = &key.context;
                    if ctx.voter_id != b.voter_id || &ctx.column != column || ctx.epoch != epoch {
                        return Err(key_mismatch(j));
                    }
                    let pt = decrypt_field(key, ciphertext).map_err(|_| key_mismatch(j))?;
                    let value = String::from_utf8(pt).map_err(|_| key_mismatch(j))?;
                    if let Some(params) = &b.encoding {
                        let ok = encoding.as_ref().is_some_and(|e| verify_encoding(column, &value, e, params));
                        if !ok {
                            return Err(QueryFailure::EncodingMismatch { epoch, column: column.clone() });
                        }
                    }
                    value
                }
            };
            row.push(value);
        }
        if let Some(want) = expected.filter(|_| closes_epoch).and_then(|x| x.get(&epoch)) {
            if let Some(j) = (0..row.len()).find(|&j| want.get(j) != Some(&row[j])) {
                return Err(QueryFailure::DataMismatch { epoch, column: b.columns[j].clone() });
            }
        }
        rows.push((epoch, row));
    }
    Ok(QueryReport { voter_id: b.voter_id, head_epoch: h.proof.head_epoch, rows })
}
