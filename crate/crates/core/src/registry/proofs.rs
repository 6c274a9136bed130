use serde::{Deserialize, Serialize};

use super::{MapEntry, MutationEntry, SnapshotCommitment, UpdateRecord};
use crate::crypto::{PublicKey, VoterId};
use crate::merkle::{verify_inclusion, verify_map_proof, LogInclusionProof, MapInclusionProof};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProofError {
    #[error("no commitment for epoch {0}")]
    MissingCommitment(u64),
    #[error("commitment for epoch {0} has an invalid signature")]
    BadCommitment(u64),
    #[error("proof is anchored at epoch {head} but the bulletin is at epoch {latest}")]
    StaleHead { head: u64, latest: u64 },
    #[error("map proof does not verify against the committed root")]
    MapProof,
    #[error("log inclusion proof for leaf {0} does not verify")]
    LogInclusion(u64),
    #[error("history chain is broken: {0}")]
    Chain(String),
    #[error("served record for epoch {epoch} does not match the committed log")]
    RecordMismatch { epoch: u64 },
    #[error("record signature invalid at epoch {0}")]
    RecordSignature(u64),
    #[error("history lists {got} records but the log holds {expected} in range")]
    CountMismatch { expected: usize, got: usize },
}

/// Latest value for a voter, with a map (non-)inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupProof {
    pub voter_id: VoterId,
    pub epoch: u64,
    pub entry: Option<MapEntry>,
    pub record: Option<UpdateRecord>,
    pub map_proof: MapInclusionProof,
}

/// One mutation-log leaf of a voter's chain, proven against the
/// commitment of the epoch it was written in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryLink {
    pub entry: MutationEntry,
    pub leaf_index: u64,
    pub proof: LogInclusionProof,
}

/// Completeness proof for a voter's updates in `[from_epoch, to_epoch]`.
///
/// Anchored at the newest commitment by a map proof of the voter's head
/// entry, then walks the `prev_index` chain back, newest first, until it
/// passes `from_epoch` or reaches the first mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryProof {
    pub voter_id: VoterId,
    pub from_epoch: u64,
    pub to_epoch: u64,
    pub head_epoch: u64,
    pub head: Option<MapEntry>,
    pub map_proof: MapInclusionProof,
    pub links: Vec<HistoryLink>,
}

/// Records in range, oldest first, plus the proof that nothing is missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub voter_id: VoterId,
    pub records: Vec<UpdateRecord>,
    pub proof: HistoryProof,
}

fn commitment_at(commitments: &[SnapshotCommitment], epoch: u64) -> Result<&SnapshotCommitment, ProofError> {
    let c = usize::try_from(epoch)
        .ok()
        .and_then(|i| commitments.get(i))
        .ok_or(ProofError::MissingCommitment(epoch))?;
    if c.epoch != epoch {
        return Err(ProofError::MissingCommitment(epoch));
    }
    Ok(c)
}

fn signed_commitment<'a>(
    commitments: &'a [SnapshotCommitment],
    pk: &PublicKey,
    epoch: u64,
) -> Result<&'a SnapshotCommitment, ProofError> {
    let c = commitment_at(commitments, epoch)?;
    if !c.verify(pk) {
        return Err(ProofError::BadCommitment(epoch));
    }
    Ok(c)
}

fn check_record(record: &UpdateRecord, entry: &MutationEntry, pk: &PublicKey) -> Result<(), ProofError> {
    if record.voter_id != entry.voter_id || record.meta.epoch != entry.epoch || record.digest() != entry.record_digest {
        return Err(ProofError::RecordMismatch { epoch: entry.epoch });
    }
    if !record.verify_signature(pk) {
        return Err(ProofError::RecordSignature(entry.epoch));
    }
    Ok(())
}

/// Checks a lookup against one signed commitment.
pub fn verify_lookup(commitment: &SnapshotCommitment, pk: &PublicKey, lookup: &LookupProof) -> Result<(), ProofError> {
    if !commitment.verify(pk) {
        return Err(ProofError::BadCommitment(commitment.epoch));
    }
    if lookup.epoch != commitment.epoch || lookup.map_proof.revision != commitment.epoch {
        return Err(ProofError::StaleHead { head: lookup.epoch, latest: commitment.epoch });
    }
    if lookup.map_proof.key != lookup.voter_id.0 {
        return Err(ProofError::MapProof);
    }
    let value = lookup.entry.map(|e| e.to_bytes());
    if !verify_map_proof(&commitment.map_root, &lookup.voter_id.0, value.as_deref(), &lookup.map_proof) {
        return Err(ProofError::MapProof);
    }
    match (&lookup.entry, &lookup.record) {
        (None, None) => Ok(()),
        (Some(e), Some(r)) => {
            let m = MutationEntry {
                voter_id: lookup.voter_id,
                epoch: e.epoch,
                seq: e.seq,
                prev_index: None,
                record_digest: e.record_digest,
            };
            check_record(r, &m, pk)
        }
        _ => Err(ProofError::RecordMismatch { epoch: lookup.epoch }),
    }
}

/// Checks a history against the bulletin. `commitments[e]` must be the
/// commitment for epoch `e`, and the proof must be anchored at the last one.
pub fn verify_history(commitments: &[SnapshotCommitment], pk: &PublicKey, history: &History) -> Result<(), ProofError> {
    let p = &history.proof;
    let voter = history.voter_id;
    if p.voter_id != voter || p.from_epoch > p.to_epoch || p.to_epoch > p.head_epoch {
        return Err(ProofError::Chain("proof header does not match the request".into()));
    }
    let latest = commitments.len().checked_sub(1).ok_or(ProofError::MissingCommitment(p.head_epoch))? as u64;
    let head_c = signed_commitment(commitments, pk, p.head_epoch)?;
    if p.head_epoch != latest {
        return Err(ProofError::StaleHead { head: p.head_epoch, latest });
    }
    if p.map_proof.key != voter.0 || p.map_proof.revision != p.head_epoch {
        return Err(ProofError::MapProof);
    }
    let value = p.head.map(|e| e.to_bytes());
    if !verify_map_proof(&head_c.map_root, &voter.0, value.as_deref(), &p.map_proof) {
        return Err(ProofError::MapProof);
    }

    let Some(head) = p.head else {
        if !p.links.is_empty() || !history.records.is_empty() {
            return Err(ProofError::Chain("absent voter with non-empty history".into()));
        }
        return Ok(());
    };

    // Walk the chain newest to oldest.
    let mut expect_index = head.log_index;
    let mut expect_seq = head.seq;
    let mut in_range = Vec::new();
    let mut done = false;
    for (i, link) in p.links.iter().enumerate() {
        if done {
            return Err(ProofError::Chain(format!("extra link at position {i}")));
        }
        let e = &link.entry;
        if e.voter_id != voter || link.leaf_index != expect_index || e.seq != expect_seq {
            return Err(ProofError::Chain(format!("link {i} is not the expected predecessor")));
        }
        if i == 0 && (e.epoch != head.epoch || e.record_digest != head.record_digest) {
            return Err(ProofError::Chain("first link does not match the map head".into()));
        }
        if e.epoch == 0 {
            return Err(ProofError::Chain("mutation in genesis epoch".into()));
        }
        let c = signed_commitment(commitments, pk, e.epoch)?;
        let prev_c = signed_commitment(commitments, pk, e.epoch - 1)?;
        if link.leaf_index < prev_c.log_size || link.leaf_index >= c.log_size {
            return Err(ProofError::Chain(format!("leaf {} lies outside epoch {}", link.leaf_index, e.epoch)));
        }
        if link.proof.leaf_index != link.leaf_index
            || link.proof.tree_size != c.log_size
            || !verify_inclusion(&c.log_root, &e.to_bytes(), &link.proof)
        {
            return Err(ProofError::LogInclusion(link.leaf_index));
        }
        if e.epoch >= p.from_epoch && e.epoch <= p.to_epoch {
            in_range.push(e);
        }
        match (e.seq, e.prev_index) {
            (0, None) => done = true,
            (0, Some(_)) | (_, None) => return Err(ProofError::Chain(format!("link {i} has a bad predecessor"))),
            (s, Some(prev)) => {
                if prev >= link.leaf_index {
                    return Err(ProofError::Chain(format!("link {i} points forward")));
                }
                expect_index = prev;
                expect_seq = s - 1;
                if e.epoch < p.from_epoch {
                    done = true;
                }
            }
        }
    }
    if !done {
        return Err(ProofError::Chain("chain ends before the start of the range".into()));
    }

    in_range.reverse();
    if in_range.len() != history.records.len() {
        return Err(ProofError::CountMismatch { expected: in_range.len(), got: history.records.len() });
    }
    for (entry, record) in in_range.iter().zip(&history.records) {
        check_record(record, entry, pk)?;
    }
    Ok(())
}
