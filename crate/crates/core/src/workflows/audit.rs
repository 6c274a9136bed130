use serde::{Deserialize, Serialize};

use super::{maintenance_receive, query_verify, DisclosurePackage, QueryPackage};
use crate::crypto::PublicKey;
use crate::merkle::verify_consistency;
use crate::registry::{BulletinEntry, SnapshotCommitment, UpdateProof};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFailure {
    BadSignature,
    NonConsecutive,
    ConsistencyFail,
}

/// Outcome of checking one epoch transition. A rejection keeps the exact
/// inputs so anyone can rerun the check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub from_epoch: u64,
    pub to_epoch: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<AuditFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<AuditEvidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvidence {
    pub older: SnapshotCommitment,
    pub newer: SnapshotCommitment,
    pub update_proof: UpdateProof,
}

/// Checks that `newer` is the next epoch after `older`, both are signed by
/// the official, and the log only grew in between.
pub fn audit(
    older: &SnapshotCommitment,
    newer: &SnapshotCommitment,
    update_proof: &UpdateProof,
    pk: &PublicKey,
) -> AuditVerdict {
    let failure = if !older.verify(pk) || !newer.verify(pk) {
        Some(AuditFailure::BadSignature)
    } else if newer.epoch != older.epoch + 1 || update_proof.from_epoch != older.epoch || update_proof.to_epoch != newer.epoch
    {
        Some(AuditFailure::NonConsecutive)
    } else {
        let p = &update_proof.consistency;
        let ok = p.old_size == older.log_size
            && p.new_size == newer.log_size
            && update_proof.log_root == newer.log_root
            && update_proof.map_root == newer.map_root
            && verify_consistency(&older.log_root, &newer.log_root, p);
        (!ok).then_some(AuditFailure::ConsistencyFail)
    };
    AuditVerdict {
        from_epoch: older.epoch,
        to_epoch: newer.epoch,
        accepted: failure.is_none(),
        failure,
        evidence: failure.map(|_| AuditEvidence {
            older: older.clone(),
            newer: newer.clone(),
            update_proof: update_proof.clone(),
        }),
    }
}

/// Audits every adjacent pair of a bulletin.
pub fn audit_bulletin(entries: &[BulletinEntry], pk: &PublicKey) -> Vec<AuditVerdict> {
    entries.windows(2).map(|w| audit(&w[0].commitment, &w[1].commitment, &w[1].update_proof, pk)).collect()
}

/// Signed material a party brings to a dispute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisputeArtifact {
    Query { package: Box<QueryPackage> },
    Disclosure { package: Box<DisclosurePackage> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum DisputeVerdict {
    /// The official signed something that contradicts the bulletin.
    OfficialMisbehavior { reason: String },
    /// The signature is forged, or the artifact checks out.
    ClaimUnfounded { reason: String },
}

/// Judges a dispute. The artifact is checked against the bulletin as it
/// stood at the epoch the official signed for, so a later push does not
/// turn an honest package into evidence.
pub fn check_dispute_evidence(
    artifact: &DisputeArtifact,
    commitments: &[SnapshotCommitment],
    pk: &PublicKey,
) -> DisputeVerdict {
    let unfounded = |reason: &str| DisputeVerdict::ClaimUnfounded { reason: reason.to_owned() };
    let (signed_ok, epoch) = match artifact {
        DisputeArtifact::Query { package } => (package.verify(pk), package.body.history.proof.head_epoch),
        DisputeArtifact::Disclosure { package } => (package.verify(pk), package.body.epoch),
    };
    if !signed_ok {
        return unfounded("official signature does not verify");
    }
    let Some(as_of) = usize::try_from(epoch).ok().and_then(|e| commitments.get(..=e)) else {
        return DisputeVerdict::OfficialMisbehavior { reason: format!("signed for unpublished epoch {epoch}") };
    };
    let result = match artifact {
        DisputeArtifact::Query { package } => query_verify(package, as_of, pk, None).map(|_| ()).map_err(|e| e.to_string()),
        DisputeArtifact::Disclosure { package } => {
            maintenance_receive(package, &as_of[as_of.len() - 1], pk).map(|_| ()).map_err(|e| e.to_string())
        }
    };
    match result {
        Ok(()) => unfounded("artifact verifies against the bulletin"),
        Err(reason) => DisputeVerdict::OfficialMisbehavior { reason },
    }
}
