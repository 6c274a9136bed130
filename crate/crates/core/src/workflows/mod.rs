//! Registration, updates, third-party disclosure, voter queries, audits
//! and dispute checks, layered over [`Registry`].

mod audit;
mod maintenance;
mod package;
mod query;

pub use audit::{
    audit, audit_bulletin, check_dispute_evidence, AuditFailure, AuditVerdict, DisputeArtifact, DisputeVerdict,
};
pub use maintenance::{
    maintenance_disclose, maintenance_receive, DisclosedRow, DisclosureBody, DisclosurePackage, MaintenanceFailure,
};
pub use package::{PackageBody, Signed};
pub use query::{
    query_prepare, query_verify, EpochKeys, ExpectedData, QueryBody, QueryFailure, QueryPackage, QueryReport,
};

use crate::crypto::VoterId;
use crate::registry::{Opcode, Registry, RegistryError, VoterStatus};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("eligibility check rejected the voter: {0}")]
    BaseSystemReject(String),
    #[error("voter {0} is already registered")]
    AlreadyRegistered(VoterId),
    #[error("voter {0} is not registered")]
    UnknownVoter(VoterId),
    #[error("voter {0} is deregistered")]
    AlreadyDeregistered(VoterId),
    #[error("third party {0} is not in the access policy")]
    UnknownThirdParty(String),
    #[error("opcode {0:?} is not valid here")]
    InvalidOpcode(Opcode),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Stand-in for the jurisdiction's existing eligibility checks.
pub trait EligibilityHook {
    fn check(&self, base_id: &[u8], data: &[String]) -> Result<(), String>;
}

/// Accepts everyone.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysEligible;

impl EligibilityHook for AlwaysEligible {
    fn check(&self, _: &[u8], _: &[String]) -> Result<(), String> {
        Ok(())
    }
}

pub fn register(reg: &mut Registry, base_id: &[u8], data: &[String]) -> Result<VoterId, WorkflowError> {
    register_with(reg, &AlwaysEligible, base_id, data)
}

/// Derives the voter's ID and queues an `add` record. A deregistered voter
/// may register again.
pub fn register_with(
    reg: &mut Registry,
    hook: &dyn EligibilityHook,
    base_id: &[u8],
    data: &[String],
) -> Result<VoterId, WorkflowError> {
    hook.check(base_id, data).map_err(WorkflowError::BaseSystemReject)?;
    let id = reg.keys().derive_voter_id(base_id).map_err(RegistryError::from)?;
    if reg.status(&id) == VoterStatus::Active {
        return Err(WorkflowError::AlreadyRegistered(id));
    }
    let record = reg.build_record(id, data, Opcode::Add)?;
    reg.enqueue(id, record)?;
    Ok(id)
}

/// Queues a fully re-encrypted `update` or `deregister` record. With no new
/// data, the voter's current data is carried over.
pub fn update_registration(
    reg: &mut Registry,
    voter: VoterId,
    new_data: Option<&[String]>,
    opcode: Opcode,
) -> Result<(), WorkflowError> {
    if opcode == Opcode::Add {
        return Err(WorkflowError::InvalidOpcode(opcode));
    }
    match reg.status(&voter) {
        VoterStatus::Unknown => return Err(WorkflowError::UnknownVoter(voter)),
        VoterStatus::Deregistered => return Err(WorkflowError::AlreadyDeregistered(voter)),
        VoterStatus::Active => {}
    }
    let data = match new_data {
        Some(d) => d.to_vec(),
        None => reg.current_data(&voter)?.ok_or(WorkflowError::UnknownVoter(voter))?,
    };
    let record = reg.build_record(voter, &data, opcode)?;
    reg.enqueue(voter, record)?;
    Ok(())
}
