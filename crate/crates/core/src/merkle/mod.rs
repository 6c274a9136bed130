//! Merkle primitives: an RFC 6962 append-only log and a 256-deep sparse
//! Merkle map, each with proof generation and pure verification.

mod digest;
mod log;
mod map;

pub use digest::{empty_root, leaf_hash, node_hash, Digest};
pub use log::{
    verify_consistency, verify_inclusion, verify_inclusion_hash, ConsistencyProof,
    LogInclusionProof, MerkleLog,
};
pub use map::{
    defaults as map_defaults, empty_leaf_hash, map_leaf_hash, verify_map_proof, MapInclusionProof,
    SparseMerkleMap, MAP_DEPTH,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("cannot append an empty batch")]
    EmptyAppend,
    #[error("leaf index {index} out of range for tree size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("sizes {old}..{new} out of range for log of size {size}")]
    SizeOutOfRange { old: u64, new: u64, size: u64 },
    #[error("key {0} appears twice in one batch")]
    DuplicateKeyInBatch(Digest),
}
