//! Sparse Merkle map of depth 256 keyed by 32-byte digests.
//!
//! The semantic tree has a leaf slot for every possible key; empty subtrees
//! hash to precomputed defaults. In memory only the occupied part is kept as
//! a path-compressed binary trie whose nodes cache the hash of the subtree
//! they stand for, so updates and proofs touch O(log n) cached nodes plus a
//! single default-padded lift at the point where a path leaves the trie.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::digest::{node_hash, Digest};
use super::MerkleError;
use crate::codec::{CodecError, Decoder, Encoder};

pub const MAP_DEPTH: usize = 256;

/// Hash of an occupied map leaf: `SHA-256(0x00 || key || SHA-256(value))`.
pub fn map_leaf_hash(key: &Digest, value: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(key.as_bytes());
    h.update(Sha256::digest(value));
    Digest::new(h.finalize().into())
}

/// Hash of an empty map leaf: `SHA-256(0x00)`.
pub fn empty_leaf_hash() -> Digest {
    Digest::hash(&[0x00])
}

/// `defaults()[d]` is the root of an empty subtree whose root sits at depth `d`.
pub fn defaults() -> &'static [Digest; MAP_DEPTH + 1] {
    static DEFAULTS: OnceLock<[Digest; MAP_DEPTH + 1]> = OnceLock::new();
    DEFAULTS.get_or_init(|| {
        let mut out = [Digest::default(); MAP_DEPTH + 1];
        out[MAP_DEPTH] = empty_leaf_hash();
        for d in (0..MAP_DEPTH).rev() {
            out[d] = node_hash(&out[d + 1], &out[d + 1]);
        }
        out
    })
}

/// Raises the hash of a subtree rooted at depth `from` (containing `key`) to
/// depth `to`, treating every sibling on the way as empty.
fn lift(mut h: Digest, key: &Digest, from: usize, to: usize) -> Digest {
    let defs = defaults();
    for d in (to..from).rev() {
        h = if key.bit(d) { node_hash(&defs[d + 1], &h) } else { node_hash(&h, &defs[d + 1]) };
    }
    h
}

#[derive(Debug, Clone)]
struct Node {
    /// Depth at which this subtree is rooted.
    hang: usize,
    /// Hash of the subtree rooted at `hang`.
    hash: Digest,
    /// Hash at the node's own depth (256 for leaves, `split` for branches).
    natural: Digest,
    /// Any key in the subtree; all keys share bits `[0, split)`.
    repr: Digest,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Leaf,
    Branch { split: usize, children: Box<[Node; 2]> },
}

impl Node {
    fn leaf(key: Digest, value_hash: Digest, hang: usize) -> Self {
        let mut n = Node { hang, hash: value_hash, natural: value_hash, repr: key, kind: Kind::Leaf };
        n.hash = lift(value_hash, &key, MAP_DEPTH, hang);
        n
    }

    fn natural_depth(&self) -> usize {
        match &self.kind {
            Kind::Leaf => MAP_DEPTH,
            Kind::Branch { split, .. } => *split,
        }
    }

    fn rehang(&mut self, hang: usize) {
        self.hang = hang;
        self.hash = lift(self.natural, &self.repr, self.natural_depth(), hang);
    }

    fn branch(split: usize, hang: usize, a: Node, b: Node) -> Self {
        let (mut left, mut right) = if a.repr.bit(split) { (b, a) } else { (a, b) };
        left.rehang(split + 1);
        right.rehang(split + 1);
        let natural = node_hash(&left.hash, &right.hash);
        let repr = left.repr;
        let hash = lift(natural, &repr, split, hang);
        Node { hang, hash, natural, repr, kind: Kind::Branch { split, children: Box::new([left, right]) } }
    }

    fn refresh(&mut self) {
        if let Kind::Branch { split, children } = &self.kind {
            self.natural = node_hash(&children[0].hash, &children[1].hash);
            self.hash = lift(self.natural, &self.repr, *split, self.hang);
        }
    }

    fn insert(&mut self, key: Digest, leaf: Digest) {
        match &mut self.kind {
            Kind::Leaf => {
                if self.repr == key {
                    self.natural = leaf;
                    self.hash = lift(leaf, &key, MAP_DEPTH, self.hang);
                    return;
                }
                let split = self.repr.first_diff_bit(&key).expect("keys differ");
                let old = std::mem::replace(self, Node::leaf(key, leaf, self.hang));
                *self = Node::branch(split, old.hang, old, Node::leaf(key, leaf, split + 1));
            }
            Kind::Branch { split, children } => {
                let split = *split;
                match self.repr.first_diff_bit(&key) {
                    Some(d) if d < split => {
                        let hang = self.hang;
                        let placeholder = Node::leaf(key, leaf, hang);
                        let old = std::mem::replace(self, placeholder);
                        *self = Node::branch(d, hang, old, Node::leaf(key, leaf, d + 1));
                    }
                    _ => {
                        children[key.bit(split) as usize].insert(key, leaf);
                        self.refresh();
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapInclusionProof {
    pub key: Digest,
    pub revision: u64,
    /// `siblings[d]` is the sibling of the path node rooted at depth `d + 1`.
    pub siblings: Vec<Digest>,
}

/// Verifiable key/value directory. Values are opaque bytes; keys are never
/// removed.
#[derive(Debug, Clone, Default)]
pub struct SparseMerkleMap {
    entries: BTreeMap<Digest, Vec<u8>>,
    root: Option<Node>,
    revision: u64,
}

impl SparseMerkleMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &Digest) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn entries(&self) -> &BTreeMap<Digest, Vec<u8>> {
        &self.entries
    }

    pub fn root(&self) -> Digest {
        self.root.as_ref().map_or(defaults()[0], |n| n.hash)
    }

    /// Writes every pair and advances the revision by one. An empty batch
    /// still advances the revision and leaves the root unchanged.
    pub fn apply_batch<I>(&mut self, pairs: I) -> Result<Digest, MerkleError>
    where
        I: IntoIterator<Item = (Digest, Vec<u8>)>,
    {
        let pairs: Vec<(Digest, Vec<u8>)> = pairs.into_iter().collect();
        let mut seen = HashSet::with_capacity(pairs.len());
        for (k, _) in &pairs {
            if !seen.insert(*k) {
                return Err(MerkleError::DuplicateKeyInBatch(*k));
            }
        }
        for (k, v) in pairs {
            self.set(k, v);
        }
        self.revision += 1;
        Ok(self.root())
    }

    fn set(&mut self, key: Digest, value: Vec<u8>) {
        let leaf = map_leaf_hash(&key, &value);
        match &mut self.root {
            None => self.root = Some(Node::leaf(key, leaf, 0)),
            Some(n) => n.insert(key, leaf),
        }
        self.entries.insert(key, value);
    }

    /// Latest value for `key` (if any) and a proof binding the answer to the
    /// current root. Absent keys get a non-inclusion proof.
    pub fn get_with_proof(&self, key: &Digest) -> (Option<Vec<u8>>, MapInclusionProof) {
        let defs = defaults();
        let mut siblings = vec![Digest::default(); MAP_DEPTH];
        let mut cur = self.root.as_ref();
        let mut d = 0;
        while d < MAP_DEPTH {
            let Some(node) = cur else {
                siblings[d] = defs[d + 1];
                d += 1;
                continue;
            };
            let stop = node.natural_depth();
            if d < stop {
                if node.repr.bit(d) == key.bit(d) {
                    siblings[d] = defs[d + 1];
                } else {
                    siblings[d] = lift(node.natural, &node.repr, stop, d + 1);
                    cur = None;
                }
                d += 1;
                continue;
            }
            match &node.kind {
                Kind::Leaf => unreachable!("leaf natural depth is {MAP_DEPTH}"),
                Kind::Branch { children, .. } => {
                    let b = key.bit(d) as usize;
                    siblings[d] = children[1 - b].hash;
                    cur = Some(&children[b]);
                    d += 1;
                }
            }
        }
        let value = self.entries.get(key).cloned();
        (value, MapInclusionProof { key: *key, revision: self.revision, siblings })
    }
}

/// Checks that `root` maps `key` to `value` (`None` = absent).
pub fn verify_map_proof(
    root: &Digest,
    key: &Digest,
    value: Option<&[u8]>,
    proof: &MapInclusionProof,
) -> bool {
    if proof.key != *key || proof.siblings.len() != MAP_DEPTH {
        return false;
    }
    let mut h = value.map_or_else(empty_leaf_hash, |v| map_leaf_hash(key, v));
    for d in (0..MAP_DEPTH).rev() {
        let s = &proof.siblings[d];
        h = if key.bit(d) { node_hash(s, &h) } else { node_hash(&h, s) };
    }
    h == *root
}

const MAP_PROOF_TAG: &[u8] = b"vrlog/map-inclusion/v1";

impl MapInclusionProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(MAP_PROOF_TAG);
        enc.digest(&self.key).u64(self.revision).digests(&self.siblings);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(MAP_PROOF_TAG)?;
        let proof = Self { key: dec.digest()?, revision: dec.u64()?, siblings: dec.digests()? };
        dec.finish()?;
        if proof.siblings.len() != MAP_DEPTH {
            return Err(CodecError::Invalid("map proof must carry 256 siblings"));
        }
        Ok(proof)
    }
}
