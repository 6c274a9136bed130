//! Append-only Merkle log with RFC 6962 inclusion and consistency proofs.
//!
//! Every complete, aligned power-of-two subtree hash is cached in `levels`,
//! so any root, audit path or consistency path is assembled from O(log n)
//! cached nodes without rehashing leaves.

use serde::{Deserialize, Serialize};

use super::digest::{empty_root, leaf_hash, node_hash, Digest};
use super::MerkleError;
use crate::codec::{CodecError, Decoder, Encoder};

#[derive(Debug, Clone, Default)]
pub struct MerkleLog {
    leaves: Vec<Vec<u8>>,
    /// `levels[h][i]` is the hash of leaves `[i * 2^h, (i + 1) * 2^h)`.
    levels: Vec<Vec<Digest>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogInclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub path: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub path: Vec<Digest>,
}

/// Largest power of two strictly less than `n` (`n >= 2`).
fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}

impl MerkleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_leaves<I, L>(leaves: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: Into<Vec<u8>>,
    {
        let mut log = Self::new();
        for leaf in leaves {
            log.push(leaf.into());
        }
        log
    }

    pub fn size(&self) -> u64 {
        self.leaves.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, index: u64) -> Option<&[u8]> {
        self.leaves.get(index as usize).map(Vec::as_slice)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u8]> {
        self.leaves.iter().map(Vec::as_slice)
    }

    fn push(&mut self, leaf: Vec<u8>) {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf_hash(&leaf));
        self.leaves.push(leaf);
        let mut idx = self.levels[0].len() - 1;
        let mut h = 0;
        while idx % 2 == 1 {
            let parent = node_hash(&self.levels[h][idx - 1], &self.levels[h][idx]);
            h += 1;
            if self.levels.len() <= h {
                self.levels.push(Vec::new());
            }
            self.levels[h].push(parent);
            idx /= 2;
        }
    }

    /// Appends `entries` in order and returns the new root.
    pub fn append<I, L>(&mut self, entries: I) -> Result<Digest, MerkleError>
    where
        I: IntoIterator<Item = L>,
        L: Into<Vec<u8>>,
    {
        let before = self.size();
        for e in entries {
            self.push(e.into());
        }
        if self.size() == before {
            return Err(MerkleError::EmptyAppend);
        }
        Ok(self.root())
    }

    /// Drops every leaf at or beyond `size`. Used by crash recovery to roll
    /// back writes that never reached a published commitment.
    pub fn truncate(&mut self, size: u64) {
        if size >= self.size() {
            return;
        }
        let mut leaves = std::mem::take(&mut self.leaves);
        leaves.truncate(size as usize);
        *self = Self::from_leaves(leaves);
    }

    pub fn root(&self) -> Digest {
        self.root_at(self.size()).expect("current size is in range")
    }

    /// Root of the prefix of the first `size` leaves.
    pub fn root_at(&self, size: u64) -> Result<Digest, MerkleError> {
        if size > self.size() {
            return Err(MerkleError::SizeOutOfRange { old: size, new: size, size: self.size() });
        }
        if size == 0 {
            return Ok(empty_root());
        }
        Ok(self.subtree_hash(0, size))
    }

    fn subtree_hash(&self, start: u64, size: u64) -> Digest {
        debug_assert!(size > 0 && start + size <= self.size());
        if size.is_power_of_two() && start.is_multiple_of(size) {
            let h = size.trailing_zeros() as usize;
            return self.levels[h][(start / size) as usize];
        }
        let k = split_point(size);
        node_hash(&self.subtree_hash(start, k), &self.subtree_hash(start + k, size - k))
    }

    pub fn prove_inclusion(&self, index: u64) -> Result<LogInclusionProof, MerkleError> {
        self.prove_inclusion_at(index, self.size())
    }

    /// Inclusion proof for leaf `index` against the root of the first
    /// `tree_size` leaves.
    pub fn prove_inclusion_at(
        &self,
        index: u64,
        tree_size: u64,
    ) -> Result<LogInclusionProof, MerkleError> {
        if tree_size > self.size() || index >= tree_size {
            return Err(MerkleError::IndexOutOfRange { index, size: tree_size.min(self.size()) });
        }
        let mut path = Vec::new();
        self.inclusion_path(index, 0, tree_size, &mut path);
        Ok(LogInclusionProof { leaf_index: index, tree_size, path })
    }

    fn inclusion_path(&self, m: u64, start: u64, n: u64, out: &mut Vec<Digest>) {
        if n == 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.inclusion_path(m, start, k, out);
            out.push(self.subtree_hash(start + k, n - k));
        } else {
            self.inclusion_path(m - k, start + k, n - k, out);
            out.push(self.subtree_hash(start, k));
        }
    }

    pub fn prove_consistency(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, MerkleError> {
        if old_size > new_size || new_size > self.size() {
            return Err(MerkleError::SizeOutOfRange { old: old_size, new: new_size, size: self.size() });
        }
        let mut path = Vec::new();
        if old_size > 0 && old_size < new_size {
            self.consistency_path(old_size, 0, new_size, true, &mut path);
        }
        Ok(ConsistencyProof { old_size, new_size, path })
    }

    fn consistency_path(&self, m: u64, start: u64, n: u64, whole: bool, out: &mut Vec<Digest>) {
        if m == n {
            if !whole {
                out.push(self.subtree_hash(start, n));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.consistency_path(m, start, k, whole, out);
            out.push(self.subtree_hash(start + k, n - k));
        } else {
            self.consistency_path(m - k, start + k, n - k, false, out);
            out.push(self.subtree_hash(start, k));
        }
    }

    /// Overwrites a leaf in place, bypassing the append path. Only exists so
    /// tests can simulate a history rewrite by a dishonest operator.
    #[doc(hidden)]
    pub fn rewrite_leaf_for_testing(&mut self, index: u64, data: Vec<u8>) {
        let mut leaves = std::mem::take(&mut self.leaves);
        leaves[index as usize] = data;
        *self = Self::from_leaves(leaves);
    }
}

/// Checks an audit path for `leaf` against `root`.
pub fn verify_inclusion(root: &Digest, leaf: &[u8], proof: &LogInclusionProof) -> bool {
    verify_inclusion_hash(root, &leaf_hash(leaf), proof)
}

pub fn verify_inclusion_hash(root: &Digest, leaf: &Digest, proof: &LogInclusionProof) -> bool {
    if proof.leaf_index >= proof.tree_size {
        return false;
    }
    let mut fn_ = proof.leaf_index;
    let mut sn = proof.tree_size - 1;
    let mut r = *leaf;
    for p in &proof.path {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            r = node_hash(p, &r);
            if fn_ & 1 == 0 {
                while fn_ & 1 == 0 && fn_ != 0 {
                    fn_ >>= 1;
                    sn >>= 1;
                }
            }
        } else {
            r = node_hash(&r, p);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    sn == 0 && r == *root
}

/// Checks that the log with root `new_root` extends the log with root
/// `old_root`.
pub fn verify_consistency(old_root: &Digest, new_root: &Digest, proof: &ConsistencyProof) -> bool {
    let (first, second) = (proof.old_size, proof.new_size);
    if first > second {
        return false;
    }
    if first == second {
        return proof.path.is_empty() && old_root == new_root;
    }
    if first == 0 {
        return proof.path.is_empty() && *old_root == empty_root();
    }
    if proof.path.is_empty() {
        return false;
    }
    let mut path: Vec<Digest> = Vec::with_capacity(proof.path.len() + 1);
    if first.is_power_of_two() {
        path.push(*old_root);
    }
    path.extend_from_slice(&proof.path);

    let mut fn_ = first - 1;
    let mut sn = second - 1;
    while fn_ & 1 == 1 {
        fn_ >>= 1;
        sn >>= 1;
    }
    let mut fr = path[0];
    let mut sr = path[0];
    for c in &path[1..] {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            fr = node_hash(c, &fr);
            sr = node_hash(c, &sr);
            if fn_ & 1 == 0 {
                while fn_ & 1 == 0 && fn_ != 0 {
                    fn_ >>= 1;
                    sn >>= 1;
                }
            }
        } else {
            sr = node_hash(&sr, c);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    fr == *old_root && sr == *new_root && sn == 0
}

const INCLUSION_TAG: &[u8] = b"vrlog/log-inclusion/v1";
const CONSISTENCY_TAG: &[u8] = b"vrlog/log-consistency/v1";

impl LogInclusionProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(INCLUSION_TAG);
        enc.u64(self.leaf_index).u64(self.tree_size).digests(&self.path);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(INCLUSION_TAG)?;
        let proof = Self { leaf_index: dec.u64()?, tree_size: dec.u64()?, path: dec.digests()? };
        dec.finish()?;
        Ok(proof)
    }
}

impl ConsistencyProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(CONSISTENCY_TAG);
        enc.u64(self.old_size).u64(self.new_size).digests(&self.path);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag(CONSISTENCY_TAG)?;
        let proof = Self { old_size: dec.u64()?, new_size: dec.u64()?, path: dec.digests()? };
        dec.finish()?;
        Ok(proof)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference tree hash computed straight from the definition over raw
    /// leaves, sharing nothing with the cached implementation.
    fn reference_root(leaves: &[Vec<u8>]) -> Digest {
        use sha2::{Digest as _, Sha256};
        fn mth(d: &[Vec<u8>]) -> [u8; 32] {
            match d.len() {
                0 => Sha256::digest([]).into(),
                1 => {
                    let mut h = Sha256::new();
                    h.update([0u8]);
                    h.update(&d[0]);
                    h.finalize().into()
                }
                n => {
                    let mut k = 1;
                    while k * 2 < n {
                        k *= 2;
                    }
                    let mut h = Sha256::new();
                    h.update([1u8]);
                    h.update(mth(&d[..k]));
                    h.update(mth(&d[k..]));
                    h.finalize().into()
                }
            }
        }
        Digest::new(mth(leaves))
    }

    fn leaves(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| format!("leaf-{i}").into_bytes()).collect()
    }

    fn rfc_vector_leaves() -> Vec<Vec<u8>> {
        [
            "",
            "00",
            "10",
            "2021",
            "3031",
            "40414243",
            "5051525354555657",
            "606162636465666768696a6b6c6d6e6f",
        ]
        .iter()
        .map(|h| hex::decode(h).unwrap())
        .collect()
    }

    #[test]
    fn matches_public_ct_test_vectors() {
        let roots = [
            "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d",
            "fac54203e7cc696cf0dfcb42c92a1d9dbaf70ad9e621f4bd8d98662f00e3c125",
            "aeb6bcfe274b70a14fb067a5e5578264db0fa9b51af5e0ba159158f329e06e77",
            "d37ee418976dd95753c1c73862b9398fa2a2cf9b4ff0fdfe8b30cd95209614b7",
            "4e3bbb1f7b478dcfe71fb631631519a3bca12c9aefca1612bfce4c13a86264d4",
            "76e67dadbcdf1e10e1b74ddc608abd2f98dfb16fbce75277b5232a127f2087ef",
            "ddb89be403809e325750d3d263cd78929c2942b7942a34b77e122c9594a74c8c",
            "5dc9da79a70659a9ad559cb701ded9a2ab9d823aad2f4960cfe370eff4604328",
        ];
        let log = MerkleLog::from_leaves(rfc_vector_leaves());
        for (i, want) in roots.iter().enumerate() {
            assert_eq!(log.root_at(i as u64 + 1).unwrap().to_hex(), *want, "size {}", i + 1);
        }
    }

    #[test]
    fn single_leaf_root_is_leaf_hash() {
        let mut log = MerkleLog::new();
        let root = log.append([b"only".to_vec()]).unwrap();
        assert_eq!(root, leaf_hash(b"only"));
        assert_eq!(root, reference_root(&[b"only".to_vec()]));
        let proof = log.prove_inclusion(0).unwrap();
        assert!(proof.path.is_empty());
        assert!(verify_inclusion(&root, b"only", &proof));
    }

    #[test]
    fn empty_append_is_rejected() {
        let mut log = MerkleLog::new();
        assert_eq!(log.append(Vec::<Vec<u8>>::new()), Err(MerkleError::EmptyAppend));
    }

    #[test]
    fn duplicate_leaves_get_distinct_indices() {
        let mut log = MerkleLog::new();
        let root = log.append([b"same".to_vec(), b"same".to_vec()]).unwrap();
        assert_eq!(log.size(), 2);
        for i in 0..2 {
            let p = log.prove_inclusion(i).unwrap();
            assert_eq!(p.leaf_index, i);
            assert!(verify_inclusion(&root, b"same", &p));
        }
    }

    #[test]
    fn roots_match_reference_for_every_size() {
        let all = leaves(130);
        let log = MerkleLog::from_leaves(all.clone());
        for n in 0..=all.len() {
            assert_eq!(log.root_at(n as u64).unwrap(), reference_root(&all[..n]), "size {n}");
        }
    }

    #[test]
    fn perfect_tree_path_length_is_height() {
        let log = MerkleLog::from_leaves(leaves(8));
        let proof = log.prove_inclusion(3).unwrap();
        assert_eq!(proof.path.len(), 3);
        assert!(verify_inclusion(&reference_root(&leaves(8)), b"leaf-3", &proof));
    }

    #[test]
    fn out_of_range_index() {
        let log = MerkleLog::from_leaves(leaves(8));
        assert!(matches!(log.prove_inclusion(9), Err(MerkleError::IndexOutOfRange { .. })));
        assert!(matches!(log.prove_inclusion(8), Err(MerkleError::IndexOutOfRange { .. })));
    }

    #[test]
    fn only_matching_leaf_proof_pairs_verify() {
        let all = leaves(8);
        let log = MerkleLog::from_leaves(all.clone());
        let root = log.root();
        for (i, leaf) in all.iter().enumerate() {
            for j in 0..all.len() {
                let proof = log.prove_inclusion(j as u64).unwrap();
                assert_eq!(verify_inclusion(&root, leaf, &proof), i == j, "leaf {i} proof {j}");
            }
        }
    }

    #[test]
    fn every_single_bit_flip_in_leaf_is_rejected() {
        let all = leaves(11);
        let log = MerkleLog::from_leaves(all.clone());
        let root = log.root();
        for (i, leaf) in all.iter().enumerate() {
            let proof = log.prove_inclusion(i as u64).unwrap();
            for bit in 0..leaf.len() * 8 {
                let mut bad = leaf.clone();
                bad[bit / 8] ^= 1 << (bit % 8);
                assert!(!verify_inclusion(&root, &bad, &proof));
            }
        }
    }

    #[test]
    fn consistency_self_and_honest_extension() {
        let all = leaves(8);
        let log = MerkleLog::from_leaves(all.clone());
        let same = log.prove_consistency(8, 8).unwrap();
        assert!(verify_consistency(&log.root(), &log.root(), &same));

        let proof = log.prove_consistency(4, 8).unwrap();
        assert!(verify_consistency(&reference_root(&all[..4]), &reference_root(&all), &proof));
    }

    #[test]
    fn consistency_rejects_modified_prefix() {
        let all = leaves(8);
        let honest_old = reference_root(&all[..4]);
        let mut tampered = MerkleLog::from_leaves(all);
        tampered.rewrite_leaf_for_testing(2, b"forged".to_vec());
        let proof = tampered.prove_consistency(4, 8).unwrap();
        assert!(!verify_consistency(&honest_old, &tampered.root(), &proof));
    }

    #[test]
    fn consistency_size_checks() {
        let log = MerkleLog::from_leaves(leaves(5));
        assert!(matches!(log.prove_consistency(3, 6), Err(MerkleError::SizeOutOfRange { .. })));
        assert!(matches!(log.prove_consistency(4, 3), Err(MerkleError::SizeOutOfRange { .. })));
        let from_empty = log.prove_consistency(0, 5).unwrap();
        assert!(verify_consistency(&empty_root(), &log.root(), &from_empty));
        assert!(!verify_consistency(&log.root(), &log.root(), &from_empty));
    }

    #[test]
    fn truncate_restores_prefix_root() {
        let mut log = MerkleLog::from_leaves(leaves(13));
        let r5 = log.root_at(5).unwrap();
        log.truncate(5);
        assert_eq!(log.size(), 5);
        assert_eq!(log.root(), r5);
        log.append([b"next".to_vec()]).unwrap();
        let mut want = leaves(5);
        want.push(b"next".to_vec());
        assert_eq!(log.root(), reference_root(&want));
    }

    #[test]
    fn binary_encoding_roundtrip() {
        let log = MerkleLog::from_leaves(leaves(21));
        let p = log.prove_inclusion(17).unwrap();
        assert_eq!(LogInclusionProof::from_bytes(&p.to_bytes()).unwrap(), p);
        let c = log.prove_consistency(6, 21).unwrap();
        assert_eq!(ConsistencyProof::from_bytes(&c.to_bytes()).unwrap(), c);
        assert!(ConsistencyProof::from_bytes(&p.to_bytes()).is_err());
    }
}
