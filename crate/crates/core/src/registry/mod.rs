//! The registry state machine: schema and predicates, record construction,
//! the pending-update queue, epoch pushes into the log-backed map, lookups,
//! histories, and the bulletin journal.

mod bulletin;
mod proofs;
mod record;
mod schema;
mod storage;

use std::collections::HashMap;
use std::path::Path;

use rand::rngs::OsRng;

pub use bulletin::{
    check_contiguous, parse_journal, Bulletin, BulletinEntry, BulletinExport, SnapshotCommitment, UpdateProof,
};
pub use proofs::{verify_history, verify_lookup, History, HistoryLink, HistoryProof, LookupProof, ProofError};
pub use record::{
    build_update_record, unix_now, MapEntry, MutationEntry, Opcode, RecordContext, RecordMeta, Slot, UpdateRecord,
};
pub use schema::{AccessPolicy, Column, ColumnSchema, Policy, PublicPredicate, ThirdPartyRules};

use crate::codec::CodecError;
use crate::crypto::{decrypt_field, CryptoError, MasterKeys, PublicKey, VoterId};
use crate::merkle::{empty_root, Digest, MerkleError, MerkleLog, SparseMerkleMap};
use crate::pprl::EncodingParams;
use storage::{read_frames, truncate_frames, DiskStore, Head, QueuedUpdate};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("record does not fit the schema: {0}")]
    SchemaMismatch(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("epoch range {from}..={to} outside 0..={current}")]
    RangeOutOfBounds { from: u64, to: u64, current: u64 },
    #[error("bulletin gap: expected epoch {expected}, found {found:?}")]
    GapDetected { expected: u64, found: Option<u64> },
    #[error("bulletin expects epoch {expected}, got {got}")]
    EpochConflict { expected: u64, got: u64 },
    #[error("record is for epoch {got}, the queue is filling epoch {expected}")]
    WrongEpoch { expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt registry state: {0}")]
    CorruptState(String),
    #[error("registry needs to be reopened after a failed write")]
    Poisoned,
    #[error("registry already initialized")]
    AlreadyInitialized,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("decode: {0}")]
    Codec(#[from] CodecError),
}

impl From<std::io::Error> for RegistryError {
    fn from(e: std::io::Error) -> Self {
        RegistryError::StorageFailure(e.to_string())
    }
}

/// Settings fixed when a registry is created.
#[derive(Debug, Clone)]
pub struct RegistryConfig {
    pub schema: ColumnSchema,
    pub policy: Policy,
    /// Enables record-linkage encodings beside every sensitive ciphertext.
    pub encoding: Option<EncodingParams>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self { schema: ColumnSchema::default_schema(), policy: Policy::default(), encoding: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoterStatus {
    Unknown,
    Active,
    Deregistered,
}

/// Test hook: abort `push_epoch` after a given durable write.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterLogWrite,
    AfterBulletinWrite,
}

pub struct Registry {
    keys: MasterKeys,
    config: RegistryConfig,
    log: MerkleLog,
    entries: Vec<MutationEntry>,
    records: Vec<UpdateRecord>,
    map: SparseMerkleMap,
    chains: HashMap<VoterId, Vec<u64>>,
    queue: Vec<(VoterId, UpdateRecord)>,
    pending: HashMap<VoterId, usize>,
    bulletin: Bulletin,
    store: Option<DiskStore>,
    crash_point: Option<CrashPoint>,
    poisoned: bool,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("epoch", &self.epoch())
            .field("log_size", &self.log.size())
            .field("voters", &self.map.len())
            .field("queued", &self.queue.len())
            .finish_non_exhaustive()
    }
}

impl Registry {
    fn empty(keys: MasterKeys, config: RegistryConfig, bulletin: Bulletin, store: Option<DiskStore>) -> Self {
        Self {
            keys,
            config,
            log: MerkleLog::new(),
            entries: Vec::new(),
            records: Vec::new(),
            map: SparseMerkleMap::new(),
            chains: HashMap::new(),
            queue: Vec::new(),
            pending: HashMap::new(),
            bulletin,
            store,
            crash_point: None,
            poisoned: false,
        }
    }

    fn genesis_entry(&self) -> BulletinEntry {
        let commitment = SnapshotCommitment::sign(&self.keys, 0, self.map.root(), empty_root(), 0);
        BulletinEntry {
            update_proof: UpdateProof {
                from_epoch: 0,
                to_epoch: 0,
                consistency: crate::merkle::ConsistencyProof { old_size: 0, new_size: 0, path: vec![] },
                map_root: commitment.map_root,
                log_root: commitment.log_root,
            },
            commitment,
        }
    }

    /// A registry with no durable storage. Epoch 0 is published on creation.
    pub fn in_memory(keys: MasterKeys, config: RegistryConfig) -> Self {
        let mut r = Self::empty(keys, config, Bulletin::in_memory(), None);
        let g = r.genesis_entry();
        r.bulletin.publish(g).expect("fresh bulletin accepts epoch 0");
        r
    }

    /// Initializes a registry directory and publishes epoch 0.
    pub fn create(dir: &Path, keys: MasterKeys, config: RegistryConfig) -> Result<Self, RegistryError> {
        let store = DiskStore::new(dir)?;
        if store.bulletin_path().exists() {
            return Err(RegistryError::AlreadyInitialized);
        }
        store.write_json("schema.json", &config.schema)?;
        store.write_json("policy.json", &config.policy)?;
        if let Some(p) = &config.encoding {
            store.write_json("encoding.json", p)?;
        }
        store.rewrite_queue(&[])?;
        let bulletin = Bulletin::open(&store.bulletin_path())?;
        let mut r = Self::empty(keys, config, bulletin, Some(store));
        let g = r.genesis_entry();
        r.bulletin.publish(g)?;
        r.store().write_head(&Head { epoch: 0, map_root: r.map.root(), log_size: 0 })?;
        Ok(r)
    }

    /// Opens a registry directory, creating it from any `schema.json`,
    /// `policy.json` and `encoding.json` already there (defaults otherwise)
    /// when it has no bulletin yet.
    ///
    /// Recovers from an interrupted push: log frames past the last
    /// commitment are dropped, and a push whose bulletin entry landed is
    /// rolled forward. A bulletin that does not match the log is refused.
    pub fn open(dir: &Path, keys: MasterKeys) -> Result<Self, RegistryError> {
        let store = DiskStore::new(dir)?;
        if !store.bulletin_path().exists() {
            let config = RegistryConfig {
                schema: store.read_json("schema.json")?.unwrap_or_else(ColumnSchema::default_schema),
                policy: store.read_json("policy.json")?.unwrap_or_default(),
                encoding: store.read_json("encoding.json")?,
            };
            return Self::create(dir, keys, config);
        }
        let config = RegistryConfig {
            schema: store.read_json("schema.json")?.ok_or_else(|| corrupt("schema.json is missing"))?,
            policy: store.read_json("policy.json")?.unwrap_or_default(),
            encoding: store.read_json("encoding.json")?,
        };
        let bulletin = Bulletin::open(&store.bulletin_path()).map_err(|e| corrupt(format!("bulletin: {e}")))?;
        let pk = keys.public_key();
        if bulletin.is_empty() {
            return Err(corrupt("bulletin is empty"));
        }
        if let Some(bad) = bulletin.entries().iter().find(|e| !e.commitment.verify(&pk)) {
            return Err(corrupt(format!("commitment {} is not signed by this keystore", bad.commitment.epoch)));
        }
        let last = bulletin.latest().expect("non-empty").commitment.clone();
        let head = store.read_head()?.ok_or_else(|| corrupt("map/head.json is missing"))?;
        if head.epoch > last.epoch {
            return Err(corrupt(format!("head is at epoch {} but the bulletin ends at {}", head.epoch, last.epoch)));
        }
        if head.epoch + 1 < last.epoch {
            return Err(corrupt(format!("head epoch {} is behind bulletin epoch {}", head.epoch, last.epoch)));
        }

        let leaf_frames = read_frames(&store.leaves_path())?;
        let record_frames = read_frames(&store.records_path())?;
        let committed = usize::try_from(last.log_size).map_err(|_| corrupt("log size"))?;
        if leaf_frames.frames.len() < committed || record_frames.frames.len() < committed {
            return Err(corrupt(format!("log holds fewer than the {committed} committed leaves")));
        }
        truncate_frames(&store.leaves_path(), &leaf_frames, committed)?;
        truncate_frames(&store.records_path(), &record_frames, committed)?;

        let mut r = Self::empty(keys, config, bulletin, None);
        let leaves = &leaf_frames.frames[..committed];
        for (i, (leaf, rec)) in leaves.iter().zip(&record_frames.frames).enumerate() {
            let entry = MutationEntry::from_bytes(leaf).map_err(|e| corrupt(format!("leaf {i}: {e}")))?;
            let record = UpdateRecord::from_bytes(rec).map_err(|e| corrupt(format!("record {i}: {e}")))?;
            if Digest::hash(rec) != entry.record_digest {
                return Err(corrupt(format!("record {i} does not match its leaf")));
            }
            r.entries.push(entry);
            r.records.push(record);
        }
        r.log = MerkleLog::from_leaves(leaves.iter().cloned());

        let commitments = r.bulletin.commitments();
        if commitments[0].log_size != 0 || commitments[0].map_root != r.map.root() {
            return Err(corrupt("genesis commitment is not empty"));
        }
        for pair in commitments.windows(2) {
            let (prev, c) = (&pair[0], &pair[1]);
            if c.log_size < prev.log_size {
                return Err(corrupt(format!("log shrinks at epoch {}", c.epoch)));
            }
            let mut batch = HashMap::new();
            for idx in prev.log_size..c.log_size {
                let e = &r.entries[idx as usize];
                if e.epoch != c.epoch {
                    return Err(corrupt(format!("leaf {idx} claims epoch {} inside epoch {}", e.epoch, c.epoch)));
                }
                r.chains.entry(e.voter_id).or_default().push(idx);
                batch.insert(e.voter_id, MapEntry { log_index: idx, seq: e.seq, epoch: e.epoch, record_digest: e.record_digest });
            }
            let root = r.map.apply_batch(batch.into_iter().map(|(k, v)| (k.0, v.to_bytes())))?;
            if root != c.map_root || r.log.root_at(c.log_size)? != c.log_root {
                return Err(corrupt(format!("replayed roots differ from commitment {}", c.epoch)));
            }
        }

        let mut queue = Vec::new();
        for q in store.read_queue()? {
            let e = q.record.meta.epoch;
            if e <= last.epoch {
                continue;
            }
            if e != last.epoch + 1 {
                return Err(corrupt(format!("queued record for epoch {e} after epoch {}", last.epoch)));
            }
            queue.push(q);
        }
        store.rewrite_queue(&queue)?;
        store.write_head(&Head { epoch: last.epoch, map_root: last.map_root, log_size: last.log_size })?;
        for q in queue {
            r.pending.insert(q.voter_id, r.queue.len());
            r.queue.push((q.voter_id, q.record));
        }
        r.store = Some(store);
        Ok(r)
    }

    fn store(&self) -> &DiskStore {
        self.store.as_ref().expect("durable registry")
    }

    pub fn keys(&self) -> &MasterKeys {
        &self.keys
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.config.schema
    }

    pub fn policy(&self) -> &Policy {
        &self.config.policy
    }

    pub fn encoding_params(&self) -> Option<&EncodingParams> {
        self.config.encoding.as_ref()
    }

    /// Replaces the predicates and access policy. Affects records built
    /// from now on.
    pub fn set_policy(&mut self, policy: Policy) -> Result<(), RegistryError> {
        if let Some(s) = &self.store {
            s.write_json("policy.json", &policy)?;
        }
        self.config.policy = policy;
        Ok(())
    }

    /// Last committed epoch.
    pub fn epoch(&self) -> u64 {
        self.bulletin.len() as u64 - 1
    }

    /// Epoch that queued records will be committed in.
    pub fn pending_epoch(&self) -> u64 {
        self.epoch() + 1
    }

    pub fn bulletin(&self) -> &Bulletin {
        &self.bulletin
    }

    pub fn latest_commitment(&self) -> &SnapshotCommitment {
        &self.bulletin.latest().expect("genesis is always published").commitment
    }

    pub fn export_bulletin(&self) -> BulletinExport {
        BulletinExport { official_key: self.public_key(), entries: self.bulletin.entries().to_vec() }
    }

    pub fn log(&self) -> &MerkleLog {
        &self.log
    }

    pub fn map(&self) -> &SparseMerkleMap {
        &self.map
    }

    pub fn queue(&self) -> &[(VoterId, UpdateRecord)] {
        &self.queue
    }

    pub fn mutation(&self, index: u64) -> Option<(&MutationEntry, &UpdateRecord)> {
        let i = usize::try_from(index).ok()?;
        Some((self.entries.get(i)?, self.records.get(i)?))
    }

    /// Voter IDs with at least one committed record, in key order.
    pub fn voters(&self) -> impl Iterator<Item = VoterId> + '_ {
        self.map.entries().keys().map(|k| VoterId(*k))
    }

    /// Bytes on disk; for in-memory registries, encoded log and record bytes.
    pub fn storage_bytes(&self) -> u64 {
        match &self.store {
            Some(s) => s.size_bytes(),
            None => self.log.leaves().map(|l| l.len() as u64 + 4).sum::<u64>()
                + self.records.iter().map(|r| r.to_bytes().len() as u64 + 4).sum::<u64>(),
        }
    }

    /// Committed map entry for a voter.
    pub fn head_entry(&self, voter: &VoterId) -> Option<MapEntry> {
        self.map.get(&voter.0).map(|b| MapEntry::from_bytes(b).expect("map values are well-formed"))
    }

    /// Newest record, queued or committed.
    pub fn latest_record(&self, voter: &VoterId) -> Option<&UpdateRecord> {
        if let Some(&i) = self.pending.get(voter) {
            return Some(&self.queue[i].1);
        }
        self.head_entry(voter).map(|e| &self.records[e.log_index as usize])
    }

    pub fn status(&self, voter: &VoterId) -> VoterStatus {
        match self.latest_record(voter).map(|r| r.meta.opcode) {
            None => VoterStatus::Unknown,
            Some(Opcode::Deregister) => VoterStatus::Deregistered,
            Some(_) => VoterStatus::Active,
        }
    }

    /// Decrypts the newest record for a voter with the registry's own keys.
    pub fn current_data(&self, voter: &VoterId) -> Result<Option<Vec<String>>, RegistryError> {
        let Some(rec) = self.latest_record(voter) else { return Ok(None) };
        let mut out = Vec::with_capacity(rec.slots.len());
        for (col, slot) in self.config.schema.columns().iter().zip(&rec.slots) {
            let bytes = match slot {
                Slot::Public { value } => value.clone(),
                Slot::Sealed { ciphertext, .. } => {
                    decrypt_field(&self.keys.derive_field_key(voter, &col.label, rec.meta.epoch), ciphertext)?
                }
            };
            out.push(String::from_utf8(bytes).map_err(|_| RegistryError::Crypto(CryptoError::Corrupt))?);
        }
        Ok(Some(out))
    }

    /// Builds a signed record for the pending epoch.
    pub fn build_record(&self, voter: VoterId, data: &[String], opcode: Opcode) -> Result<UpdateRecord, RegistryError> {
        let ctx = RecordContext {
            keys: &self.keys,
            schema: &self.config.schema,
            predicate: &self.config.policy.public,
            encoding: self.config.encoding.as_ref(),
        };
        build_update_record(&mut OsRng, &ctx, voter, data, self.pending_epoch(), opcode, unix_now(), Vec::new())
    }

    /// Queues a record for the next push. Not visible in lookups until then.
    pub fn enqueue(&mut self, voter: VoterId, record: UpdateRecord) -> Result<(), RegistryError> {
        if self.poisoned {
            return Err(RegistryError::Poisoned);
        }
        if record.meta.epoch != self.pending_epoch() {
            return Err(RegistryError::WrongEpoch { expected: self.pending_epoch(), got: record.meta.epoch });
        }
        if record.voter_id != voter || record.slots.len() != self.config.schema.len() {
            return Err(RegistryError::SchemaMismatch("record does not belong to this voter or schema".into()));
        }
        if let Some(s) = &self.store {
            s.append_queue(&QueuedUpdate { voter_id: voter, record: record.clone() })?;
        }
        self.pending.insert(voter, self.queue.len());
        self.queue.push((voter, record));
        Ok(())
    }

    #[doc(hidden)]
    pub fn set_crash_point(&mut self, point: Option<CrashPoint>) {
        self.crash_point = point;
    }

    fn fail(&mut self, e: RegistryError) -> RegistryError {
        self.poisoned = true;
        e
    }

    fn crash_check(&mut self, at: CrashPoint) -> Result<(), RegistryError> {
        if self.crash_point == Some(at) {
            return Err(self.fail(RegistryError::StorageFailure(format!("injected crash {at:?}"))));
        }
        Ok(())
    }

    /// Drains the queue into the log and map, signs the new snapshot and
    /// publishes it. Either the whole epoch lands on disk or a reopen
    /// restores the previous one.
    pub fn push_epoch(&mut self) -> Result<BulletinEntry, RegistryError> {
        if self.poisoned {
            return Err(RegistryError::Poisoned);
        }
        let epoch = self.pending_epoch();
        let old_size = self.log.size();
        let mut tails: HashMap<VoterId, MapEntry> = HashMap::new();
        let mut new_entries = Vec::with_capacity(self.queue.len());
        let mut leaves = Vec::with_capacity(self.queue.len());
        let mut record_bytes = Vec::with_capacity(self.queue.len());
        for (i, (voter, record)) in self.queue.iter().enumerate() {
            let index = old_size + i as u64;
            let prev = tails.get(voter).map(|t| (t.log_index, t.seq)).or_else(|| {
                self.chains.get(voter).and_then(|c| c.last()).map(|&idx| (idx, self.entries[idx as usize].seq))
            });
            let bytes = record.to_bytes();
            let entry = MutationEntry {
                voter_id: *voter,
                epoch,
                seq: prev.map_or(0, |(_, s)| s + 1),
                prev_index: prev.map(|(idx, _)| idx),
                record_digest: Digest::hash(&bytes),
            };
            tails.insert(*voter, MapEntry { log_index: index, seq: entry.seq, epoch, record_digest: entry.record_digest });
            leaves.push(entry.to_bytes());
            record_bytes.push(bytes);
            new_entries.push(entry);
        }

        if !leaves.is_empty() {
            self.log.append(leaves.iter().cloned())?;
        }
        if let Some(s) = &self.store {
            if let Err(e) = s.append_log(&leaves, &record_bytes) {
                return Err(self.fail(e));
            }
        }
        self.crash_check(CrashPoint::AfterLogWrite)?;

        let mut batch: Vec<(Digest, Vec<u8>)> = tails.iter().map(|(k, v)| (k.0, v.to_bytes())).collect();
        batch.sort_by_key(|a| a.0);
        let map_root = self.map.apply_batch(batch)?;
        let log_root = self.log.root();
        let commitment = SnapshotCommitment::sign(&self.keys, epoch, map_root, log_root, self.log.size());
        let consistency = self.log.prove_consistency(old_size, self.log.size())?;
        let entry = BulletinEntry {
            commitment,
            update_proof: UpdateProof { from_epoch: epoch - 1, to_epoch: epoch, consistency, map_root, log_root },
        };
        if let Err(e) = self.bulletin.publish(entry.clone()) {
            return Err(self.fail(e));
        }
        self.crash_check(CrashPoint::AfterBulletinWrite)?;
        if let Some(s) = &self.store {
            let head = Head { epoch, map_root, log_size: self.log.size() };
            if let Err(e) = s.write_head(&head).and_then(|_| s.rewrite_queue(&[])) {
                return Err(self.fail(e));
            }
        }

        for (i, e) in new_entries.into_iter().enumerate() {
            self.chains.entry(e.voter_id).or_default().push(old_size + i as u64);
            self.entries.push(e);
        }
        self.records.extend(self.queue.drain(..).map(|(_, r)| r));
        self.pending.clear();
        Ok(entry)
    }

    pub fn lookup(&self, voter: &VoterId) -> LookupProof {
        let (value, map_proof) = self.map.get_with_proof(&voter.0);
        let entry = value.map(|b| MapEntry::from_bytes(&b).expect("map values are well-formed"));
        LookupProof {
            voter_id: *voter,
            epoch: self.epoch(),
            record: entry.map(|e| self.records[e.log_index as usize].clone()),
            entry,
            map_proof,
        }
    }

    /// Committed records for `voter` in `[from, to]`, oldest first, with a
    /// completeness proof anchored at the latest commitment.
    pub fn history(&self, voter: &VoterId, from: u64, to: u64) -> Result<History, RegistryError> {
        let current = self.epoch();
        if from > to || to > current {
            return Err(RegistryError::RangeOutOfBounds { from, to, current });
        }
        let (value, map_proof) = self.map.get_with_proof(&voter.0);
        let head = value.map(|b| MapEntry::from_bytes(&b).expect("map values are well-formed"));
        let mut links = Vec::new();
        let mut records = Vec::new();
        if let Some(chain) = self.chains.get(voter) {
            for &idx in chain.iter().rev() {
                let entry = self.entries[idx as usize].clone();
                let size = self.bulletin.read(entry.epoch).expect("committed epoch").commitment.log_size;
                let proof = self.log.prove_inclusion_at(idx, size)?;
                let epoch = entry.epoch;
                if epoch >= from && epoch <= to {
                    records.push(self.records[idx as usize].clone());
                }
                links.push(HistoryLink { entry, leaf_index: idx, proof });
                if epoch < from {
                    break;
                }
            }
        }
        records.reverse();
        Ok(History {
            voter_id: *voter,
            records,
            proof: HistoryProof {
                voter_id: *voter,
                from_epoch: from,
                to_epoch: to,
                head_epoch: current,
                head,
                map_proof,
                links,
            },
        })
    }

    /// Test hook: overwrites a committed leaf in memory without going
    /// through the append path, as a dishonest operator might.
    #[doc(hidden)]
    pub fn tamper_rewrite_leaf(&mut self, index: u64, record: UpdateRecord) {
        let mut entry = self.entries[index as usize].clone();
        let bytes = record.to_bytes();
        entry.record_digest = Digest::hash(&bytes);
        self.log.rewrite_leaf_for_testing(index, entry.to_bytes());
        self.entries[index as usize] = entry;
        self.records[index as usize] = record;
    }
}

fn corrupt(msg: impl Into<String>) -> RegistryError {
    RegistryError::CorruptState(msg.into())
}

#[cfg(test)]
mod tests;
