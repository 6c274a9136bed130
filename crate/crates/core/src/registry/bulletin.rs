use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::codec::Encoder;
use crate::crypto::{verify_signature, MasterKeys, PublicKey, Signature};
use crate::merkle::{ConsistencyProof, Digest};

const COMMITMENT_TAG: &[u8] = b"vrlog/commitment/v1";

/// Signed epoch snapshot. The public source of truth for every proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCommitment {
    pub epoch: u64,
    pub map_root: Digest,
    pub log_root: Digest,
    pub log_size: u64,
    pub signer_id: String,
    pub signature: Signature,
}

impl SnapshotCommitment {
    pub fn sign(keys: &MasterKeys, epoch: u64, map_root: Digest, log_root: Digest, log_size: u64) -> Self {
        let mut c = Self {
            epoch,
            map_root,
            log_root,
            log_size,
            signer_id: keys.signer_id().to_owned(),
            signature: Signature([0; 64]),
        };
        c.signature = keys.sign(&c.signing_bytes());
        c
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(COMMITMENT_TAG);
        enc.u64(self.epoch)
            .digest(&self.map_root)
            .digest(&self.log_root)
            .u64(self.log_size)
            .bytes(self.signer_id.as_bytes());
        enc.finish()
    }

    pub fn verify(&self, pk: &PublicKey) -> bool {
        verify_signature(pk, &self.signing_bytes(), &self.signature)
    }
}

/// Evidence that epoch `to_epoch` extends `from_epoch` append-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateProof {
    pub from_epoch: u64,
    pub to_epoch: u64,
    pub consistency: ConsistencyProof,
    pub map_root: Digest,
    pub log_root: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulletinEntry {
    pub commitment: SnapshotCommitment,
    pub update_proof: UpdateProof,
}

/// Checks that entries are epochs `0, 1, 2, ...` with no holes.
pub fn check_contiguous(entries: &[BulletinEntry]) -> Result<(), RegistryError> {
    for (i, e) in entries.iter().enumerate() {
        if e.commitment.epoch != i as u64 {
            return Err(RegistryError::GapDetected { expected: i as u64, found: Some(e.commitment.epoch) });
        }
    }
    Ok(())
}

/// Parses a bulletin journal. A torn trailing line or a missing epoch is a gap.
pub fn parse_journal(text: &str) -> Result<Vec<BulletinEntry>, RegistryError> {
    let mut entries = Vec::new();
    for line in text.split_inclusive('\n') {
        let expected = entries.len() as u64;
        if !line.ends_with('\n') {
            return Err(RegistryError::GapDetected { expected, found: None });
        }
        if line.trim().is_empty() {
            continue;
        }
        let e: BulletinEntry =
            serde_json::from_str(line).map_err(|_| RegistryError::GapDetected { expected, found: None })?;
        entries.push(e);
    }
    check_contiguous(&entries)?;
    Ok(entries)
}

/// Append-only journal of epoch commitments, optionally backed by a
/// `bulletin.jsonl` file.
#[derive(Debug, Default)]
pub struct Bulletin {
    entries: Vec<BulletinEntry>,
    path: Option<PathBuf>,
}

impl Bulletin {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let entries = if path.exists() {
            parse_journal(&String::from_utf8_lossy(&std::fs::read(path)?))?
        } else {
            Vec::new()
        };
        Ok(Self { entries, path: Some(path.to_owned()) })
    }

    pub fn entries(&self) -> &[BulletinEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&BulletinEntry> {
        self.entries.last()
    }

    pub fn read(&self, epoch: u64) -> Option<&BulletinEntry> {
        self.entries.get(usize::try_from(epoch).ok()?)
    }

    pub fn commitments(&self) -> Vec<SnapshotCommitment> {
        self.entries.iter().map(|e| e.commitment.clone()).collect()
    }

    /// Appends the next epoch. Anything but `len()` is refused.
    pub fn publish(&mut self, entry: BulletinEntry) -> Result<(), RegistryError> {
        let expected = self.entries.len() as u64;
        if entry.commitment.epoch != expected {
            return Err(RegistryError::EpochConflict { expected, got: entry.commitment.epoch });
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Portable bulletin snapshot for offline verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulletinExport {
    pub official_key: PublicKey,
    pub entries: Vec<BulletinEntry>,
}

impl BulletinExport {
    pub fn commitments(&self) -> Vec<SnapshotCommitment> {
        self.entries.iter().map(|e| e.commitment.clone()).collect()
    }
}
