//! On-disk layout of a registry directory.
//!
//! ```text
//! log/leaves.bin     mutation-log leaves, u32-length framed
//! log/records.bin    update records, same framing, same order
//! map/head.json      last fully applied epoch
//! bulletin.jsonl     signed commitments, one per line
//! queue.jsonl        pending updates for the next epoch
//! schema.json        column schema
//! policy.json        public predicate and access policy
//! encoding.json      record-linkage parameters, if enabled
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RegistryError, UpdateRecord};
use crate::crypto::VoterId;
use crate::merkle::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Head {
    pub epoch: u64,
    pub map_root: Digest,
    pub log_size: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct QueuedUpdate {
    pub voter_id: VoterId,
    pub record: UpdateRecord,
}

/// Frames read from a length-prefixed file, with the byte offset after each.
pub(crate) struct Frames {
    pub frames: Vec<Vec<u8>>,
    pub ends: Vec<u64>,
}

pub(crate) struct DiskStore {
    dir: PathBuf,
}

impl DiskStore {
    pub fn new(dir: &Path) -> Result<Self, RegistryError> {
        fs::create_dir_all(dir.join("log"))?;
        fs::create_dir_all(dir.join("map"))?;
        Ok(Self { dir: dir.to_owned() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn leaves_path(&self) -> PathBuf {
        self.dir.join("log").join("leaves.bin")
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join("log").join("records.bin")
    }

    pub fn bulletin_path(&self) -> PathBuf {
        self.dir.join("bulletin.jsonl")
    }

    fn head_path(&self) -> PathBuf {
        self.dir.join("map").join("head.json")
    }

    fn queue_path(&self) -> PathBuf {
        self.dir.join("queue.jsonl")
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Option<T>, RegistryError> {
        let p = self.path(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text).map(Some).map_err(|e| RegistryError::CorruptState(format!("{name}: {e}")))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RegistryError> {
        let mut text = serde_json::to_string_pretty(value).expect("config serializes");
        text.push('\n');
        write_atomic(&self.path(name), text.as_bytes())
    }

    pub fn read_head(&self) -> Result<Option<Head>, RegistryError> {
        self.read_json("map/head.json")
    }

    pub fn write_head(&self, head: &Head) -> Result<(), RegistryError> {
        write_atomic(&self.head_path(), serde_json::to_string(head).expect("head serializes").as_bytes())
    }

    /// Appends leaves and records, both synced before returning.
    pub fn append_log(&self, leaves: &[Vec<u8>], records: &[Vec<u8>]) -> Result<(), RegistryError> {
        append_frames(&self.leaves_path(), leaves)?;
        append_frames(&self.records_path(), records)
    }

    pub fn append_queue(&self, item: &QueuedUpdate) -> Result<(), RegistryError> {
        let mut line = serde_json::to_string(item).expect("queue item serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.queue_path())?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn rewrite_queue(&self, items: &[QueuedUpdate]) -> Result<(), RegistryError> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item).expect("queue item serializes"));
            text.push('\n');
        }
        write_atomic(&self.queue_path(), text.as_bytes())
    }

    /// Reads queued updates. A torn last line is dropped: it was never
    /// acknowledged to the caller.
    pub fn read_queue(&self) -> Result<Vec<QueuedUpdate>, RegistryError> {
        let p = self.queue_path();
        if !p.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(p)?;
        let mut out = Vec::new();
        for line in text.split_inclusive('\n') {
            if !line.ends_with('\n') {
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line).map_err(|e| RegistryError::CorruptState(format!("queue: {e}")))?);
        }
        Ok(out)
    }

    /// Bytes used by the log, records and bulletin.
    pub fn size_bytes(&self) -> u64 {
        [self.leaves_path(), self.records_path(), self.bulletin_path(), self.head_path()]
            .iter()
            .filter_map(|p| fs::metadata(p).ok())
            .map(|m| m.len())
            .sum()
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RegistryError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn append_frames(path: &Path, frames: &[Vec<u8>]) -> Result<(), RegistryError> {
    let mut buf = Vec::with_capacity(frames.iter().map(|f| f.len() + 4).sum());
    for f in frames {
        buf.extend_from_slice(&(f.len() as u32).to_be_bytes());
        buf.extend_from_slice(f);
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}

/// Reads whole frames and stops at the first torn one.
pub(crate) fn read_frames(path: &Path) -> Result<Frames, RegistryError> {
    let data = if path.exists() { fs::read(path)? } else { Vec::new() };
    let mut frames = Vec::new();
    let mut ends = Vec::new();
    let mut pos = 0usize;
    while pos + 4 <= data.len() {
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        if pos + 4 + len > data.len() {
            break;
        }
        frames.push(data[pos + 4..pos + 4 + len].to_vec());
        pos += 4 + len;
        ends.push(pos as u64);
    }
    Ok(Frames { frames, ends })
}

/// Cuts a framed file down to its first `count` frames.
pub(crate) fn truncate_frames(path: &Path, frames: &Frames, count: usize) -> Result<(), RegistryError> {
    let len = if count == 0 { 0 } else { frames.ends[count - 1] };
    if path.exists() && fs::metadata(path)?.len() != len {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(len)?;
        f.sync_all()?;
    }
    Ok(())
}
