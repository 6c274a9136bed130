//! Length-prefixed binary encoding shared by proofs, commitments and records.
//!
//! Integers are big-endian. Variable-length byte strings carry a `u32`
//! length prefix. Fixed-size digests are written raw.

use crate::merkle::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid encoding: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: &[u8]) -> Self {
        let mut enc = Self::new();
        enc.bytes(tag);
        enc
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("field longer than u32::MAX");
        self.u32(len);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn digests(&mut self, ds: &[Digest]) -> &mut Self {
        self.u32(ds.len() as u32);
        for d in ds {
            self.digest(d);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    data: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    pub fn expect_tag(&mut self, tag: &[u8]) -> Result<(), CodecError> {
        if self.bytes()? != tag {
            return Err(CodecError::Invalid("unexpected domain tag"));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn digest(&mut self) -> Result<Digest, CodecError> {
        let b = self.take(32)?;
        Ok(Digest::from_slice(b).expect("length checked"))
    }

    pub fn digests(&mut self) -> Result<Vec<Digest>, CodecError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(32) > self.data.len() {
            return Err(CodecError::Truncated);
        }
        (0..n).map(|_| self.digest()).collect()
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes(self.data.len()))
        }
    }
}

/// Serde adapter rendering byte vectors as lowercase hex strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
