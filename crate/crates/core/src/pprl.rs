//! Privacy-preserving record linkage over keyed Bloom-filter encodings.
//!
//! A field is normalized, split into q-grams, and each q-gram sets `k` bit
//! positions chosen by double hashing an HMAC-SHA256 of the gram under the
//! shared linkage seed. Encodings are compared with the Dice coefficient.

use hmac::{Hmac, Mac};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::crypto::VoterId;
use crate::merkle::Digest;
use crate::registry::{Opcode, Registry, SnapshotCommitment};

const BLOOM_TAG: &[u8] = b"vrlog/bloom/v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PprlError {
    #[error("encoding parameters differ: {0}")]
    ParamMismatch(String),
    #[error("invalid encoding parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingParams {
    /// Bit length `m`.
    pub bits: usize,
    /// Hash functions per q-gram `k`.
    pub hashes: usize,
    /// q-gram length.
    pub qgram: usize,
    /// Keyed-hash seed shared out of band between linking jurisdictions.
    #[serde(with = "crate::codec::hex_bytes")]
    pub seed: Vec<u8>,
    #[serde(default = "yes")]
    pub uppercase: bool,
    #[serde(default = "yes")]
    pub strip_non_alnum: bool,
}

fn yes() -> bool {
    true
}

impl EncodingParams {
    pub fn with_seed(seed: impl Into<Vec<u8>>) -> Self {
        Self { bits: 1024, hashes: 2, qgram: 2, seed: seed.into(), uppercase: true, strip_non_alnum: true }
    }

    pub fn validate(&self) -> Result<(), PprlError> {
        if self.bits == 0 || self.hashes == 0 || self.qgram == 0 {
            return Err(PprlError::InvalidParams("m, k and q must all be at least 1"));
        }
        Ok(())
    }

    /// Public identifier of a parameter set. Commits to the seed without
    /// revealing it, so manifests can record which parameters were used.
    pub fn fingerprint(&self) -> Digest {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.seed).expect("any key length");
        mac.update(b"vrlog/bloom-params/v1");
        for v in [self.bits as u64, self.hashes as u64, self.qgram as u64] {
            mac.update(&v.to_be_bytes());
        }
        mac.update(&[self.uppercase as u8, self.strip_non_alnum as u8]);
        Digest::new(mac.finalize().into_bytes().into())
    }

    pub fn normalize(&self, plaintext: &str) -> String {
        plaintext
            .chars()
            .filter(|c| !self.strip_non_alnum || c.is_alphanumeric())
            .flat_map(|c| if self.uppercase { c.to_uppercase().collect::<Vec<_>>() } else { vec![c] })
            .collect()
    }
}

/// Distinct q-grams of `s` in first-occurrence order. Strings shorter than
/// `q` yield themselves as a single gram.
pub fn qgrams(s: &str, q: usize) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < q {
        return vec![s.to_owned()];
    }
    let mut out: Vec<String> = Vec::new();
    for w in chars.windows(q) {
        let g: String = w.iter().collect();
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Encoding {
    pub column: String,
    pub bits: usize,
    words: Vec<u64>,
}

impl Encoding {
    pub fn zeroed(column: impl Into<String>, bits: usize) -> Self {
        Self { column: column.into(), bits, words: vec![0; bits.div_ceil(64)] }
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// True when the input normalized to an empty string.
    pub fn is_blank(&self) -> bool {
        self.popcount() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.bits.div_ceil(8));
        out
    }

    pub fn from_bytes(column: impl Into<String>, bits: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != bits.div_ceil(8) {
            return None;
        }
        let mut enc = Self::zeroed(column, bits);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            enc.words[i] = u64::from_le_bytes(w);
        }
        if (bits..enc.words.len() * 64).any(|i| enc.get(i)) {
            return None;
        }
        Some(enc)
    }

    #[doc(hidden)]
    pub fn flip_bit(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }
}

#[derive(Serialize, Deserialize)]
struct EncodingWire {
    column: String,
    bits: usize,
    #[serde(with = "crate::codec::hex_bytes")]
    vector: Vec<u8>,
}

impl Serialize for Encoding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EncodingWire { column: self.column.clone(), bits: self.bits, vector: self.to_bytes() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Encoding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = EncodingWire::deserialize(d)?;
        Encoding::from_bytes(w.column, w.bits, &w.vector)
            .ok_or_else(|| serde::de::Error::custom("encoding vector does not match bit length"))
    }
}

fn gram_positions(params: &EncodingParams, gram: &str) -> impl Iterator<Item = usize> {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&params.seed).expect("any key length");
    mac.update(BLOOM_TAG);
    mac.update(gram.as_bytes());
    let out = mac.finalize().into_bytes();
    let h1 = u64::from_be_bytes(out[..8].try_into().unwrap());
    let h2 = u64::from_be_bytes(out[8..16].try_into().unwrap()) | 1;
    let m = params.bits as u64;
    (0..params.hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
}

pub fn encode_field(column: &str, plaintext: &str, params: &EncodingParams) -> Encoding {
    let mut enc = Encoding::zeroed(column, params.bits);
    for gram in qgrams(&params.normalize(plaintext), params.qgram) {
        for pos in gram_positions(params, &gram) {
            enc.set(pos);
        }
    }
    enc
}

/// Voter-side check that a stored encoding matches the decrypted field.
pub fn verify_encoding(column: &str, plaintext: &str, encoding: &Encoding, params: &EncodingParams) -> bool {
    encoding.column == column && encode_field(column, plaintext, params) == *encoding
}

/// `2|a AND b| / (|a| + |b|)`; 1 when both vectors are empty.
pub fn dice_similarity(a: &Encoding, b: &Encoding) -> Result<f64, PprlError> {
    if a.bits != b.bits {
        return Err(PprlError::ParamMismatch(format!("bit lengths {} vs {}", a.bits, b.bits)));
    }
    if a.column != b.column {
        return Err(PprlError::ParamMismatch(format!("columns {} vs {}", a.column, b.column)));
    }
    Ok(dice_unchecked(a, b))
}

fn dice_unchecked(a: &Encoding, b: &Encoding) -> f64 {
    let total = a.popcount() + b.popcount();
    if total == 0 {
        return 1.0;
    }
    let common: u32 = a.words.iter().zip(&b.words).map(|(x, y)| (x & y).count_ones()).sum();
    2.0 * common as f64 / total as f64
}

/// One voter's linkage-field encodings as published in a registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub voter_id: VoterId,
    pub encodings: Vec<Encoding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub a: VoterId,
    pub b: VoterId,
    pub field_scores: Vec<f64>,
    pub score: f64,
    pub threshold: f64,
}

fn check_shape(fields: &[String], side: &[EncodedRecord], bits: usize) -> Result<(), PprlError> {
    for r in side {
        if r.encodings.len() != fields.len() {
            return Err(PprlError::ParamMismatch(format!("record {} has {} encodings", r.voter_id, r.encodings.len())));
        }
        for (e, f) in r.encodings.iter().zip(fields) {
            if &e.column != f || e.bits != bits {
                return Err(PprlError::ParamMismatch(format!("record {} field {} / {} bits", r.voter_id, e.column, e.bits)));
            }
        }
    }
    Ok(())
}

/// Exhaustive pairwise comparison. Emits every pair whose mean per-field
/// Dice score reaches `threshold`, sorted by descending score.
pub fn match_registries(
    side_a: &[EncodedRecord],
    side_b: &[EncodedRecord],
    params: &EncodingParams,
    fields: &[String],
    threshold: f64,
) -> Result<Vec<MatchCandidate>, PprlError> {
    params.validate()?;
    check_shape(fields, side_a, params.bits)?;
    check_shape(fields, side_b, params.bits)?;
    let n = fields.len().max(1) as f64;
    let mut out: Vec<MatchCandidate> = side_a
        .par_iter()
        .flat_map_iter(|ra| {
            side_b.iter().filter_map(move |rb| {
                let scores: Vec<f64> =
                    ra.encodings.iter().zip(&rb.encodings).map(|(x, y)| dice_unchecked(x, y)).collect();
                let score = scores.iter().sum::<f64>() / n;
                (score >= threshold).then_some(MatchCandidate {
                    a: ra.voter_id,
                    b: rb.voter_id,
                    field_scores: scores,
                    score,
                    threshold,
                })
            })
        })
        .collect();
    out.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    Ok(out)
}

/// Picks the threshold that maximizes F1 on labelled `(score, is_match)`
/// pairs. Ties go to the higher threshold.
pub fn calibrate_threshold(labelled: &[(f64, bool)]) -> f64 {
    let mut sorted: Vec<(f64, bool)> = labelled.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = sorted.iter().filter(|(_, m)| *m).count() as f64;
    if positives == 0.0 {
        return 1.0;
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut best_f1, mut best_t) = (-1.0, 1.0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let f1 = 2.0 * tp / (2.0 * tp + fp + (positives - tp));
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    best_t
}

/// A registry's published encodings, pulled from its committed records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedRegistry {
    pub jurisdiction: String,
    pub params_fingerprint: Digest,
    pub commitment: SnapshotCommitment,
    pub fields: Vec<String>,
    pub records: Vec<EncodedRecord>,
}

impl EncodedRegistry {
    /// Pulls the encodings of every active voter from the committed state.
    /// Linkage fields are the columns sensitive by default; voters missing
    /// an encoding for any of them are left out.
    pub fn from_registry(reg: &Registry, jurisdiction: impl Into<String>) -> Result<Self, PprlError> {
        let params = reg.encoding_params().ok_or(PprlError::InvalidParams("registry stores no encodings"))?;
        let idx: Vec<usize> = (0..reg.schema().len()).filter(|&j| !reg.schema().columns()[j].public).collect();
        let fields: Vec<String> = idx.iter().map(|&j| reg.schema().columns()[j].label.clone()).collect();
        let mut records = Vec::new();
        for voter in reg.voters() {
            let Some(rec) = reg.lookup(&voter).record else { continue };
            if rec.meta.opcode == Opcode::Deregister {
                continue;
            }
            let encodings: Option<Vec<Encoding>> = idx.iter().map(|&j| rec.slots[j].encoding().cloned()).collect();
            if let Some(encodings) = encodings {
                records.push(EncodedRecord { voter_id: voter, encodings });
            }
        }
        Ok(Self {
            jurisdiction: jurisdiction.into(),
            params_fingerprint: params.fingerprint(),
            commitment: reg.latest_commitment().clone(),
            fields,
            records,
        })
    }
}

/// Record of a linkage run, auditable against both bulletin boards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkageManifest {
    pub params_fingerprint: Digest,
    pub bits: usize,
    pub hashes: usize,
    pub qgram: usize,
    pub fields: Vec<String>,
    pub threshold: f64,
    pub registry_a: (String, SnapshotCommitment),
    pub registry_b: (String, SnapshotCommitment),
    pub candidates: Vec<MatchCandidate>,
}

/// Matches two exported registries and records the run.
pub fn link_registries(
    a: &EncodedRegistry,
    b: &EncodedRegistry,
    params: &EncodingParams,
    threshold: f64,
) -> Result<LinkageManifest, PprlError> {
    let fp = params.fingerprint();
    for side in [a, b] {
        if side.params_fingerprint != fp {
            return Err(PprlError::ParamMismatch(format!("{} was encoded under other parameters", side.jurisdiction)));
        }
    }
    if a.fields != b.fields {
        return Err(PprlError::ParamMismatch("linkage fields differ".into()));
    }
    let candidates = match_registries(&a.records, &b.records, params, &a.fields, threshold)?;
    Ok(LinkageManifest {
        params_fingerprint: fp,
        bits: params.bits,
        hashes: params.hashes,
        qgram: params.qgram,
        fields: a.fields.clone(),
        threshold,
        registry_a: (a.jurisdiction.clone(), a.commitment.clone()),
        registry_b: (b.jurisdiction.clone(), b.commitment.clone()),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn params() -> EncodingParams {
        EncodingParams::with_seed(b"shared-linkage-seed".to_vec())
    }

    /// Exact set-level Dice over distinct q-grams, computed from plaintext.
    fn set_dice(a: &str, b: &str, p: &EncodingParams) -> f64 {
        let ga: BTreeSet<String> = qgrams(&p.normalize(a), p.qgram).into_iter().collect();
        let gb: BTreeSet<String> = qgrams(&p.normalize(b), p.qgram).into_iter().collect();
        if ga.is_empty() && gb.is_empty() {
            return 1.0;
        }
        2.0 * ga.intersection(&gb).count() as f64 / (ga.len() + gb.len()) as f64
    }

    #[test]
    fn deterministic_and_case_insensitive() {
        let p = params();
        assert_eq!(encode_field("name", "SMITH", &p), encode_field("name", "SMITH", &p));
        assert_eq!(encode_field("name", "smith", &p), encode_field("name", "SMITH", &p));
        assert_eq!(encode_field("name", "Smi-th!", &p), encode_field("name", "SMITH", &p));
    }

    #[test]
    fn bigram_enumeration_and_popcount_bound() {
        let p = params();
        assert_eq!(qgrams("SMITH", 2), vec!["SM", "MI", "IT", "TH"]);
        let e = encode_field("name", "SMITH", &p);
        assert!(e.popcount() <= 4 * p.hashes as u32);
        assert!(e.popcount() >= 1);
    }

    #[test]
    fn empty_input_is_blank() {
        let p = params();
        let e = encode_field("name", " -- ", &p);
        assert!(e.is_blank());
        assert_eq!(dice_similarity(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dice_identities() {
        let p = params();
        let a = encode_field("name", "ALEXANDRA", &p);
        assert_eq!(dice_similarity(&a, &a).unwrap(), 1.0);
        let mut x = Encoding::zeroed("name", 128);
        let mut y = Encoding::zeroed("name", 128);
        x.set(1);
        x.set(5);
        y.set(2);
        assert_eq!(dice_similarity(&x, &y).unwrap(), 0.0);
        let other_col = encode_field("dob", "ALEXANDRA", &p);
        assert!(matches!(dice_similarity(&a, &other_col), Err(PprlError::ParamMismatch(_))));
        let small = Encoding::zeroed("name", 512);
        assert!(matches!(dice_similarity(&a, &small), Err(PprlError::ParamMismatch(_))));
    }

    #[test]
    fn smith_smyth_tracks_set_dice() {
        let p = params();
        assert_eq!(set_dice("SMITH", "SMYTH", &p), 0.5);
        let bit = dice_similarity(&encode_field("n", "SMITH", &p), &encode_field("n", "SMYTH", &p)).unwrap();
        assert!((bit - 0.5).abs() <= 0.1, "bit-level {bit}");
    }

    #[test]
    fn verify_encoding_detects_substitution_and_bit_flips() {
        let p = params();
        let honest = encode_field("name", "MARIA GARCIA", &p);
        assert!(verify_encoding("name", "MARIA GARCIA", &honest, &p));
        let swapped = encode_field("name", "MARIO GARCIA", &p);
        assert!(!verify_encoding("name", "MARIA GARCIA", &swapped, &p));
        for i in [0, 100, 1023] {
            let mut bad = honest.clone();
            bad.flip_bit(i);
            assert!(!verify_encoding("name", "MARIA GARCIA", &bad, &p));
        }
        assert!(!verify_encoding("address", "MARIA GARCIA", &honest, &p));
    }

    #[test]
    fn serde_round_trip_and_padding_bits_rejected() {
        let p = EncodingParams { bits: 100, ..params() };
        let e = encode_field("name", "JOHN", &p);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(serde_json::from_str::<Encoding>(&s).unwrap(), e);
        let mut bytes = e.to_bytes();
        *bytes.last_mut().unwrap() |= 0x80;
        assert!(Encoding::from_bytes("name", 100, &bytes).is_none());
    }

    #[test]
    fn set_dice_is_monotone_in_shared_grams() {
        // Growing the shared prefix with a fixed disjoint tail never lowers the score.
        let p = params();
        let base = "QWERTYUIOP";
        let mut last = -1.0;
        for shared in 0..=base.len() {
            let a = format!("{}{}", &base[..shared], "ZZZZ");
            let b = format!("{}{}", &base[..shared], "XXXX");
            let s = set_dice(&a, &b, &p);
            assert!(s >= last, "{shared}: {s} < {last}");
            last = s;
        }
    }

    fn rec(i: u8, fields: &[&str], p: &EncodingParams) -> EncodedRecord {
        let cols = ["name", "dob", "address"];
        EncodedRecord {
            voter_id: VoterId(Digest::hash(&[i])),
            encodings: fields.iter().zip(cols).map(|(v, c)| encode_field(c, v, p)).collect(),
        }
    }

    fn fields() -> Vec<String> {
        vec!["name".into(), "dob".into(), "address".into()]
    }

    #[test]
    fn self_match_scores_one() {
        let p = params();
        let side: Vec<_> = (0..5)
            .map(|i| rec(i, &[&format!("PERSON {i}X"), &format!("1990-01-0{i}"), &format!("{i}{i} ELM ST")], &p))
            .collect();
        let got = match_registries(&side, &side, &p, &fields(), 1.0).unwrap();
        assert!(got.len() >= 5);
        for r in &side {
            assert!(got.iter().any(|c| c.a == r.voter_id && c.b == r.voter_id && c.score == 1.0));
        }
    }

    #[test]
    fn typo_duplicate_found_and_strangers_not() {
        let p = params();
        let a = vec![rec(1, &["JONATHAN PRICE", "1984-07-21", "1200 HARBOR VIEW DR"], &p)];
        let b = vec![
            rec(2, &["JONATHON PRICE", "1984-07-21", "1200 HARBOR VIEW DR"], &p),
            rec(3, &["ELAINE WU", "1962-11-03", "9 QUARRY LN"], &p),
        ];
        let got = match_registries(&a, &b, &p, &fields(), 0.7).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].b, b[0].voter_id);
        assert!(got.iter().all(|c| c.score >= c.threshold));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let p = params();
        let a = vec![rec(1, &["A", "B", "C"], &p)];
        let b = vec![EncodedRecord { voter_id: VoterId(Digest::default()), encodings: vec![] }];
        assert!(matches!(match_registries(&a, &b, &p, &fields(), 0.5), Err(PprlError::ParamMismatch(_))));
    }

    #[test]
    fn calibration_maximizes_f1() {
        let labelled = [(0.95, true), (0.9, true), (0.85, false), (0.8, true), (0.3, false), (0.2, false)];
        assert_eq!(calibrate_threshold(&labelled), 0.8);
        assert_eq!(calibrate_threshold(&[(0.9, true), (0.5, false)]), 0.9);
    }

    #[test]
    fn fingerprint_depends_on_seed_and_shape() {
        let p = params();
        assert_eq!(p.fingerprint(), params().fingerprint());
        assert_ne!(p.fingerprint(), EncodingParams::with_seed(b"other".to_vec()).fingerprint());
        assert_ne!(p.fingerprint(), EncodingParams { hashes: 3, ..params() }.fingerprint());
    }
}
