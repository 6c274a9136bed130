//! Cross-jurisdiction duplicate detection. Each registry stores keyed Bloom
//! filter encodings beside its ciphertexts; the encodings are matched
//! without revealing plaintext, and the run is recorded in a manifest
//! bound to both registries' signed commitments.
//!
//! ```text
//! cargo run --release --example dedup_linkage
//! ```

use std::collections::HashMap;

use vrlog::crypto::MasterKeys;
use vrlog::pprl::{link_registries, EncodedRegistry, EncodingParams};
use vrlog::registry::{Registry, RegistryConfig};
use vrlog::synth::{linkage_benchmark, SyntheticVoter};
use vrlog::workflows::register;

fn build(name: &str, voters: &[SyntheticVoter], params: &EncodingParams) -> (EncodedRegistry, Vec<vrlog::crypto::VoterId>) {
    let cfg = RegistryConfig { encoding: Some(params.clone()), ..RegistryConfig::default() };
    let mut reg = Registry::in_memory(MasterKeys::generate(name), cfg);
    let ids = voters.iter().map(|v| register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap()).collect();
    reg.push_epoch().unwrap();
    (EncodedRegistry::from_registry(&reg, name).unwrap(), ids)
}

fn main() {
    let params = EncodingParams::with_seed(b"shared out of band".to_vec());
    let bench = linkage_benchmark(11, 1000, 1000, 100);
    let (enc_a, ids_a) = build("state-a", &bench.a, &params);
    let (enc_b, ids_b) = build("state-b", &bench.b, &params);

    let manifest = link_registries(&enc_a, &enc_b, &params, 0.75).unwrap();
    let truth: HashMap<_, _> = bench.truth.iter().map(|&(i, j)| (ids_a[i], ids_b[j])).collect();
    let tp = manifest.candidates.iter().filter(|c| truth.get(&c.a) == Some(&c.b)).count();
    println!("candidates: {}, planted duplicates: {}", manifest.candidates.len(), truth.len());
    println!("precision {:.3}, recall {:.3}", tp as f64 / manifest.candidates.len().max(1) as f64, tp as f64 / truth.len() as f64);
    for c in manifest.candidates.iter().take(3) {
        println!("  {} ~ {}  score {:.3} {:?}", &c.a.to_hex()[..10], &c.b.to_hex()[..10], c.score, c.field_scores);
    }
    println!("manifest binds epochs {} and {}", manifest.registry_a.1.epoch, manifest.registry_b.1.epoch);

    let other = EncodingParams::with_seed(b"different".to_vec());
    println!("mismatched parameters: {}", link_registries(&enc_a, &enc_b, &other, 0.75).unwrap_err());
}
