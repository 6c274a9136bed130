//! An auditor walks the bulletin pair by pair. A rewritten leaf breaks the
//! consistency proof and the verdict carries the evidence.
//!
//! ```text
//! cargo run --example audit_epochs
//! ```

use vrlog::crypto::MasterKeys;
use vrlog::registry::{Registry, RegistryConfig};
use vrlog::synth::VoterGenerator;
use vrlog::workflows::{audit_bulletin, register};

fn main() {
    let mut reg = Registry::in_memory(MasterKeys::generate("clerk"), RegistryConfig::default());
    let mut gen = VoterGenerator::new(9);
    for _ in 0..6 {
        for v in gen.voters(10) {
            register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
        }
        reg.push_epoch().unwrap();
    }
    let pk = reg.public_key();
    for v in audit_bulletin(reg.bulletin().entries(), &pk) {
        println!("{} -> {}: {}", v.from_epoch, v.to_epoch, if v.accepted { "accept" } else { "REJECT" });
    }

    // Quietly replace an early record, then publish another epoch.
    let (_, record) = reg.mutation(4).unwrap();
    let record = record.clone();
    reg.tamper_rewrite_leaf(3, record);
    let v = gen.voter();
    register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
    reg.push_epoch().unwrap();

    let last = audit_bulletin(reg.bulletin().entries(), &pk).pop().unwrap();
    println!("{} -> {}: accepted={} failure={:?}", last.from_epoch, last.to_epoch, last.accepted, last.failure);
    println!("evidence attached: {}", last.evidence.is_some());
}
