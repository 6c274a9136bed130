//! The official's loop: queue registrations and updates, push an epoch,
//! publish the signed commitment, answer lookups with proofs.
//!
//! ```text
//! cargo run --example register_and_push
//! ```

use vrlog::crypto::MasterKeys;
use vrlog::registry::{verify_lookup, Opcode, Registry, RegistryConfig};
use vrlog::synth::VoterGenerator;
use vrlog::workflows::{register, update_registration};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let keystore = dir.path().join("keys.json");
    MasterKeys::generate("clerk").save(&keystore, false).unwrap();
    let data = dir.path().join("data");
    let mut reg = Registry::create(&data, MasterKeys::load(&keystore).unwrap(), RegistryConfig::default()).unwrap();
    let pk = reg.public_key();

    let mut gen = VoterGenerator::new(1);
    let mut ids = Vec::new();
    for v in gen.voters(50) {
        ids.push(register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap());
    }
    let e1 = reg.push_epoch().unwrap();
    println!("epoch {}: log size {}, map root {}", e1.commitment.epoch, e1.commitment.log_size, e1.commitment.map_root);

    let moved = gen.relocate(&reg.current_data(&ids[0]).unwrap().unwrap());
    update_registration(&mut reg, ids[0], Some(&moved), Opcode::Update).unwrap();
    update_registration(&mut reg, ids[1], None, Opcode::Deregister).unwrap();
    println!("queued {} updates for epoch {}", reg.queue().len(), reg.pending_epoch());
    let e2 = reg.push_epoch().unwrap();
    println!("epoch {}: log size {}", e2.commitment.epoch, e2.commitment.log_size);

    let lookup = reg.lookup(&ids[0]);
    println!("lookup verifies: {}", verify_lookup(&e2.commitment, &pk, &lookup).is_ok());
    println!("latest opcode for voter 1: {:?}", reg.lookup(&ids[1]).record.unwrap().meta.opcode);

    drop(reg);
    let reg = Registry::open(&data, MasterKeys::load(&keystore).unwrap()).unwrap();
    println!("reopened at epoch {}", reg.epoch());
}
