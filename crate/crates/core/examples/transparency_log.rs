//! The two Merkle structures under the registry: an append-only log with
//! inclusion and consistency proofs, and a sparse map with membership and
//! non-membership proofs.
//!
//! ```text
//! cargo run --example transparency_log
//! ```

use vrlog::merkle::{verify_consistency, verify_inclusion, verify_map_proof, Digest, MerkleLog, SparseMerkleMap};

fn main() {
    let mut log = MerkleLog::new();
    log.append((0..5).map(|i| format!("entry {i}").into_bytes())).unwrap();
    let old_root = log.root();
    let old_size = log.size();

    log.append((5..13).map(|i| format!("entry {i}").into_bytes())).unwrap();
    println!("log: {} leaves, root {}", log.size(), log.root());

    let p = log.prove_inclusion(7).unwrap();
    println!("inclusion of leaf 7: {} hashes, ok={}", p.path.len(), verify_inclusion(&log.root(), b"entry 7", &p));
    println!("wrong leaf rejected: {}", !verify_inclusion(&log.root(), b"entry 8", &p));

    let c = log.prove_consistency(old_size, log.size()).unwrap();
    println!(
        "consistency {}..{}: {} hashes, ok={}",
        old_size,
        log.size(),
        c.path.len(),
        verify_consistency(&old_root, &log.root(), &c)
    );

    // A rewritten history no longer extends the old root.
    let forged = MerkleLog::from_leaves((0..13).map(|i| format!("entry {}", if i == 2 { 99 } else { i }).into_bytes()));
    let c2 = forged.prove_consistency(old_size, forged.size()).unwrap();
    println!("rewritten log rejected: {}", !verify_consistency(&old_root, &forged.root(), &c2));

    let mut map = SparseMerkleMap::new();
    let alice = Digest::hash(b"alice");
    let bob = Digest::hash(b"bob");
    map.apply_batch([(alice, b"head 1".to_vec())]).unwrap();
    let root = map.root();

    let (value, proof) = map.get_with_proof(&alice);
    println!("alice present: {}", verify_map_proof(&root, &alice, value.as_deref(), &proof));
    let (value, proof) = map.get_with_proof(&bob);
    println!("bob absent: value={value:?}, proof ok={}", verify_map_proof(&root, &bob, None, &proof));
}
