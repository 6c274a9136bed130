//! A voter asks for their own history and checks it offline: signatures,
//! proofs against the bulletin, and the decrypted rows against what they
//! expect. A package with a record dropped is caught.
//!
//! ```text
//! cargo run --example voter_query
//! ```

use vrlog::crypto::MasterKeys;
use vrlog::registry::{Opcode, Registry, RegistryConfig};
use vrlog::synth::VoterGenerator;
use vrlog::workflows::{query_prepare, query_verify, register, update_registration, ExpectedData, Signed};

fn main() {
    let keys = MasterKeys::generate("clerk");
    let mut reg = Registry::in_memory(keys, RegistryConfig::default());
    let mut gen = VoterGenerator::new(3);

    let me = gen.voter();
    let id = register(&mut reg, me.base_id.as_bytes(), &me.data).unwrap();
    for v in gen.voters(20) {
        register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
    }
    reg.push_epoch().unwrap();
    let moved = gen.relocate(&me.data);
    update_registration(&mut reg, id, Some(&moved), Opcode::Update).unwrap();
    reg.push_epoch().unwrap();
    reg.push_epoch().unwrap();

    let pkg = query_prepare(&reg, &id, 0, reg.epoch()).unwrap();
    let bulletin = reg.export_bulletin();
    let commitments = bulletin.commitments();

    let expected = ExpectedData::from([(1, me.data.clone()), (2, moved.clone())]);
    let report = query_verify(&pkg, &commitments, &bulletin.official_key, Some(&expected)).unwrap();
    for (epoch, row) in &report.rows {
        println!("epoch {epoch}: {}", row.join(" | "));
    }

    let mut wrong = expected.clone();
    wrong.get_mut(&2).unwrap()[2] = "1 NOWHERE LN".into();
    println!("wrong expectation: {}", query_verify(&pkg, &commitments, &bulletin.official_key, Some(&wrong)).unwrap_err());

    // The official re-signs a package with the update left out.
    let mut body = pkg.body.clone();
    body.history.records.pop();
    let forged = Signed::sign(reg.keys(), body);
    println!("omitted record: {}", query_verify(&forged, &commitments, &bulletin.official_key, None).unwrap_err());
}
