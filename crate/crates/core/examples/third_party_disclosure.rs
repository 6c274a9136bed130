//! Releasing keys to an authorized third party under a column-level policy.
//! The recipient checks every lookup proof and opens only granted fields.
//!
//! ```text
//! cargo run --example third_party_disclosure
//! ```

use vrlog::crypto::MasterKeys;
use vrlog::registry::{Policy, Registry, RegistryConfig};
use vrlog::synth::VoterGenerator;
use vrlog::workflows::{maintenance_disclose, maintenance_receive, register};

fn main() {
    let mut policy = Policy::default();
    policy.access.grant_column("jury-commission", "name");
    policy.access.grant_column("jury-commission", "address");
    policy.access.add_party("newspaper");
    let cfg = RegistryConfig { policy, ..RegistryConfig::default() };
    let mut reg = Registry::in_memory(MasterKeys::generate("clerk"), cfg);

    let mut gen = VoterGenerator::new(5);
    let ids: Vec<_> = gen.voters(5).iter().map(|v| register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap()).collect();
    let head = reg.push_epoch().unwrap().commitment;

    let pkg = maintenance_disclose(&reg, "jury-commission", &ids).unwrap();
    let rows = maintenance_receive(&pkg, &head, &reg.public_key()).unwrap();
    println!("columns: {:?}", pkg.body.columns);
    for r in &rows {
        let shown: Vec<&str> = r.fields.iter().map(|f| f.as_deref().unwrap_or("-")).collect();
        println!("{}  {}", &r.voter_id.to_hex()[..12], shown.join(" | "));
    }

    let none = maintenance_disclose(&reg, "newspaper", &ids).unwrap();
    println!("newspaper receives {} voters", none.body.voters.iter().flatten().count());
    println!("unknown party: {}", maintenance_disclose(&reg, "pollster", &ids).unwrap_err());

    let mut tampered = pkg.clone();
    tampered.body.voters.swap(0, 1);
    println!("tampered package: {}", maintenance_receive(&tampered, &head, &reg.public_key()).unwrap_err());
}
