//! Runs the registry service on a local port and drives it with the
//! blocking client: official writes with a bearer token, public reads
//! verified against the served bulletin.
//!
//! ```text
//! cargo run --example http_service
//! ```

use vrlog::crypto::MasterKeys;
use vrlog::registry::verify_lookup;
use vrlog::service::{spawn, FieldMap, HistoryResponse, ServiceClient, ServiceConfig};
use vrlog::workflows::{audit_bulletin, query_verify};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let keystore = dir.path().join("keys.json");
    MasterKeys::generate("clerk").save(&keystore, false).unwrap();
    let mut cfg = ServiceConfig::new(&keystore, dir.path().join("data"));
    cfg.listen = "127.0.0.1:0".parse().unwrap();
    cfg.write_tokens = vec!["backend-token".into()];
    let svc = spawn(cfg).unwrap();
    println!("listening on {}", svc.url());

    let official = ServiceClient::new(svc.url()).with_token("backend-token");
    let public = ServiceClient::new(svc.url());

    let row = |addr: &str| {
        FieldMap::from([
            ("name".into(), "GRACE HOPPER".into()),
            ("dob".into(), "1906-12-09".into()),
            ("address".into(), addr.into()),
            ("party".into(), "UNA".into()),
            ("status".into(), "ACTIVE".into()),
        ])
    };
    let id = official.register("NY-0001", row("1 NAVY YD")).unwrap().voter_id;
    println!("anonymous write: {}", public.register("NY-0002", row("X")).unwrap_err());
    official.push_epoch().unwrap();
    official.update(&id, FieldMap::from([("address".into(), "7 COMPILER CT".into())])).unwrap();
    official.push_epoch().unwrap();

    let bulletin = public.bulletin().unwrap();
    let head = &bulletin.entries.last().unwrap().commitment;
    println!("bulletin has {} epochs", bulletin.entries.len());
    println!("lookup verifies: {}", verify_lookup(head, &bulletin.official_key, &public.lookup(&id).unwrap()).is_ok());
    match public.history(&id, None, None).unwrap() {
        HistoryResponse::History(h) => println!("public history: {} records, no keys", h.records.len()),
        HistoryResponse::Package(_) => unreachable!(),
    }

    let pkg = official.query(&id, None, None).unwrap();
    let report = query_verify(&pkg, &bulletin.commitments(), &bulletin.official_key, None).unwrap();
    println!("voter's rows: {:?}", report.rows);

    let ghost = vrlog::crypto::VoterId(vrlog::merkle::Digest::hash(b"nobody"));
    let err = public.lookup(&ghost).unwrap_err();
    let proof = err.absence_proof().unwrap();
    println!("{err}; absence proof verifies: {}", verify_lookup(head, &bulletin.official_key, &proof).is_ok());

    let ok = audit_bulletin(&bulletin.entries, &bulletin.official_key).iter().all(|v| v.accepted);
    println!("all epoch transitions audit clean: {ok}");
}
