use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::merkle::verify_consistency;

fn keys(seed: u64) -> MasterKeys {
    MasterKeys::generate_with(&mut ChaCha20Rng::seed_from_u64(seed), "clerk-7")
}

fn row(name: &str) -> Vec<String> {
    vec![name.into(), "1980-01-01".into(), "1 MAIN ST".into(), "DEM".into(), "active".into()]
}

fn add(r: &mut Registry, base: &str) -> VoterId {
    let id = r.keys().derive_voter_id(base.as_bytes()).unwrap();
    let rec = r.build_record(id, &row(base), Opcode::Add).unwrap();
    r.enqueue(id, rec).unwrap();
    id
}

fn update(r: &mut Registry, id: VoterId, name: &str, op: Opcode) {
    let rec = r.build_record(id, &row(name), op).unwrap();
    r.enqueue(id, rec).unwrap();
}

fn mem() -> Registry {
    Registry::in_memory(keys(1), RegistryConfig::default())
}

fn check_transition(r: &Registry, e: u64) {
    let prev = &r.bulletin().read(e - 1).unwrap().commitment;
    let cur = r.bulletin().read(e).unwrap();
    assert!(verify_consistency(&prev.log_root, &cur.commitment.log_root, &cur.update_proof.consistency));
}

#[test]
fn genesis_is_published() {
    let r = mem();
    assert_eq!(r.epoch(), 0);
    let c = r.latest_commitment();
    assert_eq!(c.log_size, 0);
    assert_eq!(c.log_root, empty_root());
    assert!(c.verify(&r.public_key()));
}

#[test]
fn queued_updates_are_invisible_until_push() {
    let mut r = mem();
    let id = add(&mut r, "ALICE");
    let lk = r.lookup(&id);
    assert!(lk.entry.is_none());
    verify_lookup(r.latest_commitment(), &r.public_key(), &lk).unwrap();
    assert_eq!(r.status(&id), VoterStatus::Active);
    r.push_epoch().unwrap();
    let lk = r.lookup(&id);
    assert_eq!(lk.record.as_ref().unwrap().meta.opcode, Opcode::Add);
    assert_eq!(lk.record.as_ref().unwrap().meta.epoch, 1);
    verify_lookup(r.latest_commitment(), &r.public_key(), &lk).unwrap();
}

#[test]
fn idle_epoch_keeps_map_root() {
    let mut r = mem();
    add(&mut r, "A");
    r.push_epoch().unwrap();
    let before = r.latest_commitment().clone();
    let entry = r.push_epoch().unwrap();
    assert_eq!(entry.commitment.epoch, 2);
    assert_eq!(entry.commitment.map_root, before.map_root);
    assert_eq!(entry.commitment.log_root, before.log_root);
    check_transition(&r, 2);
}

#[test]
fn hundred_updates_then_audit_transition() {
    let mut r = mem();
    let ids: Vec<_> = (0..100).map(|i| add(&mut r, &format!("V{i}"))).collect();
    let root0 = r.latest_commitment().map_root;
    r.push_epoch().unwrap();
    assert_ne!(r.latest_commitment().map_root, root0);
    check_transition(&r, 1);
    for id in &ids {
        verify_lookup(r.latest_commitment(), &r.public_key(), &r.lookup(id)).unwrap();
    }
}

#[test]
fn same_epoch_updates_log_both_map_keeps_last() {
    let mut r = mem();
    let id = add(&mut r, "BOB");
    r.push_epoch().unwrap();
    update(&mut r, id, "BOB ONE", Opcode::Update);
    update(&mut r, id, "BOB TWO", Opcode::Update);
    let other = add(&mut r, "CAROL");
    r.push_epoch().unwrap();
    assert_eq!(r.log().size(), 4);
    let (e2, _) = r.mutation(2).unwrap();
    let (e3, _) = r.mutation(3).unwrap();
    assert_eq!((e2.voter_id, e2.seq, e2.prev_index), (id, 2, Some(1)));
    assert_eq!((e3.voter_id, e3.seq), (other, 0));
    assert_eq!(r.head_entry(&id).unwrap().log_index, 2);
    assert_eq!(r.current_data(&id).unwrap().unwrap()[0], "BOB TWO");
    let h = r.history(&id, 0, 2).unwrap();
    assert_eq!(h.records.len(), 3);
    verify_history(&r.bulletin().commitments(), &r.public_key(), &h).unwrap();
}

#[test]
fn history_of_add_and_two_updates() {
    let mut r = mem();
    let id = add(&mut r, "DAN");
    r.push_epoch().unwrap();
    r.push_epoch().unwrap();
    update(&mut r, id, "DAN B", Opcode::Update);
    r.push_epoch().unwrap();
    update(&mut r, id, "DAN C", Opcode::Update);
    r.push_epoch().unwrap();
    let pk = r.public_key();
    let cs = r.bulletin().commitments();
    let h = r.history(&id, 0, 4).unwrap();
    assert_eq!(h.records.iter().map(|r| r.meta.epoch).collect::<Vec<_>>(), vec![1, 3, 4]);
    verify_history(&cs, &pk, &h).unwrap();

    let mid = r.history(&id, 2, 3).unwrap();
    assert_eq!(mid.records.len(), 1);
    verify_history(&cs, &pk, &mid).unwrap();

    let none = r.history(&id, 2, 2).unwrap();
    assert!(none.records.is_empty());
    verify_history(&cs, &pk, &none).unwrap();

    let unknown = VoterId(Digest::hash(b"nobody"));
    let h = r.history(&unknown, 0, 4).unwrap();
    assert!(h.records.is_empty() && h.proof.head.is_none());
    verify_history(&cs, &pk, &h).unwrap();

    assert!(matches!(r.history(&id, 0, 5), Err(RegistryError::RangeOutOfBounds { .. })));
    assert!(matches!(r.history(&id, 3, 2), Err(RegistryError::RangeOutOfBounds { .. })));
}

#[test]
fn tampered_histories_are_rejected() {
    let mut r = mem();
    let id = add(&mut r, "EVE");
    r.push_epoch().unwrap();
    update(&mut r, id, "EVE B", Opcode::Update);
    r.push_epoch().unwrap();
    update(&mut r, id, "EVE C", Opcode::Update);
    r.push_epoch().unwrap();
    let pk = r.public_key();
    let cs = r.bulletin().commitments();
    let honest = r.history(&id, 0, 3).unwrap();

    // Substitute a differently encrypted but validly signed record.
    let mut sub = honest.clone();
    let mut fake = sub.records[1].clone();
    let replacement = r.build_record(id, &row("MALLORY"), Opcode::Update).unwrap();
    fake.slots = replacement.slots;
    fake.signature = r.keys().sign(&fake.signing_bytes());
    sub.records[1] = fake;
    assert!(matches!(verify_history(&cs, &pk, &sub), Err(ProofError::RecordMismatch { epoch: 2 })));

    // Omit the middle update, with and without its link.
    let mut omit = honest.clone();
    omit.records.remove(1);
    assert!(matches!(verify_history(&cs, &pk, &omit), Err(ProofError::CountMismatch { .. })));
    omit.proof.links.remove(1);
    assert!(matches!(verify_history(&cs, &pk, &omit), Err(ProofError::Chain(_))));

    // Drop the newest update entirely, keeping an older head.
    let mut stale = honest.clone();
    stale.records.pop();
    stale.proof.links.remove(0);
    assert!(verify_history(&cs, &pk, &stale).is_err());

    // Serve against a bulletin that has moved on.
    r.push_epoch().unwrap();
    assert!(matches!(
        verify_history(&r.bulletin().commitments(), &pk, &honest),
        Err(ProofError::StaleHead { head: 3, latest: 4 })
    ));

    // Missing commitment.
    assert!(matches!(verify_history(&cs[..2], &pk, &honest), Err(ProofError::MissingCommitment(_))));

    // Wrong official key.
    assert!(matches!(verify_history(&cs, &keys(2).public_key(), &honest), Err(ProofError::BadCommitment(_))));
}

#[test]
fn tombstone_keeps_history() {
    let mut r = mem();
    let id = add(&mut r, "FAY");
    r.push_epoch().unwrap();
    let data = r.current_data(&id).unwrap().unwrap();
    update(&mut r, id, &data[0], Opcode::Deregister);
    r.push_epoch().unwrap();
    assert_eq!(r.status(&id), VoterStatus::Deregistered);
    let lk = r.lookup(&id);
    assert_eq!(lk.record.as_ref().unwrap().meta.opcode, Opcode::Deregister);
    let h = r.history(&id, 0, 2).unwrap();
    assert_eq!(h.records.len(), 2);
    verify_history(&r.bulletin().commitments(), &r.public_key(), &h).unwrap();
}

#[test]
fn wrong_epoch_or_foreign_record_is_refused() {
    let mut r = mem();
    let id = r.keys().derive_voter_id(b"G").unwrap();
    let rec = r.build_record(id, &row("G"), Opcode::Add).unwrap();
    r.push_epoch().unwrap();
    assert!(matches!(r.enqueue(id, rec), Err(RegistryError::WrongEpoch { expected: 2, got: 1 })));
    let rec = r.build_record(id, &row("G"), Opcode::Add).unwrap();
    assert!(matches!(r.enqueue(VoterId(Digest::hash(b"x")), rec), Err(RegistryError::SchemaMismatch(_))));
}

#[test]
fn persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Registry::open(dir.path(), keys(3)).unwrap();
    let ids: Vec<_> = (0..10).map(|i| add(&mut r, &format!("P{i}"))).collect();
    r.push_epoch().unwrap();
    update(&mut r, ids[0], "P0 NEW", Opcode::Update);
    r.push_epoch().unwrap();
    let queued = add(&mut r, "QUEUED");
    let root = r.latest_commitment().clone();
    drop(r);

    let r = Registry::open(dir.path(), keys(3)).unwrap();
    assert_eq!(r.latest_commitment(), &root);
    assert_eq!(r.queue().len(), 1);
    assert_eq!(r.status(&queued), VoterStatus::Active);
    for id in &ids {
        verify_lookup(r.latest_commitment(), &r.public_key(), &r.lookup(id)).unwrap();
    }
    check_transition(&r, 1);
    check_transition(&r, 2);
    let h = r.history(&ids[0], 0, 2).unwrap();
    verify_history(&r.bulletin().commitments(), &r.public_key(), &h).unwrap();
}

#[test]
fn reopen_with_other_keys_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    drop(Registry::open(dir.path(), keys(3)).unwrap());
    assert!(matches!(Registry::open(dir.path(), keys(4)), Err(RegistryError::CorruptState(_))));
}

#[test]
fn create_twice_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    drop(Registry::create(dir.path(), keys(3), RegistryConfig::default()).unwrap());
    assert!(matches!(
        Registry::create(dir.path(), keys(3), RegistryConfig::default()),
        Err(RegistryError::AlreadyInitialized)
    ));
}

#[derive(Debug, PartialEq)]
struct Snapshot {
    epoch: u64,
    commitment: SnapshotCommitment,
    queue: Vec<Digest>,
    map: BTreeMap<Digest, Vec<u8>>,
}

fn snapshot(r: &Registry) -> Snapshot {
    Snapshot {
        epoch: r.epoch(),
        commitment: r.latest_commitment().clone(),
        queue: r.queue().iter().map(|(_, rec)| rec.digest()).collect(),
        map: r.map().entries().clone(),
    }
}

fn crash_at(point: CrashPoint) -> (Snapshot, Snapshot, Registry, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Registry::open(dir.path(), keys(5)).unwrap();
    let a = add(&mut r, "H1");
    r.push_epoch().unwrap();
    update(&mut r, a, "H1 B", Opcode::Update);
    add(&mut r, "H2");
    let before = snapshot(&r);
    r.set_crash_point(Some(point));
    assert!(matches!(r.push_epoch(), Err(RegistryError::StorageFailure(_))));
    assert!(matches!(r.push_epoch(), Err(RegistryError::Poisoned)));
    drop(r);
    let reopened = Registry::open(dir.path(), keys(5)).unwrap();
    let after = snapshot(&reopened);
    (before, after, reopened, dir)
}

#[test]
fn crash_after_log_write_restores_pre_push_state() {
    let (before, after, mut r, _dir) = crash_at(CrashPoint::AfterLogWrite);
    assert_eq!(before, after);
    r.push_epoch().unwrap();
    assert_eq!(r.epoch(), 2);
    check_transition(&r, 2);
}

#[test]
fn crash_after_bulletin_write_rolls_forward() {
    let (before, after, r, _dir) = crash_at(CrashPoint::AfterBulletinWrite);
    assert_eq!(after.epoch, before.epoch + 1);
    assert!(after.queue.is_empty());
    assert_eq!(r.log().size(), 3);
    check_transition(&r, 2);
}

#[test]
fn truncated_bulletin_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Registry::open(dir.path(), keys(6)).unwrap();
    add(&mut r, "I");
    r.push_epoch().unwrap();
    r.push_epoch().unwrap();
    drop(r);
    let p = dir.path().join("bulletin.jsonl");
    let text = std::fs::read_to_string(&p).unwrap();
    std::fs::write(&p, &text[..text.len() - 7]).unwrap();
    assert!(matches!(Registry::open(dir.path(), keys(6)), Err(RegistryError::CorruptState(_))));
    // Whole-line truncation leaves head ahead of the bulletin.
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&p, format!("{}\n{}\n", lines[0], lines[1])).unwrap();
    assert!(matches!(Registry::open(dir.path(), keys(6)), Err(RegistryError::CorruptState(_))));
}

#[test]
fn rewritten_leaf_on_disk_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Registry::open(dir.path(), keys(6)).unwrap();
    add(&mut r, "J");
    add(&mut r, "K");
    r.push_epoch().unwrap();
    drop(r);
    let p = dir.path().join("log/records.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(Registry::open(dir.path(), keys(6)), Err(RegistryError::CorruptState(_))));
}

#[derive(Debug, Clone)]
enum Op {
    Put(u8, u8),
    Push,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![4 => (0u8..12, any::<u8>()).prop_map(|(v, x)| Op::Put(v, x)), 1 => Just(Op::Push)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// After every push, map contents equal a last-write-wins replay of the
    /// committed mutations in a plain dictionary.
    #[test]
    fn map_matches_dictionary_replay(ops in proptest::collection::vec(op(), 1..60)) {
        let mut r = mem();
        let mut oracle: BTreeMap<Digest, Digest> = BTreeMap::new();
        let mut staged: Vec<(VoterId, Digest)> = Vec::new();
        for o in ops.iter().chain(std::iter::once(&Op::Push)) {
            match o {
                Op::Put(v, x) => {
                    let id = r.keys().derive_voter_id(&[*v]).unwrap();
                    let op = if r.status(&id) == VoterStatus::Unknown { Opcode::Add } else { Opcode::Update };
                    let rec = r.build_record(id, &row(&format!("N{x}")), op).unwrap();
                    staged.push((id, rec.digest()));
                    r.enqueue(id, rec).unwrap();
                }
                Op::Push => {
                    r.push_epoch().unwrap();
                    for (id, d) in staged.drain(..) {
                        oracle.insert(id.0, d);
                    }
                    let got: BTreeMap<Digest, Digest> = r.map().entries().iter()
                        .map(|(k, v)| (*k, MapEntry::from_bytes(v).unwrap().record_digest))
                        .collect();
                    prop_assert_eq!(&got, &oracle);
                    prop_assert_eq!(r.map().revision(), r.epoch());
                }
            }
        }
        for i in 0..r.log().size() {
            let (e, rec) = r.mutation(i).unwrap();
            prop_assert_eq!(rec.meta.epoch, e.epoch);
            let c = &r.bulletin().read(e.epoch).unwrap().commitment;
            prop_assert!(i < c.log_size);
        }
    }
}
