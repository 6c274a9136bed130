//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Oracles here are written independently of the
//! library code they check.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vrlog::bench::{self, BenchConfig};
use vrlog::crypto::{decrypt_field, encrypt_field, MasterKeys, VoterId};
use vrlog::merkle::Digest;
use vrlog::pprl::{dice_similarity, encode_field, link_registries, EncodedRegistry, EncodingParams};
use vrlog::registry::{Opcode, Registry, RegistryConfig, SnapshotCommitment, Slot, UpdateProof, UpdateRecord};
use vrlog::synth::{linkage_benchmark, LinkageBenchmark, VoterGenerator};
use vrlog::workflows::{
    audit, audit_bulletin, query_prepare, query_verify, register, update_registration, AuditFailure,
    ExpectedData, QueryFailure, QueryPackage, Signed,
};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 transparency soundness", c1_soundness),
        ("2 key commitment", c2_key_commitment),
        ("3 re-encryption unlinkability", c3_unlinkability),
        ("4 dictionary oracle equivalence", c4_oracle),
        ("5 linkage quality", c5_linkage),
        ("6 linkage storage overhead", c6_storage),
        ("7 performance scaling", c7_performance),
        ("8 offline verifiability", c8_offline),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!ok);
        println!(
            "criterion {name}: {} ({detail}) [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

/// Opens every slot of `record` with keys derived test-side.
fn open_record(keys: &MasterKeys, labels: &[String], record: &UpdateRecord) -> Vec<String> {
    labels
        .iter()
        .zip(&record.slots)
        .map(|(label, slot)| {
            let bytes = match slot {
                Slot::Public { value } => value.clone(),
                Slot::Sealed { ciphertext, .. } => {
                    let k = keys.derive_field_key(&record.voter_id, label, record.meta.epoch);
                    decrypt_field(&k, ciphertext).expect("own key opens own field")
                }
            };
            String::from_utf8(bytes).unwrap()
        })
        .collect()
}

fn labels(reg: &Registry) -> Vec<String> {
    reg.schema().labels().map(str::to_owned).collect()
}

// ------------------------------------------------------------ criterion 1

/// Per-voter plaintext by epoch, as the test believes it.
#[derive(Default)]
struct Truth {
    rows: HashMap<VoterId, ExpectedData>,
}

fn c1_soundness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut gen = VoterGenerator::new(1);
    let mut reg = Registry::in_memory(MasterKeys::generate("clerk"), RegistryConfig::default());
    let pk = reg.public_key();
    let pool = gen.voters(1000);
    let mut truth = Truth::default();
    let mut active: Vec<VoterId> = Vec::new();
    let mut next = 0;
    let mut stale: Vec<(QueryPackage, u64)> = Vec::new();
    let mut honest_checks = 0usize;
    let mut false_alarms = Vec::new();

    for epoch in 1..=20u64 {
        let n_reg = if epoch == 1 { 300 } else { 37 };
        for v in pool[next..(next + n_reg).min(pool.len())].iter() {
            let id = register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
            truth.rows.entry(id).or_default().insert(epoch, v.data.clone());
            active.push(id);
        }
        next = (next + n_reg).min(pool.len());
        if epoch > 1 {
            active.shuffle(&mut rng);
            for &id in active.iter().take(40) {
                let last = truth.rows[&id].values().last().unwrap().clone();
                let moved = gen.relocate(&last);
                update_registration(&mut reg, id, Some(&moved), Opcode::Update).unwrap();
                truth.rows.get_mut(&id).unwrap().insert(epoch, moved);
            }
            for _ in 0..5 {
                let id = active.pop().unwrap();
                update_registration(&mut reg, id, None, Opcode::Deregister).unwrap();
                let last = truth.rows[&id].values().last().unwrap().clone();
                truth.rows.get_mut(&id).unwrap().insert(epoch, last);
            }
        }
        reg.push_epoch().unwrap();

        // Honest checks at every epoch boundary on a sample of voters.
        let cs = reg.bulletin().commitments();
        let ids: Vec<VoterId> = truth.rows.keys().copied().collect();
        for id in ids.choose_multiple(&mut rng, 25) {
            let pkg = query_prepare(&reg, id, 0, epoch).unwrap();
            honest_checks += 1;
            if let Err(e) = query_verify(&pkg, &cs, &pk, Some(&truth.rows[id])) {
                false_alarms.push(format!("query {id} at {epoch}: {e}"));
            }
        }
        if epoch == 10 {
            for id in ids.choose_multiple(&mut rng, 40) {
                stale.push((query_prepare(&reg, id, 0, epoch).unwrap(), epoch));
            }
        }
    }

    let cs = reg.bulletin().commitments();
    for (id, rows) in &truth.rows {
        honest_checks += 1;
        let pkg = query_prepare(&reg, id, 0, reg.epoch()).unwrap();
        if let Err(e) = query_verify(&pkg, &cs, &pk, Some(rows)) {
            false_alarms.push(format!("final query {id}: {e}"));
        }
    }
    for v in audit_bulletin(reg.bulletin().entries(), &pk) {
        honest_checks += 1;
        if !v.accepted {
            false_alarms.push(format!("audit {}->{}: {:?}", v.from_epoch, v.to_epoch, v.failure));
        }
    }
    for (pkg, at) in &stale {
        honest_checks += 1;
        if query_verify(pkg, &cs[..=*at as usize], &pk, None).is_err() {
            false_alarms.push("stale package against its own epoch".into());
        }
    }

    // Faults. Each must be caught by its designated check.
    let mut misses = Vec::new();
    let multi: Vec<VoterId> = truth.rows.iter().filter(|(_, r)| r.len() >= 2).map(|(id, _)| *id).collect();
    let sign = |body| Signed::sign(reg.keys(), body);
    let cols = labels(&reg);
    let sealed: Vec<usize> = reg.schema().columns().iter().enumerate().filter(|(_, c)| !c.public).map(|(i, _)| i).collect();

    for i in 0..40 {
        // Record substitution: swap in another validly signed record.
        let id = multi[rng.gen_range(0..multi.len())];
        let mut body = query_prepare(&reg, &id, 0, reg.epoch()).unwrap().body;
        let n = body.history.records.len();
        let r = rng.gen_range(0..n);
        let donor = if i % 2 == 0 {
            body.history.records[(r + 1) % n].clone()
        } else {
            let other = multi[(multi.iter().position(|x| *x == id).unwrap() + 1) % multi.len()];
            query_prepare(&reg, &other, 0, reg.epoch()).unwrap().body.history.records[0].clone()
        };
        body.history.records[r] = donor;
        match query_verify(&sign(body), &cs, &pk, None) {
            Err(QueryFailure::HistoryMismatch { .. }) => {}
            other => misses.push(format!("substitution: {other:?}")),
        }
    }
    for _ in 0..40 {
        // History omission.
        let id = multi[rng.gen_range(0..multi.len())];
        let mut body = query_prepare(&reg, &id, 0, reg.epoch()).unwrap().body;
        let r = rng.gen_range(0..body.history.records.len());
        body.history.records.remove(r);
        match query_verify(&sign(body), &cs, &pk, None) {
            Err(QueryFailure::HistoryMismatch { .. }) => {}
            other => misses.push(format!("omission: {other:?}")),
        }
    }
    for _ in 0..40 {
        // Wrong-key service: one sealed key replaced with a sibling key.
        let id = multi[rng.gen_range(0..multi.len())];
        let mut body = query_prepare(&reg, &id, 0, reg.epoch()).unwrap().body;
        let k = rng.gen_range(0..body.keys.len());
        let j = sealed[rng.gen_range(0..sealed.len())];
        let epoch = body.keys[k].epoch;
        body.keys[k].keys[j] = if rng.gen_bool(0.5) {
            reg.keys().derive_field_key(&id, &cols[j], epoch + 1)
        } else {
            reg.keys().derive_field_key(&id, &cols[(j + 1) % sealed.len()], epoch)
        };
        match query_verify(&sign(body), &cs, &pk, None) {
            Err(QueryFailure::KeyMismatch { epoch: e, column }) if e == epoch && column == cols[j] => {}
            other => misses.push(format!("wrong key: {other:?}")),
        }
    }
    for (pkg, _) in &stale {
        // Stale-root service: a package anchored at an old epoch.
        match query_verify(pkg, &cs, &pk, None) {
            Err(QueryFailure::HistoryMismatch { reason }) if reason.contains("anchored") => {}
            other => misses.push(format!("stale root: {other:?}")),
        }
    }
    let entries = reg.bulletin().entries().to_vec();
    for _ in 0..40 {
        // Leaf rewrite: the official signs a next epoch over a log with an
        // old leaf replaced.
        let e = rng.gen_range(1..entries.len() - 1);
        let old = &entries[e].commitment;
        let honest = &entries[e + 1].commitment;
        let mut forged = reg.log().clone();
        forged.truncate(honest.log_size);
        let victim = rng.gen_range(0..old.log_size);
        forged.rewrite_leaf_for_testing(victim, format!("forged {victim}").into_bytes());
        let newer = SnapshotCommitment::sign(reg.keys(), honest.epoch, honest.map_root, forged.root(), forged.size());
        let proof = UpdateProof {
            from_epoch: old.epoch,
            to_epoch: newer.epoch,
            consistency: forged.prove_consistency(old.log_size, forged.size()).unwrap(),
            map_root: newer.map_root,
            log_root: newer.log_root,
        };
        let v = audit(old, &newer, &proof, &pk);
        if v.accepted || v.failure != Some(AuditFailure::ConsistencyFail) || v.evidence.is_none() {
            misses.push(format!("leaf rewrite at {victim}: {:?}", v.failure));
        }
    }

    let faults = 40 * 4 + stale.len();
    let ok = faults == 200 && misses.is_empty() && false_alarms.is_empty();
    let mut detail = format!(
        "{} voters, {} epochs, {honest_checks} honest checks with {} false alarms, {faults} faults with {} misses",
        truth.rows.len(),
        reg.epoch(),
        false_alarms.len(),
        misses.len()
    );
    if let Some(m) = misses.first().or(false_alarms.first()) {
        detail += &format!("; first problem: {m}");
    }
    (ok, detail)
}

// ------------------------------------------------------------ criterion 2

fn c2_key_commitment() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let masters = [MasterKeys::generate_with(&mut rng, "a"), MasterKeys::generate_with(&mut rng, "b")];
    let columns = ["name", "dob", "address", "notes"];
    let (mut wrong_ok, mut right_ok) = (0, 0);
    const N: usize = 10_000;
    for i in 0..N {
        let m = &masters[rng.gen_range(0..2)];
        let voter = m.derive_voter_id(format!("base-{}", rng.gen::<u32>()).as_bytes()).unwrap();
        let col = columns[rng.gen_range(0..columns.len())];
        let epoch = rng.gen_range(1..1000u64);
        let key = m.derive_field_key(&voter, col, epoch);
        let plain: String = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
        let ct = encrypt_field(&key, plain.as_bytes(), 64).unwrap();
        if decrypt_field(&key, &ct).as_deref() == Ok(plain.as_bytes()) {
            right_ok += 1;
        }
        let wrong = match i % 4 {
            0 => m.derive_field_key(&voter, col, epoch + rng.gen_range(1..5)),
            1 => m.derive_field_key(&voter, columns[(columns.iter().position(|c| *c == col).unwrap() + 1) % 4], epoch),
            2 => m.derive_field_key(&VoterId(Digest::hash(&rng.gen::<[u8; 16]>())), col, epoch),
            _ => {
                let other = if std::ptr::eq(m, &masters[0]) { &masters[1] } else { &masters[0] };
                other.derive_field_key(&voter, col, epoch)
            }
        };
        if decrypt_field(&wrong, &ct).is_ok() {
            wrong_ok += 1;
        }
    }
    (wrong_ok == 0 && right_ok == N, format!("{N} wrong-key attempts, {wrong_ok} succeeded; {right_ok}/{N} right-key opens"))
}

// ------------------------------------------------------------ criterion 3

fn c3_unlinkability() -> Outcome {
    let mut reg = Registry::in_memory(MasterKeys::generate("clerk"), RegistryConfig::default());
    let voters = VoterGenerator::new(3).voters(500);
    let ids: Vec<VoterId> = voters.iter().map(|v| register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap()).collect();
    reg.push_epoch().unwrap();
    for (id, v) in ids.iter().zip(&voters) {
        update_registration(&mut reg, *id, Some(&v.data), Opcode::Update).unwrap();
    }
    reg.push_epoch().unwrap();

    let (mut slots, mut differ) = (0, 0);
    let mut lens: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for id in &ids {
        let h = reg.history(id, 0, reg.epoch()).unwrap();
        assert_eq!(h.records.len(), 2);
        for j in 0..reg.schema().len() {
            let (a, b) = (h.records[0].slots[j].ciphertext(), h.records[1].slots[j].ciphertext());
            if let (Some(a), Some(b)) = (a, b) {
                slots += 1;
                differ += usize::from(a.nonce != b.nonce && a.body != b.body && a.commitment != b.commitment);
                lens.entry(j).or_default().extend([a.len(), b.len()]);
            }
        }
    }
    let constant = lens.values().all(|s| s.len() == 1);
    let per_col: Vec<String> = lens.iter().map(|(j, s)| format!("{}={:?}", reg.schema().columns()[*j].label, s)).collect();
    (
        slots > 0 && differ == slots && constant,
        format!("{differ}/{slots} sensitive slots differ bytewise; lengths per column {}", per_col.join(" ")),
    )
}

// ------------------------------------------------------------ criterion 4

fn c4_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut gen = VoterGenerator::new(4);
    let mut reg = Registry::in_memory(MasterKeys::generate("clerk"), RegistryConfig::default());
    let cols = labels(&reg);
    let pool = gen.voters(1500);
    // voter -> Some(row) while registered, None once deregistered.
    let mut committed: HashMap<VoterId, Option<Vec<String>>> = HashMap::new();
    let mut staged = committed.clone();
    let mut ops = 0;
    let mut boundaries = 0;
    let mut mismatches = Vec::new();
    while ops < 10_000 {
        let v = &pool[rng.gen_range(0..pool.len())];
        let id = reg.keys().derive_voter_id(v.base_id.as_bytes()).unwrap();
        match staged.get(&id).cloned() {
            None => {
                register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
                staged.insert(id, Some(v.data.clone()));
            }
            Some(Some(row)) if rng.gen_bool(0.9) => {
                let new = gen.relocate(&row);
                update_registration(&mut reg, id, Some(&new), Opcode::Update).unwrap();
                staged.insert(id, Some(new));
            }
            Some(Some(_)) => {
                update_registration(&mut reg, id, None, Opcode::Deregister).unwrap();
                staged.insert(id, None);
            }
            Some(None) => continue,
        }
        ops += 1;
        if ops % 500 == 0 {
            // Queued writes must not show before the push.
            if reg.map().len() != committed.len() {
                mismatches.push(format!("pre-push map size {} vs {}", reg.map().len(), committed.len()));
            }
            reg.push_epoch().unwrap();
            committed = staged.clone();
            boundaries += 1;
            if reg.map().len() != committed.len() {
                mismatches.push(format!("epoch {}: map size {} vs {}", reg.epoch(), reg.map().len(), committed.len()));
            }
            for (id, want) in &committed {
                let Some(head) = reg.head_entry(id) else {
                    mismatches.push(format!("epoch {}: {id} missing", reg.epoch()));
                    continue;
                };
                let (_, rec) = reg.mutation(head.log_index).unwrap();
                if rec.digest() != head.record_digest {
                    mismatches.push(format!("{id}: digest"));
                }
                let got = (rec.meta.opcode == Opcode::Deregister, open_record(reg.keys(), &cols, rec));
                let ok = match want {
                    Some(row) => !got.0 && &got.1 == row,
                    None => got.0,
                };
                if !ok {
                    mismatches.push(format!("epoch {}: {id} differs", reg.epoch()));
                }
            }
        }
    }
    (
        mismatches.is_empty(),
        format!(
            "{ops} operations, {boundaries} epoch boundaries, {} keys, {} mismatches{}",
            committed.len(),
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------------ criterion 5

/// Exact q-gram set Dice, written from the definition.
fn set_dice(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> BTreeSet<String> {
        let n: Vec<char> = s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_uppercase).collect();
        if n.len() < 2 {
            return n.iter().map(|c| c.to_string()).collect();
        }
        n.windows(2).map(|w| w.iter().collect()).collect()
    }
    let (x, y) = (grams(a), grams(b));
    if x.is_empty() && y.is_empty() {
        return 1.0;
    }
    2.0 * x.intersection(&y).count() as f64 / (x.len() + y.len()) as f64
}

fn encoded(name: &str, bench_side: &[vrlog::synth::SyntheticVoter], params: &EncodingParams) -> (EncodedRegistry, Vec<VoterId>) {
    let cfg = RegistryConfig { encoding: Some(params.clone()), ..RegistryConfig::default() };
    let mut reg = Registry::in_memory(MasterKeys::generate(name), cfg);
    let ids = bench_side.iter().map(|v| register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap()).collect();
    reg.push_epoch().unwrap();
    (EncodedRegistry::from_registry(&reg, name).unwrap(), ids)
}

fn precision_recall(bench: &LinkageBenchmark, params: &EncodingParams, threshold: f64) -> (f64, f64, Vec<(f64, bool)>) {
    let (a, ids_a) = encoded("a", &bench.a, params);
    let (b, ids_b) = encoded("b", &bench.b, params);
    let truth: HashMap<VoterId, VoterId> = bench.truth.iter().map(|&(i, j)| (ids_a[i], ids_b[j])).collect();
    let m = link_registries(&a, &b, params, threshold).unwrap();
    let labelled: Vec<(f64, bool)> = m.candidates.iter().map(|c| (c.score, truth.get(&c.a) == Some(&c.b))).collect();
    let tp = labelled.iter().filter(|(_, t)| *t).count() as f64;
    (tp / labelled.len().max(1) as f64, tp / truth.len() as f64, labelled)
}

fn c5_linkage() -> Outcome {
    let params = EncodingParams::with_seed(b"acceptance linkage seed".to_vec());

    // Calibrate on an independent training draw.
    let train = linkage_benchmark(501, 1000, 1000, 100);
    let (_, train_recall, labelled) = precision_recall(&train, &params, 0.5);
    let threshold = vrlog::pprl::calibrate_threshold(&labelled);

    let test = linkage_benchmark(502, 5000, 5000, 500);
    let (precision, recall, _) = precision_recall(&test, &params, threshold);

    // Bit-level Dice against the set oracle, over true pairs and random pairs.
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut pairs: Vec<(usize, usize)> = test.truth.clone();
    pairs.extend((0..2000).map(|_| (rng.gen_range(0..test.a.len()), rng.gen_range(0..test.b.len()))));
    let fields = ["name", "dob", "address"];
    let (mut err_sum, mut err_max, mut count) = (0.0, 0.0f64, 0);
    for &(i, j) in &pairs {
        for (k, f) in fields.iter().enumerate() {
            let (x, y) = (&test.a[i].data[k], &test.b[j].data[k]);
            let bits = dice_similarity(&encode_field(f, x, &params), &encode_field(f, y, &params)).unwrap();
            let e = (bits - set_dice(x, y)).abs();
            err_sum += e;
            err_max = err_max.max(e);
            count += 1;
        }
    }
    let mae = err_sum / count as f64;
    (
        precision >= 0.95 && recall >= 0.95 && mae <= 0.05,
        format!(
            "threshold {threshold:.3} (training recall at 0.5: {train_recall:.3}); precision {precision:.4}, recall {recall:.4}; \
             Dice MAE {mae:.4} (max {err_max:.3}) over {count} field pairs"
        ),
    )
}

// ------------------------------------------------------------ criterion 6

fn record_bytes(reg: &Registry) -> usize {
    (0..reg.log().size()).map(|i| reg.mutation(i).unwrap().1.to_bytes().len()).sum()
}

fn c6_storage() -> Outcome {
    let voters = VoterGenerator::new(6).voters(2000);
    let build = |encoding: Option<EncodingParams>, dir: &Path| {
        let cfg = RegistryConfig { encoding, ..RegistryConfig::default() };
        let mut reg = Registry::create(dir, MasterKeys::generate("clerk"), cfg).unwrap();
        for v in &voters {
            register(&mut reg, v.base_id.as_bytes(), &v.data).unwrap();
        }
        reg.push_epoch().unwrap();
        (record_bytes(&reg), reg.storage_bytes())
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (plain, plain_disk) = build(None, d1.path());
    let (linked, linked_disk) = build(Some(EncodingParams::with_seed(b"s".to_vec())), d2.path());
    let ratio = linked as f64 / plain as f64;
    let disk_ratio = linked_disk as f64 / plain_disk as f64;
    (
        (1.5..=2.5).contains(&ratio),
        format!(
            "record bytes {linked} vs {plain}, ratio {ratio:.3}; on-disk total ratio {disk_ratio:.3} ({} voters, default schema)",
            voters.len()
        ),
    )
}

// ------------------------------------------------------------ criterion 7

fn c7_performance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BenchConfig::default();
    let report = bench::run(&cfg, &dir.path().join("registry")).unwrap();
    let n = *cfg.sizes.iter().max().unwrap() as u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (op, limit_us) in [("add", 50_000.0), ("update", 50_000.0), ("lookup_prove", 50_000.0), ("verify", 50_000.0), ("prove_append_only", 1e6)] {
        let mean = report.mean(op, n).unwrap_or(f64::INFINITY);
        ok &= mean < limit_us;
        parts.push(format!("{op} {:.3} ms", mean / 1000.0));
    }
    let fit = report.storage_fit();
    ok &= fit.r2 >= 0.99;
    (
        ok,
        format!(
            "n={n}: {}; storage {:.0} B/op, R2 {:.5}; {:?}",
            parts.join(", "),
            fit.slope,
            fit.r2,
            report.machine
        ),
    )
}

// ------------------------------------------------------------ criterion 8

/// Runs the CLI. With `offline`, inside a fresh network namespace when the
/// host allows one.
fn vrlog(dir: &Path, offline: bool, args: &[&str]) -> Output {
    let bin = env!("CARGO_BIN_EXE_vrlog");
    let mut cmd = match netns_flags().filter(|_| offline) {
        Some(flags) => {
            let mut c = Command::new("unshare");
            c.args([flags, bin]);
            c
        }
        None => Command::new(bin),
    };
    cmd.args(args)
        .current_dir(dir)
        .env("VRLOG_KEYSTORE", dir.join("keys.json"))
        .env("VRLOG_DATA_DIR", dir.join("data"))
        .output()
        .unwrap()
}

/// `unshare` flags that give the binary an empty network namespace, if any
/// work here.
fn netns_flags() -> Option<&'static str> {
    static FLAGS: std::sync::OnceLock<Option<&'static str>> = std::sync::OnceLock::new();
    *FLAGS.get_or_init(|| {
        ["-n", "-rn"].into_iter().find(|f| {
            Command::new("unshare")
                .args([f, env!("CARGO_BIN_EXE_vrlog"), "--version"])
                .output()
                .is_ok_and(|o| o.status.success())
        })
    })
}

fn c8_offline() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let must = |o: Output, what: &str| {
        assert!(o.status.success(), "{what}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    must(vrlog(d, false, &["init-keys"]), "init-keys");
    std::fs::write(d.join("policy.json"), r#"{"access":{"third_parties":{"dmv":{"columns":["address"]}}}}"#).unwrap();
    must(vrlog(d, false, &["init-registry", "--policy", "policy.json"]), "init-registry");
    let mut csv = String::from("base_id,name,dob,address,party,status\n");
    for v in VoterGenerator::new(8).voters(30) {
        csv += &format!("{},{}\n", v.base_id, v.data.join(","));
    }
    std::fs::write(d.join("roll.csv"), csv).unwrap();
    let out = must(vrlog(d, false, &["register", "--csv", "roll.csv", "--push"]), "register");
    let reg: serde_json::Value = serde_json::from_str(&out).unwrap();
    let voter = reg["voters"][0]["voter_id"].as_str().unwrap().to_owned();
    must(vrlog(d, false, &["update", "--voter", &voter, "--set", "address=9 RIVER RD"]), "update");
    must(vrlog(d, false, &["push-epoch"]), "push");
    must(vrlog(d, false, &["push-epoch"]), "push");
    must(vrlog(d, false, &["query", "--voter", &voter, "--out", "pkg.json"]), "query");
    must(vrlog(d, false, &["disclose", "--third-party", "dmv", "--voter", &voter, "--out", "dmv.json"]), "disclose");
    must(vrlog(d, false, &["export-bulletin", "--out", "bulletin.json"]), "export");

    // From here on nothing needs the keystore, the data directory or a network.
    std::fs::remove_file(d.join("keys.json")).unwrap();
    std::fs::remove_dir_all(d.join("data")).unwrap();
    let isolated = netns_flags().is_some();
    let mut checks = Vec::new();
    let verify = vrlog(d, true, &["verify", "--package", "pkg.json", "--bulletin", "bulletin.json"]);
    checks.push(("voter verify", verify.status.success() && String::from_utf8_lossy(&verify.stdout).starts_with("VERIFIED")));
    let recv = vrlog(d, true, &["receive", "--package", "dmv.json", "--bulletin", "bulletin.json"]);
    checks.push(("third-party receive", recv.status.success() && String::from_utf8_lossy(&recv.stdout).contains("9 RIVER RD")));
    let mut audits = true;
    for e in 0..3u64 {
        let o = vrlog(d, true, &["audit", "--bulletin", "bulletin.json", "--older", &e.to_string(), "--newer", &(e + 1).to_string()]);
        audits &= o.status.success();
    }
    checks.push(("auditor audits", audits));
    let watch = vrlog(d, true, &["watch", "--bulletin", "bulletin.json", "--polls", "1"]);
    checks.push(("auditor watch", watch.status.success() && String::from_utf8_lossy(&watch.stdout).lines().count() == 3));

    // A tampered package must fail offline too.
    let mut pkg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pkg.json")).unwrap()).unwrap();
    pkg["body"]["history"]["records"].as_array_mut().unwrap().remove(0);
    std::fs::write(d.join("bad.json"), pkg.to_string()).unwrap();
    let bad = vrlog(d, true, &["verify", "--package", "bad.json", "--bulletin", "bulletin.json"]);
    checks.push(("tampered package rejected", !bad.status.success()));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    (
        failed.is_empty(),
        format!(
            "{}/{} CLI checks passed {}{}",
            checks.len() - failed.len(),
            checks.len(),
            if isolated { "inside an empty network namespace" } else { "without network isolation (unshare unavailable)" },
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}
