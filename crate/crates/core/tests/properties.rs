use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vrlog::crypto::{ciphertext_len, decrypt_field, encrypt_field, MasterKeys, VoterId};
use vrlog::merkle::{verify_consistency, verify_inclusion, Digest, MerkleLog};
use vrlog::pprl::{dice_similarity, encode_field, match_registries, qgrams, EncodedRecord, EncodingParams};

fn keys() -> MasterKeys {
    MasterKeys::generate_with(&mut ChaCha20Rng::seed_from_u64(11), "prop")
}

fn leaves(n: usize, tag: u8) -> Vec<Vec<u8>> {
    (0..n).map(|i| vec![tag, (i >> 8) as u8, i as u8]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inclusion_round_trips(n in 1usize..300, pick in any::<prop::sample::Index>()) {
        let ls = leaves(n, 7);
        let log = MerkleLog::from_leaves(ls.clone());
        let i = pick.index(n);
        let p = log.prove_inclusion(i as u64).unwrap();
        prop_assert!(verify_inclusion(&log.root(), &ls[i], &p));
        prop_assert!(!verify_inclusion(&log.root(), b"not a leaf", &p));
    }

    #[test]
    fn consistency_iff_prefix(b in 2usize..200, a_pick in any::<prop::sample::Index>(), victim in any::<prop::sample::Index>()) {
        let a = 1 + a_pick.index(b - 1);
        let ls = leaves(b, 1);
        let honest = MerkleLog::from_leaves(ls.clone());
        let old_root = honest.root_at(a as u64).unwrap();
        let p = honest.prove_consistency(a as u64, b as u64).unwrap();
        prop_assert!(verify_consistency(&old_root, &honest.root(), &p));

        let mut forged = MerkleLog::from_leaves(ls);
        forged.rewrite_leaf_for_testing(victim.index(a) as u64, b"rewritten".to_vec());
        let p = forged.prove_consistency(a as u64, b as u64).unwrap();
        prop_assert!(!verify_consistency(&old_root, &forged.root(), &p));
    }

    #[test]
    fn identical_sequences_give_identical_roots(n in 1usize..100) {
        prop_assert_eq!(MerkleLog::from_leaves(leaves(n, 3)).root(), MerkleLog::from_leaves(leaves(n, 3)).root());
    }

    #[test]
    fn ciphertext_length_ignores_content(pad in 1usize..128, len_pick in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let k = keys();
        let key = k.derive_field_key(&k.derive_voter_id(b"v").unwrap(), "c", 1);
        let pt = vec![byte; len_pick.index(pad + 1)];
        let ct = encrypt_field(&key, &pt, pad).unwrap();
        prop_assert_eq!(ct.len(), ciphertext_len(pad));
        prop_assert_eq!(decrypt_field(&key, &ct).unwrap(), pt);
    }

    #[test]
    fn only_the_encrypting_key_opens(base in "[A-Z0-9]{1,12}", col in "[a-z]{1,8}", epoch in 1u64..1000, other in 1u64..1000) {
        prop_assume!(other != epoch);
        let k = keys();
        let v = k.derive_voter_id(base.as_bytes()).unwrap();
        let ct = encrypt_field(&k.derive_field_key(&v, &col, epoch), b"secret", 16).unwrap();
        prop_assert!(decrypt_field(&k.derive_field_key(&v, &col, other), &ct).is_err());
        let other_col = format!("{col}x");
        prop_assert!(decrypt_field(&k.derive_field_key(&v, &other_col, epoch), &ct).is_err());
    }

    #[test]
    fn encoding_popcount_is_bounded(s in "[A-Za-z0-9 ]{0,40}") {
        let params = EncodingParams::with_seed(b"p".to_vec());
        let e = encode_field("name", &s, &params);
        let grams = qgrams(&params.normalize(&s), params.qgram).len();
        prop_assert!(e.popcount() as usize <= params.hashes * grams);
        prop_assert_eq!(e, encode_field("name", &s, &params));
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in "[A-Z ]{0,30}", b in "[A-Z ]{0,30}") {
        let params = EncodingParams::with_seed(b"p".to_vec());
        let (x, y) = (encode_field("f", &a, &params), encode_field("f", &b, &params));
        let d = dice_similarity(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice_similarity(&y, &x).unwrap());
    }

    #[test]
    fn candidates_meet_threshold_and_exact_duplicates_always_match(
        names in prop::collection::vec("[A-Z]{3,12}", 2..12),
        threshold in 0.0f64..=1.0,
    ) {
        let params = EncodingParams::with_seed(b"p".to_vec());
        let fields = vec!["name".to_owned()];
        let rec = |i: usize, s: &str| EncodedRecord {
            voter_id: VoterId(Digest::hash(&[i as u8])),
            encodings: vec![encode_field("name", s, &params)],
        };
        let a: Vec<_> = names.iter().enumerate().map(|(i, s)| rec(i, s)).collect();
        let b: Vec<_> = names.iter().enumerate().map(|(i, s)| rec(i, s)).collect();
        let out = match_registries(&a, &b, &params, &fields, threshold).unwrap();
        prop_assert!(out.iter().all(|c| c.score >= threshold));
        let found: BTreeSet<_> = out.iter().filter(|c| c.a == c.b).map(|c| c.a).collect();
        prop_assert_eq!(found.len(), names.len());
    }
}
