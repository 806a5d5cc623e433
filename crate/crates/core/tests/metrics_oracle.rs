mod oracle;

use hat_memory::metrics::{bleu_n, distinct_n, f1};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &["a", "b", "c", "d", "e", "the", "cat", "sat"];

fn sentence(rng: &mut impl Rng) -> String {
    let len = rng.random_range(0..8);
    (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

#[test]
fn agrees_with_brute_force_on_100_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..100 {
        let k = rng.random_range(1..5);
        let pairs: Vec<(String, String)> = (0..k).map(|_| (sentence(&mut rng), sentence(&mut rng))).collect();
        let cands: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
        for n in 1..=2 {
            let got = bleu_n(&pairs, n);
            let want = oracle::brute_bleu(&pairs, n);
            assert!((got - want).abs() <= 1e-9, "case {case} bleu-{n}: {got} vs {want}");
            let got = distinct_n(&cands, n);
            let want = oracle::brute_distinct(&cands, n);
            assert!((got - want).abs() <= 1e-9, "case {case} distinct-{n}: {got} vs {want}");
        }
        for (c, r) in &pairs {
            let (got, want) = (f1(c, r), oracle::brute_f1(c, r));
            assert!((got - want).abs() <= 1e-9, "case {case} f1({c:?}, {r:?}): {got} vs {want}");
        }
    }
}

#[test]
fn golden_values() {
    assert_eq!(distinct_n(&["a a b"], 1), 2.0 / 3.0);
    assert_eq!(f1("a b c", "b c d"), 2.0 / 3.0);
    assert_eq!(f1("same words", "same words"), 1.0);
    assert_eq!(f1("x", "y"), 0.0);
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn distinct_is_permutation_invariant(mut cands in prop::collection::vec(words(), 0..6), seed: u64) {
        let before = distinct_n(&cands, 1);
        let before2 = distinct_n(&cands, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(cands.as_mut_slice(), &mut rng);
        prop_assert_eq!(distinct_n(&cands, 1), before);
        prop_assert_eq!(distinct_n(&cands, 2), before2);
    }

    #[test]
    fn bleu_identity_pairs_never_decrease(xs in prop::collection::vec(words(), 1..6), extra in words()) {
        let pairs: Vec<(String, String)> = xs.iter().map(|x| (x.clone(), x.clone())).collect();
        let mut more = pairs.clone();
        more.push((extra.clone(), extra));
        for n in 1..=2 {
            prop_assert!(bleu_n(&more, n) >= bleu_n(&pairs, n));
        }
    }

    #[test]
    fn f1_is_symmetric_and_bounded(c in words(), r in words()) {
        let score = f1(&c, &r);
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert_eq!(score, f1(&r, &c));
    }
}
