use proptest::prelude::*;
use qf_core::{
    ConcurrentConfig, ConcurrentQf, Error, ExpandableConfig, ExpandableQf, FilterParams, Fingerprint, LinearProbingQf,
    QuotientFilter, Variant,
};

fn params(q: u32, r: u32) -> FilterParams {
    FilterParams::new(q, r).unwrap()
}

fn fingerprints(q: u32, r: u32) -> impl Strategy<Value = Vec<Fingerprint>> {
    let max = ((1usize << q) as f64 * 0.9) as usize;
    prop::collection::vec((0..1u64 << q, 0..1u64 << r), 0..max)
        .prop_map(|v| v.into_iter().map(|(quotient, remainder)| Fingerprint { quotient, remainder }).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn three_bit_filter_is_a_fingerprint_multiset(fps in fingerprints(7, 5), probes in prop::collection::vec((0..128u64, 0..32u64), 200)) {
        let mut f = QuotientFilter::new(params(7, 5), Variant::ThreeBit).unwrap();
        for &fp in &fps {
            f.insert_fingerprint(fp).unwrap();
        }
        let mut sorted = fps.clone();
        sorted.sort_unstable();
        prop_assert_eq!(f.fingerprints(), sorted.clone());
        prop_assert!(f.check_invariants().is_ok());
        for (quotient, remainder) in probes {
            let fp = Fingerprint { quotient, remainder };
            prop_assert_eq!(f.contains_fingerprint(fp), sorted.binary_search(&fp).is_ok());
        }
    }

    #[test]
    fn two_bit_filter_answers_like_three_bit(fps in fingerprints(7, 5)) {
        let fps: Vec<_> = fps.into_iter().filter(|fp| fp.remainder != 0).collect();
        let mut three = QuotientFilter::new(params(7, 5), Variant::ThreeBit).unwrap();
        let mut two = QuotientFilter::new(params(7, 5), Variant::TwoBit).unwrap();
        for &fp in &fps {
            three.insert_fingerprint(fp).unwrap();
            two.insert_fingerprint(fp).unwrap();
        }
        prop_assert!(two.check_invariants().is_ok());
        for quotient in 0..128 {
            for remainder in 1..32 {
                let fp = Fingerprint { quotient, remainder };
                prop_assert_eq!(two.contains_fingerprint(fp), three.contains_fingerprint(fp));
            }
        }
    }

    #[test]
    fn concurrent_single_thread_matches_sequential(fps in fingerprints(8, 6)) {
        let mut s = QuotientFilter::new(params(8, 6), Variant::ThreeBit).unwrap();
        let c = ConcurrentQf::new(params(8, 6), ConcurrentConfig::fixed()).unwrap();
        for &fp in &fps {
            s.insert_fingerprint(fp).unwrap();
            c.insert_fingerprint(fp).unwrap();
        }
        prop_assert_eq!(c.words(), s.words());
        prop_assert_eq!(c.len(), s.len());
    }

    #[test]
    fn growing_keeps_every_key(keys in prop::collection::hash_set(any::<u64>(), 1..200)) {
        let mut f = QuotientFilter::new(params(8, 8), Variant::ThreeBit).unwrap();
        for k in &keys {
            f.insert(k).unwrap();
        }
        let g = f.grow().unwrap();
        prop_assert_eq!(g.params().quotient_bits(), 9);
        prop_assert_eq!(g.params().remainder_bits(), 7);
        prop_assert!(keys.iter().all(|k| g.contains(k)));
        prop_assert!(g.check_invariants().is_ok());
    }
}

#[test]
fn two_bit_filter_refuses_to_grow() {
    let f = QuotientFilter::new(params(6, 6), Variant::TwoBit).unwrap();
    assert!(matches!(f.grow(), Err(Error::Unsupported(_))));
}

#[test]
fn growing_stops_when_remainder_runs_out() {
    let mut f = QuotientFilter::new(params(4, 1), Variant::ThreeBit).unwrap();
    f.insert(&1u64).unwrap();
    assert_eq!(f.grow().err(), Some(Error::RemainderExhausted));
}

#[test]
fn every_filter_has_no_false_negatives() {
    let keys: Vec<String> = (0..3000).map(|i| format!("key-{i}")).collect();
    let lp = LinearProbingQf::with_same_memory_as(12, 8).unwrap();
    let cc = ConcurrentQf::new(params(10, 10), ConcurrentConfig::default()).unwrap();
    let ex = ExpandableQf::new(ExpandableConfig::new(500, 1e-3)).unwrap();
    for k in &keys {
        lp.insert(k.as_str()).unwrap();
        cc.insert(k.as_str()).unwrap();
        ex.insert(k.as_str()).unwrap();
    }
    for k in &keys {
        assert!(lp.contains(k.as_str()));
        assert!(cc.contains(k.as_str()));
        assert!(ex.contains(k.as_str()));
    }
    assert!(cc.generation() >= 2);
    assert!(ex.level_count() >= 2);
    assert!(ex.fpr_bound().closed_form < 1e-3);
}

#[test]
fn concurrent_filter_refuses_past_hard_cap_without_growing() {
    let f = ConcurrentQf::new(params(6, 8), ConcurrentConfig::fixed()).unwrap();
    let mut stored = 0;
    for k in 0..200u64 {
        match f.insert(&k) {
            Ok(()) => stored += 1,
            Err(Error::TableFull) => break,
            Err(e) => panic!("{e}"),
        }
    }
    assert_eq!(stored, 60);
    assert_eq!(f.len(), 60);
}
