//! Property tests for the function-space algebra.

use proptest::prelude::*;

use funcprob::funcspace::{BinaryFunction, FrequencyTable};

const LEN: usize = 12;

fn arb_function() -> impl Strategy<Value = BinaryFunction> {
    prop::collection::vec(0u8..2, LEN).prop_map(|bits| BinaryFunction::from_bits(&bits))
}

fn arb_table() -> impl Strategy<Value = FrequencyTable> {
    prop::collection::vec((arb_function(), 1u64..20), 0..12).prop_map(|entries| {
        let mut t = FrequencyTable::new(LEN, "prop");
        for (f, c) in entries {
            t.record_many(f, c).unwrap();
        }
        t
    })
}

proptest! {
    #[test]
    fn merge_is_commutative(a in arb_table(), b in arb_table()) {
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn merge_is_associative(a in arb_table(), b in arb_table(), c in arb_table()) {
        let mut left = a.clone();
        left.merge(&b).unwrap();
        left.merge(&c).unwrap();
        let mut bc = b.clone();
        bc.merge(&c).unwrap();
        let mut right = a.clone();
        right.merge(&bc).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn record_distributes_over_merge(a in arb_table(), b in arb_table(), f in arb_function()) {
        // record into the merge == merge after recording into one shard
        let mut merged = a.clone();
        merged.merge(&b).unwrap();
        merged.record(f.clone()).unwrap();

        let mut a2 = a.clone();
        a2.record(f).unwrap();
        a2.merge(&b).unwrap();
        prop_assert_eq!(merged, a2);
    }

    #[test]
    fn probabilities_sum_to_one(t in arb_table()) {
        prop_assume!(t.total() > 0);
        let sum: f64 = t.iter().map(|(_, c)| c as f64 / t.total() as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_count_is_a_metric(
        a in arb_function(),
        b in arb_function(),
        c in arb_function(),
    ) {
        let dab = a.error_count(&b).unwrap();
        let dba = b.error_count(&a).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(a.error_count(&a).unwrap(), 0);
        if dab == 0 {
            prop_assert_eq!(&a, &b);
        }
        let dac = a.error_count(&c).unwrap();
        let dcb = c.error_count(&b).unwrap();
        prop_assert!(dab <= dac + dcb);
    }

    #[test]
    fn hex_roundtrip(f in arb_function()) {
        let hex = f.to_hex();
        let back = BinaryFunction::from_hex(&hex, LEN).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn boundary_90_is_attained_threshold(t in arb_table()) {
        prop_assume!(t.total() > 0);
        let b = t.boundary_90().unwrap();
        // the threshold is one of the empirical probabilities
        let threshold_count = (b * t.total() as f64).round() as u64;
        prop_assert!(t.iter().any(|(_, c)| c == threshold_count));
        // functions at or above it carry more than 90% of the mass (exact
        // integer comparison) and it is the largest such count: the mass
        // strictly above it is at most 90%.
        let at_or_above: u64 = t.iter().map(|(_, c)| c).filter(|&c| c >= threshold_count).sum();
        prop_assert!(10 * at_or_above > 9 * t.total());
        let strictly_above: u64 = t.iter().map(|(_, c)| c).filter(|&c| c > threshold_count).sum();
        prop_assert!(10 * strictly_above <= 9 * t.total());
    }
}
