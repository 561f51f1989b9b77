//! Property-based invariants for the ledger operations and the set-family
//! algebra.

use proptest::prelude::*;

use interstamp::algebra::{dominates, SetFamily, SystemsTuple};
use interstamp::bitset::{self, Mask};
use interstamp::boundary::{dominates_property, PropertyTuple};
use interstamp::chain::Digest;
use interstamp::client::{prefix_consistent, sanitize, LedgerSeq};

fn ledger() -> impl Strategy<Value = LedgerSeq> {
    // ledgers never repeat a digest: sanitize only ever appends unseen ones
    prop::collection::vec(0u64..8, 0..12).prop_map(|v| {
        let mut seen = std::collections::BTreeSet::new();
        LedgerSeq(
            v.into_iter()
                .filter(|d| seen.insert(*d))
                .map(Digest)
                .collect(),
        )
    })
}

fn digests() -> impl Strategy<Value = Vec<Digest>> {
    prop::collection::vec(0u64..8, 0..12).prop_map(|v| v.into_iter().map(Digest).collect())
}

const UNIVERSE: Mask = 0b1111;

fn family() -> impl Strategy<Value = SetFamily> {
    prop::collection::vec(0u64..16, 0..4)
        .prop_map(|members| SetFamily::explicit(UNIVERSE, members).unwrap())
}

fn systems_tuple() -> impl Strategy<Value = SystemsTuple> {
    (family(), family(), family()).prop_map(|(q, s, a)| SystemsTuple::new(q, s, a).unwrap())
}

fn property_tuple() -> impl Strategy<Value = PropertyTuple> {
    (family(), family(), prop::option::of(family())).prop_map(|(l, s, a)| PropertyTuple {
        live_sets: l,
        safe_sets: s,
        accountable_sets: a,
    })
}

proptest! {
    #[test]
    fn sanitize_keeps_the_ledger_as_a_prefix(l in ledger(), c in digests()) {
        let out = sanitize(&l, &c);
        prop_assert!(l.is_prefix_of(&out));
    }

    #[test]
    fn sanitize_includes_every_chain_digest_once(l in ledger(), c in digests()) {
        let out = sanitize(&l, &c);
        for d in &c {
            prop_assert_eq!(out.0.iter().filter(|&&x| x == *d).count(), 1);
        }
    }

    #[test]
    fn sanitize_is_idempotent(l in ledger(), c in digests()) {
        let once = sanitize(&l, &c);
        prop_assert_eq!(sanitize(&once, &c), once);
    }

    #[test]
    fn prefix_consistency_is_reflexive_and_symmetric(a in ledger(), b in ledger()) {
        prop_assert!(prefix_consistent(&a, &a));
        prop_assert_eq!(prefix_consistent(&a, &b), prefix_consistent(&b, &a));
    }

    #[test]
    fn truncations_stay_consistent(a in ledger(), cut in 0usize..12) {
        let b = LedgerSeq(a.0.iter().take(cut).copied().collect());
        prop_assert!(prefix_consistent(&a, &b));
    }

    #[test]
    fn normalize_is_idempotent(f in family()) {
        let once = f.normalize();
        prop_assert_eq!(
            once.normalize().canonical_cmp(&once),
            std::cmp::Ordering::Equal
        );
    }

    #[test]
    fn canonical_text_round_trips(f in family()) {
        let back = SetFamily::parse(&f.canonical_text()).unwrap();
        let back = back.with_universe(UNIVERSE).unwrap();
        prop_assert_eq!(back.canonical_cmp(&f), std::cmp::Ordering::Equal);
    }

    #[test]
    fn closures_agree_with_membership(f in family(), s in 0u64..16) {
        let upward = f.members().iter().any(|&m| bitset::is_subset(m, s));
        prop_assert_eq!(f.in_closure_upward(s), upward);
        let downward = f.members().iter().any(|&m| bitset::is_subset(s, m));
        prop_assert_eq!(f.in_closure_downward(s), downward);
    }

    #[test]
    fn domination_is_irreflexive_and_asymmetric(a in systems_tuple(), b in systems_tuple()) {
        prop_assert!(!dominates(&a, &a).unwrap());
        prop_assert!(!(dominates(&a, &b).unwrap() && dominates(&b, &a).unwrap()));
    }

    #[test]
    fn property_domination_is_irreflexive_and_asymmetric(
        a in property_tuple(),
        b in property_tuple(),
    ) {
        prop_assert!(!dominates_property(&a, &a).unwrap());
        prop_assert!(!(dominates_property(&a, &b).unwrap() && dominates_property(&b, &a).unwrap()));
    }
}

#[test]
fn threshold_families_match_their_explicit_expansion() {
    for (n, q) in [(4, 3), (5, 2), (6, 6), (3, 0)] {
        let threshold = SetFamily::threshold(n, q, 0).unwrap();
        let explicit = SetFamily::explicit(
            bitset::full(n),
            bitset::k_subsets(bitset::full(n), q),
        )
        .unwrap();
        assert_eq!(
            threshold.canonical_cmp(&explicit),
            std::cmp::Ordering::Equal,
            "n={n} q={q}"
        );
    }
}
