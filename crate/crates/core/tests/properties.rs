//! Invariants over generated instances.

use negotiation::io::{generate_sound_sdn, parse_unchecked, random_concrete, retarget_mutant, serialize, Shape};
use negotiation::rules::{apply, find_iterations, find_merges, find_shortcuts, Redex};
use negotiation::semantics::{soundness_oracle, SemanticsError};
use negotiation::summarize::check_sound_reduction;
use negotiation::{is_deterministic, Negotiation};
use proptest::prelude::*;

const NODE_LIMIT: usize = 50_000;

fn instance() -> impl Strategy<Value = Negotiation> {
    (any::<u64>(), 2usize..10, 1usize..4, 0usize..3).prop_map(|(seed, atoms, agents, loop_depth)| {
        generate_sound_sdn(seed, Shape { atoms, agents, loop_depth }).unwrap()
    })
}

fn redexes(neg: &Negotiation) -> Vec<Redex> {
    let mut all = find_merges(neg);
    all.extend(find_shortcuts(neg));
    all.extend(find_iterations(neg));
    all
}

fn oracle(neg: &Negotiation) -> Option<bool> {
    match soundness_oracle(neg, NODE_LIMIT) {
        Ok(v) => Some(v.is_sound()),
        Err(SemanticsError::NodeLimit(_)) => None,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_instances_are_sound_and_deterministic(neg in instance()) {
        prop_assert!(is_deterministic(&neg));
        prop_assert_ne!(oracle(&neg), Some(false));
    }

    #[test]
    fn text_round_trips(neg in instance(), seed in any::<u64>()) {
        let concrete = random_concrete(&neg, seed, 3).unwrap();
        for n in [neg, concrete] {
            let text = serialize(&n);
            let back = parse_unchecked(&text).unwrap();
            prop_assert_eq!(serialize(&back), text);
            prop_assert_eq!(back, n);
        }
    }

    #[test]
    fn rules_are_deterministic_and_keep_determinism(neg in instance(), pick in any::<prop::sample::Index>()) {
        let all = redexes(&neg);
        prop_assume!(!all.is_empty());
        let r = pick.get(&all);
        let (a, app_a) = apply(&neg, r).unwrap();
        let (b, app_b) = apply(&neg, r).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(app_a, app_b);
        prop_assert!(is_deterministic(&a));
    }

    #[test]
    fn merge_and_iteration_drop_one_outcome(neg in instance()) {
        for r in find_merges(&neg).iter().chain(&find_iterations(&neg)) {
            let (after, _) = apply(&neg, r).unwrap();
            prop_assert_eq!(after.outcome_count() + 1, neg.outcome_count());
        }
    }

    #[test]
    fn rules_keep_the_verdict(neg in instance(), seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let neg = retarget_mutant(&neg, seed).unwrap_or(neg);
        let all = redexes(&neg);
        prop_assume!(!all.is_empty());
        // an atom whose only outcome loops cannot be iterated
        let applied = apply(&neg, pick.get(&all));
        prop_assume!(applied.is_ok());
        let (after, _) = applied.unwrap();
        if let (Some(x), Some(y)) = (oracle(&neg), oracle(&after)) {
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn reduction_agrees_with_oracle(neg in instance(), seed in any::<u64>()) {
        let mutant = retarget_mutant(&neg, seed);
        for n in std::iter::once(neg).chain(mutant) {
            if let Some(expected) = oracle(&n) {
                prop_assert_eq!(check_sound_reduction(&n).unwrap().is_sound(), expected);
            }
        }
    }
}
