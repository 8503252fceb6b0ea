//! DFA invariants: complement/membership duality, induced-sequence shape,
//! and enumeration against brute force.

use proptest::prelude::*;
use reglang::automata::{build_mod_k_dfa, build_parity_dfa, Dfa};

fn all_strings(max_len: usize) -> Vec<String> {
    // length-first, lexicographic within a length ('0' < '1')
    let mut out = vec![String::new()];
    for len in 1..=max_len {
        for code in 0u64..(1 << len) {
            out.push(
                (0..len)
                    .map(|i| {
                        if code >> (len - 1 - i) & 1 == 1 {
                            '1'
                        } else {
                            '0'
                        }
                    })
                    .collect(),
            );
        }
    }
    out
}

#[test]
fn complement_flips_membership_for_all_families_up_to_len_12() {
    let mut dfas: Vec<Dfa> = vec![build_parity_dfa()];
    for k in [3, 4, 5] {
        dfas.push(build_mod_k_dfa(k).unwrap());
    }
    for dfa in &dfas {
        let comp = dfa.complement();
        for x in all_strings(12) {
            assert_eq!(
                comp.accepts(&x).unwrap(),
                !dfa.accepts(&x).unwrap(),
                "complement mismatch on {x:?}"
            );
        }
    }
}

#[test]
fn mod2_is_the_complement_of_parity_on_nonempty_and_empty_strings() {
    let parity = build_parity_dfa();
    let mod2 = build_mod_k_dfa(2).unwrap();
    for x in all_strings(12) {
        assert_eq!(mod2.accepts(&x).unwrap(), !parity.accepts(&x).unwrap());
    }
}

#[test]
fn membership_matches_zero_count_semantics() {
    let parity = build_parity_dfa();
    for k in [2, 3, 4, 5, 7] {
        let dfa = build_mod_k_dfa(k).unwrap();
        for x in all_strings(10) {
            let zeros = x.chars().filter(|&c| c == '0').count();
            assert_eq!(dfa.accepts(&x).unwrap(), zeros % k == 0);
        }
    }
    for x in all_strings(10) {
        let zeros = x.chars().filter(|&c| c == '0').count();
        assert_eq!(parity.accepts(&x).unwrap(), zeros % 2 == 1);
    }
}

#[test]
fn enumeration_matches_membership_filter() {
    let dfa = build_mod_k_dfa(3).unwrap();
    let listed = dfa.enumerate_language(9).unwrap();
    let expected: Vec<String> = all_strings(9)
        .into_iter()
        .filter(|x| dfa.accepts(x).unwrap())
        .collect();
    // all_strings is generated length-first with the same lexicographic
    // order the enumerator promises
    assert_eq!(listed, expected);
}

proptest! {
    #[test]
    fn run_has_input_length_plus_one(x in "[01]{0,40}", k in 2usize..6) {
        let dfa = build_mod_k_dfa(k).unwrap();
        let seq = dfa.run(&x).unwrap();
        prop_assert_eq!(seq.len(), x.chars().count() + 1);
        prop_assert_eq!(seq.states()[0], dfa.start());
        for (t, c) in x.chars().enumerate() {
            let a = dfa.symbol_index(c).unwrap();
            prop_assert_eq!(seq.states()[t + 1], dfa.step(seq.states()[t], a));
        }
    }

    #[test]
    fn complement_is_involutive(x in "[01]{0,24}") {
        let dfa = build_parity_dfa();
        let cc = dfa.complement().complement();
        prop_assert_eq!(dfa.accepts(&x).unwrap(), cc.accepts(&x).unwrap());
    }

    #[test]
    fn text_round_trip_preserves_membership(x in "[01]{0,16}", k in 2usize..6) {
        let dfa = build_mod_k_dfa(k).unwrap();
        let back = Dfa::from_text(&dfa.to_text()).unwrap();
        prop_assert_eq!(dfa.accepts(&x).unwrap(), back.accepts(&x).unwrap());
    }
}
