mod common;

use common::brute_argmax;
use patchvote::selector::{majority_vote, tally_winner, ScriptedVoter, Vote};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn votes_for(candidates: &[String], picks: &[usize]) -> Vec<Vote> {
    picks
        .iter()
        .enumerate()
        .map(|(i, &p)| Vote {
            voter_index: i,
            chosen: candidates[p].clone(),
            rationale: String::new(),
            rounds_used: 1,
            generated_tests: Vec::new(),
            forced: false,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn winner_is_an_argmax(k in 1usize..6, picks in prop::collection::vec(0usize..6, 1..12), seed in any::<u64>()) {
        let candidates = ids(k);
        let picks: Vec<usize> = picks.into_iter().map(|p| p % k).collect();
        let (winner, tally, tie) = tally_winner(&candidates, &votes_for(&candidates, &picks), seed);
        let mut counts = vec![0; k];
        for &p in &picks {
            counts[p] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            prop_assert_eq!(tally.get(&candidates[i]).copied().unwrap_or(0), *c);
        }
        let best = brute_argmax(&counts);
        prop_assert!(best.iter().any(|&i| candidates[i] == winner));
        prop_assert_eq!(tie, best.len() > 1);
    }

    #[test]
    fn clear_winner_ignores_candidate_order(k in 2usize..6, picks in prop::collection::vec(0usize..6, 1..12), shuffle in any::<u64>(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let candidates = ids(k);
        let picks: Vec<usize> = picks.into_iter().map(|p| p % k).collect();
        let votes = votes_for(&candidates, &picks);
        let mut counts = vec![0; k];
        for &p in &picks {
            counts[p] += 1;
        }
        prop_assume!(brute_argmax(&counts).len() == 1);
        let mut permuted = candidates.clone();
        permuted.shuffle(&mut common::rng(shuffle));
        prop_assert_eq!(tally_winner(&candidates, &votes, seed).0, tally_winner(&permuted, &votes, seed).0);
    }

    #[test]
    fn early_stop_counters(k in 1usize..4, n in 1usize..10, picks in prop::collection::vec(proptest::option::weighted(0.9, 0usize..4), 10)) {
        let candidates = ids(k);
        let choices: Vec<Option<String>> = picks.iter().map(|p| p.map(|i| candidates[i % k].clone())).collect();
        let voter = ScriptedVoter::new(choices.clone());
        let res = majority_vote(&candidates, n, 3, &voter, 2);
        let half = n.div_ceil(2);
        let first = &choices[..half];
        let unanimous = first.iter().all(Option::is_some) && first.windows(2).all(|w| w[0] == w[1]);
        let expected_calls = if unanimous { half } else { n };
        prop_assert_eq!(voter.calls(), expected_calls);
        let ok = choices[..expected_calls].iter().flatten().count();
        match res {
            Ok(r) => {
                prop_assert_eq!(r.voters_invoked, expected_calls);
                prop_assert_eq!(r.voters_planned, n);
                prop_assert_eq!(r.early_stopped, unanimous && half < n);
                prop_assert_eq!(r.votes.len(), ok);
                prop_assert_eq!(r.voter_errors.len(), expected_calls - ok);
                if unanimous {
                    prop_assert_eq!(Some(&r.selected), first[0].as_ref());
                }
            }
            Err(_) => prop_assert_eq!(ok, 0),
        }
    }

    #[test]
    fn same_seed_same_result(picks in prop::collection::vec(0usize..3, 2..9), seed in any::<u64>()) {
        let candidates = ids(3);
        let choices: Vec<Option<String>> = picks.iter().map(|&p| Some(candidates[p].clone())).collect();
        let a = majority_vote(&candidates, picks.len(), seed, &ScriptedVoter::new(choices.clone()), 1).unwrap();
        let b = majority_vote(&candidates, picks.len(), seed, &ScriptedVoter::new(choices), 4).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn ties_are_uniform() {
    let candidates = ids(4);
    // c0, c1, c3 tied at two votes each, c2 has one
    let votes = votes_for(&candidates, &[0, 1, 3, 0, 1, 3, 2]);
    let mut wins = [0usize; 4];
    let trials = 6000;
    for seed in 0..trials {
        let (w, _, tie) = tally_winner(&candidates, &votes, seed);
        assert!(tie);
        wins[candidates.iter().position(|c| *c == w).unwrap()] += 1;
    }
    assert_eq!(wins[2], 0);
    // chi-square with 2 degrees of freedom, 0.999 quantile is 13.8
    let e = trials as f64 / 3.0;
    let chi: f64 = [0, 1, 3].iter().map(|&i| (wins[i] as f64 - e).powi(2) / e).sum();
    assert!(chi < 13.8, "{wins:?}");
}

#[test]
fn tie_distribution_ignores_candidate_order() {
    let a = ids(3);
    let b: Vec<String> = a.iter().rev().cloned().collect();
    let votes = votes_for(&a, &[0, 1, 2]);
    let share = |cands: &[String]| {
        let mut n = 0;
        for seed in 0..3000 {
            if tally_winner(cands, &votes, seed).0 == "c0" {
                n += 1;
            }
        }
        n as f64 / 3000.0
    };
    for s in [share(&a), share(&b)] {
        assert!((s - 1.0 / 3.0).abs() < 0.04, "{s}");
    }
}
