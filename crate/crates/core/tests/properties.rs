use memerase::automata::{tree_size, Automaton, CyclicTree};
use memerase::fraud::{exact_success, mc_success, prune, space_saving, PruneStrategy};
use memerase::inference::derives;
use memerase::semantics::{Event, Time, TimedTrace};
use memerase::simulator::{simulate_session, SessionConfig};
use memerase::terms::{Agent, Term};
use num_rational::Rational64;
use proptest::prelude::*;

fn agent() -> impl Strategy<Value = Agent> {
    prop::sample::select(vec!["a", "b", "c"]).prop_map(Agent::new)
}

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x", "y", "MeM"]).prop_map(Term::constant),
        (agent(), 0u32..3).prop_map(|(a, i)| Term::nonce(&a, i)),
        (agent(), agent()).prop_map(|(a, b)| Term::key(&a, &b)),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Term::pair(l, r)),
            (inner.clone(), inner.clone()).prop_map(|(b, k)| Term::enc(b, k)),
            prop::collection::vec(inner.clone(), 1..3).prop_map(Term::hash),
            (inner.clone(), prop::collection::vec(inner, 1..3)).prop_map(|(k, xs)| Term::mac(k, xs)),
        ]
    })
}

/// A depth and a valid prune target for it.
fn depth_and_target(max_depth: u32) -> impl Strategy<Value = (u32, usize)> {
    (2..=max_depth).prop_flat_map(|d| (Just(d), 3..tree_size(d)))
}

proptest! {
    #[test]
    fn term_text_round_trips(t in term()) {
        prop_assert_eq!(Term::parse(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn received_messages_are_derivable(t in term(), a in agent()) {
        let trace = TimedTrace::new().with(Time::from_integer(0), Event::recv(&a, t.clone())).unwrap();
        prop_assert!(derives(&a, &trace, &t));
    }

    #[test]
    fn runs_split_into_blocks(d in 1u32..=5, x in 1usize..=4, seed in any::<u64>()) {
        let tree = CyclicTree::from_seed(d, &seed.to_le_bytes()).unwrap();
        let c: Vec<bool> = (0..d as usize * x).map(|j| (seed >> (j % 64)) & 1 == 1).collect();
        let blocks: Vec<bool> = c.chunks(d as usize).flat_map(|b| tree.run(b)).collect();
        prop_assert_eq!(tree.run(&c), blocks);
    }

    #[test]
    fn prefix_reaches_binary_counter_state(d in 1u32..=8, bits in prop::collection::vec(any::<bool>(), 1..=8)) {
        prop_assume!(bits.len() <= d as usize);
        let tree = CyclicTree::new(d, vec![false; tree_size(d)]).unwrap();
        let q = *tree.path(&bits).last().unwrap();
        let idx = bits.iter().fold(1usize, |acc, &b| 2 * acc + b as usize) - 1;
        prop_assert_eq!(q, idx);
    }

    #[test]
    fn serialisations_round_trip(d in 1u32..=7, seed in any::<u64>()) {
        let tree = CyclicTree::from_seed(d, &seed.to_be_bytes()).unwrap();
        prop_assert_eq!(CyclicTree::parse(&tree.to_string()).unwrap(), tree.clone());
        if d >= 2 {
            let pruned = prune(&tree, 3).unwrap();
            prop_assert_eq!(Automaton::parse(&pruned.to_string()).unwrap(), pruned);
        }
    }

    #[test]
    fn pruning_shrinks_by_the_subtree((d, i) in depth_and_target(8)) {
        let tree = CyclicTree::from_seed(d, b"prune").unwrap();
        let pruned = prune(&tree, i).unwrap();
        let s = PruneStrategy::new(d, i).unwrap();
        prop_assert!(pruned.size() <= tree.size());
        prop_assert_eq!(tree.size() - pruned.size(), s.freed());
        prop_assert_eq!(s.removed_states().len(), s.freed());
        let saving = space_saving(d, i).unwrap();
        let retained = Rational64::new(pruned.size() as i64, tree.size() as i64);
        prop_assert_eq!(saving + retained, Rational64::from_integer(1));
    }

    #[test]
    fn pruned_runs_never_visit_removed_states((d, i) in depth_and_target(6), c in prop::collection::vec(any::<bool>(), 0..40)) {
        let pruned = prune(&CyclicTree::from_seed(d, b"walk").unwrap(), i).unwrap();
        prop_assert!(pruned.path(&c).iter().all(|&q| !pruned.is_removed(q)));
    }

    #[test]
    fn honest_sessions_with_feasible_timing_accept(d in 1u32..=10, n in 1usize..50, seed in any::<u64>(), pos in 0i64..=2) {
        let mut cfg = SessionConfig::new(d, n, Time::from_integer(4), Time::from_integer(2));
        cfg.prover_position = Time::from_integer(pos);
        cfg.rng_seed = seed;
        let out = simulate_session(&cfg).unwrap();
        prop_assert!(out.accepted);
        prop_assert_eq!(out.transcript.len(), n);
        prop_assert_eq!(out.prover_resident_states, tree_size(d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_probabilities_are_probabilities((d, i) in depth_and_target(3), n in 0usize..=8) {
        let p = exact_success(d, i, n).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn monte_carlo_is_reproducible(seed in any::<u64>()) {
        prop_assert_eq!(mc_success(3, 5, 6, 5000, seed).unwrap(), mc_success(3, 5, 6, 5000, seed).unwrap());
    }
}

#[test]
fn monte_carlo_error_shrinks_with_trials() {
    let exact = exact_success(3, 4, 6).unwrap().value;
    let err = |trials: u64| -> f64 {
        (0..8)
            .map(|s| (mc_success(3, 4, 6, trials, s).unwrap().value - exact).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (small, large) = (err(1_000), err(100_000));
    // ten times the error would be expected; allow generous slack
    assert!(large < small / 3.0, "rms error {small} at 1e3 vs {large} at 1e5");
}

#[test]
fn distinct_seeds_give_nearly_half_differing_labels() {
    let n = tree_size(12);
    let mut total = 0usize;
    let pairs = 50;
    for s in 0..pairs {
        let a = CyclicTree::from_seed(12, format!("left {s}").as_bytes()).unwrap();
        let b = CyclicTree::from_seed(12, format!("right {s}").as_bytes()).unwrap();
        let dist = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
        // 5 standard deviations of Binomial(8191, 1/2) is about 226
        assert!((dist as f64 - n as f64 / 2.0).abs() < 226.0, "pair {s}: {dist}");
        total += dist;
    }
    let mean = total as f64 / pairs as f64;
    assert!((mean - n as f64 / 2.0).abs() < 40.0, "mean distance {mean}");
}
