mod common;

use common::{check_tree_invariants, enumerated_min_steps, enumerated_optimal_paths};
use prm_core::dims::{helpfulness, update_ac, HelpfulnessContext};
use prm_core::fixtures;
use prm_core::judge::RuleJudge;
use prm_core::mctsp::{self, SearchBudget, DEFAULT_C};
use prm_core::taskenv::{GraphBuilder, TaskGraph};
use proptest::prelude::*;

/// Random graph over `n` states with the goal at the last one.
fn random_graph(n: usize, edges: &[(usize, usize)]) -> Option<TaskGraph> {
    let mut b = GraphBuilder::new("random", "reach the last screen");
    for i in 0..n {
        b.state(&format!("s{i}"));
    }
    b.initial("s0").goal(&format!("s{}", n - 1)).horizon(n);
    for (k, &(from, to)) in edges.iter().enumerate() {
        let (from, to) = (from % n, to % n);
        b.try_transition(&format!("s{from}"), &format!("a{k}"), &format!("go {k}"), &[], &[], &format!("s{to}"))
            .ok()?;
    }
    b.build().ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn min_steps_match_enumeration(n in 2usize..8, edges in prop::collection::vec((0usize..8, 0usize..8), 1..20)) {
        let Some(env) = random_graph(n, &edges) else { return Ok(()); };
        for s in 0..env.num_states() {
            prop_assert_eq!(env.min_steps(s).unwrap().steps(), enumerated_min_steps(&env, s));
            prop_assert_eq!(env.remaining_length(s), enumerated_min_steps(&env, s).unwrap_or(env.horizon()));
        }
    }

    #[test]
    fn optimal_actions_step_one_closer(n in 2usize..8, edges in prop::collection::vec((0usize..8, 0usize..8), 1..20)) {
        let Some(env) = random_graph(n, &edges) else { return Ok(()); };
        for s in 0..env.num_states() {
            let here = enumerated_min_steps(&env, s);
            for t in env.optimal_actions(s) {
                prop_assert_eq!(enumerated_min_steps(&env, t.to).map(|d| d + 1), here);
            }
            let any_closer = env.actions(s).iter().any(|t| {
                matches!((enumerated_min_steps(&env, t.to), here), (Some(a), Some(b)) if a + 1 == b)
            });
            prop_assert_eq!(any_closer, !env.optimal_actions(s).is_empty());
        }
    }

    #[test]
    fn successful_chain_of_any_length_sums_to_one(m in 1usize..40) {
        let mut ac = 0.0;
        for i in 1..=m {
            let h = helpfulness(&HelpfulnessContext { ac_prev: ac, m_eff: m, i, r: true }).unwrap();
            prop_assert!((h - 1.0 / m as f64).abs() < 1e-9);
            ac = update_ac(ac, h);
        }
        prop_assert!((ac - 1.0).abs() < 1e-9);
    }

    #[test]
    fn accumulated_contribution_never_negative(steps in prop::collection::vec(any::<bool>(), 1..12)) {
        let m = steps.len();
        let mut ac = 0.0;
        for (k, &r) in steps.iter().enumerate() {
            let h = helpfulness(&HelpfulnessContext { ac_prev: ac, m_eff: m, i: k + 1, r }).unwrap();
            prop_assert_eq!(h >= 0.0, r || ac >= 1.0);
            ac = update_ac(ac, h);
            prop_assert!(ac >= 0.0);
        }
    }

    #[test]
    fn search_invariants_hold(fixture in 0usize..8, iterations in 1usize..120, rollouts in 1usize..6, seed in any::<u64>()) {
        let env = &fixtures::suite()[fixture];
        let tree = mctsp::search(env, SearchBudget::new(iterations, rollouts, DEFAULT_C, seed), &RuleJudge).unwrap();
        prop_assert_eq!(check_tree_invariants(&tree), Ok(()));
        let again = mctsp::search(env, SearchBudget::new(iterations, rollouts, DEFAULT_C, seed), &RuleJudge).unwrap();
        prop_assert_eq!(tree.snapshot_json(), again.snapshot_json());
    }

    #[test]
    fn random_graph_search_invariants(n in 2usize..7, edges in prop::collection::vec((0usize..7, 0usize..7), 1..16), seed in any::<u64>()) {
        let Some(env) = random_graph(n, &edges) else { return Ok(()); };
        let tree = mctsp::search(&env, SearchBudget::new(40, 3, DEFAULT_C, seed), &RuleJudge).unwrap();
        prop_assert_eq!(check_tree_invariants(&tree), Ok(()));
    }
}

#[test]
fn fixtures_a_to_c_have_a_unique_shortest_route() {
    for env in [fixtures::linear(), fixtures::branching(), fixtures::shortcut()] {
        let paths = enumerated_optimal_paths(&env);
        assert_eq!(paths.len(), 1, "{}", env.id());
        let d = enumerated_min_steps(&env, env.initial()).unwrap();
        assert_eq!(paths[0].len(), d);
    }
}

#[test]
fn random_graph_generator_builds_solvable_graphs() {
    let chain: Vec<(usize, usize)> = (0..4).map(|i| (i, i + 1)).chain([(2, 0), (1, 3)]).collect();
    let env = random_graph(5, &chain).expect("chain graph builds");
    assert_eq!(enumerated_min_steps(&env, env.initial()), Some(3));
}
