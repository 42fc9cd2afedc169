mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sparse_candidate::dataset::{
    load_dataset, write_dataset, ContingencyTable, Dataset, StatsCache,
};
use sparse_candidate::decompose::{
    brute_force_mrbn, build_cluster_tree, cluster_tree_dp, solve_mrbn, CandidateGraph,
    SolverLimits, Strategy,
};
use sparse_candidate::measures::{
    information, m_shield, m_shield_conditional, restrict_step, MeasureKind, RestrictConfig,
};
use sparse_candidate::network::{read_network, write_network, BayesianNetwork, Dag};
use sparse_candidate::scoring::{ScoreConfig, Scorer};
use sparse_candidate::search::{apply_move, legal_moves, SearchConfig};
use sparse_candidate::sparse_candidate::{run_sparse_candidate, Maximizer, RunConfig};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// A random DAG whose arcs point from lower to higher index of a shuffled
/// order.
fn random_dag(n: usize, density: f64, max_parents: usize, seed: u64) -> Dag {
    let mut r = rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for t in (1..n).rev() {
        order.swap(t, r.gen_range(0..=t));
    }
    let mut parents = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            if parents[order[b]].len() < max_parents && r.gen_bool(density) {
                parents[order[b]].push(order[a]);
            }
        }
    }
    Dag::from_parent_sets(parents).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_strategies_agree_with_order_dp(seed in 0u64..10_000, k in 1usize..4) {
        let (h, w) = scored_instance(seed, 7, k);
        let optimum = subset_dp_optimum(&h, &w);
        let brute = brute_force_mrbn(&h, &w).unwrap();
        prop_assert!(close(brute.weight, optimum, 1e-9));
        for strategy in [Strategy::Brute, Strategy::Separator, Strategy::ClusterTree] {
            let (sol, dec) = solve_mrbn(&h, &w, strategy, &SolverLimits::default()).unwrap();
            prop_assert!(dec.fully_solved());
            prop_assert!(close(sol.weight, optimum, 1e-9), "{strategy:?}: {} vs {optimum}", sol.weight);
            prop_assert!(close(w.total(&h, &sol.dag).unwrap(), sol.weight, 1e-9));
        }
    }

    #[test]
    fn exact_solutions_stay_inside_candidate_graph(seed in 0u64..10_000, k in 1usize..4) {
        let (h, w) = scored_instance(seed, 7, k);
        let all: Vec<usize> = (0..h.n()).collect();
        let tree = build_cluster_tree(&h, &all);
        prop_assert!(tree.validate(&h, &all).is_ok());
        let (sol, stats) = cluster_tree_dp(&h, &w, &all, &tree).unwrap();
        prop_assert!(sol.dag.is_acyclic());
        for (from, to) in sol.dag.edges() {
            prop_assert!(h.candidates(to).contains(&from));
        }
        prop_assert!(stats.operations as f64 <= stats.operation_bound());
        prop_assert!(stats.orders_visited <= stats.order_bound);
    }

    #[test]
    fn shield_forms_differ_by_parent_information(seed in 0u64..10_000) {
        let (_, data) = synthetic(6, 3, 300, seed);
        let mut scorer = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let dag = random_dag(6, 0.4, 3, seed);
        for i in 0..6 {
            let pa = dag.parents(i).to_vec();
            for j in (0..6).filter(|&j| j != i && !pa.contains(&j)) {
                let comparative = m_shield(i, j, &dag, &mut scorer).unwrap();
                let conditional = m_shield_conditional(i, j, &dag, &mut scorer).unwrap();
                let base = if pa.is_empty() {
                    0.0
                } else {
                    let mut scope = pa.clone();
                    scope.push(i);
                    information(&scorer.counts(&scope).unwrap(), &[i], &pa, &[]).unwrap()
                };
                prop_assert!((comparative - base - conditional).abs() <= 1e-9);
                prop_assert!(conditional >= -1e-12);
            }
        }
    }

    #[test]
    fn restrict_keeps_parents_and_respects_k(seed in 0u64..10_000, k in 1usize..5, kind in 0usize..3) {
        let (_, data) = synthetic(7, 3, 300, seed);
        let mut stats = StatsCache::new(&data);
        let dag = random_dag(7, 0.3, k, seed);
        let b = BayesianNetwork::fit(&dag, &mut stats, 1.0).unwrap();
        let mut scorer = Scorer::new(&data, ScoreConfig::default()).unwrap();
        let kind = [MeasureKind::Disc, MeasureKind::Shield, MeasureKind::Score][kind];
        let cands = restrict_step(&b, &mut scorer, RestrictConfig::new(kind, k)).unwrap();
        for i in 0..7 {
            let c = cands.get(i);
            prop_assert!(!c.contains(&i));
            prop_assert_eq!(c.len(), k.min(6));
            prop_assert!(dag.parents(i).iter().all(|p| c.contains(p)));
        }
    }

    #[test]
    fn score_decomposes_over_families(seed in 0u64..10_000, mdl in any::<bool>()) {
        let (_, data) = synthetic(6, 3, 200, seed);
        let cfg = if mdl { ScoreConfig::mdl() } else { ScoreConfig::bde(10.0) };
        let mut scorer = Scorer::new(&data, cfg).unwrap();
        let dag = random_dag(6, 0.4, 3, seed);
        let total = scorer.network_score(&dag).unwrap();
        let sum: f64 = (0..6).map(|i| scorer.family_score(i, dag.parents(i)).unwrap()).sum();
        prop_assert!(close(total, sum, 1e-12));
        let moves = legal_moves(&dag, &SearchConfig::default());
        let mv = moves[seed as usize % moves.len()];
        let after = apply_move(&dag, &mv).unwrap();
        let delta = scorer.move_delta(&dag, &mv).unwrap();
        let rescored = scorer.network_score(&after).unwrap() - total;
        prop_assert!(close(delta, rescored, 1e-9), "{mv:?}: {delta} vs {rescored}");
    }

    #[test]
    fn marginals_match_direct_counts(seed in 0u64..10_000) {
        let (_, data) = synthetic(5, 2, 150, seed);
        let full = ContingencyTable::from_data(&data, &[0, 1, 2, 3, 4]).unwrap();
        let keep = [3, 1];
        let marginal = full.marginalize(&keep).unwrap();
        let direct = ContingencyTable::from_data(&data, &keep).unwrap();
        prop_assert_eq!(marginal.scope(), direct.scope());
        prop_assert_eq!(marginal.counts(), direct.counts());
        prop_assert_eq!(marginal.total(), 150);
    }

    #[test]
    fn network_and_dataset_text_round_trip(seed in 0u64..10_000, n in 2usize..9) {
        let (net, _) = synthetic(n, 3, 1, seed);
        // the text format lists states only through the values, so every state shows up
        let mut r = rng(seed);
        let cards = net.cardinalities();
        let rows: Vec<Vec<usize>> = (0..20)
            .map(|t| cards.iter().map(|&c| if t < c { t } else { r.gen_range(0..c) }).collect())
            .collect();
        let data = Dataset::from_rows(net.variables().to_vec(), &rows).unwrap();
        let mut first = Vec::new();
        write_network(&net, &mut first).unwrap();
        let parsed = read_network(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_network(&parsed, &mut second).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(parsed.dag(), net.dag());

        let mut first = Vec::new();
        write_dataset(&data, &mut first).unwrap();
        let parsed = load_dataset(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_dataset(&parsed, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sparse_candidate_never_loses_score(
        seed in 0u64..10_000,
        k in 1usize..4,
        kind in 0usize..3,
        exact in any::<bool>(),
    ) {
        let (_, data) = synthetic(8, 3, 400, seed);
        let kind = [MeasureKind::Disc, MeasureKind::Shield, MeasureKind::Score][kind];
        let mut cfg = RunConfig::new(kind, k);
        if exact {
            cfg.maximizer = Maximizer::Exact;
        }
        let out = run_sparse_candidate(&data, &cfg, None, None).unwrap();
        for pair in out.reports.windows(2) {
            prop_assert!(pair[1].score_per_instance >= pair[0].score_per_instance - 1e-12);
        }
        let last = out.reports.last().unwrap().candidates.as_ref().unwrap();
        prop_assert!(last.contains_parents_of(out.network.dag()));
        let h = CandidateGraph::from_candidate_sets(last);
        for (from, to) in out.network.dag().edges() {
            prop_assert!(h.candidates(to).contains(&from));
        }
    }
}
