use proptest::prelude::*;

use ustree_core::ca_general::{solve_general, DEFAULT_ROUNDS_FACTOR};
use ustree_core::ca_pathwidth::solve_pathwidth;
use ustree_core::ca_tree::solve_tree;
use ustree_core::dangling_net::sample_net;
use ustree_core::graph::strong_diameter;
use ustree_core::hierarchy::{build_hierarchy, HierarchyParams};
use ustree_core::instances::{
    gen_grid, gen_net_partition, gen_partition, gen_pathwidth, gen_random_tree, random_portals,
};
use ustree_core::ust_eval::{induced_subtree_weight, shortest_path_tree};
use ustree_core::verify::{check_assignment, check_hierarchy, check_net, oracle_min_distortion};
use ustree_core::{ClusterAggInstance, Partition, VertexSet, WeightedGraph};

fn tree_instance(n: usize, delta: f64, k: usize, seed: u64) -> ClusterAggInstance {
    let g = gen_random_tree(n, seed);
    let part = gen_partition(&g, delta, seed ^ 1);
    let portals = random_portals(n, k, seed ^ 2);
    ClusterAggInstance::new(g, part, portals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_are_deterministic(n in 1usize..60, seed in any::<u64>()) {
        prop_assert_eq!(gen_random_tree(n, seed), gen_random_tree(n, seed));
        let g = gen_random_tree(n, seed);
        prop_assert_eq!(gen_partition(&g, 3.0, seed), gen_partition(&g, 3.0, seed));
        prop_assert_eq!(random_portals(n, 3, seed), random_portals(n, 3, seed));
    }

    #[test]
    fn carved_partitions_are_valid(n in 1usize..80, delta in 0.5f64..12.0, seed in any::<u64>()) {
        let g = gen_random_tree(n, seed);
        for part in [gen_partition(&g, delta, seed), gen_net_partition(&g, delta, seed)] {
            part.validate(&g).unwrap();
            let covered: usize = part.clusters().iter().map(|c| c.len()).sum();
            prop_assert_eq!(covered, n);
            for c in part.clusters() {
                prop_assert!(strong_diameter(&g, c) <= delta + 1e-9);
            }
        }
    }

    #[test]
    fn instances_survive_json(n in 1usize..40, k in 1usize..5, seed in any::<u64>()) {
        let inst = tree_instance(n, 4.0, k, seed);
        let text = serde_json::to_string(&inst).unwrap();
        let back: ClusterAggInstance = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        let g: WeightedGraph = WeightedGraph::from_text(&inst.graph.to_text()).unwrap();
        prop_assert_eq!(g, inst.graph.clone());
    }

    #[test]
    fn vertex_sets_are_sorted_and_unique(items in proptest::collection::vec(0usize..30, 0..40)) {
        let s = VertexSet::new(items.clone());
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        for v in items {
            prop_assert!(s.contains(v));
        }
    }

    #[test]
    fn tree_solver_within_four_delta(n in 2usize..120, k in 1usize..8, d in 0usize..4, seed in any::<u64>()) {
        let delta = [1.0, 2.0, 5.0, 9.0][d];
        let inst = tree_instance(n, delta, k, seed);
        let sol = solve_tree(&inst).unwrap();
        let rep = check_assignment(&inst, &sol.assignment);
        prop_assert!(rep.valid, "{:?}", rep.violations);
        prop_assert!(rep.max_detour <= 4.0 * delta + 1e-9);
    }

    #[test]
    fn solvers_never_beat_the_oracle(n in 2usize..9, k in 1usize..4, seed in any::<u64>()) {
        let inst = tree_instance(n, 3.0, k, seed);
        prop_assume!(inst.partition.len() <= 7);
        let opt = oracle_min_distortion(&inst).unwrap().optimum;
        let tree = check_assignment(&inst, &solve_tree(&inst).unwrap().assignment);
        prop_assert!(tree.max_detour >= opt - 1e-9);
        prop_assert!(tree.max_detour <= opt + 4.0 * 3.0 + 1e-9);
        let (asg, _) = solve_general(&inst, seed, DEFAULT_ROUNDS_FACTOR).unwrap();
        prop_assert!(check_assignment(&inst, &asg).max_detour >= opt - 1e-9);
    }

    #[test]
    fn pathwidth_solver_within_bound(pw in 1usize..4, n in 2usize..60, k in 1usize..6, seed in any::<u64>()) {
        let (g, pd) = gen_pathwidth(pw, n, seed);
        let part = gen_partition(&g, 3.0, seed ^ 5);
        let portals = random_portals(g.n(), k, seed ^ 6);
        let inst = ClusterAggInstance::new(g, part, portals).unwrap();
        let (asg, audit) = solve_pathwidth(&inst, &pd).unwrap();
        prop_assert!(audit.clean());
        let rep = check_assignment(&inst, &asg);
        prop_assert!(rep.valid);
        prop_assert!(rep.max_detour <= 8.0 * (pw + 1) as f64 * 3.0 + 1e-9);
    }

    #[test]
    fn checker_is_pure(n in 2usize..40, seed in any::<u64>()) {
        let inst = tree_instance(n, 2.0, 3, seed);
        let asg = solve_tree(&inst).unwrap().assignment;
        let a = serde_json::to_string(&check_assignment(&inst, &asg)).unwrap();
        let b = serde_json::to_string(&check_assignment(&inst, &asg)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nets_always_cover(side in 1usize..7, delta in 0.5f64..6.0, seed in any::<u64>()) {
        let g = gen_grid(side, side);
        let s = sample_net(&g, delta, 2.0, usize::MAX, seed, 0).unwrap();
        let rep = check_net(&s.graph, &s.net);
        prop_assert!(rep.ok, "{:?}", rep.issues);
        prop_assert!(rep.covering_radius <= delta + 1e-9);
    }

    #[test]
    fn subtree_weight_grows_with_terminals(n in 1usize..40, extra in 0usize..40, seed in any::<u64>()) {
        let g = gen_random_tree(n, seed);
        let t = shortest_path_tree(&g, 0).unwrap();
        let base = VertexSet::new(random_portals(n, 2, seed ^ 3).iter().copied().chain([0]));
        let more = VertexSet::new(base.iter().copied().chain([extra % n]));
        let a = induced_subtree_weight(&t, &base).unwrap();
        let b = induced_subtree_weight(&t, &more).unwrap();
        prop_assert!(b >= a - 1e-12);
        prop_assert!(b <= t.total_weight() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hierarchies_coarsen(n in 1usize..80, seed in any::<u64>()) {
        let g = gen_random_tree(n, seed);
        let h = build_hierarchy(&g, &HierarchyParams::tree(n), None, seed).unwrap();
        let rep = check_hierarchy(&g, &h);
        prop_assert!(rep.ok, "{:?}", rep.issues);
        let top = h.partition(h.levels.len() - 1, n).unwrap();
        prop_assert_eq!(top.len(), 1);
        prop_assert_eq!(h.partition(0, n).unwrap(), Partition::singletons(n));
    }
}
