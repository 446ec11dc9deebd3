//! Randomized invariants: structural features must commute with node
//! relabeling, probability vectors must normalize, binning must stay
//! monotone, splits must partition.

use fea2fea::binning::{apply_bins, fit_bins, BinStrategy};
use fea2fea::features::{
    average_path_length, build_feature_matrix, clustering_coefficient, degree, pagerank_default,
};
use fea2fea::graph::{split_masks, Graph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..18).prop_flat_map(|n| {
        let edges = proptest::collection::vec((0..n, 0..n), 0..50);
        (Just(n), edges)
    })
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #[test]
    fn degree_sum_is_twice_edge_count((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let total: usize = degree(&g).iter().map(|&d| d as usize).sum();
        prop_assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn pagerank_is_a_distribution((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let pr = pagerank_default(&g).unwrap();
        let sum: f64 = pr.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6, "sum {}", sum);
        prop_assert!(pr.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn clustering_stays_in_unit_interval((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        for c in clustering_coefficient(&g) {
            prop_assert!((0.0..=1.0).contains(&c), "coefficient {}", c);
        }
    }

    #[test]
    fn features_commute_with_relabeling((n, edges) in arb_edges(), seed in 0u64..1000) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let p = permutation(n, seed);
        let remapped: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (p[u], p[v])).collect();
        let gp = Graph::from_edges(n, &remapped).unwrap();
        let f = build_feature_matrix(&g).unwrap();
        let fp = build_feature_matrix(&gp).unwrap();
        for u in 0..n {
            for feature in fea2fea::features::ALL_FEATURES {
                let a = f.get(u, feature);
                let b = fp.get(p[u], feature);
                prop_assert!((a - b).abs() < 1e-6, "node {} {}: {} vs {}", u, feature, a, b);
            }
        }
    }

    #[test]
    fn path_lengths_are_positive_where_connected((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        for (u, a) in average_path_length(&g).iter().enumerate() {
            if g.degree(u) > 0 {
                prop_assert!(*a >= 1.0, "node {} avg {}", u, a);
            } else {
                prop_assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn splits_partition_the_nodes(n in 3usize..300, seed in 0u64..500) {
        let masks = split_masks(n, (0.7, 0.15, 0.15), seed).unwrap();
        let mut seen = vec![0u8; n];
        for &i in masks.train_indices().iter().chain(&masks.val_indices()).chain(&masks.test_indices()) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(!masks.train_indices().is_empty());
    }

    #[test]
    fn binning_is_monotone(
        mut values in proptest::collection::vec(-1000.0f64..1000.0, 3..150),
        num_bins in 2usize..10,
        strat_pick in 0usize..3,
    ) {
        let strategy = [BinStrategy::EqualWidth, BinStrategy::EqualFrequency, BinStrategy::ZeroInflated][strat_pick];
        if strategy == BinStrategy::ZeroInflated {
            for v in values.iter_mut() {
                *v = v.abs();
            }
        }
        if let Ok(spec) = fit_bins(&values, num_bins, strategy) {
            prop_assert!(spec.num_classes() >= 2);
            prop_assert!(spec.boundaries.windows(2).all(|w| w[0] < w[1]));
            let labels = apply_bins(&values, &spec);
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            for w in order.windows(2) {
                prop_assert!(labels[w[0]] <= labels[w[1]]);
            }
            prop_assert!(labels.iter().all(|&l| l < spec.num_classes()));
        }
    }

    #[test]
    fn neighbor_lists_are_sorted_and_symmetric((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        for u in 0..n {
            let nb = g.neighbors(u);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &v in nb {
                prop_assert!(g.has_edge(v, u));
                prop_assert_ne!(v, u);
            }
        }
    }
}
