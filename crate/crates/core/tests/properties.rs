mod common;

use auxiv::generate::random_graph;
use auxiv::graph::{parse_graph, AuxVarDef, EdgeSet, NodeId};
use auxiv::identify::{qid, verify_identification};
use auxiv::instrumental::{find_qis, test_qis, SearchOptions};
use auxiv::oracle::{implied_sigma, partial_cov, sample_params, wright_cov};
use auxiv::separation::{d_separated, exhaustive_separator, nearest_separator};
use common::*;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

fn config(cases: u32) -> ProptestConfig {
    let cases = std::env::var("PROPTEST_CASES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(cases);
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn text_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let g = random_graph(seed, n, 0.4, 0.25);
        let text = g.to_text();
        let back = parse_graph(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.names(), g.names());
    }

    #[test]
    fn connected_edge_sets_partition_incoming(seed in any::<u64>()) {
        let g = graph(&mut rng(seed), 2, 8);
        let cells = g.connected_edge_sets();
        let mut seen = EdgeSet::new();
        for c in &cells {
            prop_assert!(!c.is_empty());
            prop_assert_eq!(g.heads(c).len(), 1);
            for e in c.iter() {
                prop_assert!(seen.insert(e), "edge in two cells");
            }
        }
        prop_assert_eq!(seen.len(), g.directed_edges().count());
        // tails in different cells of one head are not trek-connected
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if g.heads(a) != g.heads(b) {
                    continue;
                }
                for ta in g.tails(a) {
                    for tb in g.tails(b) {
                        prop_assert!(!g.trek_connected(ta, tb));
                    }
                }
            }
        }
    }

    #[test]
    fn auxiliary_variable_subtracts_tails(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = graph(&mut r, 2, 7);
        let with_parents: Vec<NodeId> = g.nodes().filter(|&v| !g.incoming(v).is_empty()).collect();
        prop_assume!(!with_parents.is_empty());
        let z = *with_parents.choose(&mut r).unwrap();
        let subtracted: Vec<_> = g.incoming(z).iter().copied().filter(|_| r.random_bool(0.6)).collect();
        let aug = g.augment(&[AuxVarDef { base: z, subtracted: subtracted.clone() }]).unwrap();
        prop_assert_eq!(aug.n(), g.n() + 1);
        let p = sample_params(&g, r.random());
        let s = implied_sigma(&aug, &p.extend_to(&aug));
        let zs = NodeId(g.n());
        for v in g.nodes() {
            let mut expected = s.get(z, v);
            for &e in &subtracted {
                expected -= p.coef(e) * s.get(g.edge(e).unwrap().tail, v);
            }
            prop_assert!((s.get(zs, v) - expected).abs() <= 1e-10 * s.scale);
        }
    }

    #[test]
    fn d_separation_matches_partial_covariance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = graph(&mut r, 2, 7);
        let nodes: Vec<NodeId> = g.nodes().collect();
        let (x, y) = pair(&mut r, &nodes);
        let pool: Vec<NodeId> = nodes.iter().copied().filter(|&v| v != x && v != y).collect();
        let given = subset(&mut r, &pool, 0.4);
        let sep = d_separated(&g, x, y, &given).unwrap();
        let p = sample_params(&g, r.random());
        let s = implied_sigma(&g, &p);
        let c = partial_cov(&s, x, y, &given).unwrap();
        prop_assert_eq!(sep, c.abs() < 1e-9 * s.scale, "sep {} cov {}", sep, c);
    }

    #[test]
    fn auxiliary_separation_matches_covariance(seed in any::<u64>()) {
        let c = aux_separation_case(seed);
        prop_assert_eq!(c.separated, c.aux_cov.abs() < 1e-9 * c.scale);
        prop_assert!((c.aux_cov - c.cut_cov).abs() <= 1e-9 * c.scale);
    }

    #[test]
    fn error_decomposition(seed in any::<u64>()) {
        let c = decomposition_case(seed);
        prop_assert!(c.gap.abs() <= 1e-10 * c.scale, "gap {}", c.gap);
    }

    #[test]
    fn removal_preserves_covariance(seed in any::<u64>()) {
        let c = removal_case(seed, false);
        prop_assert!(c.gap.abs() <= 1e-10 * c.scale, "gap {}", c.gap);
    }

    #[test]
    fn removal_preserves_error_covariance(seed in any::<u64>()) {
        let c = removal_case(seed, true);
        prop_assert!(c.gap.abs() <= 1e-10 * c.scale, "gap {}", c.gap);
    }

    #[test]
    fn wright_matches_implied(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = graph(&mut r, 1, 7);
        let p = sample_params(&g, r.random());
        let s = implied_sigma(&g, &p);
        for a in g.nodes() {
            for b in g.nodes() {
                let w = wright_cov(&g, &p, a, b, 1_000_000).unwrap();
                prop_assert!((w - s.get(a, b)).abs() <= 1e-10 * s.scale.max(1.0));
            }
        }
    }

    #[test]
    fn nearest_separator_is_complete(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = graph(&mut r, 2, 7);
        let nodes: Vec<NodeId> = g.nodes().collect();
        let (y, z) = pair(&mut r, &nodes);
        let forbidden = subset(&mut r, &nodes, 0.25);
        let near = nearest_separator(&g, y, z, &forbidden);
        let reference = exhaustive_separator(&g, y, z, &forbidden);
        prop_assert_eq!(near.is_some(), reference.is_some());
        if let Some(w) = near {
            prop_assert!(d_separated(&g, y, z, &w).unwrap());
            prop_assert!(w.iter().all(|v| !forbidden.contains(v) && *v != y && *v != z));
        }
    }
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn identified_formulas_recover_coefficients(seed in any::<u64>()) {
        let g = graph(&mut rng(seed), 2, 6);
        let opts = SearchOptions { max_k: 3, ..SearchOptions::default() };
        let state = qid(&g, &[], &opts).unwrap();
        let report = verify_identification(&g, &state, 10, 1e-6, seed);
        for c in &report.edges {
            prop_assert!(c.passed, "{} failed {} of {}", g.edge_label(c.edge), c.failures, c.trials);
        }
    }

    #[test]
    fn found_sets_pass_the_test(seed in any::<u64>()) {
        let g = graph(&mut rng(seed), 2, 6);
        let opts = SearchOptions { max_k: 2, ..SearchOptions::default() };
        for cell in g.connected_edge_sets() {
            if cell.len() > 2 {
                continue;
            }
            if let Some(w) = find_qis(&g, &cell, &EdgeSet::new(), &opts).unwrap() {
                let z = w.instruments();
                let aux: Vec<bool> = w.triples.iter().map(|t| t.aux).collect();
                prop_assert!(test_qis(&g, &cell, &z, &aux, &EdgeSet::new(), &opts).unwrap().is_some());
            }
        }
    }
}
