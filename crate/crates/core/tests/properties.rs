use proptest::prelude::*;

use steipcn::data::{windows, Normalizer, TrafficSeries};
use steipcn::graph::{compute_hops, st_edges_for, RoadGraph};
use steipcn::training::metrics;

fn graph_strategy() -> impl Strategy<Value = RoadGraph> {
    (1usize..16).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |pairs| RoadGraph::new(n, pairs, false).unwrap())
    })
}

proptest! {
    #[test]
    fn undirected_hops_are_symmetric(g in graph_strategy(), alpha in 0usize..5) {
        let h = compute_hops(&g, alpha).unwrap();
        for i in 0..g.n_nodes() {
            prop_assert_eq!(h.get(i, i), Some(0));
            for j in 0..g.n_nodes() {
                prop_assert_eq!(h.get(i, j), h.get(j, i));
            }
        }
    }

    #[test]
    fn larger_alpha_only_adds_pairs(g in graph_strategy(), alpha in 0usize..4) {
        let small = compute_hops(&g, alpha).unwrap();
        let big = compute_hops(&g, alpha + 1).unwrap();
        for i in 0..g.n_nodes() {
            for j in 0..g.n_nodes() {
                if let Some(d) = small.get(i, j) {
                    prop_assert_eq!(big.get(i, j), Some(d));
                }
            }
        }
    }

    #[test]
    fn hop_triangle_inequality(g in graph_strategy()) {
        let h = compute_hops(&g, 30).unwrap();
        let n = g.n_nodes();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if let (Some(a), Some(b), Some(c)) = (h.get(i, j), h.get(j, k), h.get(i, k)) {
                        prop_assert!(c <= a + b);
                    }
                }
            }
        }
    }

    #[test]
    fn edge_count_identity(g in graph_strategy(), alpha in 0usize..4, beta in 0usize..4) {
        let e = st_edges_for(&g, alpha, beta).unwrap();
        prop_assert_eq!(e.m_total(), e.m_spatial() * (beta + 1));
        prop_assert!(e.m_spatial() >= g.n_nodes());
    }

    #[test]
    fn rmse_dominates_mae(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = metrics(&p, &t, 1e-9);
        prop_assert!(m.rmse + 1e-9 * m.rmse.abs() >= m.mae);
        prop_assert!(m.mae >= 0.0);
    }

    #[test]
    fn window_count_formula(steps in 1usize..120, t_h in 1usize..13, t_p in 1usize..13, lo in 0usize..20) {
        let values: Vec<f32> = (0..steps * 2).map(|k| k as f32).collect();
        let s = TrafficSeries::new(2, 24, 0, 0, values).unwrap();
        let lo = lo.min(steps);
        let w = windows(&s, lo..steps, Normalizer::new(0.0, 1.0).unwrap(), t_h, t_p, 2).unwrap();
        let span = steps - lo;
        prop_assert_eq!(w.len(), (span + 1).saturating_sub(t_h + t_p));
        if !w.is_empty() {
            let last = w.get(w.len() - 1);
            prop_assert_eq!(last.start + t_h + t_p, steps);
        }
    }
}
