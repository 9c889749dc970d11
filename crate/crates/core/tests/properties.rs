//! Property tests over the public API.

use ndarray::Array2;
use proptest::prelude::*;

use scenario_hg::config::TrainConfig;
use scenario_hg::conv::residual_stack;
use scenario_hg::evaluator::acc_mrr;
use scenario_hg::hypergraph::Hypergraph;
use scenario_hg::objective::{info_nce_pair, rec_loss};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn constant_signal_is_scaled_by_readout(
        n in 1usize..12,
        edges in prop::collection::vec(prop::collection::btree_set(0usize..12, 1..5), 0..8),
        c in -2.0f64..2.0,
        layers in 1usize..4,
    ) {
        let edges: Vec<Vec<usize>> = edges
            .into_iter()
            .map(|e| e.into_iter().filter(|&v| v < n).collect::<Vec<_>>())
            .filter(|e| !e.is_empty())
            .collect();
        let g = Hypergraph::new(n, edges).unwrap();
        let x = Array2::from_elem((n, 3), c);
        let out = residual_stack(&g, x.view(), layers).unwrap();
        let scale = (2 * layers + 1) as f64 / (layers + 1) as f64;
        for v in out.iter() {
            prop_assert!((v - c * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_is_monotone_and_bounded_by_mrr(ranks in prop::collection::vec(1usize..100, 1..200)) {
        let m = acc_mrr(&ranks).unwrap();
        prop_assert!(m.acc1 <= m.acc5 && m.acc5 <= m.acc10 && m.acc10 <= m.acc20 && m.acc20 <= 1.0);
        prop_assert!(m.mrr >= m.acc1 && m.mrr <= 1.0);
        prop_assert_eq!(m.count, ranks.len());
    }

    #[test]
    fn losses_are_non_negative(a in matrix(4, 5), b in matrix(4, 5), scores in matrix(3, 6), tau in 0.05f64..1.0) {
        prop_assert!(info_nce_pair(a.view(), b.view(), tau) >= -1e-12);
        let rec = rec_loss(scores.view(), &[0, 3, 5]).unwrap();
        prop_assert!(rec >= 0.0 && rec.is_finite());
    }

    #[test]
    fn config_text_round_trips(dim in 1usize..512, lr in 1e-5f64..1.0, seed in any::<u64>(), no_split in any::<bool>()) {
        let cfg = TrainConfig { dim, lr, seed, no_split, ..TrainConfig::default() };
        let mut back = TrainConfig::default();
        back.apply_text(&cfg.to_kv_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
