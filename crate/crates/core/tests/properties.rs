//! Randomized invariants of the projection, gossip and statistics helpers.

use decac_core::consensus::{build_metropolis, disagreement, gossip, CommGraph};
use decac_core::nn::{project_ball, HiddenStack};
use decac_core::stats::{moving_average, wilcoxon_signed_rank_greater};
use nalgebra::DMatrix;
use proptest::prelude::*;

const WIDTH: usize = 3;
const DEPTH: usize = 2;

fn stack_strategy() -> impl Strategy<Value = HiddenStack> {
    prop::collection::vec(-20.0f64..20.0, WIDTH * WIDTH * DEPTH)
        .prop_map(|v| v.chunks(WIDTH * WIDTH).map(|c| DMatrix::from_column_slice(WIDTH, WIDTH, c)).collect())
}

fn dist(a: &HiddenStack, b: &HiddenStack) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn graph(kind: usize, n: usize) -> CommGraph {
    match kind {
        0 => CommGraph::ring(n),
        1 => CommGraph::star(n),
        _ => CommGraph::complete(n),
    }
    .unwrap()
}

proptest! {
    #[test]
    fn projection_is_feasible_idempotent_and_nonexpansive(
        w in stack_strategy(),
        v in stack_strategy(),
        c in stack_strategy(),
        radius in 0.1f64..10.0,
    ) {
        let pw = project_ball(&w, &c, radius).unwrap();
        let pv = project_ball(&v, &c, radius).unwrap();
        for (l, c) in pw.iter().zip(&c) {
            prop_assert!((l - c).norm() <= radius + 1e-9);
        }
        prop_assert_eq!(&project_ball(&pw, &c, radius).unwrap(), &pw);
        prop_assert!(dist(&pw, &pv) <= dist(&w, &v) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn gossip_preserves_mean_and_never_increases_disagreement(
        kind in 0usize..3,
        n in 2usize..9,
        rounds in 0usize..30,
        values in prop::collection::vec(-100.0f64..100.0, 8 * 4),
    ) {
        let a = build_metropolis(&graph(kind, n)).unwrap();
        let v = DMatrix::from_row_slice(n, 4, &values[..n * 4]);
        let g = gossip(&a, &v, rounds).unwrap();
        for j in 0..4 {
            let before = v.column(j).sum() / n as f64;
            let after = g.column(j).sum() / n as f64;
            prop_assert!((before - after).abs() <= 1e-10 * (1.0 + before.abs()));
        }
        prop_assert!(disagreement(&g) <= disagreement(&v) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn moving_average_matches_window_sums(
        values in prop::collection::vec(-10.0f64..10.0, 1..60),
        window in 1usize..10,
    ) {
        let ma = moving_average(&values, window);
        for (i, m) in ma.iter().enumerate() {
            let lo = (i + 1).saturating_sub(window);
            let direct = values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((m - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_rank_tails_cover_the_null(
        x in prop::collection::vec(-5.0f64..5.0, 1..15),
        y in prop::collection::vec(-5.0f64..5.0, 15),
    ) {
        let y = &y[..x.len()];
        let up = wilcoxon_signed_rank_greater(&x, y).unwrap().p_value;
        let down = wilcoxon_signed_rank_greater(y, &x).unwrap().p_value;
        prop_assert!((0.0..=1.0).contains(&up) && (0.0..=1.0).contains(&down));
        // P(W >= w) + P(W <= w) = 1 + P(W = w)
        prop_assert!(up + down >= 1.0 - 1e-12);
    }
}
