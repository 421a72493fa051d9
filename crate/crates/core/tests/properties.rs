//! Property tests for the structural invariants of the engine.

use proptest::collection::vec;
use proptest::prelude::*;

use horizon_calc::bprocess::BProcess;
use horizon_calc::config::{parse_config_str, render_config, ParsedConfig, VerifyConfig};
use horizon_calc::grid::{make_grid, SamplePath};
use horizon_calc::market::{ExitLaw, MarketConfig};
use horizon_calc::math::pairwise_sum;
use horizon_calc::sets::{
    intersect_stop, make_interval_set, GridInstant, SetKind, StoppingTime,
};

const N_STEPS: usize = 12;

fn arb_instant() -> impl Strategy<Value = GridInstant> {
    prop_oneof![
        (0..=N_STEPS).prop_map(GridInstant::Node),
        Just(GridInstant::Infinite),
    ]
}

fn arb_section() -> impl Strategy<Value = (GridInstant, bool)> {
    (arb_instant(), any::<bool>()).prop_map(|(at, open)| match at {
        GridInstant::Node(0) => (at, false),
        other => (other, open),
    })
}

proptest! {
    #[test]
    fn membership_is_a_down_set((debut, open) in arb_section()) {
        let grid = make_grid(1.0, N_STEPS).unwrap();
        let set = make_interval_set(
            grid,
            StoppingTime::new(vec![debut]),
            vec![open],
            SetKind::Optional,
        )
        .unwrap();
        let mut prev = true;
        for node in 0..=N_STEPS {
            let m = set.membership(0, node).unwrap();
            prop_assert!(!(m && !prev), "membership must be monotone decreasing in the node");
            prev = m;
        }
        prop_assert!(set.membership(0, 0).unwrap(), "node 0 is always a member");
    }

    #[test]
    fn intersections_compose_as_pointwise_minima(
        (debut, open) in arb_section(),
        s in arb_instant(),
        t in arb_instant(),
    ) {
        let grid = make_grid(1.0, N_STEPS).unwrap();
        let set = make_interval_set(
            grid,
            StoppingTime::new(vec![debut]),
            vec![open],
            SetKind::Optional,
        )
        .unwrap();
        let s = StoppingTime::new(vec![s]);
        let t = StoppingTime::new(vec![t]);
        let chained = intersect_stop(&intersect_stop(&set, &s).unwrap(), &t).unwrap();
        let direct = intersect_stop(&set, &s.min(&t)).unwrap();
        prop_assert_eq!(chained.last_node(0), direct.last_node(0));
        for node in 0..=N_STEPS {
            prop_assert_eq!(
                chained.membership(0, node).unwrap(),
                direct.membership(0, node).unwrap()
            );
        }
    }

    #[test]
    fn paths_reconstruct_from_left_limits_and_jumps(
        values in vec(-1e3..1e3f64, N_STEPS + 1)
    ) {
        let grid = make_grid(1.0, N_STEPS).unwrap();
        let path = SamplePath::new(grid, values).unwrap();
        let left = path.left_limit();
        for k in 0..=N_STEPS {
            let rebuilt = left.value(k).unwrap() + path.jump(k).unwrap();
            let direct = path.value(k).unwrap();
            prop_assert!(
                (rebuilt - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                "node {}: {} vs {}", k, rebuilt, direct
            );
        }
        let swept: f64 = (0..=N_STEPS).map(|k| path.jump(k).unwrap()).sum();
        let net = path.value(N_STEPS).unwrap() - path.value(0).unwrap();
        prop_assert!((swept - net).abs() <= 1e-9 * net.abs().max(1.0));
    }

    #[test]
    fn stopping_commutes_on_arbitrary_processes(
        values in vec(-1e3..1e3f64, N_STEPS + 1),
        s in 0..=N_STEPS,
        t in 0..=N_STEPS,
    ) {
        let grid = make_grid(1.0, N_STEPS).unwrap();
        let set = make_interval_set(
            grid.clone(),
            StoppingTime::new(vec![GridInstant::Infinite]),
            vec![false],
            SetKind::Optional,
        )
        .unwrap();
        let path = SamplePath::new(grid, values).unwrap();
        let bp = BProcess::restrict_paths(&[path], set).unwrap();
        let s = StoppingTime::new(vec![GridInstant::Node(s)]);
        let t = StoppingTime::new(vec![GridInstant::Node(t)]);
        let a = bp.stop(&s).unwrap().stop(&t).unwrap();
        let b = bp.stop(&t).unwrap().stop(&s).unwrap();
        let c = bp.stop(&s.min(&t)).unwrap();
        prop_assert_eq!(a.sup_abs_diff(&b).unwrap(), 0.0);
        prop_assert_eq!(a.sup_abs_diff(&c).unwrap(), 0.0);
    }

    #[test]
    fn pairwise_sum_agrees_with_the_naive_sum(values in vec(-1e6..1e6f64, 0..200)) {
        let naive: f64 = values.iter().sum();
        let paired = pairwise_sum(&values);
        prop_assert!((naive - paired).abs() <= 1e-6 * naive.abs().max(1.0));
    }
}

fn arb_exit_law() -> impl Strategy<Value = ExitLaw> {
    prop_oneof![
        Just(ExitLaw::None),
        (0.01..5.0f64).prop_map(|rate| ExitLaw::Exponential { rate }),
        (0.0..2.0f64, 0.01..3.0f64).prop_map(|(lo, gap)| ExitLaw::Uniform { lo, hi: lo + gap }),
    ]
}

fn arb_market() -> impl Strategy<Value = MarketConfig> {
    (
        0.1..1e4f64,
        0.1..1e3f64,
        0.0..0.5f64,
        0.1..3.0f64,
        vec((0.05..1.0f64, 0.1..2.0f64), 1..4),
        arb_exit_law(),
        1usize..1000,
        1usize..512,
        any::<u64>(),
    )
        .prop_map(
            |(s0, x0, mu_star, b, periods, exit_law, n_paths, steps_per_unit, seed)| {
                let mut period_ends = Vec::new();
                let mut acc = 0.0;
                let mut sigma = Vec::new();
                for (s, gap) in periods {
                    acc += gap;
                    period_ends.push(acc);
                    sigma.push(s);
                }
                MarketConfig {
                    s0,
                    x0,
                    mu_star,
                    b,
                    sigma,
                    period_ends,
                    exit_law,
                    n_paths,
                    steps_per_unit,
                    seed,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn config_rendering_round_trips(market in arb_market()) {
        let config = ParsedConfig {
            market: Some(market),
            verify: VerifyConfig::default(),
        };
        let rendered = render_config(&config);
        let reparsed = parse_config_str(&rendered).unwrap();
        prop_assert_eq!(config, reparsed);
    }
}
