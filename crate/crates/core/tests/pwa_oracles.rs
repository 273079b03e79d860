mod common;

use common::*;
use kan_verify::pwa::{
    build_tradeoff_table, discretization_correction, optimal_pwa, single_piece_error, Grid, PwaFunction,
    TradeoffCache,
};
use kan_verify::{UnitId, UnivariateUnit};
use proptest::prelude::*;
use rand::Rng;

fn grid_values(unit: &UnivariateUnit, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let points = grid.points();
    let values = points.iter().map(|&z| unit.eval_inner(z)).collect();
    (points, values)
}

#[test]
fn dp_matches_breakpoint_enumeration() {
    let mut r = rng(11);
    for _ in 0..60 {
        let l = r.gen_range(0.5..3.0);
        let unit = random_unit(&mut r, l);
        let grid = Grid::for_unit(&unit, r.gen_range(2..=24)).unwrap();
        let k = r.gen_range(1..=4);
        let (points, values) = grid_values(&unit, &grid);
        let (_, dp) = optimal_pwa(&unit, &grid, k).unwrap();
        let brute = brute_force_pwa_error(&points, &values, k);
        assert!((dp - brute).abs() <= 1e-12 * brute.abs().max(1e-300), "dp {dp} vs brute {brute}");
    }
}

#[test]
fn single_piece_error_is_the_naive_chord() {
    let mut r = rng(12);
    for _ in 0..50 {
        let unit = random_unit(&mut r, 1.5);
        let grid = Grid::for_unit(&unit, 40).unwrap();
        let (points, values) = grid_values(&unit, &grid);
        let j1 = r.gen_range(0..39);
        let j2 = r.gen_range(j1 + 1..=40);
        assert_eq!(single_piece_error(&unit, &grid, j1, j2).unwrap(), naive_chord(&points, &values, j1, j2));
    }
}

#[test]
fn returned_pwa_reaches_the_reported_error() {
    let mut r = rng(13);
    for _ in 0..40 {
        let unit = random_unit(&mut r, 2.0);
        let grid = Grid::for_unit(&unit, 48).unwrap();
        let k = r.gen_range(1..=6);
        let (pwa, err) = optimal_pwa(&unit, &grid, k).unwrap();
        assert!(pwa.pieces() <= k);
        let measured = grid
            .points()
            .iter()
            .map(|&z| (unit.eval_inner(z) - pwa.eval(z)).abs())
            .fold(0.0f64, f64::max);
        assert!((measured - err).abs() <= 1e-12 * err.max(1.0), "{measured} vs {err}");
        for (&b, &v) in pwa.breakpoints().iter().zip(pwa.values()) {
            assert_eq!(v, unit.eval_inner(b));
        }
    }
}

#[test]
fn continuous_error_is_sandwiched() {
    let mut r = rng(14);
    for _ in 0..40 {
        let l = r.gen_range(0.5..2.5);
        let unit = random_unit(&mut r, l);
        let grid = Grid::for_unit(&unit, r.gen_range(8..64)).unwrap();
        let (pwa, discrete) = optimal_pwa(&unit, &grid, r.gen_range(1..=8)).unwrap();
        let corr = discretization_correction(&unit, &pwa, &grid);
        let l = unit.limit();
        let dense = (0..=20_000)
            .map(|i| (-l + 2.0 * l * i as f64 / 20_000.0).min(l))
            .chain(grid.points())
            .map(|z| (unit.eval_inner(z) - pwa.eval(z)).abs())
            .fold(0.0f64, f64::max);
        assert!(dense >= discrete - 1e-9 && dense <= discrete + corr + 1e-9, "{discrete} <= {dense} <= {}", discrete + corr);
    }
}

#[test]
fn cache_reuses_tables_and_invalidates_on_change() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.tradeoff.json");
    let unit = UnivariateUnit::tabulate(1.0, 9, |z| z.sin()).unwrap();
    let grid = Grid::for_unit(&unit, 32).unwrap();
    let id = UnitId::inner(0, 0, 0);
    let mut cache = TradeoffCache::load_or_default(&path).unwrap();
    let built = cache.get_or_build(id, &unit, &grid, 8).unwrap().clone();
    cache.save(&path).unwrap();
    let reloaded = TradeoffCache::load(&path).unwrap();
    assert_eq!(reloaded.get(id, &unit, &grid, 8), Some(&built));
    let changed = UnivariateUnit::tabulate(1.0, 9, |z| z.cos()).unwrap();
    assert!(reloaded.get(id, &changed, &grid, 8).is_none());
}

fn arb_unit() -> impl Strategy<Value = UnivariateUnit> {
    (0.2f64..3.0, prop::collection::vec(-2.0f64..2.0, 2..12))
        .prop_map(|(l, values)| UnivariateUnit::tabulated(l, values).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_errors_never_increase(unit in arb_unit(), intervals in 4usize..40, max_pieces in 1usize..12) {
        let grid = Grid::for_unit(&unit, intervals).unwrap();
        let t = build_tradeoff_table(&unit, &grid, max_pieces).unwrap();
        for w in t.entries.windows(2) {
            prop_assert!(w[1].discrete_error <= w[0].discrete_error);
            prop_assert!(w[1].corrected_error <= w[0].corrected_error);
            prop_assert!(w[1].budget == w[0].budget + 1);
        }
        for e in &t.entries {
            prop_assert!(e.pieces() <= e.budget);
            prop_assert!(e.corrected_error >= e.pwa_discrete_error);
        }
    }

    #[test]
    fn table_entry_matches_direct_dp(unit in arb_unit(), k in 1usize..6) {
        let grid = Grid::for_unit(&unit, 24).unwrap();
        let t = build_tradeoff_table(&unit, &grid, 6).unwrap();
        let (_, err) = optimal_pwa(&unit, &grid, k).unwrap();
        prop_assert_eq!(t.entry(k).unwrap().discrete_error, err);
    }

    #[test]
    fn pwa_json_round_trips(unit in arb_unit(), k in 1usize..5) {
        let grid = Grid::for_unit(&unit, 16).unwrap();
        let (pwa, _) = optimal_pwa(&unit, &grid, k).unwrap();
        let text = serde_json::to_string(&pwa).unwrap();
        let back: PwaFunction = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, pwa);
    }

    #[test]
    fn pwa_is_zero_outside_its_domain(unit in arb_unit(), z in 3.0f64..10.0) {
        let grid = Grid::for_unit(&unit, 8).unwrap();
        let (pwa, _) = optimal_pwa(&unit, &grid, 2).unwrap();
        prop_assert_eq!(pwa.eval(z), 0.0);
        prop_assert_eq!(pwa.eval(-z), 0.0);
    }
}
