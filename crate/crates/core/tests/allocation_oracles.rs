mod common;

use std::collections::BTreeMap;

use common::*;
use kan_verify::bench::benchmarks;
use kan_verify::error_prop::{global_error_bound, lipschitz_profiles, path_weights, unit_lipschitz, ErrorProfiles};
use kan_verify::knapsack::{
    build_instance, optimized_allocation, smallest_uniform_allocation, solve_mck, vanilla_allocation, KnapsackInstance,
    KnapsackItem,
};
use kan_verify::pwa::{build_tradeoff_table, Grid, TradeoffTable};
use kan_verify::verify::{Verifier, VerifyConfig};
use kan_verify::{Edge, Error, KanNetwork, Layer, Node, UnitId, UnitSlot, UnivariateUnit};
use proptest::prelude::*;
use rand::Rng;

/// Sum over every path from node `j` of layer `layer` to `output` of the
/// product of `|weight| · Lipschitz` along its edges and outer units.
fn downstream(net: &KanNetwork, layer: usize, j: usize, output: usize) -> f64 {
    if layer == net.num_layers() {
        return if j == output { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for (jj, node) in net.layers()[layer].outputs.iter().enumerate() {
        let e = &node.inputs[j];
        let outer = node.outer.as_ref().map_or(1.0, unit_lipschitz);
        total += e.weight.abs() * unit_lipschitz(&e.unit) * outer * downstream(net, layer + 1, jj, output);
    }
    total
}

fn enumerated_weight(net: &KanNetwork, id: UnitId, output: usize) -> f64 {
    let node = &net.layers()[id.layer].outputs[id.output];
    let after = downstream(net, id.layer + 1, id.output, output);
    match id.slot {
        UnitSlot::Outer => after,
        UnitSlot::Inner(k) => {
            let outer = node.outer.as_ref().map_or(1.0, unit_lipschitz);
            node.inputs[k].weight.abs() * outer * after
        }
    }
}

#[test]
fn path_weights_match_path_enumeration() {
    let mut r = rng(21);
    for _ in 0..30 {
        let depth = r.gen_range(2..4);
        let widths: Vec<usize> = (0..=depth).map(|_| r.gen_range(1..4)).collect();
        let net = random_network(&mut r, &widths, 1.0);
        let profiles = lipschitz_profiles(&net);
        let map = path_weights(&net, &profiles).unwrap();
        for (id, _) in net.units() {
            for o in 0..net.output_dim() {
                let want = enumerated_weight(&net, id, o);
                let got = map.weight(id, o);
                assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{id} output {o}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn missing_profile_is_reported() {
    let net = KanNetwork::new(vec![Layer {
        outputs: vec![Node::new(vec![Edge::new(UnivariateUnit::affine(1.0, 1.0, 0.0).unwrap())])],
    }])
    .unwrap();
    let err = path_weights(&net, &ErrorProfiles::new()).unwrap_err();
    assert!(matches!(err, Error::MissingAbstraction(_)), "{err}");
}

fn tables_for(net: &KanNetwork, intervals: usize, max_pieces: usize) -> BTreeMap<UnitId, TradeoffTable> {
    net.units()
        .map(|(id, u)| (id, build_tradeoff_table(u, &Grid::for_unit(u, intervals).unwrap(), max_pieces).unwrap()))
        .collect()
}

fn brute_force_mck(inst: &KnapsackInstance) -> Option<(u64, Vec<u64>)> {
    let n = inst.options.len();
    let mut pick = vec![0usize; n];
    let mut best: Option<(u64, Vec<u64>)> = None;
    loop {
        let w: u64 = pick.iter().enumerate().map(|(i, &j)| inst.options[i][j].weight).sum();
        if w <= inst.budget {
            let values: Vec<u64> = pick.iter().enumerate().map(|(i, &j)| inst.options[i][j].value).collect();
            let total = values.iter().sum();
            if best.as_ref().is_none_or(|(b, bv)| (total, &values) < (*b, bv)) {
                best = Some((total, values));
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            pick[i] += 1;
            if pick[i] < inst.options[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

fn random_instance(r: &mut rand_chacha::ChaCha8Rng) -> KnapsackInstance {
    let n = r.gen_range(1..=6);
    let k = r.gen_range(1..=5);
    let options = (0..n)
        .map(|_| {
            let mut w = 0;
            (0..k)
                .map(|_| {
                    w += r.gen_range(0..8);
                    KnapsackItem {
                        weight: w,
                        value: r.gen_range(0..10),
                    }
                })
                .collect()
        })
        .collect();
    KnapsackInstance {
        options,
        budget: r.gen_range(0..=40),
    }
}

#[test]
fn mck_matches_exhaustive_enumeration() {
    let mut r = rng(22);
    let mut solved = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut r);
        match (solve_mck(&inst), brute_force_mck(&inst)) {
            (Ok(sol), Some((total, values))) => {
                assert_eq!(sol.total_value, total);
                let chosen: Vec<u64> = sol.choices.iter().enumerate().map(|(i, &j)| inst.options[i][j].value).collect();
                assert_eq!(chosen, values, "tie-break differs");
                assert!(sol.total_weight <= inst.budget);
                solved += 1;
            }
            (Err(Error::KnapsackInfeasible { deficit, .. }), None) => assert!(deficit > 0),
            (a, b) => panic!("solver {a:?} vs brute force {b:?}"),
        }
    }
    assert!(solved > 100);
}

#[test]
fn build_instance_hand_example() {
    // a single unit whose errors are 0.9 then 0.1, weight 1, δ = 0.5, c = 0.01
    let unit = UnivariateUnit::tabulated(1.0, vec![0.0, 1.0, 0.0]).unwrap();
    let net = KanNetwork::new(vec![Layer {
        outputs: vec![Node::new(vec![Edge::new(unit)])],
    }])
    .unwrap();
    let id = UnitId::inner(0, 0, 0);
    let mut tables = tables_for(&net, 2, 2);
    let t = tables.get_mut(&id).unwrap();
    t.entries[0].corrected_error = 0.9;
    t.entries[1].corrected_error = 0.1;
    let weights = path_weights(&net, &lipschitz_profiles(&net)).unwrap();
    assert_eq!(weights.weight(id, 0), 1.0);
    let (inst, opts) = build_instance(&tables, &weights, 0, 0.5, 0.01).unwrap();
    assert_eq!(inst.budget, 50);
    let w: Vec<u64> = inst.options[0].iter().map(|it| it.weight).collect();
    assert_eq!(w, vec![10, 90]);
    let sol = solve_mck(&inst).unwrap();
    assert_eq!(opts[0].budgets[sol.choices[0]], 2);
}

#[test]
fn generous_budget_gives_one_piece_everywhere() {
    let mut r = rng(23);
    let net = random_network(&mut r, &[2, 2, 1], 1.0);
    let tables = tables_for(&net, 32, 8);
    let weights = path_weights(&net, &lipschitz_profiles(&net)).unwrap();
    let alloc = optimized_allocation(&tables, &weights, 0, 1e9, None).unwrap();
    assert!(alloc.units.iter().all(|u| u.budget == 1));
}

#[test]
fn scaled_allocation_is_sound_in_reals() {
    let mut r = rng(24);
    for _ in 0..100 {
        let widths = [r.gen_range(1..4), r.gen_range(1..4), 1];
        let net = random_network(&mut r, &widths, 1.0);
        let tables = tables_for(&net, 32, 10);
        let mut profiles = lipschitz_profiles(&net);
        let weights = path_weights(&net, &profiles).unwrap();
        let floor = kan_verify::knapsack::min_achievable_bound(&tables, &weights, 0).unwrap();
        let delta = floor * r.gen_range(1.01..4.0);
        let alloc = optimized_allocation(&tables, &weights, 0, delta, None).unwrap();
        for u in &alloc.units {
            profiles.get_mut(&u.id).unwrap().pwa_error = tables[&u.id].entry(u.budget).unwrap().corrected_error;
        }
        let real = global_error_bound(&weights, &profiles, 0);
        assert!(real <= delta, "{real} > {delta}");
        assert!((real - alloc.global_bound).abs() <= 1e-12 * real.max(1.0));
    }
}

/// Fewest entry pieces over uniform budgets that meet `delta`.
fn uniform_sweep(tables: &BTreeMap<UnitId, TradeoffTable>, weights: &kan_verify::error_prop::PathWeightMap, delta: f64) -> Option<usize> {
    let max = tables.values().map(|t| t.max_pieces()).max()?;
    (1..=max).find_map(|p| {
        let (bound, pieces) = tables.iter().fold((0.0, 0), |(b, n), (&id, t)| {
            let e = t.entry(p.min(t.max_pieces())).unwrap();
            (b + weights.weight(id, 0) * e.corrected_error, n + e.pieces())
        });
        (bound <= delta).then_some(pieces)
    })
}

#[test]
fn optimized_never_uses_more_pieces_than_uniform() {
    let mut r = rng(25);
    for _ in 0..40 {
        let hidden = r.gen_range(1..4);
        let net = random_network(&mut r, &[2, hidden, 1], 1.0);
        let tables = tables_for(&net, 48, 16);
        let weights = path_weights(&net, &lipschitz_profiles(&net)).unwrap();
        let floor = kan_verify::knapsack::min_achievable_bound(&tables, &weights, 0).unwrap();
        let delta = floor * r.gen_range(1.05..5.0);
        let opt = optimized_allocation(&tables, &weights, 0, delta, None).unwrap();
        if let Some(uniform) = uniform_sweep(&tables, &weights, delta) {
            assert!(opt.total_pieces <= uniform, "{} > {uniform}", opt.total_pieces);
        }
    }
    for b in benchmarks().unwrap() {
        let v = Verifier::new(&b.net, VerifyConfig::for_network(&b.net)).unwrap();
        let delta = v.default_delta(0).unwrap();
        let opt = v.allocate(0, delta).unwrap();
        let uniform = uniform_sweep(v.tables(), v.weights(), delta).unwrap();
        let matched = smallest_uniform_allocation(v.tables(), v.weights(), 0, delta).unwrap();
        assert!(opt.total_pieces <= uniform && uniform <= matched.total_pieces, "{}", b.name);
        assert!(opt.global_bound <= delta && matched.global_bound <= delta);
    }
}

#[test]
fn uniform_allocation_basics() {
    let mut r = rng(26);
    let net = random_network(&mut r, &[2, 3, 1], 1.0);
    let tables = tables_for(&net, 32, 6);
    let weights = path_weights(&net, &lipschitz_profiles(&net)).unwrap();
    let one = vanilla_allocation(&tables, &weights, 0, 1).unwrap();
    assert_eq!(one.total_pieces, net.unit_count());
    assert!(vanilla_allocation(&tables, &weights, 0, 0).is_err());

    let unit = random_unit(&mut r, 1.0);
    let single = KanNetwork::new(vec![Layer {
        outputs: vec![Node::new(vec![Edge::new(unit)])],
    }])
    .unwrap();
    let tables = tables_for(&single, 32, 6);
    let weights = path_weights(&single, &lipschitz_profiles(&single)).unwrap();
    let id = UnitId::inner(0, 0, 0);
    for k in 1..=6 {
        let a = vanilla_allocation(&tables, &weights, 0, k).unwrap();
        let e = tables[&id].entry(k).unwrap();
        assert_eq!(a.units[0].error, e.corrected_error);
        assert_eq!(a.units[0].budget, k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mck_solution_fits_the_budget(
        options in prop::collection::vec(prop::collection::vec((0u64..20, 0u64..9), 1..5), 1..6),
        budget in 0u64..60,
    ) {
        let options: Vec<Vec<KnapsackItem>> = options
            .into_iter()
            .map(|o| o.into_iter().map(|(weight, value)| KnapsackItem { weight, value }).collect())
            .collect();
        let inst = KnapsackInstance { options, budget };
        if let Ok(sol) = solve_mck(&inst) {
            let w: u64 = sol.choices.iter().enumerate().map(|(i, &j)| inst.options[i][j].weight).sum();
            let v: u64 = sol.choices.iter().enumerate().map(|(i, &j)| inst.options[i][j].value).sum();
            prop_assert_eq!(w, sol.total_weight);
            prop_assert_eq!(v, sol.total_value);
            prop_assert!(w <= budget);
        }
    }
}
