//! Multiple-choice knapsack allocation of piece counts to units.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::error_prop::PathWeightMap;
use crate::network::UnitId;
use crate::pwa::TradeoffTable;

/// Scaled budget used when no explicit scale is given.
pub const DEFAULT_BUDGET_STEPS: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnapsackItem {
    pub weight: u64,
    pub value: u64,
}

/// Pick exactly one item per option, keeping total weight within `budget`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnapsackInstance {
    pub options: Vec<Vec<KnapsackItem>>,
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnapsackSolution {
    /// Chosen item index per option.
    pub choices: Vec<usize>,
    pub total_value: u64,
    pub total_weight: u64,
}

/// Minimizes total value by a suffix DP over capacities.
///
/// Among optimal solutions the one with the lexicographically smallest
/// vector of chosen values is returned (then smallest item index).
pub fn solve_mck(instance: &KnapsackInstance) -> Result<KnapsackSolution> {
    let n = instance.options.len();
    if instance.options.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("every option needs at least one item".into()));
    }
    if instance.options.iter().any(|o| o.len() > u16::MAX as usize) {
        return Err(Error::InvalidArgument("too many items in one option".into()));
    }
    let required: u64 = instance
        .options
        .iter()
        .map(|o| o.iter().map(|it| it.weight).min().unwrap())
        .sum();
    if required > instance.budget {
        return Err(Error::KnapsackInfeasible {
            required,
            budget: instance.budget,
            deficit: required - instance.budget,
        });
    }
    let cap = instance.budget as usize;
    let width = cap + 1;
    // suffix[c]: best value of options i.. with capacity c
    let mut suffix = vec![0u64; width];
    let mut current = vec![u64::MAX; width];
    let mut choice = vec![0u16; n * width];
    for i in (0..n).rev() {
        let items = &instance.options[i];
        let row = &mut choice[i * width..(i + 1) * width];
        for c in 0..width {
            let mut best = u64::MAX;
            let mut best_item = 0usize;
            for (j, it) in items.iter().enumerate() {
                if it.weight as usize > c {
                    continue;
                }
                let rest = suffix[c - it.weight as usize];
                if rest == u64::MAX {
                    continue;
                }
                let total = rest + it.value;
                let better = total < best
                    || (total == best && it.value < items[best_item].value);
                if better {
                    best = total;
                    best_item = j;
                }
            }
            current[c] = best;
            row[c] = best_item as u16;
        }
        std::mem::swap(&mut suffix, &mut current);
    }
    let mut c = cap;
    let mut choices = Vec::with_capacity(n);
    let mut total_weight = 0;
    for i in 0..n {
        let j = choice[i * width + c] as usize;
        let w = instance.options[i][j].weight;
        choices.push(j);
        total_weight += w;
        c -= w as usize;
    }
    Ok(KnapsackSolution {
        choices,
        total_value: suffix[cap],
        total_weight,
    })
}

/// Items of one unit: knapsack items paired with the trade-off budget
/// (1-based) they stand for.
#[derive(Debug, Clone)]
pub struct UnitOption {
    pub id: UnitId,
    pub items: Vec<KnapsackItem>,
    pub budgets: Vec<usize>,
}

/// Scaled integer weight of a real error contribution, rounded up so the
/// scaled sum bounds the real sum.
fn scaled_weight(contribution: f64, scale: f64) -> u64 {
    let mut w = (contribution / scale).ceil() as u64;
    if (w as f64) * scale < contribution {
        w += 1;
    }
    w
}

fn scaled_budget(delta: f64, scale: f64) -> u64 {
    let mut b = (delta / scale).floor() as u64;
    while b > 0 && (b as f64) * scale > delta {
        b -= 1;
    }
    b
}

/// Knapsack instance for one output: one option per unit, one item per
/// Pareto-useful trade-off entry.
pub fn build_instance(
    tables: &BTreeMap<UnitId, TradeoffTable>,
    weights: &PathWeightMap,
    output: usize,
    delta: f64,
    scale: f64,
) -> Result<(KnapsackInstance, Vec<UnitOption>)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("error budget must be > 0, got {delta}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
    }
    let floor = min_achievable_bound(tables, weights, output)?;
    if floor > delta {
        return Err(Error::BudgetInfeasible {
            output,
            delta,
            min_achievable: floor,
        });
    }
    let mut options = Vec::with_capacity(tables.len());
    for (&id, table) in tables {
        let w = weights.weight(id, output);
        let mut raw: Vec<(KnapsackItem, usize)> = table
            .entries
            .iter()
            .map(|e| {
                (
                    KnapsackItem {
                        weight: scaled_weight(w * e.corrected_error, scale),
                        value: e.pieces() as u64,
                    },
                    e.budget,
                )
            })
            .collect();
        raw.sort_by_key(|(it, b)| (it.weight, it.value, *b));
        let mut items = Vec::new();
        let mut budgets = Vec::new();
        for (it, b) in raw {
            if items.last().is_none_or(|last: &KnapsackItem| it.value < last.value) {
                items.push(it);
                budgets.push(b);
            }
        }
        options.push(UnitOption { id, items, budgets });
    }
    let instance = KnapsackInstance {
        options: options.iter().map(|o| o.items.clone()).collect(),
        budget: scaled_budget(delta, scale),
    };
    Ok((instance, options))
}

/// Smallest global bound reachable with every unit at its largest budget.
pub fn min_achievable_bound(
    tables: &BTreeMap<UnitId, TradeoffTable>,
    weights: &PathWeightMap,
    output: usize,
) -> Result<f64> {
    tables
        .iter()
        .map(|(&id, t)| {
            let best = t
                .entries
                .iter()
                .map(|e| e.corrected_error)
                .fold(f64::INFINITY, f64::min);
            Ok(weights.weight(id, output) * best)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitAllocation {
    #[serde(serialize_with = "serialize_key")]
    pub id: UnitId,
    /// Trade-off budget selected for the unit.
    pub budget: usize,
    /// Pieces of the abstraction actually used.
    pub pieces: usize,
    pub error: f64,
    pub path_weight: f64,
}

fn serialize_key<S: serde::Serializer>(id: &UnitId, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&id.key())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub output: usize,
    pub delta: Option<f64>,
    pub units: Vec<UnitAllocation>,
    pub global_bound: f64,
    pub total_pieces: usize,
}

impl Allocation {
    fn from_budgets(
        tables: &BTreeMap<UnitId, TradeoffTable>,
        weights: &PathWeightMap,
        output: usize,
        delta: Option<f64>,
        budget_of: impl Fn(UnitId, &TradeoffTable) -> usize,
    ) -> Self {
        let units: Vec<UnitAllocation> = tables
            .iter()
            .map(|(&id, t)| {
                let budget = budget_of(id, t).clamp(1, t.max_pieces());
                let e = t.entry(budget).expect("budget within table");
                UnitAllocation {
                    id,
                    budget,
                    pieces: e.pieces(),
                    error: e.corrected_error,
                    path_weight: weights.weight(id, output),
                }
            })
            .collect();
        let global_bound = units.iter().map(|u| u.path_weight * u.error).sum();
        let total_pieces = units.iter().map(|u| u.pieces).sum();
        Allocation {
            output,
            delta,
            units,
            global_bound,
            total_pieces,
        }
    }

    /// Encodes every unit with exactly its budgeted number of segments,
    /// padding coarser table entries with collinear splits.
    fn with_fixed_segments(mut self) -> Self {
        for u in &mut self.units {
            u.pieces = u.budget;
        }
        self.total_pieces = self.units.iter().map(|u| u.pieces).sum();
        self
    }

    pub fn budget(&self, id: UnitId) -> Option<usize> {
        self.units.iter().find(|u| u.id == id).map(|u| u.budget)
    }

    pub fn budgets(&self) -> BTreeMap<UnitId, usize> {
        self.units.iter().map(|u| (u.id, u.budget)).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Fewest total pieces whose global bound for `output` stays within `delta`.
pub fn optimized_allocation(
    tables: &BTreeMap<UnitId, TradeoffTable>,
    weights: &PathWeightMap,
    output: usize,
    delta: f64,
    scale: Option<f64>,
) -> Result<Allocation> {
    let scale = scale.unwrap_or(delta / DEFAULT_BUDGET_STEPS);
    let (instance, options) = build_instance(tables, weights, output, delta, scale)?;
    let sol = solve_mck(&instance)?;
    let chosen: BTreeMap<UnitId, usize> = options
        .iter()
        .zip(&sol.choices)
        .map(|(o, &j)| (o.id, o.budgets[j]))
        .collect();
    Ok(Allocation::from_budgets(tables, weights, output, Some(delta), |id, _| chosen[&id]))
}

/// The same piece budget for every unit.
pub fn vanilla_allocation(
    tables: &BTreeMap<UnitId, TradeoffTable>,
    weights: &PathWeightMap,
    output: usize,
    pieces_per_unit: usize,
) -> Result<Allocation> {
    if pieces_per_unit == 0 {
        return Err(Error::InvalidArgument("pieces per unit must be at least 1".into()));
    }
    Ok(Allocation::from_budgets(tables, weights, output, None, |_, _| pieces_per_unit).with_fixed_segments())
}

/// Smallest uniform budget whose global bound meets `delta`, if any.
pub fn smallest_uniform_allocation(
    tables: &BTreeMap<UnitId, TradeoffTable>,
    weights: &PathWeightMap,
    output: usize,
    delta: f64,
) -> Option<Allocation> {
    let max = tables.values().map(TradeoffTable::max_pieces).max().unwrap_or(1);
    (1..=max)
        .map(|p| Allocation::from_budgets(tables, weights, output, Some(delta), |_, _| p).with_fixed_segments())
        .find(|a| a.global_bound <= delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(weight: u64, value: u64) -> KnapsackItem {
        KnapsackItem { weight, value }
    }

    #[test]
    fn only_affordable_item() {
        let inst = KnapsackInstance {
            options: vec![vec![item(0, 5), item(3, 1)]],
            budget: 2,
        };
        let sol = solve_mck(&inst).unwrap();
        assert_eq!(sol.choices, vec![0]);
        assert_eq!(sol.total_value, 5);
    }

    #[test]
    fn two_options_sharing_budget() {
        let inst = KnapsackInstance {
            options: vec![vec![item(0, 10), item(2, 3)], vec![item(0, 8), item(2, 2)]],
            budget: 2,
        };
        let sol = solve_mck(&inst).unwrap();
        assert_eq!(sol.total_value, 11);
        assert_eq!(sol.choices, vec![1, 0]);
    }

    #[test]
    fn infeasible_reports_deficit() {
        let inst = KnapsackInstance {
            options: vec![vec![item(3, 1)], vec![item(4, 1)]],
            budget: 5,
        };
        match solve_mck(&inst) {
            Err(Error::KnapsackInfeasible { deficit, .. }) => assert_eq!(deficit, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_prefer_smaller_leading_values() {
        // (1 + 3) and (3 + 1) both total 4
        let inst = KnapsackInstance {
            options: vec![vec![item(0, 3), item(1, 1)], vec![item(0, 3), item(1, 1)]],
            budget: 1,
        };
        let sol = solve_mck(&inst).unwrap();
        assert_eq!(sol.choices, vec![1, 0]);
    }

    #[test]
    fn scaling_rounds_toward_soundness() {
        assert_eq!(scaled_weight(0.9, 0.01), 90);
        assert_eq!(scaled_weight(0.1, 0.01), 10);
        assert_eq!(scaled_budget(0.5, 0.01), 50);
        for &(x, c) in &[(0.3, 0.1), (0.7, 0.1), (1e-3, 3e-7)] {
            assert!(scaled_weight(x, c) as f64 * c >= x);
            assert!(scaled_budget(x, c) as f64 * c <= x);
        }
    }
}
