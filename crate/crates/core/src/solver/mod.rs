//! Branch and bound over piece indicators with an LP relaxation at each node.

mod simplex;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::Serialize;

pub use simplex::{lp_solve, LpOutcome, LpProblem};

use crate::error::{Error, Result};
use crate::milp::{Direction, MilpModel, VarKind};

pub const DEFAULT_MIP_GAP: f64 = 0.15;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(100);
pub const DEFAULT_BINARY_CAP: usize = 120;

const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Relative gap at which the search stops.
    pub mip_gap: f64,
    pub timeout: Duration,
    pub node_limit: Option<usize>,
    /// Largest number of unfixed binaries the built-in solver accepts.
    pub binary_cap: usize,
    /// Run the rounding heuristic every this many nodes (0 disables it).
    pub heuristic_interval: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            mip_gap: DEFAULT_MIP_GAP,
            timeout: DEFAULT_TIMEOUT,
            node_limit: None,
            binary_cap: DEFAULT_BINARY_CAP,
            heuristic_interval: 10,
        }
    }
}

impl SolveConfig {
    /// Presets by network parameter count.
    pub fn for_param_count(params: usize) -> (Self, usize) {
        let (max_pieces, gap, secs) = match params {
            0..1_000 => (262, 0.15, 100),
            1_000..10_000 => (262, 0.15, 150),
            _ => (175, 0.2, 200),
        };
        (
            SolveConfig {
                mip_gap: gap,
                timeout: Duration::from_secs(secs),
                ..Self::default()
            },
            max_pieces,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mip_gap >= 0.0 && self.mip_gap.is_finite()) {
            return Err(Error::InvalidArgument(format!("mip gap must be >= 0, got {}", self.mip_gap)));
        }
        if self.timeout.is_zero() {
            return Err(Error::InvalidArgument("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Incumbent and bound are within the configured gap.
    Optimal,
    /// Stopped by the node limit.
    GapTerminated,
    Timeout,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapTerminated => "gap-terminated",
            SolveStatus::Timeout => "timeout",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Best feasible objective found, in the model's sense.
    pub incumbent: Option<f64>,
    /// Proven bound on the optimum: an upper bound when maximizing, a lower
    /// bound when minimizing.
    pub best_bound: f64,
    pub assignment: Option<Vec<f64>>,
    pub nodes: usize,
    pub elapsed: Duration,
}

struct Node {
    /// Relaxation bound in the internal maximize sense.
    bound: f64,
    id: usize,
    fixes: Vec<(usize, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // best bound first, newest node among equal bounds
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.id.cmp(&other.id))
    }
}

struct Search<'a> {
    model: &'a MilpModel,
    /// Internal objective is `sign * model objective`, always maximized.
    sign: f64,
    cost: Vec<f64>,
    binaries: Vec<usize>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<Option<usize>>,
    deadline: Instant,
    incumbent: Option<(f64, Vec<f64>)>,
}

enum Relaxation {
    Solved(f64, Vec<f64>),
    Infeasible,
    Interrupted,
}

impl<'a> Search<'a> {
    fn new(model: &'a MilpModel, deadline: Instant) -> Self {
        let sign = match model.objective.direction {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        };
        let mut cost = vec![0.0; model.variables.len()];
        for &(v, c) in &model.objective.terms {
            cost[v] -= sign * c;
        }
        let binaries: Vec<usize> = (0..model.variables.len())
            .filter(|&v| model.variables[v].kind == VarKind::Binary)
            .collect();
        let mut group_of = vec![None; model.variables.len()];
        for (g, members) in model.groups.iter().enumerate() {
            for &v in members {
                group_of[v] = Some(g);
            }
        }
        Search {
            model,
            sign,
            cost,
            binaries,
            groups: model.groups.clone(),
            group_of,
            deadline,
            incumbent: None,
        }
    }

    fn bounds(&self, fixes: &[(usize, bool)]) -> (Vec<f64>, Vec<f64>) {
        let mut lower: Vec<f64> = self.model.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = self.model.variables.iter().map(|v| v.upper).collect();
        for &v in &self.binaries {
            lower[v] = lower[v].max(0.0);
            upper[v] = upper[v].min(1.0);
        }
        for &(v, one) in fixes {
            if one {
                lower[v] = 1.0;
                // siblings of a selected indicator are off
                if let Some(g) = self.group_of[v] {
                    for &s in &self.groups[g] {
                        if s != v {
                            upper[s] = 0.0;
                        }
                    }
                }
            } else {
                upper[v] = 0.0;
            }
        }
        (lower, upper)
    }

    fn relax(&self, lower: &[f64], upper: &[f64]) -> Result<Relaxation> {
        let out = lp_solve(
            &LpProblem {
                cost: &self.cost,
                rows: &self.model.constraints,
                lower,
                upper,
            },
            Some(self.deadline),
        );
        match out {
            LpOutcome::Optimal { value, x } => Ok(Relaxation::Solved(-value, x)),
            LpOutcome::Infeasible => Ok(Relaxation::Infeasible),
            LpOutcome::Interrupted => Ok(Relaxation::Interrupted),
            LpOutcome::Unbounded => Err(Error::Model(
                "LP relaxation is unbounded; a variable is missing finite bounds".into(),
            )),
            LpOutcome::Stalled => Err(Error::Model("simplex iteration limit reached".into())),
        }
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.binaries
            .iter()
            .all(|&v| (x[v] - x[v].round()).abs() <= INT_TOL)
    }

    /// Binary to branch on: the most fractional member of the exactly-one
    /// group furthest from integrality, then any fractional ungrouped binary.
    fn branching_var(&self, x: &[f64]) -> Option<usize> {
        let name = |v: usize| self.model.variables[v].name.as_str();
        let frac = |v: usize| (x[v] - x[v].round()).abs();
        let mut best_group: Option<(f64, usize)> = None;
        for (g, members) in self.groups.iter().enumerate() {
            if members.iter().all(|&v| frac(v) <= INT_TOL) {
                continue;
            }
            let top = members.iter().map(|&v| x[v]).fold(f64::NEG_INFINITY, f64::max);
            let score = 1.0 - top;
            if best_group.is_none_or(|(s, _)| score > s) {
                best_group = Some((score, g));
            }
        }
        let pick = |cands: &mut dyn Iterator<Item = usize>| -> Option<usize> {
            cands
                .filter(|&v| frac(v) > INT_TOL)
                .min_by(|&a, &b| {
                    (0.5 - frac(a))
                        .total_cmp(&(0.5 - frac(b)))
                        .then_with(|| name(a).cmp(name(b)))
                })
        };
        if let Some((_, g)) = best_group {
            return pick(&mut self.groups[g].iter().copied());
        }
        pick(&mut self.binaries.iter().copied().filter(|&v| self.group_of[v].is_none()))
    }

    fn offer(&mut self, value: f64, mut x: Vec<f64>) {
        for &v in &self.binaries {
            x[v] = x[v].round();
        }
        if self.incumbent.as_ref().is_none_or(|(best, _)| value > *best) {
            self.incumbent = Some((value, x));
        }
    }

    /// Fixes the largest indicator of every group and solves the rest.
    fn round(&mut self, x: &[f64], fixes: &[(usize, bool)]) -> Result<()> {
        let mut f = fixes.to_vec();
        for members in &self.groups {
            let top = members
                .iter()
                .copied()
                .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
                .expect("non-empty group");
            f.push((top, true));
        }
        for &v in &self.binaries {
            if self.group_of[v].is_none() {
                f.push((v, x[v] >= 0.5));
            }
        }
        let (lo, hi) = self.bounds(&f);
        if let Relaxation::Solved(v, xr) = self.relax(&lo, &hi)? {
            if self.is_integral(&xr) {
                self.offer(v, xr);
            }
        }
        Ok(())
    }
}

fn gap_met(bound: f64, incumbent: f64, gap: f64) -> bool {
    bound - incumbent <= gap * incumbent.abs().max(1.0)
}

/// Solves the model to the configured gap.
pub fn solve(model: &MilpModel, config: &SolveConfig) -> Result<SolveResult> {
    config.validate()?;
    let free = model.num_free_binaries();
    if free > config.binary_cap {
        return Err(Error::BinaryCapExceeded {
            binaries: free,
            cap: config.binary_cap,
        });
    }
    let start = Instant::now();
    let mut search = Search::new(model, start + config.timeout);
    let mut queue = BinaryHeap::new();
    queue.push(Node {
        bound: f64::INFINITY,
        id: 0,
        fixes: Vec::new(),
    });
    let mut next_id = 1;
    let mut nodes = 0;
    let mut status = None;
    // bound of a node whose relaxation was interrupted
    let mut dangling = f64::NEG_INFINITY;
    while let Some(node) = queue.pop() {
        let inc = search.incumbent.as_ref().map(|(v, _)| *v);
        if let Some(inc) = inc {
            if node.bound <= inc {
                continue;
            }
            if gap_met(node.bound, inc, config.mip_gap) {
                queue.push(node);
                status = Some(SolveStatus::Optimal);
                break;
            }
        }
        if Instant::now() >= search.deadline {
            queue.push(node);
            status = Some(SolveStatus::Timeout);
            break;
        }
        if config.node_limit.is_some_and(|l| nodes >= l) {
            queue.push(node);
            status = Some(SolveStatus::GapTerminated);
            break;
        }
        nodes += 1;
        let (lo, hi) = search.bounds(&node.fixes);
        let (value, x) = match search.relax(&lo, &hi)? {
            Relaxation::Solved(v, x) => (v.min(node.bound), x),
            Relaxation::Infeasible => continue,
            Relaxation::Interrupted => {
                dangling = dangling.max(node.bound);
                status = Some(SolveStatus::Timeout);
                break;
            }
        };
        if inc.is_some_and(|inc| value <= inc) {
            continue;
        }
        if search.is_integral(&x) {
            search.offer(value, x);
            continue;
        }
        if config.heuristic_interval > 0 && (nodes - 1) % config.heuristic_interval == 0 {
            search.round(&x, &node.fixes)?;
        }
        let v = search.branching_var(&x).expect("fractional solution has a branching variable");
        for one in [false, true] {
            let mut fixes = node.fixes.clone();
            fixes.push((v, one));
            queue.push(Node {
                bound: value,
                id: next_id,
                fixes,
            });
            next_id += 1;
        }
    }
    let open = queue
        .iter()
        .map(|n| n.bound)
        .fold(dangling, f64::max);
    let incumbent = search.incumbent.take();
    let internal_bound = match &incumbent {
        Some((v, _)) => open.max(*v),
        None => open,
    };
    let status = match status {
        Some(s) => s,
        None if incumbent.is_some() => SolveStatus::Optimal,
        None => SolveStatus::Infeasible,
    };
    let sign = search.sign;
    Ok(SolveResult {
        status,
        incumbent: incumbent.as_ref().map(|(v, _)| sign * v),
        best_bound: sign * internal_bound,
        assignment: incumbent.map(|(_, x)| x),
        nodes,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::Sense;

    #[test]
    fn fixed_group_reduces_to_lp() {
        let mut m = MilpModel::new();
        let w = m.add_var("w", 0.0, 1.0, VarKind::Binary);
        let x = m.add_var("x", 0.0, 5.0, VarKind::Continuous);
        m.groups.push(vec![w]);
        m.add_constraint("one", vec![(w, 1.0)], Sense::Eq, 1.0);
        m.add_constraint("c", vec![(x, 1.0), (w, 1.0)], Sense::Le, 3.5);
        m.set_objective(Direction::Maximize, vec![(x, 2.0)]);
        let r = solve(&m, &SolveConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.incumbent.unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn knapsack_needs_branching() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 4, binaries -> a + c = 8
        let mut m = MilpModel::new();
        let v: Vec<usize> = ["a", "b", "c"]
            .iter()
            .map(|n| m.add_var(*n, 0.0, 1.0, VarKind::Binary))
            .collect();
        m.add_constraint("cap", vec![(v[0], 2.0), (v[1], 3.0), (v[2], 1.0)], Sense::Le, 4.0);
        m.set_objective(Direction::Maximize, vec![(v[0], 5.0), (v[1], 4.0), (v[2], 3.0)]);
        let cfg = SolveConfig {
            mip_gap: 0.0,
            ..SolveConfig::default()
        };
        let r = solve(&m, &cfg).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.incumbent.unwrap() - 8.0).abs() < 1e-9);
        assert!((r.best_bound - 8.0).abs() < 1e-9);
        let min = solve(&m.with_objective(Direction::Minimize, vec![(v[1], -1.0)]), &cfg).unwrap();
        assert!((min.incumbent.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_model() {
        let mut m = MilpModel::new();
        let a = m.add_var("a", 0.0, 1.0, VarKind::Binary);
        m.add_constraint("half", vec![(a, 2.0)], Sense::Eq, 1.0);
        let r = solve(&m, &SolveConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn binary_cap_is_enforced() {
        let mut m = MilpModel::new();
        for i in 0..3 {
            m.add_var(format!("b{i}"), 0.0, 1.0, VarKind::Binary);
        }
        let cfg = SolveConfig {
            binary_cap: 2,
            ..SolveConfig::default()
        };
        assert!(matches!(solve(&m, &cfg), Err(Error::BinaryCapExceeded { binaries: 3, cap: 2 })));
    }
}
