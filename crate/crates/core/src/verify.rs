//! End-to-end range verification and two-copy sensitivity analysis.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::error_prop::{path_weights, ErrorProfiles, PathWeightMap, UnitErrorProfile};
use crate::knapsack::{self, Allocation};
use crate::milp::{encode, encode_pair, BigMRule, Direction, EncodeOptions, Encoding, UnitAbstraction};
use crate::network::{InputBox, KanNetwork, UnitId};
use crate::pwa::{build_tradeoff_table, Grid, TradeoffCache, TradeoffTable, DEFAULT_INTERVALS};
use crate::solver::{solve, SolveConfig, SolveResult, SolveStatus};
use crate::unit::BOUNDARY_JUMP_TOLERANCE;

/// Multiplier from the smallest achievable bound to the default budget.
pub const DEFAULT_DELTA_FACTOR: f64 = 3.4;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// How piece counts are chosen for each unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AllocationMode {
    /// Fewest total pieces within the error budget.
    #[default]
    Optimized,
    /// The same piece count everywhere.
    Uniform(usize),
    /// The smallest uniform piece count that meets the error budget.
    MatchedUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub intervals: usize,
    pub max_pieces: usize,
    pub delta_factor: f64,
    pub allocation: AllocationMode,
    /// Knapsack scale constant; defaults to `delta / 1e5`.
    pub budget_scale: Option<f64>,
    pub encode: EncodeOptions,
    pub solve: SolveConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            intervals: DEFAULT_INTERVALS,
            max_pieces: 262,
            delta_factor: DEFAULT_DELTA_FACTOR,
            allocation: AllocationMode::Optimized,
            budget_scale: None,
            encode: EncodeOptions::default(),
            solve: SolveConfig::default(),
        }
    }
}

impl VerifyConfig {
    /// Preset by network size: piece cap, gap and timeout.
    pub fn for_network(net: &KanNetwork) -> Self {
        let (solve, max_pieces) = SolveConfig::for_param_count(net.param_count());
        VerifyConfig {
            max_pieces,
            solve,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub abstraction_s: f64,
    pub allocation_s: f64,
    pub encoding_s: f64,
    pub solving_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub incumbent: Option<f64>,
    pub best_bound: f64,
    pub nodes: usize,
    pub seconds: f64,
}

impl From<&SolveResult> for SolveSummary {
    fn from(r: &SolveResult) -> Self {
        SolveSummary {
            status: r.status,
            incumbent: r.incumbent,
            best_bound: r.best_bound,
            nodes: r.nodes,
            seconds: r.elapsed.as_secs_f64(),
        }
    }
}

/// Sound output range `[lower, upper]` for one output over a box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeResult {
    pub output: usize,
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
    /// Global abstraction error bound of the chosen allocation.
    pub delta_total: f64,
    pub total_pieces: usize,
    pub binaries: usize,
    pub free_binaries: usize,
    pub big_m: &'static str,
    pub min_solve: SolveSummary,
    pub max_solve: SolveSummary,
    pub timings: StageTimings,
    /// Units that can be driven past their domain edge while having a
    /// non-zero boundary value; the Lipschitz-based error bound does not
    /// cover the jump there. The range itself is unaffected.
    pub boundary_caveats: Vec<String>,
}

impl RangeResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// True when both solves closed within the configured gap.
    pub fn closed(&self) -> bool {
        self.min_solve.status == SolveStatus::Optimal && self.max_solve.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub output: usize,
    pub feature: usize,
    pub perturbation: f64,
    /// Upper bound on `|f(x) - f(x')|` over the box and perturbation.
    pub max_divergence: f64,
    pub empirical_divergence: f64,
    pub delta_total: f64,
    pub max_solve: SolveSummary,
    pub min_solve: SolveSummary,
    pub most_sensitive: bool,
}

/// Per-unit abstractions built once and reused across boxes, outputs and
/// sensitivity sweeps.
pub struct Verifier<'a> {
    net: &'a KanNetwork,
    config: VerifyConfig,
    tables: BTreeMap<UnitId, TradeoffTable>,
    profiles: ErrorProfiles,
    weights: PathWeightMap,
    abstraction_time: Duration,
}

impl<'a> Verifier<'a> {
    pub fn new(net: &'a KanNetwork, config: VerifyConfig) -> Result<Self> {
        Self::build(net, config, None)
    }

    /// Like [`Verifier::new`], reusing and updating cached trade-off tables.
    pub fn with_cache(net: &'a KanNetwork, config: VerifyConfig, cache: &mut TradeoffCache) -> Result<Self> {
        Self::build(net, config, Some(cache))
    }

    fn build(net: &'a KanNetwork, config: VerifyConfig, mut cache: Option<&mut TradeoffCache>) -> Result<Self> {
        config.solve.validate()?;
        if config.max_pieces == 0 {
            return Err(Error::InvalidArgument("max pieces must be at least 1".into()));
        }
        let start = Instant::now();
        let units: Vec<_> = net.units().collect();
        let mut tables = BTreeMap::new();
        let mut todo = Vec::new();
        for &(id, unit) in &units {
            let grid = Grid::for_unit(unit, config.intervals)?;
            match cache.as_deref().and_then(|c| c.get(id, unit, &grid, config.max_pieces)) {
                Some(t) => {
                    tables.insert(id, t.clone());
                }
                None => todo.push((id, unit, grid)),
            }
        }
        let built: Vec<(UnitId, TradeoffTable)> = todo
            .par_iter()
            .map(|&(id, unit, grid)| Ok((id, build_tradeoff_table(unit, &grid, config.max_pieces)?)))
            .collect::<Result<_>>()?;
        for (id, t) in built {
            if let Some(c) = cache.as_deref_mut() {
                c.insert(id, net.unit(id).expect("unit exists"), t.clone());
            }
            tables.insert(id, t);
        }
        let profiles: ErrorProfiles = tables
            .iter()
            .map(|(&id, t)| {
                let p = UnitErrorProfile {
                    lipschitz: t.unit_slope,
                    pwa_error: 0.0,
                };
                (id, p)
            })
            .collect();
        let weights = path_weights(net, &profiles)?;
        Ok(Verifier {
            net,
            config,
            tables,
            profiles,
            weights,
            abstraction_time: start.elapsed(),
        })
    }

    pub fn network(&self) -> &KanNetwork {
        self.net
    }

    pub fn config(&self) -> &VerifyConfig {
        &self.config
    }

    pub fn tables(&self) -> &BTreeMap<UnitId, TradeoffTable> {
        &self.tables
    }

    pub fn weights(&self) -> &PathWeightMap {
        &self.weights
    }

    /// Lipschitz constants, with errors filled in from `allocation` if given.
    pub fn profiles(&self, allocation: Option<&Allocation>) -> ErrorProfiles {
        let mut p = self.profiles.clone();
        if let Some(a) = allocation {
            for u in &a.units {
                p.get_mut(&u.id).expect("profile per unit").pwa_error = u.error;
            }
        }
        p
    }

    pub fn abstraction_time(&self) -> Duration {
        self.abstraction_time
    }

    /// Smallest global bound reachable for `output`.
    pub fn min_achievable(&self, output: usize) -> Result<f64> {
        self.check_output(output)?;
        knapsack::min_achievable_bound(&self.tables, &self.weights, output)
    }

    /// Default error budget for `output`.
    pub fn default_delta(&self, output: usize) -> Result<f64> {
        let floor = self.min_achievable(output)?;
        // a budget of zero is unusable even when every unit is exact
        Ok((self.config.delta_factor * floor).max(1e-12))
    }

    fn check_output(&self, output: usize) -> Result<()> {
        if output >= self.net.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "output {output} out of range for a network with {} outputs",
                self.net.output_dim()
            )));
        }
        Ok(())
    }

    pub fn allocate(&self, output: usize, delta: f64) -> Result<Allocation> {
        self.allocate_with(output, delta, self.config.allocation)
    }

    pub fn allocate_with(&self, output: usize, delta: f64, mode: AllocationMode) -> Result<Allocation> {
        self.check_output(output)?;
        match mode {
            AllocationMode::Optimized => {
                knapsack::optimized_allocation(&self.tables, &self.weights, output, delta, self.config.budget_scale)
            }
            AllocationMode::Uniform(p) => knapsack::vanilla_allocation(&self.tables, &self.weights, output, p),
            AllocationMode::MatchedUniform => {
                knapsack::smallest_uniform_allocation(&self.tables, &self.weights, output, delta).ok_or_else(|| {
                    Error::BudgetInfeasible {
                        output,
                        delta,
                        min_achievable: self.min_achievable(output).unwrap_or(f64::NAN),
                    }
                })
            }
        }
    }

    pub fn abstractions(&self, allocation: &Allocation) -> BTreeMap<UnitId, UnitAbstraction> {
        allocation
            .units
            .iter()
            .map(|u| {
                let e = self.tables[&u.id].entry(u.budget).expect("allocated budget in table");
                (
                    u.id,
                    UnitAbstraction {
                        pwa: if u.pieces > e.pieces() { e.pwa.split_to(u.pieces) } else { e.pwa.clone() },
                        error: e.corrected_error,
                    },
                )
            })
            .collect()
    }

    pub fn encode(&self, input_box: &InputBox, output: usize, allocation: &Allocation) -> Result<Encoding> {
        encode(self.net, &self.abstractions(allocation), input_box, &[output], self.config.encode)
    }

    /// Sound range of one output over the box at error budget `delta`
    /// (default budget when `None`).
    pub fn verify_range(&self, input_box: &InputBox, output: usize, delta: Option<f64>) -> Result<RangeResult> {
        let delta = match delta {
            Some(d) => d,
            None => self.default_delta(output)?,
        };
        let t0 = Instant::now();
        let allocation = self.allocate(output, delta)?;
        let allocation_s = t0.elapsed().as_secs_f64();
        self.verify_with_allocation(input_box, output, delta, &allocation, allocation_s)
    }

    pub fn verify_with_allocation(
        &self,
        input_box: &InputBox,
        output: usize,
        delta: f64,
        allocation: &Allocation,
        allocation_s: f64,
    ) -> Result<RangeResult> {
        let t1 = Instant::now();
        let enc = self.encode(input_box, output, allocation)?;
        let encoding_s = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let max_model = enc.objective_for(output, Direction::Maximize)?;
        let min_model = enc.objective_for(output, Direction::Minimize)?;
        let (max_r, min_r) = rayon::join(
            || solve(&max_model, &self.config.solve),
            || solve(&min_model, &self.config.solve),
        );
        let (max_r, min_r) = (max_r?, min_r?);
        let solving_s = t2.elapsed().as_secs_f64();
        if max_r.status == SolveStatus::Infeasible || min_r.status == SolveStatus::Infeasible {
            let hint = match enc.rule {
                BigMRule::Paper => "; the 2 M_y big-M rule cut off every feasible point, use the derived rule",
                BigMRule::Derived => "",
            };
            return Err(Error::Model(format!("encoding is infeasible over a non-empty box{hint}")));
        }
        let widen = |v: f64| 1e-9 * v.abs().max(1.0);
        let boundary_caveats = enc
            .m
            .units
            .iter()
            .filter(|(id, b)| {
                let unit = self.net.unit(**id).expect("encoded unit exists");
                let l = unit.limit();
                (b.z_range.0 < -l || b.z_range.1 > l) && unit.boundary_jump() > BOUNDARY_JUMP_TOLERANCE
            })
            .map(|(id, _)| id.key())
            .collect();
        Ok(RangeResult {
            output,
            lower: min_r.best_bound - widen(min_r.best_bound),
            upper: max_r.best_bound + widen(max_r.best_bound),
            delta,
            delta_total: allocation.global_bound,
            total_pieces: allocation.total_pieces,
            binaries: enc.model.num_binaries(),
            free_binaries: enc.model.num_free_binaries(),
            big_m: enc.rule.as_str(),
            min_solve: (&min_r).into(),
            max_solve: (&max_r).into(),
            timings: StageTimings {
                abstraction_s: self.abstraction_time.as_secs_f64(),
                allocation_s,
                encoding_s,
                solving_s,
            },
            boundary_caveats,
        })
    }

    /// Bound on how far `output` can move when input `feature` shifts by at
    /// most `perturbation`.
    pub fn sensitivity(
        &self,
        input_box: &InputBox,
        output: usize,
        feature: usize,
        perturbation: f64,
        delta: Option<f64>,
        samples: usize,
    ) -> Result<SensitivityResult> {
        let delta = match delta {
            Some(d) => d,
            None => self.default_delta(output)?,
        };
        let allocation = self.allocate(output, delta)?;
        let options = EncodeOptions {
            error_slack: false,
            ..self.config.encode
        };
        let abstractions = self.abstractions(&allocation);
        let enc = encode_pair(self.net, &abstractions, input_box, output, feature, perturbation, options)?;
        let t = enc.perturbed.as_ref().expect("two-copy encoding").2;
        let up = enc.model.with_objective(Direction::Maximize, vec![(t, 1.0)]);
        let down = enc.model.with_objective(Direction::Minimize, vec![(t, 1.0)]);
        let (up_r, down_r) = rayon::join(|| solve(&up, &self.config.solve), || solve(&down, &self.config.solve));
        let (up_r, down_r) = (up_r?, down_r?);
        let spread = up_r.best_bound.max(-down_r.best_bound).max(0.0);
        let max_divergence = spread + 2.0 * allocation.global_bound;
        let empirical_divergence = paired_divergence(self.net, input_box, output, feature, perturbation, samples, DEFAULT_SEED)?;
        Ok(SensitivityResult {
            output,
            feature,
            perturbation,
            max_divergence: max_divergence + 1e-9 * max_divergence.max(1.0),
            empirical_divergence,
            delta_total: allocation.global_bound,
            max_solve: (&up_r).into(),
            min_solve: (&down_r).into(),
            most_sensitive: false,
        })
    }

    /// Sensitivity of `output` to every input feature; the largest bound is flagged.
    pub fn sensitivity_sweep(
        &self,
        input_box: &InputBox,
        output: usize,
        perturbation: f64,
        delta: Option<f64>,
        samples: usize,
    ) -> Result<Vec<SensitivityResult>> {
        let mut out: Vec<SensitivityResult> = (0..self.net.input_dim())
            .into_par_iter()
            .map(|d| self.sensitivity(input_box, output, d, perturbation, delta, samples))
            .collect::<Result<_>>()?;
        if let Some(top) = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.max_divergence.total_cmp(&b.1.max_divergence).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
        {
            out[top].most_sensitive = true;
        }
        Ok(out)
    }
}

/// Range of every output, verified one output at a time.
pub fn verify_range(
    net: &KanNetwork,
    input_box: &InputBox,
    delta: Option<f64>,
    config: VerifyConfig,
) -> Result<Vec<RangeResult>> {
    let v = Verifier::new(net, config)?;
    (0..net.output_dim())
        .map(|o| v.verify_range(input_box, o, delta))
        .collect()
}

fn sample_box(rng: &mut ChaCha8Rng, input_box: &InputBox) -> Vec<f64> {
    input_box
        .lower()
        .iter()
        .zip(input_box.upper())
        .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) })
        .collect()
}

/// Min and max of each output over uniform samples in the box.
pub fn empirical_range(net: &KanNetwork, input_box: &InputBox, samples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if input_box.dim() != net.input_dim() {
        return Err(Error::InputShape {
            expected: net.input_dim(),
            actual: input_box.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); net.output_dim()];
    for _ in 0..samples {
        let x = sample_box(&mut rng, input_box);
        for (r, y) in out.iter_mut().zip(net.eval(&x)?) {
            r.0 = r.0.min(y);
            r.1 = r.1.max(y);
        }
    }
    Ok(out)
}

/// Largest `|f(x) - f(x')|` over paired samples where `x'` moves `feature` by
/// a uniform shift in `[-perturbation, perturbation]`.
pub fn paired_divergence(
    net: &KanNetwork,
    input_box: &InputBox,
    output: usize,
    feature: usize,
    perturbation: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (feature as u64).wrapping_mul(0x9e37_79b9));
    let mut best = 0.0f64;
    for n in 0..samples {
        let x = sample_box(&mut rng, input_box);
        let mut moved = x.clone();
        // include the extreme shifts alongside random ones
        let shift = match n % 3 {
            0 => perturbation,
            1 => -perturbation,
            _ => rng.gen_range(-1.0..=1.0) * perturbation,
        };
        moved[feature] += shift;
        let a = net.eval(&x)?[output];
        let b = net.eval(&moved)?[output];
        best = best.max((a - b).abs());
    }
    Ok(best)
}
