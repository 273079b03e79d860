//! Optimal interpolating piecewise-affine abstractions of univariate units.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model_io::unit_to_value;
use crate::network::UnitId;
use crate::unit::{grid_point, UnivariateUnit};

pub const DEFAULT_INTERVALS: usize = 256;

/// Uniform grid of `intervals + 1` points on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    limit: f64,
    intervals: usize,
}

impl Grid {
    pub fn new(limit: f64, intervals: usize) -> Result<Self> {
        if !(limit.is_finite() && limit > 0.0) {
            return Err(Error::InvalidArgument(format!("grid limit must be > 0, got {limit}")));
        }
        if intervals < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 intervals, got {intervals}"
            )));
        }
        Ok(Grid { limit, intervals })
    }

    pub fn for_unit(unit: &UnivariateUnit, intervals: usize) -> Result<Self> {
        Grid::new(unit.limit(), intervals)
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn step(&self) -> f64 {
        2.0 * self.limit / self.intervals as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        assert!(j <= self.intervals, "grid index {j} out of range");
        grid_point(self.limit, self.intervals, j)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.intervals).map(|j| self.point(j)).collect()
    }
}

/// One affine piece `y = slope * z + intercept` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Segment {
    pub fn eval(&self, z: f64) -> f64 {
        self.slope * z + self.intercept
    }
}

/// Continuous piecewise-affine interpolant through `(breakpoints[i], values[i])`,
/// zero outside `[-L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwaRepr")]
pub struct PwaFunction {
    limit: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct PwaRepr {
    limit: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<PwaRepr> for PwaFunction {
    type Error = Error;
    fn try_from(r: PwaRepr) -> Result<Self> {
        PwaFunction::new(r.limit, r.breakpoints, r.values)
    }
}

impl PwaFunction {
    /// Breakpoints must start at `-L`, end at `L` and be non-decreasing;
    /// repeated breakpoints are merged.
    pub fn new(limit: f64, breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} breakpoints but {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.len() < 2 {
            return Err(Error::InvalidArgument("need at least two breakpoints".into()));
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite breakpoint or value".into()));
        }
        if breakpoints[0] != -limit || *breakpoints.last().unwrap() != limit {
            return Err(Error::InvalidArgument(format!(
                "breakpoints must span [-{limit}, {limit}]"
            )));
        }
        let mut bp: Vec<f64> = Vec::with_capacity(breakpoints.len());
        let mut vs: Vec<f64> = Vec::with_capacity(values.len());
        for (b, v) in breakpoints.into_iter().zip(values) {
            match bp.last() {
                Some(&last) if b < last => {
                    return Err(Error::InvalidArgument("breakpoints must be increasing".into()))
                }
                Some(&last) if b == last => {}
                _ => {
                    bp.push(b);
                    vs.push(v);
                }
            }
        }
        if bp.len() < 2 {
            return Err(Error::InvalidArgument("breakpoints collapse to a point".into()));
        }
        Ok(PwaFunction {
            limit,
            breakpoints: bp,
            values: vs,
        })
    }

    /// Interpolates `unit` at the given grid indices.
    pub fn interpolate(unit: &UnivariateUnit, grid: &Grid, indices: &[usize]) -> Result<Self> {
        let breakpoints: Vec<f64> = indices.iter().map(|&j| grid.point(j)).collect();
        let values = breakpoints.iter().map(|&z| unit.eval_inner(z)).collect();
        PwaFunction::new(grid.limit(), breakpoints, values)
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// The same function with at least `pieces` segments, splitting the
    /// widest segment at its midpoint until the count is reached.
    pub fn split_to(&self, pieces: usize) -> PwaFunction {
        let mut bp = self.breakpoints.clone();
        let mut vs = self.values.clone();
        while bp.len() - 1 < pieces {
            let i = (0..bp.len() - 1)
                .max_by(|&a, &b| (bp[a + 1] - bp[a]).total_cmp(&(bp[b + 1] - bp[b])).then(b.cmp(&a)))
                .expect("at least one segment");
            let mid = 0.5 * (bp[i] + bp[i + 1]);
            if !(mid > bp[i] && mid < bp[i + 1]) {
                break;
            }
            bp.insert(i + 1, mid);
            vs.insert(i + 1, 0.5 * (vs[i] + vs[i + 1]));
        }
        PwaFunction {
            limit: self.limit,
            breakpoints: bp,
            values: vs,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.breakpoints
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(z, v)| {
                let slope = (v[1] - v[0]) / (z[1] - z[0]);
                Segment {
                    lo: z[0],
                    hi: z[1],
                    slope,
                    intercept: v[0] - slope * z[0],
                }
            })
            .collect()
    }

    /// Largest absolute slope over all pieces.
    pub fn max_abs_slope(&self) -> f64 {
        self.segments()
            .iter()
            .fold(0.0f64, |m, s| m.max(s.slope.abs()))
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z.is_nan() || z.abs() > self.limit {
            return 0.0;
        }
        let p = self.breakpoints[1..self.pieces()].partition_point(|&b| b <= z);
        let (z0, z1) = (self.breakpoints[p], self.breakpoints[p + 1]);
        let (v0, v1) = (self.values[p], self.values[p + 1]);
        v0 + (z - z0) * (v1 - v0) / (z1 - z0)
    }
}

/// Unit values on every grid point.
fn sample(unit: &UnivariateUnit, grid: &Grid) -> Vec<f64> {
    (0..=grid.intervals())
        .map(|j| unit.eval_inner(grid.point(j)))
        .collect()
}

fn chord_error(points: &[f64], values: &[f64], j1: usize, j2: usize) -> f64 {
    let (z1, v1) = (points[j1], values[j1]);
    let slope = (values[j2] - v1) / (points[j2] - z1);
    (j1 + 1..j2).fold(0.0f64, |m, j| {
        m.max((values[j] - (v1 + slope * (points[j] - z1))).abs())
    })
}

/// Largest deviation, over the grid points from `j1` to `j2`, between the unit
/// and the chord joining its values at `j1` and `j2`.
pub fn single_piece_error(unit: &UnivariateUnit, grid: &Grid, j1: usize, j2: usize) -> Result<f64> {
    if !(j1 < j2 && j2 <= grid.intervals()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= j1 < j2 <= {}, got ({j1}, {j2})",
            grid.intervals()
        )));
    }
    Ok(chord_error(&grid.points(), &sample(unit, grid), j1, j2))
}

/// Result of the min-max dynamic program: `value[k]` is the smallest grid
/// error reachable with at most `k` pieces, and `breakpoints[k]` the grid
/// indices achieving it.
struct DpSolution {
    value: Vec<f64>,
    breakpoints: Vec<Vec<usize>>,
}

fn solve_dp(values: &[f64], points: &[f64], k_max: usize) -> DpSolution {
    let n = points.len();
    let last = n - 1;
    let mut chord = vec![0.0f64; n * n];
    for j1 in 0..last {
        for j2 in j1 + 1..n {
            chord[j1 * n + j2] = chord_error(points, values, j1, j2);
        }
    }
    // best[k][j]: smallest error covering [point(j), L] with at most k pieces
    let mut best = vec![vec![f64::INFINITY; n]; k_max + 1];
    let mut next = vec![vec![usize::MAX; n]; k_max + 1];
    best[0][last] = 0.0;
    for k in 1..=k_max {
        best[k][last] = 0.0;
        for j1 in 0..last {
            let mut v = f64::INFINITY;
            let mut arg = usize::MAX;
            for j2 in j1 + 1..n {
                let cand = chord[j1 * n + j2].max(best[k - 1][j2]);
                if cand < v {
                    v = cand;
                    arg = j2;
                }
            }
            best[k][j1] = v;
            next[k][j1] = arg;
        }
    }
    let breakpoints = (0..=k_max)
        .map(|k| {
            if k == 0 {
                return Vec::new();
            }
            let mut path = vec![0];
            let (mut j, mut kk) = (0, k);
            while j != last {
                j = next[kk][j];
                kk -= 1;
                path.push(j);
            }
            path
        })
        .collect();
    DpSolution {
        value: best.iter().map(|row| row[0]).collect(),
        breakpoints,
    }
}

/// Best interpolating abstraction with at most `pieces` pieces and its
/// error measured on the grid.
pub fn optimal_pwa(unit: &UnivariateUnit, grid: &Grid, pieces: usize) -> Result<(PwaFunction, f64)> {
    if pieces == 0 {
        return Err(Error::InvalidArgument("piece count must be at least 1".into()));
    }
    let k = pieces.min(grid.intervals());
    let sol = solve_dp(&sample(unit, grid), &grid.points(), k);
    let pwa = PwaFunction::interpolate(unit, grid, &sol.breakpoints[k])?;
    Ok((pwa, sol.value[k]))
}

/// Additive slack turning a grid error into a bound on the error over the
/// whole domain.
pub fn discretization_correction(unit: &UnivariateUnit, pwa: &PwaFunction, grid: &Grid) -> f64 {
    correction_with(unit.derivative_max(), pwa, grid)
}

fn correction_with(unit_slope: f64, pwa: &PwaFunction, grid: &Grid) -> f64 {
    (pwa.max_abs_slope() + unit_slope) * grid.step()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffEntry {
    /// Piece budget this entry answers.
    pub budget: usize,
    /// Optimal grid error with at most `budget` pieces.
    pub discrete_error: f64,
    /// Abstraction used for this budget. It may have fewer pieces than the
    /// budget when a smaller abstraction has an equal or lower certified error.
    pub pwa: PwaFunction,
    pub pwa_discrete_error: f64,
    pub correction: f64,
    /// Certified bound on `max |ψ - pwa|` over `[-L, L]`.
    pub corrected_error: f64,
}

impl TradeoffEntry {
    pub fn pieces(&self) -> usize {
        self.pwa.pieces()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub grid: Grid,
    /// Lipschitz constant of the unit used in every correction.
    pub unit_slope: f64,
    pub entries: Vec<TradeoffEntry>,
}

impl TradeoffTable {
    pub fn max_pieces(&self) -> usize {
        self.entries.len()
    }

    /// Entry for a budget of `pieces` (1-based).
    pub fn entry(&self, pieces: usize) -> Option<&TradeoffEntry> {
        pieces.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn last(&self) -> &TradeoffEntry {
        self.entries.last().expect("table has at least one entry")
    }
}

/// Trade-off table for budgets `1..=max_pieces` from a single DP run.
pub fn build_tradeoff_table(unit: &UnivariateUnit, grid: &Grid, max_pieces: usize) -> Result<TradeoffTable> {
    if max_pieces == 0 {
        return Err(Error::InvalidArgument("max_pieces must be at least 1".into()));
    }
    let k_dp = max_pieces.min(grid.intervals());
    let sol = solve_dp(&sample(unit, grid), &grid.points(), k_dp);
    let unit_slope = unit.derivative_max();
    let mut entries: Vec<TradeoffEntry> = Vec::with_capacity(max_pieces);
    for k in 1..=max_pieces {
        let kd = k.min(k_dp);
        let discrete_error = sol.value[kd];
        let prev = entries.last();
        // Same optimum as the previous budget: keep its (smaller) abstraction.
        if let Some(p) = prev.filter(|p| sol.value[kd] == p.discrete_error) {
            entries.push(TradeoffEntry {
                budget: k,
                discrete_error,
                ..p.clone()
            });
            continue;
        }
        let pwa = PwaFunction::interpolate(unit, grid, &sol.breakpoints[kd])?;
        let correction = correction_with(unit_slope, &pwa, grid);
        let corrected_error = discrete_error + correction;
        match prev {
            // A steeper abstraction can raise the correction past the gain.
            Some(p) if corrected_error > p.corrected_error => entries.push(TradeoffEntry {
                budget: k,
                discrete_error,
                ..p.clone()
            }),
            _ => entries.push(TradeoffEntry {
                budget: k,
                discrete_error,
                pwa,
                pwa_discrete_error: discrete_error,
                correction,
                corrected_error,
            }),
        }
    }
    Ok(TradeoffTable {
        grid: *grid,
        unit_slope,
        entries,
    })
}

/// Content hash of a unit together with the table settings.
pub fn table_hash(unit: &UnivariateUnit, grid: &Grid, max_pieces: usize) -> String {
    let mut h = Sha256::new();
    h.update(unit_to_value(unit).to_string().as_bytes());
    h.update(format!("|{:?}|{}|{}", grid.limit(), grid.intervals(), max_pieces).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedTable {
    hash: String,
    max_pieces: usize,
    table: TradeoffTable,
}

/// On-disk `.tradeoff.json` cache keyed by unit coordinates `i_j_k`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TradeoffCache {
    units: BTreeMap<String, CachedTable>,
}

impl TradeoffCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    /// Loads the cache if the file exists, otherwise starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Cached table for `id`, if its hash still matches the unit and settings.
    pub fn get(&self, id: UnitId, unit: &UnivariateUnit, grid: &Grid, max_pieces: usize) -> Option<&TradeoffTable> {
        self.units
            .get(&id.key())
            .filter(|c| c.max_pieces == max_pieces && c.hash == table_hash(unit, grid, max_pieces))
            .map(|c| &c.table)
    }

    pub fn insert(&mut self, id: UnitId, unit: &UnivariateUnit, table: TradeoffTable) {
        let max_pieces = table.max_pieces();
        let hash = table_hash(unit, &table.grid, max_pieces);
        self.units.insert(
            id.key(),
            CachedTable {
                hash,
                max_pieces,
                table,
            },
        );
    }

    pub fn get_or_build(
        &mut self,
        id: UnitId,
        unit: &UnivariateUnit,
        grid: &Grid,
        max_pieces: usize,
    ) -> Result<TradeoffTable> {
        if let Some(t) = self.get(id, unit, grid, max_pieces) {
            return Ok(t.clone());
        }
        let table = build_tradeoff_table(unit, grid, max_pieces)?;
        self.insert(id, unit, table.clone());
        Ok(table)
    }
}
