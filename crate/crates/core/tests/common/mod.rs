//! Random model generators and independent oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use kan_verify::bench::spline_unit;
use kan_verify::milp::{Constraint, MilpModel, Sense, UnitAbstraction, VarKind};
use kan_verify::pwa::{optimal_pwa, Grid};
use kan_verify::solver::{lp_solve, LpOutcome, LpProblem};
use kan_verify::{Edge, KanNetwork, Layer, Node, UnitId, UnivariateUnit};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A smooth random unit of any supported kind on `[-limit, limit]`.
pub fn random_unit(rng: &mut ChaCha8Rng, limit: f64) -> UnivariateUnit {
    let unit = match rng.gen_range(0..4) {
        0 => {
            let n = rng.gen_range(2..10);
            let values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            UnivariateUnit::tabulated(limit, values).unwrap()
        }
        1 => {
            let terms: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..3.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let segments = rng.gen_range(1..6);
            spline_unit(limit, segments, move |z| terms.iter().map(|&(a, b, c)| a * (b * z + c).sin()).sum())
                .unwrap()
        }
        2 => {
            let n = rng.gen_range(1..5);
            let centers = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
            let widths = (0..n).map(|_| rng.gen_range(0.2..1.0) * limit).collect();
            let weights = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            UnivariateUnit::rbf_sum(limit, centers, widths, weights).unwrap()
        }
        _ => {
            let degree = rng.gen_range(1..4);
            let n = rng.gen_range(degree + 1..degree + 6);
            let span = 2.2 * limit;
            let step = span / (n + degree) as f64;
            let knots = (0..=n + degree).map(|i| -1.1 * limit + i as f64 * step).collect();
            let coefficients = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            UnivariateUnit::bspline(limit, degree, knots, coefficients).unwrap()
        }
    };
    if rng.gen_bool(0.25) {
        unit.with_affine_base(rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)).unwrap()
    } else {
        unit
    }
}

/// Bound on `|ψ(z)|` from dense sampling plus a derivative margin.
pub fn magnitude_bound(unit: &UnivariateUnit) -> f64 {
    let l = unit.limit();
    let n = 2000;
    let m = (0..=n)
        .map(|i| unit.eval_inner(-l + 2.0 * l * i as f64 / n as f64).abs())
        .fold(0.0f64, f64::max);
    m + unit.derivative_max() * 2.0 * l / n as f64
}

/// Layered random network with the given widths, some nodes carrying an
/// outer unit. Later layers get domains
/// wide enough that no reachable pre-activation leaves them, even after
/// abstraction, so no unit sits on its zero-extension boundary.
pub fn random_network(rng: &mut ChaCha8Rng, widths: &[usize], input_limit: f64) -> KanNetwork {
    let mut limit = input_limit;
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let mut outputs = Vec::new();
        let mut reach = 0.0f64;
        for _ in 0..n_out {
            let mut edges = Vec::new();
            let mut node_reach = 0.0;
            for _ in 0..n_in {
                let unit = random_unit(rng, limit);
                let weight: f64 = if rng.gen_bool(0.3) { rng.gen_range(-1.5..1.5) } else { 1.0 };
                node_reach += weight.abs() * magnitude_bound(&unit);
                edges.push(Edge::weighted(weight, unit));
            }
            let node = Node::new(edges);
            if rng.gen_bool(0.3) {
                let outer = random_unit(rng, 1.5 * node_reach + 0.5);
                reach = reach.max(magnitude_bound(&outer));
                outputs.push(node.with_outer(outer));
            } else {
                reach = reach.max(node_reach);
                outputs.push(node);
            }
        }
        layers.push(Layer { outputs });
        // abstractions stay within the sampled magnitude up to their error,
        // which the factor comfortably absorbs
        limit = 1.5 * reach + 0.5;
    }
    KanNetwork::new(layers).unwrap()
}

/// Random uniform point of `[lo, hi]^d`.
pub fn random_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) })
        .collect()
}

/// Per-unit abstractions with random piece counts in `1..=max_pieces`.
pub fn random_abstractions(
    rng: &mut ChaCha8Rng,
    net: &KanNetwork,
    intervals: usize,
    max_pieces: usize,
) -> BTreeMap<UnitId, UnitAbstraction> {
    net.units()
        .map(|(id, u)| {
            let grid = Grid::for_unit(u, intervals).unwrap();
            let k = rng.gen_range(1..=max_pieces);
            let (pwa, err) = optimal_pwa(u, &grid, k).unwrap();
            let error = err + kan_verify::pwa::discretization_correction(u, &pwa, &grid);
            (id, UnitAbstraction { pwa, error })
        })
        .collect()
}

/// Chord deviation computed directly from unit values, in the same
/// arithmetic order as the library.
pub fn naive_chord(points: &[f64], values: &[f64], j1: usize, j2: usize) -> f64 {
    let (z1, v1) = (points[j1], values[j1]);
    let slope = (values[j2] - v1) / (points[j2] - z1);
    let mut m = 0.0f64;
    for j in j1 + 1..j2 {
        m = m.max((values[j] - (v1 + slope * (points[j] - z1))).abs());
    }
    m
}

/// Smallest grid error over every choice of at most `k - 1` interior
/// breakpoints.
pub fn brute_force_pwa_error(points: &[f64], values: &[f64], k: usize) -> f64 {
    let last = points.len() - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn rec(
        points: &[f64],
        values: &[f64],
        start: usize,
        left: usize,
        chosen: &mut Vec<usize>,
        last: usize,
        best: &mut f64,
    ) {
        // close the path here
        let mut path = vec![0];
        path.extend(chosen.iter().copied());
        path.push(last);
        let err = path
            .windows(2)
            .map(|w| naive_chord(points, values, w[0], w[1]))
            .fold(0.0f64, f64::max);
        if err < *best {
            *best = err;
        }
        if left == 0 {
            return;
        }
        for j in start..last {
            chosen.push(j);
            rec(points, values, j + 1, left - 1, chosen, last, best);
            chosen.pop();
        }
    }
    rec(points, values, 1, k - 1, &mut chosen, last, &mut best);
    best
}

/// Exact optimum of a small LP by enumerating every basic solution: each
/// choice of `n` tight constraints (rows or bounds) is solved as a square
/// system and kept when feasible.
pub fn vertex_enumeration(cost: &[f64], rows: &[Constraint], lower: &[f64], upper: &[f64]) -> Option<f64> {
    let n = cost.len();
    // every candidate hyperplane as (coefficients, rhs)
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in rows {
        let mut a = vec![0.0; n];
        for &(v, c) in &r.terms {
            a[v] += c;
        }
        planes.push((a, r.rhs));
    }
    for v in 0..n {
        let mut a = vec![0.0; n];
        a[v] = 1.0;
        planes.push((a.clone(), lower[v]));
        planes.push((a, upper[v]));
    }
    let feasible = |x: &[f64]| {
        x.iter().zip(lower).zip(upper).all(|((&v, &l), &u)| v >= l - 1e-7 && v <= u + 1e-7)
            && rows.iter().all(|r| r.violation(x) <= 1e-7)
    };
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    let m = planes.len();
    if n > m {
        return None;
    }
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v: f64 = cost.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        // next combination in lexicographic order
        let Some(i) = (0..n).rev().find(|&i| idx[i] < m - n + i) else {
            return best;
        };
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        let pivot = a[c].clone();
        for r in 0..n {
            if r != c {
                let f = a[r][c] / pivot[c];
                if f != 0.0 {
                    for (ark, &ack) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                        *ark -= f * ack;
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Optimum of a MILP over piece indicators by trying every assignment that
/// picks one indicator per group and solving the remaining LP. Returns the
/// objective in the model's own direction, or `None` when infeasible.
pub fn exhaustive_milp(model: &MilpModel) -> Option<f64> {
    let groups: Vec<Vec<usize>> = model
        .groups
        .iter()
        .map(|g| g.iter().copied().filter(|&v| model.variables[v].upper > 0.5).collect())
        .collect();
    let maximize = matches!(model.objective.direction, kan_verify::milp::Direction::Maximize);
    let sign = if maximize { -1.0 } else { 1.0 };
    let n = model.variables.len();
    let mut cost = vec![0.0; n];
    for &(v, c) in &model.objective.terms {
        cost[v] += sign * c;
    }
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; groups.len()];
    loop {
        let mut lower: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
        for (v, var) in model.variables.iter().enumerate() {
            if var.kind == VarKind::Binary {
                lower[v] = 0.0;
                upper[v] = 0.0;
            }
        }
        for (g, &p) in groups.iter().zip(&pick) {
            lower[g[p]] = 1.0;
            upper[g[p]] = 1.0;
        }
        let problem = LpProblem {
            cost: &cost,
            rows: &model.constraints,
            lower: &lower,
            upper: &upper,
        };
        if let LpOutcome::Optimal { value, .. } = lp_solve(&problem, None) {
            best = Some(best.map_or(value, |b: f64| b.min(value)));
        }
        let mut i = 0;
        loop {
            if i == groups.len() {
                return best.map(|v| sign * v);
            }
            pick[i] += 1;
            if pick[i] < groups[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

/// Number of indicator assignments `exhaustive_milp` would try.
pub fn assignment_count(model: &MilpModel) -> usize {
    model
        .groups
        .iter()
        .map(|g| g.iter().filter(|&&v| model.variables[v].upper > 0.5).count())
        .product()
}

pub fn le(terms: Vec<(usize, f64)>, rhs: f64) -> Constraint {
    Constraint {
        name: String::new(),
        terms,
        sense: Sense::Le,
        rhs,
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
