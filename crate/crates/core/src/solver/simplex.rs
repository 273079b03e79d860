//! Bounded-variable primal simplex on a dense tableau.

use std::time::Instant;

use crate::milp::{Constraint, Sense};

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
/// Phase-one objective above which the problem counts as infeasible.
const INFEAS_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
    /// The deadline passed before the solve finished.
    Interrupted,
    /// The iteration limit was hit.
    Stalled,
}

/// Linear program `min cost·x` subject to `rows` and `lower ≤ x ≤ upper`.
pub struct LpProblem<'a> {
    pub cost: &'a [f64],
    pub rows: &'a [Constraint],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
    /// Free nonbasic variable held at zero.
    Zero,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

struct Tableau {
    m: usize,
    n: usize,
    cols: usize,
    /// `B⁻¹ [A | I | artificials]`, row-major.
    t: Vec<f64>,
    /// Reduced costs for the current phase.
    d: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    value: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Original structural matrix and right-hand side.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Row and sign of each artificial column.
    art: Vec<(usize, f64)>,
}

impl Tableau {
    fn build(p: &LpProblem<'_>) -> Self {
        let n = p.cost.len();
        let m = p.rows.len();
        let mut a = vec![0.0; m * n];
        for (i, row) in p.rows.iter().enumerate() {
            for &(j, c) in &row.terms {
                a[i * n + j] += c;
            }
        }
        let b: Vec<f64> = p.rows.iter().map(|r| r.rhs).collect();
        let mut lower = p.lower.to_vec();
        let mut upper = p.upper.to_vec();
        let mut state = Vec::with_capacity(n + m);
        let mut value = Vec::with_capacity(n + m);
        for j in 0..n {
            let (s, v) = if lower[j].is_finite() {
                (State::Lower, lower[j])
            } else if upper[j].is_finite() {
                (State::Upper, upper[j])
            } else {
                (State::Zero, 0.0)
            };
            state.push(s);
            value.push(v);
        }
        // slack bounds: row + s = rhs
        for row in p.rows {
            let (lo, hi) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut residual = b.clone();
        for i in 0..m {
            for j in 0..n {
                residual[i] -= a[i * n + j] * value[j];
            }
        }
        let mut art = Vec::new();
        let mut basis = vec![0; m];
        let mut beta = vec![0.0; m];
        let mut slack_state = vec![State::Lower; m];
        let mut slack_value = vec![0.0; m];
        for i in 0..m {
            let r = residual[i];
            let (lo, hi) = (lower[n + i], upper[n + i]);
            if r >= lo - FEAS_TOL && r <= hi + FEAS_TOL {
                basis[i] = n + i;
                beta[i] = r;
                slack_state[i] = State::Basic(i);
            } else {
                let (st, at) = if r < lo { (State::Lower, lo) } else { (State::Upper, hi) };
                slack_state[i] = st;
                slack_value[i] = at;
                let sign = if r - at >= 0.0 { 1.0 } else { -1.0 };
                basis[i] = n + m + art.len();
                beta[i] = (r - at).abs();
                art.push((i, sign));
            }
        }
        state.extend(slack_state);
        value.extend(slack_value);
        for &(i, _) in &art {
            lower.push(0.0);
            upper.push(f64::INFINITY);
            state.push(State::Basic(i));
            value.push(0.0);
        }
        let cols = n + m + art.len();
        let mut t = vec![0.0; m * cols];
        for i in 0..m {
            let row = &mut t[i * cols..(i + 1) * cols];
            row[..n].copy_from_slice(&a[i * n..(i + 1) * n]);
            row[n + i] = 1.0;
        }
        for (k, &(i, sign)) in art.iter().enumerate() {
            let row = &mut t[i * cols..(i + 1) * cols];
            row[n + m + k] = sign;
            if sign < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
        Tableau {
            m,
            n,
            cols,
            t,
            d: vec![0.0; cols],
            beta,
            basis,
            state,
            value,
            lower,
            upper,
            a,
            b,
            art,
        }
    }

    fn price(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        self.d = d;
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut score = 0.0;
        for j in 0..self.cols {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            let dj = self.d[j];
            let dir = match self.state[j] {
                State::Lower if dj < -OPT_TOL => 1.0,
                State::Upper if dj > OPT_TOL => -1.0,
                State::Zero if dj.abs() > OPT_TOL => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > score {
                score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Step length at which basic row `i` hits a bound, if it moves toward one.
    fn ratio(&self, i: usize, alpha: f64, slack: f64) -> Option<f64> {
        let bv = self.basis[i];
        if alpha > PIVOT_TOL && self.lower[bv].is_finite() {
            Some((self.beta[i] - self.lower[bv] + slack) / alpha)
        } else if alpha < -PIVOT_TOL && self.upper[bv].is_finite() {
            Some((self.upper[bv] - self.beta[i] + slack) / -alpha)
        } else {
            None
        }
    }

    fn step(&mut self, bland: bool, degenerate: &mut usize) -> Step {
        let Some((q, dir)) = self.entering(bland) else {
            return Step::Optimal;
        };
        let col = |i: usize| dir * self.t[i * self.cols + q];
        let mut leave: Option<(usize, f64)> = None;
        if bland {
            for i in 0..self.m {
                if let Some(r) = self.ratio(i, col(i), 0.0) {
                    let r = r.max(0.0);
                    let better = match leave {
                        None => true,
                        Some((p, cur)) => r < cur || (r == cur && self.basis[i] < self.basis[p]),
                    };
                    if better {
                        leave = Some((i, r));
                    }
                }
            }
        } else {
            // Harris: largest pivot among rows within the relaxed minimum ratio
            let theta_max = (0..self.m)
                .filter_map(|i| self.ratio(i, col(i), FEAS_TOL))
                .fold(f64::INFINITY, f64::min);
            let mut best_alpha = 0.0;
            for i in 0..self.m {
                if let Some(r) = self.ratio(i, col(i), 0.0) {
                    if r <= theta_max && col(i).abs() > best_alpha {
                        best_alpha = col(i).abs();
                        leave = Some((i, r.max(0.0)));
                    }
                }
            }
        }
        let flip = self.upper[q] - self.lower[q];
        let (p, theta) = match leave {
            Some((p, r)) if r <= flip => (p, r),
            _ if flip.is_finite() => {
                self.shift(q, dir, flip);
                let to_upper = dir > 0.0;
                self.state[q] = if to_upper { State::Upper } else { State::Lower };
                self.value[q] = if to_upper { self.upper[q] } else { self.lower[q] };
                *degenerate = 0;
                return Step::Moved;
            }
            None => return Step::Unbounded,
            Some(l) => l,
        };
        if theta <= 1e-12 {
            *degenerate += 1;
        } else {
            *degenerate = 0;
        }
        let alpha = col(p);
        self.shift(q, dir, theta);
        let entering_value = self.value[q] + dir * theta;
        let out = self.basis[p];
        let (st, v) = if alpha > 0.0 {
            (State::Lower, self.lower[out])
        } else {
            (State::Upper, self.upper[out])
        };
        self.state[out] = st;
        self.value[out] = v;
        self.pivot(p, q);
        self.basis[p] = q;
        self.state[q] = State::Basic(p);
        self.beta[p] = entering_value;
        Step::Moved
    }

    /// Moves nonbasic `q` by `dir * theta`, updating the basic values.
    fn shift(&mut self, q: usize, dir: f64, theta: f64) {
        if theta == 0.0 {
            return;
        }
        for i in 0..self.m {
            self.beta[i] -= dir * theta * self.t[i * self.cols + q];
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let cols = self.cols;
        let piv = self.t[p * cols + q];
        {
            let row = &mut self.t[p * cols..(p + 1) * cols];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(p * cols);
        let (prow, after) = rest.split_at_mut(cols);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for (r, &pr) in row.iter_mut().zip(prow.iter()) {
                    *r -= f * pr;
                }
                row[q] = 0.0;
            }
        };
        before.chunks_mut(cols).for_each(eliminate);
        after.chunks_mut(cols).for_each(eliminate);
        let f = self.d[q];
        if f != 0.0 {
            for (dj, &pr) in self.d.iter_mut().zip(prow.iter()) {
                *dj -= f * pr;
            }
            self.d[q] = 0.0;
        }
    }

    fn run(&mut self, deadline: Option<Instant>, limit: usize) -> Result<Step, LpOutcome> {
        let mut degenerate = 0;
        for it in 0..limit {
            if it % 32 == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(LpOutcome::Interrupted);
            }
            match self.step(degenerate > STALL_LIMIT, &mut degenerate) {
                Step::Moved => {}
                other => return Ok(other),
            }
        }
        Err(LpOutcome::Stalled)
    }

    /// Column `j` of the original system `[A | I | artificials]`, row `i`.
    fn original(&self, i: usize, j: usize) -> f64 {
        let (n, m) = (self.n, self.m);
        if j < n {
            self.a[i * n + j]
        } else if j < n + m {
            if j - n == i {
                1.0
            } else {
                0.0
            }
        } else {
            let (r, s) = self.art[j - n - m];
            if r == i {
                s
            } else {
                0.0
            }
        }
    }

    /// Recomputes basic values from the nonbasic ones, reading the basis
    /// inverse off the slack columns.
    fn refresh(&mut self) {
        let (n, m) = (self.n, self.m);
        let mut rhs = self.b.clone();
        for j in 0..self.cols {
            let v = self.value[j];
            if matches!(self.state[j], State::Basic(_)) || v == 0.0 {
                continue;
            }
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= self.original(i, j) * v;
            }
        }
        for i in 0..m {
            let row = &self.t[i * self.cols..(i + 1) * self.cols];
            self.beta[i] = (0..m).map(|r| row[n + r] * rhs[r]).sum();
        }
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = self.value.clone();
        for (i, &bv) in self.basis.iter().enumerate() {
            x[bv] = self.beta[i];
        }
        x
    }
}

/// Solves the LP. Variable bounds should be finite; free variables are
/// supported but start at zero.
pub fn lp_solve(problem: &LpProblem<'_>, deadline: Option<Instant>) -> LpOutcome {
    let n = problem.cost.len();
    assert_eq!(problem.lower.len(), n, "bound length mismatch");
    assert_eq!(problem.upper.len(), n, "bound length mismatch");
    if (0..n).any(|j| problem.lower[j] > problem.upper[j] + FEAS_TOL) {
        return LpOutcome::Infeasible;
    }
    let mut tab = Tableau::build(problem);
    let limit = 50 * (tab.m + tab.cols) + 1000;
    if !tab.art.is_empty() {
        let mut phase1 = vec![0.0; tab.cols];
        phase1[n + tab.m..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&phase1);
        if let Err(o) = tab.run(deadline, limit) {
            return o;
        }
        tab.refresh();
        let scale = 1.0 + tab.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let infeasibility: f64 = tab.primal()[n + tab.m..].iter().sum();
        if infeasibility > INFEAS_TOL * scale {
            return LpOutcome::Infeasible;
        }
        for k in n + tab.m..tab.cols {
            tab.upper[k] = 0.0;
            if !matches!(tab.state[k], State::Basic(_)) {
                tab.value[k] = 0.0;
                tab.state[k] = State::Lower;
            }
        }
    }
    let mut cost = problem.cost.to_vec();
    cost.resize(tab.cols, 0.0);
    tab.price(&cost);
    match tab.run(deadline, limit) {
        Ok(Step::Unbounded) => return LpOutcome::Unbounded,
        Ok(_) => {}
        Err(o) => return o,
    }
    tab.refresh();
    let mut x = tab.primal();
    x.truncate(n);
    // clip round-off outside the variable bounds
    for ((v, &lo), &hi) in x.iter_mut().zip(problem.lower).zip(problem.upper) {
        *v = v.clamp(lo, hi);
    }
    let value = problem.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpOutcome::Optimal { value, x }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(terms: &[(usize, f64)], sense: Sense, rhs: f64) -> Constraint {
        Constraint {
            name: String::new(),
            terms: terms.to_vec(),
            sense,
            rhs,
        }
    }

    #[test]
    fn maximize_single_bounded_variable() {
        // max x s.t. x <= 3, x in [0, 10]
        let rows = [row(&[(0, 1.0)], Sense::Le, 3.0)];
        let out = lp_solve(
            &LpProblem {
                cost: &[-1.0],
                rows: &rows,
                lower: &[0.0],
                upper: &[10.0],
            },
            None,
        );
        match out {
            LpOutcome::Optimal { value, x } => {
                assert!((value + 3.0).abs() < 1e-12);
                assert!((x[0] - 3.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_system_has_unique_point() {
        // x + y = 3, x - y = 1
        let rows = [
            row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 3.0),
            row(&[(0, 1.0), (1, -1.0)], Sense::Eq, 1.0),
        ];
        let out = lp_solve(
            &LpProblem {
                cost: &[1.0, 1.0],
                rows: &rows,
                lower: &[-10.0, -10.0],
                upper: &[10.0, 10.0],
            },
            None,
        );
        let LpOutcome::Optimal { x, .. } = out else {
            panic!("{out:?}")
        };
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let rows = [row(&[(0, 1.0)], Sense::Ge, 5.0)];
        let p = LpProblem {
            cost: &[1.0],
            rows: &rows,
            lower: &[0.0],
            upper: &[4.0],
        };
        assert_eq!(lp_solve(&p, None), LpOutcome::Infeasible);
        let p = LpProblem {
            cost: &[-1.0],
            rows: &rows,
            lower: &[0.0],
            upper: &[f64::INFINITY],
        };
        assert_eq!(lp_solve(&p, None), LpOutcome::Unbounded);
    }
}
