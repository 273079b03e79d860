//! Univariate units: the learnable one-dimensional functions of a KAN.
//!
//! Every unit lives on a bounded domain `[-L, L]` and evaluates to exactly
//! zero outside of it. Inside the domain the unit is continuous, and
//! [`UnivariateUnit::derivative_interval`] returns a certified enclosure of
//! its derivative together with the tolerance of that enclosure.

use std::fmt;

use crate::error::{Error, Result};
use crate::poly;

/// Sample spacing, relative to `L`, used for the sampled derivative enclosures.
const DERIVATIVE_SAMPLES_PER_HALF_DOMAIN: f64 = 2048.0;
const MAX_DERIVATIVE_SAMPLES: usize = 200_000;

/// Threshold above which a non-zero boundary value is reported as a
/// zero-extension discontinuity.
pub const BOUNDARY_JUMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    RbfSum,
    Bspline,
    PiecewisePolynomial,
    Tabulated,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::RbfSum => "rbf-sum",
            UnitKind::Bspline => "bspline",
            UnitKind::PiecewisePolynomial => "piecewise-polynomial",
            UnitKind::Tabulated => "tabulated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rbf-sum" => Some(UnitKind::RbfSum),
            "bspline" => Some(UnitKind::Bspline),
            "piecewise-polynomial" => Some(UnitKind::PiecewisePolynomial),
            "tabulated" => Some(UnitKind::Tabulated),
            _ => None,
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific coefficients of a unit.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitParams {
    /// `sum_i weights[i] * exp(-((z - centers[i]) / widths[i])^2)`
    RbfSum {
        centers: Vec<f64>,
        widths: Vec<f64>,
        weights: Vec<f64>,
    },
    /// `sum_i coefficients[i] * B_{i,degree}(z)` over the full knot vector;
    /// zero outside `[knots[0], knots[last]]`.
    Bspline {
        degree: usize,
        knots: Vec<f64>,
        coefficients: Vec<f64>,
    },
    /// Segment `s` covers `[breakpoints[s], breakpoints[s+1]]` and evaluates
    /// `sum_m coefficients[s][m] * (z - breakpoints[s])^m`. The first and last
    /// segments extrapolate.
    PiecewisePolynomial {
        breakpoints: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
    },
    /// Values on a uniform grid spanning `[-L, L]`, linearly interpolated.
    Tabulated { values: Vec<f64> },
}

impl UnitParams {
    pub fn kind(&self) -> UnitKind {
        match self {
            UnitParams::RbfSum { .. } => UnitKind::RbfSum,
            UnitParams::Bspline { .. } => UnitKind::Bspline,
            UnitParams::PiecewisePolynomial { .. } => UnitKind::PiecewisePolynomial,
            UnitParams::Tabulated { .. } => UnitKind::Tabulated,
        }
    }
}

/// Certified enclosure `[lower, upper]` of `dψ/dz` over an interval.
///
/// `lower` is within `tolerance` below the true minimum, `upper` within
/// `tolerance` above the true maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeInterval {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
}

impl DerivativeInterval {
    pub fn max_abs(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// One polynomial piece `coeffs(t)` with `t = z - lo`, valid on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
struct PolyPiece {
    lo: f64,
    hi: f64,
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateUnit {
    params: UnitParams,
    limit: f64,
    affine_base: Option<(f64, f64)>,
    /// Power-basis form of a B-spline, used by the derivative enclosure.
    spline_pieces: Vec<PolyPiece>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{what}[{i}] is not finite"
        ))),
        None => Ok(()),
    }
}

impl UnivariateUnit {
    pub fn new(params: UnitParams, limit: f64) -> Result<Self> {
        if !(limit.is_finite() && limit > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain limit L must be finite and > 0, got {limit}"
            )));
        }
        let mut spline_pieces = Vec::new();
        match &params {
            UnitParams::RbfSum {
                centers,
                widths,
                weights,
            } => {
                if centers.len() != widths.len() || centers.len() != weights.len() {
                    return Err(Error::InvalidArgument(
                        "rbf-sum centers, widths and weights must have equal length".into(),
                    ));
                }
                check_finite(centers, "centers")?;
                check_finite(widths, "widths")?;
                check_finite(weights, "weights")?;
                if let Some(i) = widths.iter().position(|&h| h <= 0.0) {
                    return Err(Error::InvalidArgument(format!("widths[{i}] must be > 0")));
                }
            }
            UnitParams::Bspline {
                degree,
                knots,
                coefficients,
            } => {
                if *degree == 0 || *degree > 7 {
                    return Err(Error::InvalidArgument(format!(
                        "bspline degree must be in 1..=7, got {degree}"
                    )));
                }
                if coefficients.is_empty() || knots.len() != coefficients.len() + degree + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "bspline needs len(knots) = len(coefficients) + degree + 1, got {} and {}",
                        knots.len(),
                        coefficients.len()
                    )));
                }
                check_finite(knots, "knots")?;
                check_finite(coefficients, "coefficients")?;
                if knots.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidArgument("bspline knots must be non-decreasing".into()));
                }
                if knots[0] >= knots[knots.len() - 1] {
                    return Err(Error::InvalidArgument("bspline knot span is empty".into()));
                }
                spline_pieces = bspline_pieces(*degree, knots, coefficients);
            }
            UnitParams::PiecewisePolynomial {
                breakpoints,
                coefficients,
            } => {
                if breakpoints.len() < 2 || coefficients.len() != breakpoints.len() - 1 {
                    return Err(Error::InvalidArgument(
                        "piecewise-polynomial needs n+1 breakpoints for n coefficient rows (n >= 1)"
                            .into(),
                    ));
                }
                check_finite(breakpoints, "breakpoints")?;
                if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument(
                        "piecewise-polynomial breakpoints must be strictly increasing".into(),
                    ));
                }
                for (s, row) in coefficients.iter().enumerate() {
                    if row.is_empty() {
                        return Err(Error::InvalidArgument(format!("coefficients[{s}] is empty")));
                    }
                    check_finite(row, &format!("coefficients[{s}]"))?;
                }
            }
            UnitParams::Tabulated { values } => {
                if values.len() < 2 {
                    return Err(Error::InvalidArgument(
                        "tabulated unit needs at least 2 values".into(),
                    ));
                }
                check_finite(values, "values")?;
            }
        }
        Ok(Self {
            params,
            limit,
            affine_base: None,
            spline_pieces,
        })
    }

    pub fn rbf_sum(limit: f64, centers: Vec<f64>, widths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::new(
            UnitParams::RbfSum {
                centers,
                widths,
                weights,
            },
            limit,
        )
    }

    pub fn bspline(limit: f64, degree: usize, knots: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        Self::new(
            UnitParams::Bspline {
                degree,
                knots,
                coefficients,
            },
            limit,
        )
    }

    pub fn piecewise_polynomial(
        limit: f64,
        breakpoints: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(
            UnitParams::PiecewisePolynomial {
                breakpoints,
                coefficients,
            },
            limit,
        )
    }

    pub fn tabulated(limit: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(UnitParams::Tabulated { values }, limit)
    }

    /// Tabulated `ψ(z) = slope * z + intercept` on `[-limit, limit]`.
    pub fn affine(limit: f64, slope: f64, intercept: f64) -> Result<Self> {
        Self::tabulated(limit, vec![intercept - slope * limit, intercept + slope * limit])
    }

    /// Tabulates `f` on `points` uniformly spaced grid values over `[-limit, limit]`.
    pub fn tabulate(limit: f64, points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidArgument("need at least 2 tabulation points".into()));
        }
        let m = points - 1;
        let values = (0..points).map(|i| f(grid_point(limit, m, i))).collect();
        Self::tabulated(limit, values)
    }

    pub fn with_affine_base(mut self, slope: f64, intercept: f64) -> Result<Self> {
        if !(slope.is_finite() && intercept.is_finite()) {
            return Err(Error::InvalidArgument("affine_base must be finite".into()));
        }
        self.affine_base = Some((slope, intercept));
        Ok(self)
    }

    pub fn kind(&self) -> UnitKind {
        self.params.kind()
    }

    pub fn params(&self) -> &UnitParams {
        &self.params
    }

    /// The domain limit `L`.
    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn affine_base(&self) -> Option<(f64, f64)> {
        self.affine_base
    }

    pub fn param_count(&self) -> usize {
        let base = if self.affine_base.is_some() { 2 } else { 0 };
        base + match &self.params {
            UnitParams::RbfSum { centers, .. } => centers.len() * 3,
            UnitParams::Bspline { coefficients, .. } => coefficients.len(),
            UnitParams::PiecewisePolynomial { coefficients, .. } => {
                coefficients.iter().map(Vec::len).sum()
            }
            UnitParams::Tabulated { values } => values.len(),
        }
    }

    /// `ψ(z)` with zero extension: exactly `0.0` whenever `|z| > L`. The
    /// domain endpoints themselves belong to the closed domain.
    pub fn eval(&self, z: f64) -> f64 {
        if z.is_nan() || z.abs() > self.limit {
            0.0
        } else {
            self.eval_inner(z)
        }
    }

    /// The continuous function on the closed domain `[-L, L]`, before zero
    /// extension. Arguments outside the domain are clamped.
    pub fn eval_inner(&self, z: f64) -> f64 {
        let z = z.clamp(-self.limit, self.limit);
        let base = match self.affine_base {
            Some((s, b)) => s * z + b,
            None => 0.0,
        };
        base + match &self.params {
            UnitParams::RbfSum {
                centers,
                widths,
                weights,
            } => centers
                .iter()
                .zip(widths)
                .zip(weights)
                .map(|((&c, &h), &w)| {
                    let u = (z - c) / h;
                    w * (-u * u).exp()
                })
                .sum(),
            UnitParams::Bspline {
                degree,
                knots,
                coefficients,
            } => bspline_eval(*degree, knots, coefficients, z),
            UnitParams::PiecewisePolynomial {
                breakpoints,
                coefficients,
            } => {
                let s = segment_index(breakpoints, z);
                poly::horner(&coefficients[s], z - breakpoints[s])
            }
            UnitParams::Tabulated { values } => {
                let m = values.len() - 1;
                let h = 2.0 * self.limit / m as f64;
                let i = (((z + self.limit) / h).floor() as usize).min(m - 1);
                let x0 = grid_point(self.limit, m, i);
                let x1 = grid_point(self.limit, m, i + 1);
                values[i] + (z - x0) * (values[i + 1] - values[i]) / (x1 - x0)
            }
        }
    }

    /// Largest one-sided boundary value `max(|ψ(-L)|, |ψ(L)|)`; non-zero values
    /// mean zero extension introduces a jump at the domain edge.
    pub fn boundary_jump(&self) -> f64 {
        self.eval_inner(-self.limit)
            .abs()
            .max(self.eval_inner(self.limit).abs())
    }

    /// Enclosure of `dψ/dz` over `[a, b]` with `-L < a < b < L`.
    pub fn derivative_interval(&self, a: f64, b: f64) -> Result<DerivativeInterval> {
        let l = self.limit;
        if !(a.is_finite() && b.is_finite()) || a >= b || a <= -l || b >= l {
            return Err(Error::Domain(format!(
                "derivative interval requires -L < a < b < L (L = {l}), got [{a}, {b}]"
            )));
        }
        Ok(self.derivative_enclosure(a, b))
    }

    /// Enclosure of `|dψ/dz|` over the whole closed domain: the Lipschitz
    /// constant of the unit on `[-L, L]`.
    pub fn derivative_max(&self) -> f64 {
        self.derivative_enclosure(-self.limit, self.limit).max_abs()
    }

    /// Same as [`Self::derivative_interval`] but over a closed sub-interval of
    /// `[-L, L]`, without the open-interval precondition.
    pub fn derivative_enclosure(&self, a: f64, b: f64) -> DerivativeInterval {
        let a = a.max(-self.limit);
        let b = b.min(self.limit).max(a);
        let slope = self.affine_base.map_or(0.0, |(s, _)| s);
        let mut out = match &self.params {
            UnitParams::RbfSum {
                centers,
                widths,
                weights,
            } => rbf_derivative_enclosure(self.limit, centers, widths, weights, a, b),
            UnitParams::Bspline {
                knots, ..
            } => {
                let (lo_support, hi_support) = (knots[0], knots[knots.len() - 1]);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                // zero derivative outside the support
                if a < lo_support || b > hi_support {
                    lo = 0.0;
                    hi = 0.0;
                }
                for piece in &self.spline_pieces {
                    let (pa, pb) = (a.max(piece.lo), b.min(piece.hi));
                    if pa > pb {
                        continue;
                    }
                    let d = poly::derivative(&piece.coeffs);
                    let (mn, mx) = poly::range_on(&d, pa - piece.lo, pb - piece.lo);
                    lo = lo.min(mn);
                    hi = hi.max(mx);
                }
                polynomial_tolerance(lo, hi)
            }
            UnitParams::PiecewisePolynomial {
                breakpoints,
                coefficients,
            } => {
                let last = coefficients.len() - 1;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (s, row) in coefficients.iter().enumerate() {
                    let seg_lo = if s == 0 { f64::NEG_INFINITY } else { breakpoints[s] };
                    let seg_hi = if s == last { f64::INFINITY } else { breakpoints[s + 1] };
                    let (pa, pb) = (a.max(seg_lo), b.min(seg_hi));
                    if pa > pb {
                        continue;
                    }
                    let d = poly::derivative(row);
                    let (mn, mx) = if d.is_empty() {
                        (0.0, 0.0)
                    } else {
                        poly::range_on(&d, pa - breakpoints[s], pb - breakpoints[s])
                    };
                    lo = lo.min(mn);
                    hi = hi.max(mx);
                }
                polynomial_tolerance(lo, hi)
            }
            UnitParams::Tabulated { values } => {
                let m = values.len() - 1;
                let h = 2.0 * self.limit / m as f64;
                let first = (((a + self.limit) / h).floor().max(0.0) as usize).min(m - 1);
                let last = (((b + self.limit) / h).ceil() as usize).clamp(first + 1, m);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in first..last {
                    let x0 = grid_point(self.limit, m, i);
                    let x1 = grid_point(self.limit, m, i + 1);
                    // only cells with a non-degenerate overlap, unless [a, b] is a point
                    if a < b && (x1 <= a || x0 >= b) {
                        continue;
                    }
                    let s = (values[i + 1] - values[i]) / (x1 - x0);
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
                if !lo.is_finite() {
                    let s = (values[first + 1] - values[first]) / h;
                    lo = s;
                    hi = s;
                }
                DerivativeInterval {
                    lower: lo,
                    upper: hi,
                    tolerance: 0.0,
                }
            }
        };
        out.lower += slope;
        out.upper += slope;
        out
    }

    /// Exact derivative where it exists (one-sided from the right at kinks).
    /// Used by tests and sampling oracles.
    pub fn derivative_at(&self, z: f64) -> f64 {
        let z = z.clamp(-self.limit, self.limit);
        let slope = self.affine_base.map_or(0.0, |(s, _)| s);
        slope
            + match &self.params {
                UnitParams::RbfSum {
                    centers,
                    widths,
                    weights,
                } => centers
                    .iter()
                    .zip(widths)
                    .zip(weights)
                    .map(|((&c, &h), &w)| {
                        let u = (z - c) / h;
                        -2.0 * w * u / h * (-u * u).exp()
                    })
                    .sum(),
                UnitParams::Bspline { knots, .. } => {
                    if z < knots[0] || z > knots[knots.len() - 1] {
                        0.0
                    } else {
                        let piece = self
                            .spline_pieces
                            .iter()
                            .rev()
                            .find(|p| p.lo <= z)
                            .expect("support covered by pieces");
                        poly::horner(&poly::derivative(&piece.coeffs), z - piece.lo)
                    }
                }
                UnitParams::PiecewisePolynomial {
                    breakpoints,
                    coefficients,
                } => {
                    let s = segment_index(breakpoints, z);
                    poly::horner(&poly::derivative(&coefficients[s]), z - breakpoints[s])
                }
                UnitParams::Tabulated { values } => {
                    let m = values.len() - 1;
                    let h = 2.0 * self.limit / m as f64;
                    let i = (((z + self.limit) / h).floor() as usize).min(m - 1);
                    (values[i + 1] - values[i])
                        / (grid_point(self.limit, m, i + 1) - grid_point(self.limit, m, i))
                }
            }
    }
}

/// `i`-th of `m + 1` uniformly spaced points on `[-limit, limit]`, with both
/// endpoints exact.
pub(crate) fn grid_point(limit: f64, m: usize, i: usize) -> f64 {
    if i == m {
        limit
    } else {
        -limit + i as f64 * (2.0 * limit / m as f64)
    }
}

fn polynomial_tolerance(lo: f64, hi: f64) -> DerivativeInterval {
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    DerivativeInterval {
        lower: lo - tol,
        upper: hi + tol,
        tolerance: tol,
    }
}

fn segment_index(breakpoints: &[f64], z: f64) -> usize {
    let segments = breakpoints.len() - 1;
    // number of interior breakpoints <= z
    breakpoints[1..segments].partition_point(|&b| b <= z)
}

fn rbf_derivative_enclosure(
    limit: f64,
    centers: &[f64],
    widths: &[f64],
    weights: &[f64],
    a: f64,
    b: f64,
) -> DerivativeInterval {
    let deriv = |z: f64| -> f64 {
        centers
            .iter()
            .zip(widths)
            .zip(weights)
            .map(|((&c, &h), &w)| {
                let u = (z - c) / h;
                -2.0 * w * u / h * (-u * u).exp()
            })
            .sum()
    };
    // |d²/dz² exp(-u²)| = |4u² - 2| e^{-u²} / h² <= 2 / h²
    let second_bound: f64 = widths
        .iter()
        .zip(weights)
        .map(|(&h, &w)| 2.0 * w.abs() / (h * h))
        .sum();
    let spacing = limit / DERIVATIVE_SAMPLES_PER_HALF_DOMAIN;
    let steps = (((b - a) / spacing).ceil() as usize).clamp(64, MAX_DERIVATIVE_SAMPLES);
    let step = (b - a) / steps as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..=steps {
        let z = if i == steps { b } else { a + i as f64 * step };
        let d = deriv(z);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    // every point lies within step/2 of a sample; widen by a little extra
    // for rounding in the sample positions
    let tol = second_bound * step * 0.5 * (1.0 + 1e-9) + 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    DerivativeInterval {
        lower: lo - tol,
        upper: hi + tol,
        tolerance: tol,
    }
}

/// Cox-de Boor evaluation of `sum_i c_i B_{i,p}(z)` over the full knot vector.
fn bspline_eval(degree: usize, knots: &[f64], coefficients: &[f64], z: f64) -> f64 {
    let last = knots.len() - 1;
    if z < knots[0] || z > knots[last] {
        return 0.0;
    }
    // the right end of the support belongs to the last non-empty span
    let closing = (0..last).rev().find(|&i| knots[i] < knots[i + 1]);
    let mut basis: Vec<f64> = (0..last)
        .map(|i| {
            let inside = knots[i] <= z && z < knots[i + 1];
            if inside || (z == knots[last] && Some(i) == closing) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for p in 1..=degree {
        for i in 0..last - p {
            let mut v = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                v += (z - knots[i]) / d1 * basis[i];
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + p + 1] - z) / d2 * basis[i + 1];
            }
            basis[i] = v;
        }
    }
    coefficients
        .iter()
        .zip(&basis)
        .map(|(c, b)| c * b)
        .sum()
}

/// Converts a B-spline into one power-basis polynomial per non-empty knot span.
fn bspline_pieces(degree: usize, knots: &[f64], coefficients: &[f64]) -> Vec<PolyPiece> {
    let mut pieces = Vec::new();
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        // Chebyshev-like interior nodes keep the interpolation well conditioned
        // and away from the span endpoints where the basis switches.
        let n = degree + 1;
        let ts: Vec<f64> = (0..n)
            .map(|i| {
                let x = ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
                0.5 * (hi - lo) * (1.0 - x)
            })
            .collect();
        let ys: Vec<f64> = ts
            .iter()
            .map(|&t| bspline_eval(degree, knots, coefficients, lo + t))
            .collect();
        pieces.push(PolyPiece {
            lo,
            hi,
            coeffs: poly::interpolate(&ts, &ys),
        });
    }
    pieces
}
