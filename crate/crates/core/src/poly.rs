//! Small dense polynomial helpers in the power basis `c[0] + c[1] t + ...`.

pub(crate) fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

pub(crate) fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, &c)| m as f64 * c)
        .collect()
}

fn trimmed(coeffs: &[f64]) -> &[f64] {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut len = coeffs.len();
    while len > 0 && coeffs[len - 1].abs() <= scale * 1e-15 {
        len -= 1;
    }
    &coeffs[..len]
}

/// Real roots of `coeffs` inside the open interval `(lo, hi)`.
///
/// Roots of the derivative split the interval into monotone pieces, each of
/// which holds at most one root and is bisected to machine precision.
pub(crate) fn roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let c = trimmed(coeffs);
    match c.len() {
        0 | 1 => Vec::new(),
        2 => {
            let r = -c[0] / c[1];
            if r > lo && r < hi {
                vec![r]
            } else {
                Vec::new()
            }
        }
        _ => {
            let mut cuts = vec![lo];
            cuts.extend(roots_in(&derivative(c), lo, hi));
            cuts.push(hi);
            let mut roots = Vec::new();
            for w in cuts.windows(2) {
                if let Some(r) = bisect(c, w[0], w[1]) {
                    if r > lo && r < hi && roots.last().is_none_or(|&p: &f64| r > p) {
                        roots.push(r);
                    }
                }
            }
            roots
        }
    }
}

fn bisect(c: &[f64], mut a: f64, mut b: f64) -> Option<f64> {
    let mut fa = horner(c, a);
    let fb = horner(c, b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = horner(c, m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Range of the polynomial over `[lo, hi]`, from its endpoint values and
/// interior critical points.
pub(crate) fn range_on(coeffs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut min = horner(coeffs, lo).min(horner(coeffs, hi));
    let mut max = horner(coeffs, lo).max(horner(coeffs, hi));
    for r in roots_in(&derivative(coeffs), lo, hi) {
        let v = horner(coeffs, r);
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}

/// Power-basis coefficients (in the local variable `t`) of the unique
/// polynomial of degree `< ts.len()` through the points `(ts[i], ys[i])`.
pub(crate) fn interpolate(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = ts.len();
    // Newton divided differences, then expand into the power basis.
    let mut dd = ys.to_vec();
    for level in 1..n {
        for i in (level..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (ts[i] - ts[i - level]);
        }
    }
    let mut coeffs = vec![0.0; n];
    for i in (0..n).rev() {
        // coeffs <- coeffs * (t - ts[i]) + dd[i]
        let mut next = vec![0.0; n];
        for m in 0..n {
            if coeffs[m] != 0.0 {
                if m + 1 < n {
                    next[m + 1] += coeffs[m];
                }
                next[m] -= coeffs[m] * ts[i];
            }
        }
        next[0] += dd[i];
        coeffs = next;
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_cubic() {
        // (t - 0.2)(t - 0.5)(t + 0.7)
        let c = interpolate(
            &[0.0, 1.0, 2.0, 3.0],
            &[0.0, 1.0, 2.0, 3.0].map(|t: f64| (t - 0.2) * (t - 0.5) * (t + 0.7)),
        );
        let r = roots_in(&c, -1.0, 1.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-0.7, 0.2, 0.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn range_of_quadratic() {
        let (lo, hi) = range_on(&[0.0, 0.0, 1.0], -1.0, 2.0);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 4.0);
    }

    #[test]
    fn interpolation_recovers_coefficients() {
        let want = [1.5, -2.0, 0.25, 3.0];
        let ts = [0.0, 0.3, 0.7, 1.0];
        let ys: Vec<f64> = ts.iter().map(|&t| horner(&want, t)).collect();
        let got = interpolate(&ts, &ys);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
