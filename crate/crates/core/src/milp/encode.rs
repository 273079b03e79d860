//! Big-M encoding of an abstracted network over an input box.

use std::collections::BTreeMap;

use super::{Direction, MilpModel, Sense, VarKind};
use crate::error::{Error, Result};
use crate::network::{InputBox, KanNetwork, UnitId};
use crate::pwa::PwaFunction;
use crate::unit::UnivariateUnit;

/// Abstraction of one unit: its interpolant and the certified error.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAbstraction {
    pub pwa: PwaFunction,
    pub error: f64,
}

/// Coefficient used to relax the output band of an inactive piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BigMRule {
    /// `M_y + |a| M_z + |b|`, large enough for every feasible `(z, y)`.
    #[default]
    Derived,
    /// `2 M_y`. Can cut off feasible points when a piece's extension leaves
    /// the output band, so results under this rule are not guaranteed sound.
    Paper,
}

impl BigMRule {
    pub fn as_str(self) -> &'static str {
        match self {
            BigMRule::Derived => "derived",
            BigMRule::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub big_m: BigMRule,
    /// Widen each piece's output band by the unit's error.
    pub error_slack: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            big_m: BigMRule::Derived,
            error_slack: true,
        }
    }
}

/// Magnitude constants and interval bounds for one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBounds {
    pub m_z: f64,
    pub m_y: f64,
    pub z_range: (f64, f64),
    pub y_range: (f64, f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MConstants {
    pub units: BTreeMap<UnitId, UnitBounds>,
    /// Per sum node `(layer, output)`: magnitude bound and interval.
    pub sums: BTreeMap<(usize, usize), (f64, (f64, f64))>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitVars {
    pub z: usize,
    pub y: usize,
    /// Indicators: `w[0]` for `z ≤ -L`, `w[p + 1]` for piece `p`, last for `z ≥ L`.
    pub w: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkVars {
    pub inputs: Vec<usize>,
    pub units: BTreeMap<UnitId, UnitVars>,
    pub sums: BTreeMap<(usize, usize), usize>,
    /// Variable holding each encoded network output.
    pub outputs: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone)]
pub struct Encoding {
    pub model: MilpModel,
    pub vars: NetworkVars,
    pub m: MConstants,
    /// Second copy and the difference variable, for two-copy encodings.
    pub perturbed: Option<(NetworkVars, MConstants, usize)>,
    pub rule: BigMRule,
}

/// Which nodes lie upstream of the requested outputs.
fn cone(net: &KanNetwork, outputs: &[usize]) -> Vec<Vec<bool>> {
    let widths = net.layer_widths();
    let mut needed: Vec<Vec<bool>> = widths[1..].iter().map(|&w| vec![false; w]).collect();
    for &o in outputs {
        needed[net.num_layers() - 1][o] = true;
    }
    for i in (1..net.num_layers()).rev() {
        for j in 0..widths[i + 1] {
            if needed[i][j] {
                needed[i - 1].iter_mut().for_each(|n| *n = true);
                break;
            }
        }
    }
    needed
}

fn pwa_range(pwa: &PwaFunction, lo: f64, hi: f64) -> (f64, f64) {
    let mut min = pwa.eval(lo).min(pwa.eval(hi));
    let mut max = pwa.eval(lo).max(pwa.eval(hi));
    for (&b, &v) in pwa.breakpoints().iter().zip(pwa.values()) {
        if b >= lo && b <= hi {
            min = min.min(v);
            max = max.max(v);
        }
    }
    let l = pwa.limit();
    if lo < -l || hi > l {
        min = min.min(0.0);
        max = max.max(0.0);
    }
    (min, max)
}

fn abstraction(abstractions: &BTreeMap<UnitId, UnitAbstraction>, id: UnitId) -> Result<&UnitAbstraction> {
    abstractions.get(&id).ok_or(Error::MissingAbstraction(id))
}

fn unit_bounds(a: &UnitAbstraction, slack: f64, m_z: f64, z_range: (f64, f64)) -> UnitBounds {
    let m_hat = a.pwa.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m_y = m_hat + slack;
    let (lo, hi) = pwa_range(&a.pwa, z_range.0, z_range.1);
    UnitBounds {
        m_z,
        m_y,
        z_range,
        y_range: ((lo - slack).max(-m_y), (hi + slack).min(m_y)),
    }
}

fn constants_for(
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    input_ranges: &[(f64, f64)],
    needed: &[Vec<bool>],
    options: EncodeOptions,
) -> Result<MConstants> {
    let slack = |a: &UnitAbstraction| if options.error_slack { a.error } else { 0.0 };
    let mut m = MConstants::default();
    // magnitude and interval of each node value feeding the current layer
    let mut feed: Vec<(f64, (f64, f64))> = input_ranges
        .iter()
        .map(|&(l, u)| (l.abs().max(u.abs()), (l, u)))
        .collect();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut next = vec![(0.0, (0.0, 0.0)); layer.outputs.len()];
        for (j, node) in layer.outputs.iter().enumerate() {
            if !needed[i][j] {
                continue;
            }
            let (mut mag, mut lo, mut hi) = (0.0, 0.0, 0.0);
            for (k, edge) in node.inputs.iter().enumerate() {
                let id = UnitId::inner(i, j, k);
                let a = abstraction(abstractions, id)?;
                let b = unit_bounds(a, slack(a), feed[k].0, feed[k].1);
                let w = edge.weight;
                mag += w.abs() * b.m_y;
                let (p, q) = (w * b.y_range.0, w * b.y_range.1);
                lo += p.min(q);
                hi += p.max(q);
                m.units.insert(id, b);
            }
            let range = (lo.max(-mag), hi.min(mag));
            m.sums.insert((i, j), (mag, range));
            next[j] = match &node.outer {
                Some(_) => {
                    let id = UnitId::outer(i, j);
                    let a = abstraction(abstractions, id)?;
                    let b = unit_bounds(a, slack(a), mag, range);
                    m.units.insert(id, b);
                    (b.m_y, b.y_range)
                }
                None => (mag, range),
            };
        }
        feed = next;
    }
    Ok(m)
}

/// Magnitude constants for every unit of the network over `input_box`.
pub fn estimate_m_constants(
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    input_box: &InputBox,
) -> Result<MConstants> {
    check_box(net, input_box)?;
    let outputs: Vec<usize> = (0..net.output_dim()).collect();
    constants_for(
        net,
        abstractions,
        &box_ranges(input_box),
        &cone(net, &outputs),
        EncodeOptions::default(),
    )
}

fn check_box(net: &KanNetwork, input_box: &InputBox) -> Result<()> {
    if input_box.dim() != net.input_dim() {
        return Err(Error::InputShape {
            expected: net.input_dim(),
            actual: input_box.dim(),
        });
    }
    Ok(())
}

fn box_ranges(input_box: &InputBox) -> Vec<(f64, f64)> {
    input_box
        .lower()
        .iter()
        .zip(input_box.upper())
        .map(|(&l, &u)| (l, u))
        .collect()
}

fn unit_name(prefix: &str, base: &str, id: UnitId) -> String {
    let (i, j, k) = id.coordinates();
    format!("{prefix}{base}_{i}_{j}_{k}")
}

/// Adds one copy of the network to `model`, reading its inputs from `inputs`.
#[allow(clippy::too_many_arguments)]
fn encode_copy(
    model: &mut MilpModel,
    prefix: &str,
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    inputs: Vec<usize>,
    m: &MConstants,
    needed: &[Vec<bool>],
    outputs: &[usize],
    options: EncodeOptions,
) -> Result<NetworkVars> {
    let mut vars = NetworkVars {
        inputs: inputs.clone(),
        ..Default::default()
    };
    let mut feed = inputs;
    for (i, layer) in net.layers().iter().enumerate() {
        let mut next = vec![usize::MAX; layer.outputs.len()];
        for (j, node) in layer.outputs.iter().enumerate() {
            if !needed[i][j] {
                continue;
            }
            let mut sum_terms = Vec::with_capacity(node.inputs.len() + 1);
            for (k, edge) in node.inputs.iter().enumerate() {
                let id = UnitId::inner(i, j, k);
                let uv = encode_unit(model, prefix, id, abstraction(abstractions, id)?, &m.units[&id], options);
                model.add_constraint(
                    unit_name(prefix, "link", id),
                    vec![(uv.z, 1.0), (feed[k], -1.0)],
                    Sense::Eq,
                    0.0,
                );
                sum_terms.push((uv.y, -edge.weight));
                vars.units.insert(id, uv);
            }
            let (mag, (lo, hi)) = m.sums[&(i, j)];
            let s = model.add_var(format!("{prefix}s_{}_{}", i + 1, j + 1), lo, hi, VarKind::Continuous);
            debug_assert!(lo >= -mag && hi <= mag);
            sum_terms.insert(0, (s, 1.0));
            model.add_constraint(format!("{prefix}sum_{}_{}", i + 1, j + 1), sum_terms, Sense::Eq, 0.0);
            vars.sums.insert((i, j), s);
            next[j] = match &node.outer {
                Some(_) => {
                    let id = UnitId::outer(i, j);
                    let uv = encode_unit(model, prefix, id, abstraction(abstractions, id)?, &m.units[&id], options);
                    model.add_constraint(
                        unit_name(prefix, "link", id),
                        vec![(uv.z, 1.0), (s, -1.0)],
                        Sense::Eq,
                        0.0,
                    );
                    let y = uv.y;
                    vars.units.insert(id, uv);
                    y
                }
                None => s,
            };
        }
        feed = next;
    }
    for &o in outputs {
        vars.outputs.insert(o, feed[o]);
    }
    Ok(vars)
}

fn encode_unit(
    model: &mut MilpModel,
    prefix: &str,
    id: UnitId,
    a: &UnitAbstraction,
    b: &UnitBounds,
    options: EncodeOptions,
) -> UnitVars {
    let limit = a.pwa.limit();
    let e = if options.error_slack { a.error } else { 0.0 };
    let (m_z, m_y) = (b.m_z, b.m_y);
    let z = model.add_var(unit_name(prefix, "z", id), b.z_range.0, b.z_range.1, VarKind::Continuous);
    let y = model.add_var(unit_name(prefix, "y", id), b.y_range.0, b.y_range.1, VarKind::Continuous);
    let segments = a.pwa.segments();
    let count = segments.len() + 2;
    let (zl, zh) = b.z_range;
    let w: Vec<usize> = (0..count)
        .map(|p| {
            // indicators whose case cannot occur inside the z interval are fixed to 0
            let possible = if p == 0 {
                zl < -limit
            } else if p == count - 1 {
                zh > limit
            } else {
                let s = &segments[p - 1];
                s.lo <= zh && s.hi >= zl
            };
            let name = format!("{}_{p}", unit_name(prefix, "w", id));
            model.add_var(name, 0.0, if possible { 1.0 } else { 0.0 }, VarKind::Binary)
        })
        .collect();
    model.add_constraint(
        unit_name(prefix, "one", id),
        w.iter().map(|&v| (v, 1.0)).collect(),
        Sense::Eq,
        1.0,
    );
    let cname = |tag: &str, p: usize| format!("{}_{p}", unit_name(prefix, tag, id));

    // z ≤ -L and output 0
    let (w_lo, w_hi) = (w[0], w[count - 1]);
    model.add_constraint(cname("zc", 0), vec![(z, 1.0), (w_lo, limit + m_z)], Sense::Le, m_z);
    model.add_constraint(cname("yl", 0), vec![(y, 1.0), (w_lo, -m_y)], Sense::Ge, -m_y);
    model.add_constraint(cname("yu", 0), vec![(y, 1.0), (w_lo, m_y)], Sense::Le, m_y);
    for (p, s) in segments.iter().enumerate() {
        let wp = w[p + 1];
        let q = p + 1;
        model.add_constraint(cname("zl", q), vec![(z, 1.0), (wp, -(s.lo + m_z))], Sense::Ge, -m_z);
        model.add_constraint(cname("zu", q), vec![(z, 1.0), (wp, -(s.hi - m_z))], Sense::Le, m_z);
        let big = match options.big_m {
            BigMRule::Derived => m_y + s.slope.abs() * m_z + s.intercept.abs(),
            BigMRule::Paper => 2.0 * m_y,
        };
        model.add_constraint(
            cname("yl", q),
            vec![(y, 1.0), (z, -s.slope), (wp, -big)],
            Sense::Ge,
            s.intercept - e - big,
        );
        model.add_constraint(
            cname("yu", q),
            vec![(y, 1.0), (z, -s.slope), (wp, big)],
            Sense::Le,
            s.intercept + e + big,
        );
    }
    // z ≥ L and output 0
    let q = count - 1;
    model.add_constraint(cname("zc", q), vec![(z, 1.0), (w_hi, -(limit + m_z))], Sense::Ge, -m_z);
    model.add_constraint(cname("yl", q), vec![(y, 1.0), (w_hi, -m_y)], Sense::Ge, -m_y);
    model.add_constraint(cname("yu", q), vec![(y, 1.0), (w_hi, m_y)], Sense::Le, m_y);
    model.groups.push(w.clone());
    UnitVars { z, y, w }
}

/// Encodes the cone of `outputs` over `input_box`. The objective is left
/// empty; set it with [`MilpModel::set_objective`] or [`Encoding::objective_for`].
pub fn encode(
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    input_box: &InputBox,
    outputs: &[usize],
    options: EncodeOptions,
) -> Result<Encoding> {
    check_box(net, input_box)?;
    check_outputs(net, outputs)?;
    let needed = cone(net, outputs);
    let ranges = box_ranges(input_box);
    let m = constants_for(net, abstractions, &ranges, &needed, options)?;
    let mut model = MilpModel::new();
    let inputs: Vec<usize> = ranges
        .iter()
        .enumerate()
        .map(|(d, &(l, u))| model.add_var(format!("x_{}", d + 1), l, u, VarKind::Continuous))
        .collect();
    let vars = encode_copy(&mut model, "", net, abstractions, inputs, &m, &needed, outputs, options)?;
    if let Some(&o) = outputs.first() {
        model.set_objective(Direction::Maximize, vec![(vars.outputs[&o], 1.0)]);
    }
    Ok(Encoding {
        model,
        vars,
        m,
        perturbed: None,
        rule: options.big_m,
    })
}

fn check_outputs(net: &KanNetwork, outputs: &[usize]) -> Result<()> {
    if let Some(&o) = outputs.iter().find(|&&o| o >= net.output_dim()) {
        return Err(Error::InvalidArgument(format!(
            "output {o} out of range for a network with {} outputs",
            net.output_dim()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::InvalidArgument("no output selected".into()));
    }
    Ok(())
}

/// Two copies of the network sharing every input except `feature`, which the
/// second copy may move by up to `radius`. The difference
/// `t = y - y'` of the selected output is variable `perturbed.2`.
pub fn encode_pair(
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    input_box: &InputBox,
    output: usize,
    feature: usize,
    radius: f64,
    options: EncodeOptions,
) -> Result<Encoding> {
    check_box(net, input_box)?;
    check_outputs(net, &[output])?;
    if feature >= net.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "feature {feature} out of range for {} inputs",
            net.input_dim()
        )));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation must be >= 0, got {radius}")));
    }
    let needed = cone(net, &[output]);
    let ranges = box_ranges(input_box);
    let mut shifted = ranges.clone();
    shifted[feature] = (ranges[feature].0 - radius, ranges[feature].1 + radius);
    let m = constants_for(net, abstractions, &ranges, &needed, options)?;
    let m2 = constants_for(net, abstractions, &shifted, &needed, options)?;
    let mut model = MilpModel::new();
    let inputs: Vec<usize> = ranges
        .iter()
        .enumerate()
        .map(|(d, &(l, u))| model.add_var(format!("x_{}", d + 1), l, u, VarKind::Continuous))
        .collect();
    let (l, u) = shifted[feature];
    let moved = model.add_var(format!("p_x_{}", feature + 1), l, u, VarKind::Continuous);
    model.add_constraint("p_dev_lo", vec![(moved, 1.0), (inputs[feature], -1.0)], Sense::Ge, -radius);
    model.add_constraint("p_dev_hi", vec![(moved, 1.0), (inputs[feature], -1.0)], Sense::Le, radius);
    let mut inputs2 = inputs.clone();
    inputs2[feature] = moved;
    let a = encode_copy(&mut model, "", net, abstractions, inputs, &m, &needed, &[output], options)?;
    let b = encode_copy(&mut model, "p_", net, abstractions, inputs2, &m2, &needed, &[output], options)?;
    let (ya, yb) = (a.outputs[&output], b.outputs[&output]);
    let span = |v: usize| {
        let var = &model.variables[v];
        (var.lower, var.upper)
    };
    let ((al, au), (bl, bu)) = (span(ya), span(yb));
    let t = model.add_var("t", al - bu, au - bl, VarKind::Continuous);
    model.add_constraint("diff", vec![(t, 1.0), (ya, -1.0), (yb, 1.0)], Sense::Eq, 0.0);
    model.set_objective(Direction::Maximize, vec![(t, 1.0)]);
    Ok(Encoding {
        model,
        vars: a,
        m,
        perturbed: Some((b, m2, t)),
        rule: options.big_m,
    })
}

impl Encoding {
    /// The model with the objective set to one encoded output.
    pub fn objective_for(&self, output: usize, direction: Direction) -> Result<MilpModel> {
        let v = *self
            .vars
            .outputs
            .get(&output)
            .ok_or_else(|| Error::InvalidArgument(format!("output {output} is not encoded")))?;
        Ok(self.model.with_objective(direction, vec![(v, 1.0)]))
    }

    /// Full assignment for input `x`: every unit takes its active piece and
    /// outputs the abstraction's value, or the unit's own value when `exact`.
    pub fn replay(
        &self,
        net: &KanNetwork,
        abstractions: &BTreeMap<UnitId, UnitAbstraction>,
        x: &[f64],
        exact: bool,
    ) -> Result<Vec<f64>> {
        net.check_input(x)?;
        let mut out = vec![0.0; self.model.variables.len()];
        replay_copy(&self.vars, net, abstractions, x, exact, &mut out)?;
        Ok(out)
    }

    /// Assignment for a two-copy encoding with inputs `x` and `x_moved`.
    pub fn replay_pair(
        &self,
        net: &KanNetwork,
        abstractions: &BTreeMap<UnitId, UnitAbstraction>,
        x: &[f64],
        x_moved: &[f64],
        exact: bool,
    ) -> Result<Vec<f64>> {
        let (b, _, t) = self
            .perturbed
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("not a two-copy encoding".into()))?;
        net.check_input(x)?;
        net.check_input(x_moved)?;
        let mut out = vec![0.0; self.model.variables.len()];
        replay_copy(&self.vars, net, abstractions, x, exact, &mut out)?;
        replay_copy(b, net, abstractions, x_moved, exact, &mut out)?;
        let o = *self.vars.outputs.keys().next().expect("one output");
        out[*t] = out[self.vars.outputs[&o]] - out[b.outputs[&o]];
        Ok(out)
    }
}

fn apply_unit(
    uv: &UnitVars,
    unit: &UnivariateUnit,
    a: &UnitAbstraction,
    z: f64,
    exact: bool,
    out: &mut [f64],
) -> f64 {
    let limit = a.pwa.limit();
    let y = if exact { unit.eval(z) } else { a.pwa.eval(z) };
    let active = if z < -limit {
        0
    } else if z > limit {
        uv.w.len() - 1
    } else {
        let bps = a.pwa.breakpoints();
        1 + bps[1..bps.len() - 1].partition_point(|&b| b <= z)
    };
    out[uv.z] = z;
    out[uv.y] = y;
    for (p, &w) in uv.w.iter().enumerate() {
        out[w] = if p == active { 1.0 } else { 0.0 };
    }
    y
}

fn replay_copy(
    vars: &NetworkVars,
    net: &KanNetwork,
    abstractions: &BTreeMap<UnitId, UnitAbstraction>,
    x: &[f64],
    exact: bool,
    out: &mut [f64],
) -> Result<()> {
    for (&v, &xi) in vars.inputs.iter().zip(x) {
        out[v] = xi;
    }
    let mut feed = x.to_vec();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut next = vec![0.0; layer.outputs.len()];
        for (j, node) in layer.outputs.iter().enumerate() {
            let Some(&s_var) = vars.sums.get(&(i, j)) else {
                continue;
            };
            let mut s = 0.0;
            for (k, edge) in node.inputs.iter().enumerate() {
                let id = UnitId::inner(i, j, k);
                let y = apply_unit(
                    &vars.units[&id],
                    &edge.unit,
                    abstraction(abstractions, id)?,
                    feed[k],
                    exact,
                    out,
                );
                s += edge.weight * y;
            }
            out[s_var] = s;
            next[j] = match &node.outer {
                Some(unit) => {
                    let id = UnitId::outer(i, j);
                    apply_unit(&vars.units[&id], unit, abstraction(abstractions, id)?, s, exact, out)
                }
                None => s,
            };
        }
        feed = next;
    }
    Ok(())
}
