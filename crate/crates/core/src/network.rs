//! Layered KAN model: `f(x) = Φ_K(... Φ_1(x))` where output `j` of layer `i`
//! is `outer_j( sum_k w_jk * ψ_jk(z_k) )`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unit::UnivariateUnit;

/// Position of a unit inside its layer node: an inner unit on input `k`, or
/// the optional outer unit applied to the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitSlot {
    Inner(usize),
    Outer,
}

/// Coordinates `(layer, output, slot)` of a unit, all zero-based.
///
/// The derived ordering is the unit traversal order used everywhere
/// (layer, then output node, then inner units by input, then the outer unit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub layer: usize,
    pub output: usize,
    pub slot: UnitSlot,
}

impl UnitId {
    pub fn inner(layer: usize, output: usize, input: usize) -> Self {
        Self {
            layer,
            output,
            slot: UnitSlot::Inner(input),
        }
    }

    pub fn outer(layer: usize, output: usize) -> Self {
        Self {
            layer,
            output,
            slot: UnitSlot::Outer,
        }
    }

    /// One-based `(i, j, k)` with `k = 0` for the outer unit, matching the
    /// usual `ψ^(i)_{j,k}` indexing.
    pub fn coordinates(&self) -> (usize, usize, usize) {
        let k = match self.slot {
            UnitSlot::Inner(k) => k + 1,
            UnitSlot::Outer => 0,
        };
        (self.layer + 1, self.output + 1, k)
    }

    /// Stable `i_j_k` key used in file formats and variable names.
    pub fn key(&self) -> String {
        let (i, j, k) = self.coordinates();
        format!("{i}_{j}_{k}")
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let mut it = key.split('_').map(str::parse::<usize>);
        let (i, j, k) = (it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
        if it.next().is_some() || i == 0 || j == 0 {
            return None;
        }
        Some(if k == 0 {
            Self::outer(i - 1, j - 1)
        } else {
            Self::inner(i - 1, j - 1, k - 1)
        })
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (i, j, k) = self.coordinates();
        write!(f, "ψ({i},{j},{k})")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub weight: f64,
    pub unit: UnivariateUnit,
}

impl Edge {
    pub fn new(unit: UnivariateUnit) -> Self {
        Self { weight: 1.0, unit }
    }

    pub fn weighted(weight: f64, unit: UnivariateUnit) -> Self {
        Self { weight, unit }
    }
}

/// One output of a layer: a weighted sum over all inputs, optionally passed
/// through an outer unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub outer: Option<UnivariateUnit>,
    pub inputs: Vec<Edge>,
}

impl Node {
    pub fn new(inputs: Vec<Edge>) -> Self {
        Self {
            outer: None,
            inputs,
        }
    }

    pub fn with_outer(mut self, outer: UnivariateUnit) -> Self {
        self.outer = Some(outer);
        self
    }

    pub fn sum(&self, z: &[f64]) -> f64 {
        self.inputs
            .iter()
            .zip(z)
            .map(|(e, &zk)| e.weight * e.unit.eval(zk))
            .sum()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let s = self.sum(z);
        match &self.outer {
            Some(u) => u.eval(s),
            None => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub outputs: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    layer_widths: Vec<usize>,
    layers: Vec<Layer>,
}

impl KanNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let first = layers[0]
            .outputs
            .first()
            .map(|n| n.inputs.len())
            .ok_or_else(|| Error::InvalidArgument("layer 1 has no outputs".into()))?;
        let mut widths = vec![first];
        for (i, layer) in layers.iter().enumerate() {
            let n_in = widths[i];
            if n_in == 0 {
                return Err(Error::InvalidArgument(format!("layer {} has no inputs", i + 1)));
            }
            if layer.outputs.is_empty() {
                return Err(Error::InvalidArgument(format!("layer {} has no outputs", i + 1)));
            }
            for (j, node) in layer.outputs.iter().enumerate() {
                if node.inputs.len() != n_in {
                    return Err(Error::InvalidArgument(format!(
                        "layer {} output {} has {} inputs, expected {n_in}",
                        i + 1,
                        j + 1,
                        node.inputs.len()
                    )));
                }
                if let Some(k) = node.inputs.iter().position(|e| !e.weight.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "layer {} output {} edge {} has a non-finite weight",
                        i + 1,
                        j + 1,
                        k + 1
                    )));
                }
            }
            widths.push(layer.outputs.len());
        }
        Ok(Self {
            layer_widths: widths,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `n_1 ... n_{K+1}`.
    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("non-empty widths")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn unit(&self, id: UnitId) -> Option<&UnivariateUnit> {
        let node = self.layers.get(id.layer)?.outputs.get(id.output)?;
        match id.slot {
            UnitSlot::Inner(k) => node.inputs.get(k).map(|e| &e.unit),
            UnitSlot::Outer => node.outer.as_ref(),
        }
    }

    /// Weight of the edge carrying an inner unit into its sum (1 for outer units).
    pub fn edge_weight(&self, id: UnitId) -> f64 {
        match id.slot {
            UnitSlot::Inner(k) => self.layers[id.layer].outputs[id.output].inputs[k].weight,
            UnitSlot::Outer => 1.0,
        }
    }

    /// All units in traversal order.
    pub fn units(&self) -> impl Iterator<Item = (UnitId, &UnivariateUnit)> + '_ {
        self.layers.iter().enumerate().flat_map(|(i, layer)| {
            layer.outputs.iter().enumerate().flat_map(move |(j, node)| {
                node.inputs
                    .iter()
                    .enumerate()
                    .map(move |(k, e)| (UnitId::inner(i, j, k), &e.unit))
                    .chain(node.outer.iter().map(move |u| (UnitId::outer(i, j), u)))
            })
        })
    }

    pub fn unit_count(&self) -> usize {
        self.units().count()
    }

    pub fn param_count(&self) -> usize {
        self.units().map(|(_, u)| u.param_count()).sum::<usize>()
            + self
                .layers
                .iter()
                .flat_map(|l| &l.outputs)
                .map(|n| n.inputs.len())
                .sum::<usize>()
    }

    /// Exact forward evaluation.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.eval_with(x, |_, u, z| u.eval(z)))
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward evaluation with every unit replaced by `apply(id, unit, z)`.
    pub fn eval_with<F>(&self, x: &[f64], mut apply: F) -> Vec<f64>
    where
        F: FnMut(UnitId, &UnivariateUnit, f64) -> f64,
    {
        let mut z = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            z = layer
                .outputs
                .iter()
                .enumerate()
                .map(|(j, node)| {
                    let s: f64 = node
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(k, e)| e.weight * apply(UnitId::inner(i, j, k), &e.unit, z[k]))
                        .sum();
                    match &node.outer {
                        Some(u) => apply(UnitId::outer(i, j), u, s),
                        None => s,
                    }
                })
                .collect();
        }
        z
    }
}

/// Axis-aligned input box `[lower_d, upper_d]` per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument(
                "input box needs equal, non-zero numbers of lower and upper bounds".into(),
            ));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::InvalidArgument(format!(
                    "input box dimension {d}: need finite lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `l_inf` ball of radius `r` around `center`.
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        if radius.is_nan() || radius < 0.0 {
            return Err(Error::InvalidArgument(format!("radius must be >= 0, got {radius}")));
        }
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `max(|l_d|, |u_d|)`.
    pub fn magnitude(&self, d: usize) -> f64 {
        self.lower[d].abs().max(self.upper[d].abs())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v >= l && v <= u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> KanNetwork {
        let unit = UnivariateUnit::affine(1.0, 1.0, 0.0).unwrap();
        KanNetwork::new(vec![Layer {
            outputs: vec![Node::new(vec![Edge::new(unit)])],
        }])
        .unwrap()
    }

    #[test]
    fn identity_unit_evaluates() {
        let net = identity_net();
        assert_eq!(net.eval(&[0.5]).unwrap(), vec![0.5]);
        assert_eq!(net.eval(&[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = identity_net();
        assert!(matches!(
            net.eval(&[0.1, 0.2]),
            Err(Error::InputShape {
                expected: 1,
                actual: 2
            })
        ));
    }

    #[test]
    fn two_layer_square_net() {
        // ψ(z) = z² on [-2, 2]; layer 1: 2 -> 2, layer 2: 2 -> 1
        let sq = || {
            UnivariateUnit::piecewise_polynomial(2.0, vec![-2.0, 2.0], vec![vec![4.0, -4.0, 1.0]])
                .unwrap()
        };
        let l1 = Layer {
            outputs: (0..2)
                .map(|_| Node::new(vec![Edge::new(sq()), Edge::new(sq())]))
                .collect(),
        };
        let l2 = Layer {
            outputs: vec![Node::new(vec![Edge::new(sq()), Edge::new(sq())])],
        };
        let net = KanNetwork::new(vec![l1, l2]).unwrap();
        // layer-1 sums are 1 + 1 = 2, output is 2² + 2² = 8
        let y = net.eval(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 8.0).abs() < 1e-12);
        assert_eq!(net.layer_widths(), &[2, 2, 1]);
        assert_eq!(net.unit_count(), 6);
    }

    #[test]
    fn unit_keys_round_trip() {
        for id in [UnitId::inner(0, 2, 1), UnitId::outer(3, 0)] {
            assert_eq!(UnitId::parse_key(&id.key()), Some(id));
        }
        assert_eq!(UnitId::inner(0, 0, 0).key(), "1_1_1");
        assert_eq!(UnitId::outer(1, 0).key(), "2_1_0");
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(InputBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(InputBox::ball(&[0.0], 0.5).unwrap().contains(&[0.5]));
    }
}
