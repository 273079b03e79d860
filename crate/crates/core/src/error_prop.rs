//! Propagation of per-unit abstraction errors to the network outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{KanNetwork, UnitId};
use crate::unit::UnivariateUnit;

/// Lipschitz constant and abstraction error of a single unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitErrorProfile {
    pub lipschitz: f64,
    pub pwa_error: f64,
}

pub type ErrorProfiles = BTreeMap<UnitId, UnitErrorProfile>;

/// Upper bound on `|dψ/dz|` over `[-L, L]`, including the enclosure tolerance.
pub fn unit_lipschitz(unit: &UnivariateUnit) -> f64 {
    unit.derivative_max()
}

/// Lipschitz constants of every unit, with zero errors.
pub fn lipschitz_profiles(net: &KanNetwork) -> ErrorProfiles {
    net.units()
        .map(|(id, u)| {
            (
                id,
                UnitErrorProfile {
                    lipschitz: unit_lipschitz(u),
                    pwa_error: 0.0,
                },
            )
        })
        .collect()
}

/// Per-unit, per-output amplification factors of an abstraction error.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeightMap {
    outputs: usize,
    weights: BTreeMap<UnitId, Vec<f64>>,
}

impl PathWeightMap {
    pub fn output_dim(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self, id: UnitId, output: usize) -> f64 {
        self.weights.get(&id).map_or(0.0, |w| w[output])
    }

    pub fn iter(&self) -> impl Iterator<Item = (UnitId, &[f64])> + '_ {
        self.weights.iter().map(|(id, w)| (*id, w.as_slice()))
    }

    /// Writes `.weights.json`: `{"outputs": n, "units": {"i_j_k": {"lipschitz": λ, "weights": [...]}}}`.
    pub fn write_json(&self, profiles: &ErrorProfiles, path: &Path) -> Result<()> {
        let units: serde_json::Map<String, serde_json::Value> = self
            .weights
            .iter()
            .map(|(id, w)| {
                let lip = profiles.get(id).map(|p| p.lipschitz);
                (id.key(), serde_json::json!({ "lipschitz": lip, "weights": w }))
            })
            .collect();
        let doc = serde_json::json!({ "outputs": self.outputs, "units": units });
        let bytes = serde_json::to_vec_pretty(&doc)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn lipschitz_of(profiles: &ErrorProfiles, id: UnitId) -> Result<f64> {
    profiles
        .get(&id)
        .map(|p| p.lipschitz)
        .ok_or(Error::MissingAbstraction(id))
}

/// Path weights by one backward pass over the layers.
///
/// `sens[j]` holds, for each output, the factor by which a perturbation of
/// node `j`'s value in the current layer can reach that output.
pub fn path_weights(net: &KanNetwork, profiles: &ErrorProfiles) -> Result<PathWeightMap> {
    let outputs = net.output_dim();
    let widths = net.layer_widths();
    let mut weights = BTreeMap::new();
    let mut sens: Vec<Vec<f64>> = (0..outputs)
        .map(|j| (0..outputs).map(|o| if o == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let mut upstream = vec![vec![0.0; outputs]; widths[i]];
        for (j, node) in layer.outputs.iter().enumerate() {
            let sum_sens: Vec<f64> = match &node.outer {
                Some(_) => {
                    let id = UnitId::outer(i, j);
                    let lip = lipschitz_of(profiles, id)?;
                    weights.insert(id, sens[j].clone());
                    sens[j].iter().map(|g| g * lip).collect()
                }
                None => sens[j].clone(),
            };
            for (k, edge) in node.inputs.iter().enumerate() {
                let id = UnitId::inner(i, j, k);
                let lip = lipschitz_of(profiles, id)?;
                let w = edge.weight.abs();
                weights.insert(id, sum_sens.iter().map(|g| g * w).collect());
                for (acc, g) in upstream[k].iter_mut().zip(&sum_sens) {
                    *acc += w * lip * g;
                }
            }
        }
        sens = upstream;
    }
    Ok(PathWeightMap { outputs, weights })
}

/// `Σ W · e` over all units for one output.
pub fn global_error_bound(map: &PathWeightMap, profiles: &ErrorProfiles, output: usize) -> f64 {
    map.iter()
        .map(|(id, w)| w[output] * profiles.get(&id).map_or(0.0, |p| p.pwa_error))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Edge, Layer, Node};

    fn affine(slope: f64) -> UnivariateUnit {
        UnivariateUnit::affine(4.0, slope, 0.0).unwrap()
    }

    #[test]
    fn lipschitz_of_affine_and_square() {
        assert!((unit_lipschitz(&affine(3.0)) - 3.0).abs() < 1e-8);
        let sq = UnivariateUnit::piecewise_polynomial(2.0, vec![-2.0, 2.0], vec![vec![4.0, -4.0, 1.0]]).unwrap();
        assert!(unit_lipschitz(&sq) >= 4.0);
    }

    #[test]
    fn chain_weights() {
        // ψ_a -> sum -> ψ_b -> output
        let net = KanNetwork::new(vec![
            Layer { outputs: vec![Node::new(vec![Edge::new(affine(2.0))])] },
            Layer { outputs: vec![Node::new(vec![Edge::new(affine(-5.0))])] },
        ])
        .unwrap();
        let profiles = lipschitz_profiles(&net);
        let map = path_weights(&net, &profiles).unwrap();
        assert!((map.weight(UnitId::inner(0, 0, 0), 0) - 5.0).abs() < 1e-8);
        assert_eq!(map.weight(UnitId::inner(1, 0, 0), 0), 1.0);
    }

    #[test]
    fn parallel_paths_add() {
        // one unit feeding two downstream units that merge at the output
        let net = KanNetwork::new(vec![
            Layer {
                outputs: vec![
                    Node::new(vec![Edge::new(affine(1.0))]),
                    Node::new(vec![Edge::new(affine(1.0))]),
                ],
            },
            Layer {
                outputs: vec![Node::new(vec![Edge::new(affine(2.0)), Edge::new(affine(3.0))])],
            },
        ])
        .unwrap();
        let profiles = lipschitz_profiles(&net);
        let map = path_weights(&net, &profiles).unwrap();
        assert!((map.weight(UnitId::inner(0, 0, 0), 0) - 2.0).abs() < 1e-8);
        assert!((map.weight(UnitId::inner(0, 1, 0), 0) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn outer_unit_scales_inner_weights() {
        let node = Node::new(vec![Edge::weighted(-2.0, affine(1.0))]).with_outer(affine(3.0));
        let net = KanNetwork::new(vec![Layer { outputs: vec![node] }]).unwrap();
        let mut profiles = lipschitz_profiles(&net);
        let map = path_weights(&net, &profiles).unwrap();
        assert_eq!(map.weight(UnitId::outer(0, 0), 0), 1.0);
        assert!((map.weight(UnitId::inner(0, 0, 0), 0) - 6.0).abs() < 1e-7);
        assert_eq!(global_error_bound(&map, &profiles, 0), 0.0);
        profiles.get_mut(&UnitId::outer(0, 0)).unwrap().pwa_error = 0.5;
        assert_eq!(global_error_bound(&map, &profiles, 0), 0.5);
    }

    #[test]
    fn missing_profile_is_an_error() {
        let net = KanNetwork::new(vec![Layer { outputs: vec![Node::new(vec![Edge::new(affine(1.0))])] }]).unwrap();
        assert!(matches!(
            path_weights(&net, &ErrorProfiles::new()),
            Err(Error::MissingAbstraction(_))
        ));
    }
}
