//! The portable `.kan.json` model format.
//!
//! ```text
//! { "version": 1,
//!   "layer_widths": [n1, ..., nK+1],
//!   "layers": [ { "outputs": [ { "outer": Unit | null,
//!                                "inputs": [ { "weight": w, "unit": Unit } ] } ] } ] }
//!
//! Unit = { "kind": "rbf-sum" | "bspline" | "piecewise-polynomial" | "tabulated",
//!          "L": number, "affine_base": [slope, intercept] | null, "params": {...} }
//! ```
//!
//! Output is canonical: keys sorted, floats printed as the shortest decimal
//! that round-trips.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::network::{Edge, KanNetwork, Layer, Node, UnitId};
use crate::unit::{UnitKind, UnitParams, UnivariateUnit};

pub const FORMAT_VERSION: u64 = 1;

pub fn load_model(bytes: &[u8]) -> Result<KanNetwork> {
    let doc: Value =
        serde_json::from_slice(bytes).map_err(|e| Error::parse("$", format!("invalid JSON: {e}")))?;
    network_from_value(&doc)
}

pub fn save_model(net: &KanNetwork) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&network_to_value(net)).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn read_model_file(path: &Path) -> Result<KanNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}

pub fn write_model_file(net: &KanNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, save_model(net)).map_err(|e| Error::io(path, e))
}

pub fn unit_to_value(unit: &UnivariateUnit) -> Value {
    let params = match unit.params() {
        UnitParams::RbfSum {
            centers,
            widths,
            weights,
        } => json!({ "centers": centers, "widths": widths, "weights": weights }),
        UnitParams::Bspline {
            degree,
            knots,
            coefficients,
        } => json!({ "degree": degree, "knots": knots, "coefficients": coefficients }),
        UnitParams::PiecewisePolynomial {
            breakpoints,
            coefficients,
        } => json!({ "breakpoints": breakpoints, "coefficients": coefficients }),
        UnitParams::Tabulated { values } => json!({ "values": values }),
    };
    json!({
        "kind": unit.kind().as_str(),
        "L": unit.limit(),
        "affine_base": unit.affine_base().map(|(s, b)| vec![s, b]),
        "params": params,
    })
}

pub fn network_to_value(net: &KanNetwork) -> Value {
    let layers: Vec<Value> = net
        .layers()
        .iter()
        .map(|layer| {
            let outputs: Vec<Value> = layer
                .outputs
                .iter()
                .map(|node| {
                    let inputs: Vec<Value> = node
                        .inputs
                        .iter()
                        .map(|e| json!({ "weight": e.weight, "unit": unit_to_value(&e.unit) }))
                        .collect();
                    json!({
                        "outer": node.outer.as_ref().map(unit_to_value),
                        "inputs": inputs,
                    })
                })
                .collect();
            json!({ "outputs": outputs })
        })
        .collect();
    json!({
        "version": FORMAT_VERSION,
        "layer_widths": net.layer_widths(),
        "layers": layers,
    })
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::parse(path, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::parse(path, format!("missing field `{key}`")))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| Error::parse(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(Error::parse(path, "number is not finite"));
    }
    Ok(x)
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::parse(path, "expected an array"))
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

pub fn unit_from_value(v: &Value, path: &str, id: Option<UnitId>) -> Result<UnivariateUnit> {
    let who = id.map(|id| format!(" (unit {id})")).unwrap_or_default();
    let obj = object(v, path)?;
    let kind_str = field(obj, "kind", path)?
        .as_str()
        .ok_or_else(|| Error::parse(format!("{path}.kind"), "expected a string"))?;
    let kind = UnitKind::parse(kind_str).ok_or_else(|| {
        Error::parse(format!("{path}.kind"), format!("unknown unit kind `{kind_str}`{who}"))
    })?;
    let limit = number(field(obj, "L", path)?, &format!("{path}.L"))?;
    if limit <= 0.0 {
        return Err(Error::parse(
            format!("{path}.L"),
            format!("domain limit must be > 0, got {limit}{who}"),
        ));
    }
    let pp = format!("{path}.params");
    let params_obj = object(field(obj, "params", path)?, &pp)?;
    let list = |key: &str| -> Result<Vec<f64>> {
        numbers(field(params_obj, key, &pp)?, &format!("{pp}.{key}"))
    };
    let params = match kind {
        UnitKind::RbfSum => UnitParams::RbfSum {
            centers: list("centers")?,
            widths: list("widths")?,
            weights: list("weights")?,
        },
        UnitKind::Bspline => {
            let degree = field(params_obj, "degree", &pp)?
                .as_u64()
                .ok_or_else(|| Error::parse(format!("{pp}.degree"), "expected a non-negative integer"))?;
            UnitParams::Bspline {
                degree: degree as usize,
                knots: list("knots")?,
                coefficients: list("coefficients")?,
            }
        }
        UnitKind::PiecewisePolynomial => {
            let cp = format!("{pp}.coefficients");
            let rows = array(field(params_obj, "coefficients", &pp)?, &cp)?
                .iter()
                .enumerate()
                .map(|(s, row)| numbers(row, &format!("{cp}[{s}]")))
                .collect::<Result<Vec<_>>>()?;
            UnitParams::PiecewisePolynomial {
                breakpoints: list("breakpoints")?,
                coefficients: rows,
            }
        }
        UnitKind::Tabulated => UnitParams::Tabulated {
            values: list("values")?,
        },
    };
    let mut unit = UnivariateUnit::new(params, limit).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::parse(pp.clone(), format!("{m}{who}")),
        other => other,
    })?;
    let ap = format!("{path}.affine_base");
    match obj.get("affine_base") {
        None | Some(Value::Null) => {}
        Some(v) => {
            let pair = numbers(v, &ap)?;
            if pair.len() != 2 {
                return Err(Error::parse(ap, format!("expected [slope, intercept]{who}")));
            }
            unit = unit.with_affine_base(pair[0], pair[1])?;
        }
    }
    Ok(unit)
}

pub fn network_from_value(doc: &Value) -> Result<KanNetwork> {
    let root = object(doc, "$")?;
    let version = field(root, "version", "$")?
        .as_u64()
        .ok_or_else(|| Error::parse("$.version", "expected an integer"))?;
    if version != FORMAT_VERSION {
        return Err(Error::parse("$.version", format!("unsupported version {version}")));
    }
    let widths: Vec<usize> = array(field(root, "layer_widths", "$")?, "$.layer_widths")?
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.as_u64()
                .map(|w| w as usize)
                .ok_or_else(|| Error::parse(format!("$.layer_widths[{i}]"), "expected an integer"))
        })
        .collect::<Result<_>>()?;
    let layer_values = array(field(root, "layers", "$")?, "$.layers")?;
    if widths.len() != layer_values.len() + 1 {
        return Err(Error::parse(
            "$.layer_widths",
            format!(
                "{} widths given for {} layers (need layers + 1)",
                widths.len(),
                layer_values.len()
            ),
        ));
    }
    let mut layers = Vec::with_capacity(layer_values.len());
    for (i, lv) in layer_values.iter().enumerate() {
        let lp = format!("$.layers[{i}]");
        let outputs_v = array(field(object(lv, &lp)?, "outputs", &lp)?, &format!("{lp}.outputs"))?;
        if outputs_v.len() != widths[i + 1] {
            return Err(Error::parse(
                format!("{lp}.outputs"),
                format!("expected {} outputs, found {}", widths[i + 1], outputs_v.len()),
            ));
        }
        let mut outputs = Vec::with_capacity(outputs_v.len());
        for (j, nv) in outputs_v.iter().enumerate() {
            let np = format!("{lp}.outputs[{j}]");
            let node_obj = object(nv, &np)?;
            let inputs_v = array(field(node_obj, "inputs", &np)?, &format!("{np}.inputs"))?;
            if inputs_v.len() != widths[i] {
                return Err(Error::parse(
                    format!("{np}.inputs"),
                    format!("expected {} inputs, found {}", widths[i], inputs_v.len()),
                ));
            }
            let mut inputs = Vec::with_capacity(inputs_v.len());
            for (k, ev) in inputs_v.iter().enumerate() {
                let ep = format!("{np}.inputs[{k}]");
                let edge_obj = object(ev, &ep)?;
                let weight = match edge_obj.get("weight") {
                    None => 1.0,
                    Some(w) => number(w, &format!("{ep}.weight"))?,
                };
                let unit = unit_from_value(
                    field(edge_obj, "unit", &ep)?,
                    &format!("{ep}.unit"),
                    Some(UnitId::inner(i, j, k)),
                )?;
                inputs.push(Edge { weight, unit });
            }
            let outer = match node_obj.get("outer") {
                None | Some(Value::Null) => None,
                Some(ov) => Some(unit_from_value(
                    ov,
                    &format!("{np}.outer"),
                    Some(UnitId::outer(i, j)),
                )?),
            };
            outputs.push(Node { outer, inputs });
        }
        layers.push(Layer { outputs });
    }
    KanNetwork::new(layers).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::parse("$", m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "layer_widths": [1, 1],
        "layers": [{"outputs": [{"outer": null, "inputs": [
            {"weight": 1.0, "unit": {"kind": "tabulated", "L": 1.0, "affine_base": null,
                                     "params": {"values": [-1.0, 1.0]}}}
        ]}]}]
    }"#;

    #[test]
    fn minimal_document_loads() {
        let net = load_model(MINIMAL.as_bytes()).unwrap();
        assert_eq!(net.num_layers(), 1);
        assert_eq!(net.layer_widths(), &[1, 1]);
        assert_eq!(net.eval(&[0.25]).unwrap(), vec![0.25]);
    }

    #[test]
    fn non_positive_limit_names_the_unit() {
        let doc = MINIMAL.replace("\"L\": 1.0", "\"L\": 0.0");
        let err = load_model(doc.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("$.layers[0].outputs[0].inputs[0].unit.L"), "{msg}");
        assert!(msg.contains("ψ(1,1,1)"), "{msg}");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let doc = MINIMAL.replace("\"tabulated\"", "\"chebyshev\"");
        let err = load_model(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unknown unit kind `chebyshev`"));
    }

    #[test]
    fn schema_violations_carry_paths() {
        let doc = MINIMAL.replace("\"values\": [-1.0, 1.0]", "\"values\": [-1.0, \"x\"]");
        let err = load_model(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("params.values[1]"), "{err}");

        let doc = MINIMAL.replace("\"layer_widths\": [1, 1]", "\"layer_widths\": [1, 2]");
        assert!(load_model(doc.as_bytes()).is_err());
    }

    #[test]
    fn save_is_canonical() {
        let net = load_model(MINIMAL.as_bytes()).unwrap();
        let a = save_model(&net);
        let b = save_model(&load_model(&a).unwrap());
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        // sorted keys
        assert!(text.find("\"layer_widths\"").unwrap() < text.find("\"layers\"").unwrap());
        assert!(text.find("\"layers\"").unwrap() < text.find("\"version\"").unwrap());
    }
}
