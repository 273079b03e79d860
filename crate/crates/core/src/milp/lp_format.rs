//! CPLEX-style LP text and `<name> <value>` solution files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Direction, MilpModel, Sense, VarKind};
use crate::error::{Error, Result};

const TERMS_PER_LINE: usize = 6;

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        // Debug formatting is the shortest text that round-trips exactly
        format!("{v:?}")
    }
}

fn write_terms(out: &mut String, model: &MilpModel, terms: &[(usize, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (n, &(v, c)) in terms.iter().enumerate() {
        if n > 0 && n % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", num(c.abs()), model.variables[v].name);
    }
}

/// LP text for the model. Identical models give identical bytes.
pub fn write_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str(match model.objective.direction {
        Direction::Maximize => "Maximize\n",
        Direction::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    write_terms(&mut out, model, &model.objective.terms);
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        write_terms(&mut out, model, &c.terms);
        let _ = writeln!(out, " {} {}", c.sense.symbol(), num(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in &model.variables {
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper));
        }
    }
    let binaries: Vec<&str> = model
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

fn parse_num(tok: &str, ctx: &str) -> Result<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse()
            .map_err(|_| Error::parse(ctx, format!("expected a number, found `{tok}`"))),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Objective,
    Constraints,
    Bounds,
    Binaries,
}

/// Parses `sign coef name` triples (sign and coefficient optional) into terms.
fn parse_terms(tokens: &[&str], model: &mut MilpModel, ctx: &str) -> Result<Vec<(usize, f64)>> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for &tok in tokens {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Ok(c) = tok.parse::<f64>() {
                    coef = Some(c);
                    continue;
                }
                let v = match model.var(tok) {
                    Some(v) => v,
                    None => model.add_var(tok, 0.0, f64::INFINITY, VarKind::Continuous),
                };
                terms.push((v, sign * coef.unwrap_or(1.0)));
                sign = 1.0;
                coef = None;
            }
        }
    }
    if coef.is_some() && !(terms.is_empty() && coef == Some(0.0)) {
        return Err(Error::parse(ctx, "dangling coefficient"));
    }
    Ok(terms)
}

/// Reads the LP subset produced by [`write_lp`]. Variables without explicit
/// bounds default to `[0, inf)`; exactly-one groups are not recovered.
pub fn read_lp(text: &str) -> Result<MilpModel> {
    let mut model = MilpModel::new();
    let mut section: Option<Section> = None;
    let mut pending = String::new();
    let mut statements: Vec<(Section, String)> = Vec::new();
    let flush = |pending: &mut String, section: &Option<Section>, statements: &mut Vec<(Section, String)>| {
        if !pending.trim().is_empty() {
            if let Some(s) = section {
                statements.push((*s, std::mem::take(pending)));
            }
        }
        pending.clear();
    };
    let mut direction = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        let header = match lower.as_str() {
            "maximize" | "maximum" | "max" => Some((Section::Objective, Some(Direction::Maximize))),
            "minimize" | "minimum" | "min" => Some((Section::Objective, Some(Direction::Minimize))),
            "subject to" | "such that" | "st" | "s.t." => Some((Section::Constraints, None)),
            "bounds" | "bound" => Some((Section::Bounds, None)),
            "binaries" | "binary" | "bin" => Some((Section::Binaries, None)),
            "end" => {
                flush(&mut pending, &section, &mut statements);
                section = None;
                continue;
            }
            _ => None,
        };
        if let Some((s, d)) = header {
            flush(&mut pending, &section, &mut statements);
            if d.is_some() {
                direction = d;
            }
            section = Some(s);
            continue;
        }
        let Some(sec) = &section else {
            return Err(Error::parse(format!("line {}", ln + 1), "text outside any section"));
        };
        match sec {
            // a new named row starts a new statement
            Section::Constraints | Section::Objective if line.contains(':') => {
                flush(&mut pending, &section, &mut statements);
                pending.push_str(line);
            }
            Section::Bounds | Section::Binaries => {
                flush(&mut pending, &section, &mut statements);
                pending.push_str(line);
            }
            _ => {
                pending.push(' ');
                pending.push_str(line);
            }
        }
    }
    flush(&mut pending, &section, &mut statements);
    let direction = direction.ok_or_else(|| Error::parse("lp", "missing objective section"))?;

    // declare variables in bound order so a written model reads back identically
    statements.sort_by_key(|(sec, _)| *sec != Section::Bounds);
    let mut objective = Vec::new();
    let mut binaries = Vec::new();
    for (sec, stmt) in statements {
        match sec {
            Section::Objective => {
                let body = stmt.split_once(':').map_or(stmt.as_str(), |(_, b)| b);
                let tokens: Vec<&str> = body.split_whitespace().collect();
                objective = parse_terms(&tokens, &mut model, "objective")?;
            }
            Section::Constraints => {
                let (name, body) = stmt
                    .split_once(':')
                    .ok_or_else(|| Error::parse("constraints", format!("unnamed row `{stmt}`")))?;
                let name = name.trim();
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let pos = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "=" | "=<" | "=>" | "<" | ">"))
                    .ok_or_else(|| Error::parse(name, "missing comparison"))?;
                let sense = match tokens[pos] {
                    "<=" | "=<" | "<" => Sense::Le,
                    ">=" | "=>" | ">" => Sense::Ge,
                    _ => Sense::Eq,
                };
                if pos + 2 != tokens.len() {
                    return Err(Error::parse(name, "expected a single right-hand side"));
                }
                let rhs = parse_num(tokens[pos + 1], name)?;
                let terms = parse_terms(&tokens[..pos], &mut model, name)?;
                model.add_constraint(name, terms, sense, rhs);
            }
            Section::Bounds => {
                let tokens: Vec<&str> = stmt.split_whitespace().collect();
                match tokens.as_slice() {
                    [name, free] if free.eq_ignore_ascii_case("free") => {
                        let v = var_or_new(&mut model, name);
                        model.variables[v].lower = f64::NEG_INFINITY;
                        model.variables[v].upper = f64::INFINITY;
                    }
                    [lo, "<=", name, "<=", hi] => {
                        let v = var_or_new(&mut model, name);
                        model.variables[v].lower = parse_num(lo, name)?;
                        model.variables[v].upper = parse_num(hi, name)?;
                    }
                    [name, op, val] if matches!(*op, "<=" | ">=" | "=") => {
                        let v = var_or_new(&mut model, name);
                        let x = parse_num(val, name)?;
                        match *op {
                            "<=" => model.variables[v].upper = x,
                            ">=" => model.variables[v].lower = x,
                            _ => {
                                model.variables[v].lower = x;
                                model.variables[v].upper = x;
                            }
                        }
                    }
                    _ => return Err(Error::parse("bounds", format!("unsupported bound `{stmt}`"))),
                }
            }
            Section::Binaries => binaries.extend(stmt.split_whitespace().map(str::to_owned)),
        }
    }
    for name in binaries {
        let v = var_or_new(&mut model, &name);
        let var = &mut model.variables[v];
        var.kind = VarKind::Binary;
        var.lower = var.lower.max(0.0);
        var.upper = var.upper.min(1.0);
    }
    model.set_objective(direction, objective);
    Ok(model)
}

fn var_or_new(model: &mut MilpModel, name: &str) -> usize {
    match model.var(name) {
        Some(v) => v,
        None => model.add_var(name, 0.0, f64::INFINITY, VarKind::Continuous),
    }
}

/// Parses `<name> <value>` lines. Blank lines and lines starting with `#`
/// are skipped.
pub fn read_solution(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::SolutionParse { line: n + 1, message };
        let mut it = line.split_whitespace();
        let (Some(name), Some(value), None) = (it.next(), it.next(), it.next()) else {
            return Err(err(format!("expected `<name> <value>`, found `{line}`")));
        };
        let v: f64 = value
            .parse()
            .map_err(|_| err(format!("`{value}` is not a number")))?;
        if !v.is_finite() {
            return Err(err(format!("value for `{name}` is not finite")));
        }
        if out.insert(name.to_owned(), v).is_some() {
            return Err(err(format!("variable `{name}` given twice")));
        }
    }
    Ok(out)
}
