//! Mixed-integer linear programs over piece indicators.

mod encode;
mod lp_format;

use std::collections::HashMap;

pub use encode::{
    encode, encode_pair, estimate_m_constants, BigMRule, EncodeOptions, Encoding, MConstants, NetworkVars,
    UnitAbstraction, UnitBounds, UnitVars,
};
pub use lp_format::{read_lp, read_solution, write_lp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v]).sum()
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub direction: Direction,
    pub terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
    /// Binaries of which exactly one is set (one group per encoded unit).
    pub groups: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl Default for MilpModel {
    fn default() -> Self {
        MilpModel {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Objective {
                direction: Direction::Maximize,
                terms: Vec::new(),
            },
            groups: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable; names must be unique.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> usize {
        let name = name.into();
        let id = self.variables.len();
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate variable name {name}");
        self.variables.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        id
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn set_objective(&mut self, direction: Direction, terms: Vec<(usize, f64)>) {
        self.objective = Objective { direction, terms };
    }

    /// Copy of the model with a different objective.
    pub fn with_objective(&self, direction: Direction, terms: Vec<(usize, f64)>) -> Self {
        let mut m = self.clone();
        m.set_objective(direction, terms);
        m
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Binaries whose bounds do not already fix them.
    pub fn num_free_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary && v.lower < v.upper)
            .count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.terms.iter().map(|&(v, c)| c * x[v]).sum()
    }

    /// Largest violation over constraints, bounds and integrality.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| {
                let b = (v.lower - xi).max(xi - v.upper).max(0.0);
                match v.kind {
                    VarKind::Binary => b.max((xi - xi.round()).abs()),
                    VarKind::Continuous => b,
                }
            })
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Dense assignment from name/value pairs; unnamed variables take 0.
    pub fn assignment_from(&self, values: &std::collections::BTreeMap<String, f64>) -> crate::Result<Vec<f64>> {
        let mut x = vec![0.0; self.variables.len()];
        for (name, &v) in values {
            let i = self
                .var(name)
                .ok_or_else(|| crate::Error::Model(format!("solution names unknown variable `{name}`")))?;
            x[i] = v;
        }
        Ok(x)
    }
}
