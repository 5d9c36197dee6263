//! Problem representation shared by the LP and MILP solvers.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("row `{row}` references unknown variable index {index}")]
    UnknownVariable { row: String, index: usize },
    #[error("row `{row}` references unknown variable `{name}`")]
    UnknownVariableName { row: String, name: String },
    #[error("variable `{0}` has lower bound above upper bound")]
    EmptyDomain(String),
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub obj: f64,
    pub kind: VarKind,
}

impl VarDef {
    pub fn is_integer(&self) -> bool {
        self.kind != VarKind::Continuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Ge,
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    pub fn new(name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) -> Self {
        Row {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            RowSense::Ge => (self.rhs - act).max(0.0),
            RowSense::Le => (act - self.rhs).max(0.0),
            RowSense::Eq => (act - self.rhs).abs(),
        }
    }

    /// Row bounds `[lo, hi]` on the activity.
    pub fn range(&self) -> (f64, f64) {
        match self.sense {
            RowSense::Ge => (self.rhs, f64::INFINITY),
            RowSense::Le => (f64::NEG_INFINITY, self.rhs),
            RowSense::Eq => (self.rhs, self.rhs),
        }
    }
}

/// Minimize `obj_offset + sum(obj_j x_j)` subject to rows and bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpInstance {
    pub vars: Vec<VarDef>,
    pub rows: Vec<Row>,
    pub obj_offset: f64,
}

impl MilpInstance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, obj: f64, kind: VarKind) -> usize {
        let (lower, upper) = if kind == VarKind::Binary {
            (lower.max(0.0), upper.min(1.0))
        } else {
            (lower, upper)
        };
        self.vars.push(VarDef {
            name: name.into(),
            lower,
            upper,
            obj,
            kind,
        });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, row: Row) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    /// Returns a copy of the instance with `row` appended.
    pub fn add_cut(&self, row: Row) -> Result<MilpInstance, ModelError> {
        self.check_row(&row)?;
        let mut out = self.clone();
        out.rows.push(row);
        Ok(out)
    }

    /// Like [`add_cut`](Self::add_cut) but with coefficients keyed by variable name.
    pub fn add_named_cut(
        &self,
        name: impl Into<String>,
        coeffs: &[(&str, f64)],
        sense: RowSense,
        rhs: f64,
    ) -> Result<MilpInstance, ModelError> {
        let name = name.into();
        let index = self.name_index();
        let mut resolved = Vec::with_capacity(coeffs.len());
        for &(v, a) in coeffs {
            match index.get(v) {
                Some(&j) => resolved.push((j, a)),
                None => {
                    return Err(ModelError::UnknownVariableName {
                        row: name,
                        name: v.to_string(),
                    })
                }
            }
        }
        self.add_cut(Row::new(name, resolved, sense, rhs))
    }

    pub fn name_index(&self) -> HashMap<&str, usize> {
        self.vars
            .iter()
            .enumerate()
            .map(|(j, v)| (v.name.as_str(), j))
            .collect()
    }

    fn check_row(&self, row: &Row) -> Result<(), ModelError> {
        for &(j, a) in &row.coeffs {
            if j >= self.vars.len() {
                return Err(ModelError::UnknownVariable {
                    row: row.name.clone(),
                    index: j,
                });
            }
            if !a.is_finite() {
                return Err(ModelError::NonFinite(row.name.clone()));
            }
        }
        if row.rhs.is_nan() {
            return Err(ModelError::NonFinite(row.name.clone()));
        }
        Ok(())
    }

    /// Checks that every row references declared variables and bounds are consistent.
    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.vars {
            if v.lower > v.upper {
                return Err(ModelError::EmptyDomain(v.name.clone()));
            }
            if !v.obj.is_finite() {
                return Err(ModelError::NonFinite(v.name.clone()));
            }
        }
        for r in &self.rows {
            self.check_row(r)?;
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.obj_offset + self.vars.iter().zip(x).map(|(v, &xi)| v.obj * xi).sum::<f64>()
    }

    pub fn integer_vars(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.vars[j].is_integer()).collect()
    }

    /// Largest bound, row, or integrality violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
            if v.is_integer() {
                worst = worst.max((xi - xi.round()).abs());
            }
        }
        for r in &self.rows {
            worst = worst.max(r.violation(x));
        }
        worst
    }

    /// Copy with the listed variables fixed to the given values.
    pub fn with_fixed(&self, fixes: &[(usize, f64)]) -> MilpInstance {
        let mut out = self.clone();
        for &(j, v) in fixes {
            out.vars[j].lower = v;
            out.vars[j].upper = v;
        }
        out
    }

    /// Copy with every variable continuous.
    pub fn relaxed(&self) -> MilpInstance {
        let mut out = self.clone();
        for v in &mut out.vars {
            v.kind = VarKind::Continuous;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MilpInstance {
        let mut m = MilpInstance::new();
        let x = m.add_var("x", 0.0, 10.0, 1.0, VarKind::Continuous);
        m.add_row(Row::new("r", vec![(x, 1.0)], RowSense::Ge, 1.0));
        m
    }

    #[test]
    fn add_cut_leaves_original_untouched() {
        let m = tiny();
        let c = m.add_cut(Row::new("c", vec![(0, 1.0)], RowSense::Le, 5.0)).unwrap();
        assert_eq!(m.num_rows(), 1);
        assert_eq!(c.num_rows(), 2);
    }

    #[test]
    fn add_cut_rejects_unknown_variable() {
        let m = tiny();
        let err = m.add_cut(Row::new("c", vec![(3, 1.0)], RowSense::Le, 5.0)).unwrap_err();
        assert!(matches!(err, ModelError::UnknownVariable { index: 3, .. }));
        let err = m.add_named_cut("c", &[("nope", 1.0)], RowSense::Ge, 0.0).unwrap_err();
        assert!(matches!(err, ModelError::UnknownVariableName { .. }));
    }

    #[test]
    fn binary_bounds_are_clamped() {
        let mut m = MilpInstance::new();
        let b = m.add_var("b", -3.0, 7.0, 0.0, VarKind::Binary);
        assert_eq!((m.vars[b].lower, m.vars[b].upper), (0.0, 1.0));
    }

    #[test]
    fn violation_by_sense() {
        let r = Row::new("r", vec![(0, 2.0)], RowSense::Eq, 4.0);
        assert_eq!(r.violation(&[1.0]), 2.0);
        assert_eq!(r.violation(&[2.0]), 0.0);
    }
}
