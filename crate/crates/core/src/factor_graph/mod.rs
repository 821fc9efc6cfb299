//! Sparse nonlinear least squares over typed manifold variables.

mod factors;
mod solver;
pub mod sparse;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{plane_boxplus, pose_boxplus, Plane, Pose3};

pub use factors::FactorKind;
pub use solver::{SolveError, SolveOptions, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IdSpace {
    Plan,
    Slam,
    Fusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariableId {
    pub space: IdSpace,
    pub index: u32,
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.space {
            IdSpace::Plan => 'A',
            IdSpace::Slam => 'S',
            IdSpace::Fusion => 'F',
        };
        write!(f, "{}{}", p, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    KeyframePose,
    WallSurface,
    WallPose,
    Room,
    TwoWallRoom,
    Doorway,
    Floor,
    OriginTransform,
    DeviationPose,
    DeviationPlane,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Pose(Pose3),
    Plane(Plane),
    Vector(DVector<f64>),
}

impl Value {
    /// Dimension of the local tangent space.
    pub fn dim(&self) -> usize {
        match self {
            Value::Pose(_) => 6,
            Value::Plane(_) => 3,
            Value::Vector(v) => v.len(),
        }
    }

    pub fn boxplus(&self, delta: &[f64]) -> Value {
        match self {
            Value::Pose(p) => Value::Pose(pose_boxplus(p, &nalgebra::Vector6::from_column_slice(delta))),
            Value::Plane(p) => Value::Plane(plane_boxplus(p, &nalgebra::Vector3::from_column_slice(delta))),
            Value::Vector(v) => Value::Vector(v + DVector::from_column_slice(delta)),
        }
    }

    pub fn as_pose(&self) -> Option<&Pose3> {
        match self {
            Value::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_plane(&self) -> Option<&Plane> {
        match self {
            Value::Plane(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    fn dump(&self) -> String {
        match self {
            Value::Pose(p) => {
                let q = p.rotation;
                format!(
                    "{} {} {} {} {} {} {}",
                    p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w
                )
            }
            Value::Plane(p) => format!("{} {} {} {}", p.normal.x, p.normal.y, p.normal.z, p.distance),
            Value::Vector(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub id: VariableId,
    pub kind: VarKind,
    pub value: Value,
    pub fixed: bool,
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub kind: FactorKind,
    pub variables: Vec<VariableId>,
    pub information: DMatrix<f64>,
    /// Upper factor `U` with `UᵀU = information`.
    sqrt_information: DMatrix<f64>,
    pub huber: Option<f64>,
    pub enabled: bool,
}

impl Factor {
    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_information
    }
}

pub type FactorId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown variable {0}")]
    UnknownVariable(VariableId),
    #[error("factor {kind} expects {expected} variables, got {got}")]
    Arity { kind: &'static str, expected: usize, got: usize },
    #[error("variable {0} has the wrong value type for factor {1}")]
    WrongValueType(VariableId, &'static str),
    #[error("information matrix must be symmetric positive definite with dimension {0}")]
    InvalidInformation(usize),
    #[error("residual of factor {0} could not be evaluated")]
    Evaluation(FactorId),
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    variables: BTreeMap<VariableId, Variable>,
    factors: Vec<Factor>,
    next_index: BTreeMap<IdSpace, u32>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, space: IdSpace, kind: VarKind, value: Value, fixed: bool) -> VariableId {
        let next = self.next_index.entry(space).or_insert(0);
        let id = VariableId { space, index: *next };
        *next += 1;
        self.variables.insert(id, Variable { id, kind, value, fixed });
        id
    }

    /// Inserts a variable under an externally chosen id, e.g. when copying
    /// a fragment from another graph.
    pub fn insert_variable(&mut self, var: Variable) {
        let next = self.next_index.entry(var.id.space).or_insert(0);
        *next = (*next).max(var.id.index + 1);
        self.variables.insert(var.id, var);
    }

    pub fn contains(&self, id: VariableId) -> bool {
        self.variables.contains_key(&id)
    }

    pub fn variable(&self, id: VariableId) -> Option<&Variable> {
        self.variables.get(&id)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Variable> {
        self.variables.values()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn value(&self, id: VariableId) -> Option<&Value> {
        self.variables.get(&id).map(|v| &v.value)
    }

    pub fn pose(&self, id: VariableId) -> Option<Pose3> {
        self.value(id).and_then(|v| v.as_pose().copied())
    }

    pub fn plane(&self, id: VariableId) -> Option<Plane> {
        self.value(id).and_then(|v| v.as_plane().copied())
    }

    pub fn vector(&self, id: VariableId) -> Option<DVector<f64>> {
        self.value(id).and_then(|v| v.as_vector().cloned())
    }

    pub fn set_value(&mut self, id: VariableId, value: Value) -> Result<(), GraphError> {
        let v = self.variables.get_mut(&id).ok_or(GraphError::UnknownVariable(id))?;
        v.value = value;
        Ok(())
    }

    pub fn set_fixed(&mut self, id: VariableId, fixed: bool) -> Result<(), GraphError> {
        let v = self.variables.get_mut(&id).ok_or(GraphError::UnknownVariable(id))?;
        v.fixed = fixed;
        Ok(())
    }

    pub fn is_fixed(&self, id: VariableId) -> Option<bool> {
        self.variables.get(&id).map(|v| v.fixed)
    }

    pub fn add_factor(
        &mut self,
        kind: FactorKind,
        variables: Vec<VariableId>,
        information: DMatrix<f64>,
        huber: Option<f64>,
    ) -> Result<FactorId, GraphError> {
        let dim = kind.dim();
        if variables.len() != kind.arity() {
            return Err(GraphError::Arity { kind: kind.name(), expected: kind.arity(), got: variables.len() });
        }
        for (slot, id) in variables.iter().enumerate() {
            let v = self.variables.get(id).ok_or(GraphError::UnknownVariable(*id))?;
            if !kind.accepts(slot, &v.value) {
                return Err(GraphError::WrongValueType(*id, kind.name()));
            }
        }
        let sqrt_information = sqrt_information(&information, dim).ok_or(GraphError::InvalidInformation(dim))?;
        self.factors.push(Factor { kind, variables, information, sqrt_information, huber, enabled: true });
        Ok(self.factors.len() - 1)
    }

    pub fn factor(&self, id: FactorId) -> Option<&Factor> {
        self.factors.get(id)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn set_factor_enabled(&mut self, id: FactorId, enabled: bool) {
        if let Some(f) = self.factors.get_mut(id) {
            f.enabled = enabled;
        }
    }

    pub fn set_factor_information(&mut self, id: FactorId, information: DMatrix<f64>) -> Result<(), GraphError> {
        let f = self.factors.get_mut(id).ok_or(GraphError::Evaluation(id))?;
        let dim = f.kind.dim();
        f.sqrt_information = sqrt_information(&information, dim).ok_or(GraphError::InvalidInformation(dim))?;
        f.information = information;
        Ok(())
    }

    pub fn set_factor_huber(&mut self, id: FactorId, huber: Option<f64>) {
        if let Some(f) = self.factors.get_mut(id) {
            f.huber = huber;
        }
    }

    /// Unwhitened residual of one factor at the current values.
    pub fn residual(&self, id: FactorId) -> Result<DVector<f64>, GraphError> {
        let f = self.factors.get(id).ok_or(GraphError::Evaluation(id))?;
        let vals: Vec<&Value> = f
            .variables
            .iter()
            .map(|v| self.value(*v).ok_or(GraphError::UnknownVariable(*v)))
            .collect::<Result<_, _>>()?;
        factors::evaluate_f64(&f.kind, &vals).ok_or(GraphError::Evaluation(id))
    }

    /// Total robustified cost `½ Σ ρ(‖r‖²_Λ)` over enabled factors.
    pub fn cost(&self) -> f64 {
        solver::total_cost(self, &self.variables)
    }

    pub fn optimize(&mut self, options: &SolveOptions) -> Result<SolveReport, SolveError> {
        solver::optimize(self, options)
    }

    /// Compares autodiff Jacobians against central finite differences for
    /// every enabled factor, over all of its variables.
    pub fn check_jacobians(&self, epsilon: f64) -> Vec<(FactorId, f64)> {
        (0..self.factors.len()).map(|i| (i, factors::jacobian_error(self, i, epsilon))).collect()
    }

    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for v in self.variables.values() {
            out.push_str(&format!(
                "VAR {} {:?} {} {}\n",
                v.id,
                v.kind,
                if v.fixed { "fixed" } else { "free" },
                v.value.dump()
            ));
        }
        for f in &self.factors {
            let ids: Vec<String> = f.variables.iter().map(|v| v.to_string()).collect();
            let diag: Vec<String> = (0..f.information.nrows()).map(|i| f.information[(i, i)].to_string()).collect();
            out.push_str(&format!("FACTOR {} {} {}\n", f.kind.name(), ids.join(" "), diag.join(" ")));
        }
        out
    }

    pub(crate) fn variables_map_mut(&mut self) -> &mut BTreeMap<VariableId, Variable> {
        &mut self.variables
    }
}

fn sqrt_information(info: &DMatrix<f64>, dim: usize) -> Option<DMatrix<f64>> {
    if info.nrows() != dim || info.ncols() != dim {
        return None;
    }
    if !info.iter().all(|v| v.is_finite()) {
        return None;
    }
    let scale = info.amax().max(1e-300);
    if (info - info.transpose()).amax() > 1e-9 * scale {
        return None;
    }
    let chol = nalgebra::Cholesky::new(info.clone())?;
    Some(chol.l().transpose())
}

pub(crate) fn room_center_f64(p: [&crate::autodiff::GPlane<f64>; 4], floor_z: f64) -> Pose3 {
    let c = factors::room_center(p, floor_z);
    let q = nalgebra::Quaternion::new(c.q.w, c.q.v[0], c.q.v[1], c.q.v[2]);
    Pose3::new(nalgebra::UnitQuaternion::new_normalize(q), nalgebra::Vector3::new(c.t[0], c.t[1], c.t[2]))
}

/// Diagonal information matrix from per-axis standard deviations.
pub fn information_from_sigmas(sigmas: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| 1.0 / (s * s))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn plane_round_trips_exactly() {
        let mut g = FactorGraph::new();
        let p = Plane::new(Vector3::x(), -2.0).unwrap();
        let id = g.add_variable(IdSpace::Slam, VarKind::WallSurface, Value::Plane(p), false);
        assert_eq!(g.plane(id), Some(p));
        assert_eq!(id.to_string(), "S0");
    }

    #[test]
    fn rejects_bad_information() {
        let mut g = FactorGraph::new();
        let id = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), false);
        let kind = FactorKind::PosePrior { measurement: Pose3::identity() };
        let mut info = DMatrix::identity(6, 6);
        info[(0, 1)] = 0.5;
        assert!(matches!(g.add_factor(kind.clone(), vec![id], info, None), Err(GraphError::InvalidInformation(6))));
        assert!(g.add_factor(kind, vec![id], -DMatrix::identity(6, 6), None).is_err());
    }

    #[test]
    fn dump_lists_variables_and_factors() {
        let mut g = FactorGraph::new();
        let id = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), true);
        g.add_factor(FactorKind::PosePrior { measurement: Pose3::identity() }, vec![id], DMatrix::identity(6, 6), None)
            .unwrap();
        let dump = g.debug_dump();
        assert!(dump.starts_with("VAR S0 KeyframePose fixed 0 0 0 0 0 0 1\n"));
        assert!(dump.contains("FACTOR PosePrior S0 1 1 1 1 1 1"));
    }
}
