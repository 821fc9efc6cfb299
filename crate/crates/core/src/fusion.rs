//! Merged graph: plan and online graph joined through the origin
//! transform, with a deviation variable per matched room and surface.

use std::collections::BTreeSet;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_graph::{
    information_from_sigmas, FactorId, FactorKind, GraphError, IdSpace, SolveError, SolveReport, Value, VarKind,
    VariableId,
};
use crate::geometry::{plane_boxplus, transform_plane, Pose3};
use crate::matching::{MatchResult, Stage};
use crate::online_slam::{SGraph, SlamError};
use crate::plan_model::AGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    /// Uniform (tight) deviation priors.
    Uc,
    /// Single combined optimization, no alternation.
    So,
    /// Deviations pinned at zero.
    Nodev,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Mode::Full),
            "uc" => Ok(Mode::Uc),
            "so" => Ok(Mode::So),
            "nodev" | "no-deviation-model" => Ok(Mode::Nodev),
            other => Err(format!("unknown mode {other}")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Uc => "uc",
            Mode::So => "so",
            Mode::Nodev => "nodev",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub mode: Mode,
    pub origin_sigma: f64,
    pub floor_sigma: f64,
    pub tight_m: f64,
    pub tight_deg: f64,
    pub loose_m: f64,
    pub loose_deg: f64,
    pub meas_m: f64,
    pub meas_deg: f64,
    pub huber: Option<f64>,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            origin_sigma: 0.01,
            floor_sigma: 0.01,
            tight_m: 0.03,
            tight_deg: 1.0,
            loose_m: 0.5,
            loose_deg: 20.0,
            meas_m: 0.005,
            meas_deg: 0.5,
            huber: Some(1.0),
        }
    }
}

/// Prior standard deviations `(metres, degrees)` for a deviation
/// probability: linear between the tight and loose widths.
pub fn prior_sigmas(p_dev: f64, params: &FusionParams) -> (f64, f64) {
    let p = if params.mode == Mode::Uc { 0.0 } else { p_dev.clamp(0.0, 1.0) };
    (
        params.tight_m + p * (params.loose_m - params.tight_m),
        params.tight_deg + p * (params.loose_deg - params.tight_deg),
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("match result is not unique")]
    NotUnique,
    #[error("pair references missing variable {0}")]
    MissingVariable(VariableId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Slam(#[from] SlamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Room,
    Surface,
}

#[derive(Debug, Clone)]
pub struct DeviationVar {
    pub kind: ElementKind,
    pub var: VariableId,
    /// A room variable or A surface variable.
    pub a_element: VariableId,
    pub s_element: VariableId,
    pub p_dev: f64,
    pub stage: Stage,
    pub factor: FactorId,
    pub prior: FactorId,
    /// `(metres, degrees)`.
    pub prior_sigma: (f64, f64),
}

/// Deviation of one element expressed as a signed translation along the
/// A normal (surfaces) or translation norm (rooms), and a rotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub element_id: String,
    pub kind: ElementKind,
    pub p_dev: f64,
    pub d_translation_m: f64,
    pub d_rotation_deg: f64,
    pub prior_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct DisGraph {
    pub sg: SGraph,
    pub params: FusionParams,
    pub a_origin: VariableId,
    pub a_floor: VariableId,
    pub transform: VariableId,
    pub deviations: Vec<DeviationVar>,
    pub matched_rooms: Vec<(usize, usize)>,
    pub matched_surfaces: BTreeSet<VariableId>,
}

#[derive(Debug, Clone)]
pub struct StageAReport {
    pub pass1: Option<SolveReport>,
    pub pass2: Option<SolveReport>,
    pub pass3: SolveReport,
}

/// Copies the plan fragment into the online graph and links the two.
pub fn merge(ag: &AGraph, mut sg: SGraph, m: &MatchResult, params: &FusionParams) -> Result<DisGraph, MergeError> {
    if !m.unique {
        return Err(MergeError::NotUnique);
    }
    for v in ag.graph.variables() {
        sg.graph.insert_variable(v.clone());
    }
    for f in ag.graph.factors() {
        sg.graph.add_factor(f.kind.clone(), f.variables.clone(), f.information.clone(), f.huber)?;
    }
    let transform = sg.graph.add_variable(IdSpace::Fusion, VarKind::OriginTransform, Value::Pose(m.transform_seed), false);
    sg.graph.set_fixed(sg.origin, false)?;
    let a_floor = ag.floors.first().map(|f| f.var).ok_or(MergeError::MissingVariable(ag.origin))?;
    let so = params.origin_sigma;
    sg.graph.add_factor(FactorKind::OriginMerge, vec![ag.origin, transform, sg.origin], information_from_sigmas(&[so; 6]), None)?;
    let sf = params.floor_sigma;
    sg.graph.add_factor(FactorKind::FloorAlign, vec![transform, sg.floor, a_floor], information_from_sigmas(&[sf; 3]), None)?;
    let mut dis = DisGraph {
        sg,
        params: *params,
        a_origin: ag.origin,
        a_floor,
        transform,
        deviations: Vec::new(),
        matched_rooms: Vec::new(),
        matched_surfaces: BTreeSet::new(),
    };
    dis.add_pairs(ag, m)?;
    Ok(dis)
}

impl DisGraph {
    pub fn transform_estimate(&self) -> Pose3 {
        self.sg.graph.pose(self.transform).expect("transform variable exists")
    }

    /// Adds deviation variables and factors for room and surface pairs not
    /// yet present.
    pub fn add_pairs(&mut self, ag: &AGraph, m: &MatchResult) -> Result<(), MergeError> {
        let p = self.params;
        let huber = if p.mode == Mode::Nodev { None } else { p.huber };
        let fixed_d = p.mode == Mode::Nodev;
        let mr = p.meas_deg.to_radians();
        for rp in &m.room_pairs {
            if self.matched_rooms.iter().any(|&(a, s)| a == rp.a || s == rp.s) {
                continue;
            }
            let a_var = ag.rooms.get(rp.a).map(|r| r.var).ok_or(MergeError::MissingVariable(ag.origin))?;
            let s_var = self.sg.rooms.get(rp.s).map(|r| r.var).ok_or(MergeError::MissingVariable(ag.origin))?;
            for v in [a_var, s_var] {
                if !self.sg.graph.contains(v) {
                    return Err(MergeError::MissingVariable(v));
                }
            }
            let d = self.sg.graph.add_variable(IdSpace::Fusion, VarKind::DeviationPose, Value::Pose(Pose3::identity()), fixed_d);
            let factor = self.sg.graph.add_factor(
                FactorKind::RoomDeviation { alignment: rp.alignment },
                vec![self.transform, s_var, a_var, d],
                information_from_sigmas(&[mr, mr, mr, p.meas_m, p.meas_m, p.meas_m]),
                huber,
            )?;
            let (st, sr) = prior_sigmas(rp.p_dev, &p);
            let srr = sr.to_radians();
            let prior = self.sg.graph.add_factor(
                FactorKind::PosePrior { measurement: Pose3::identity() },
                vec![d],
                information_from_sigmas(&[srr, srr, srr, st, st, st]),
                None,
            )?;
            let stage = if rp.p_dev > 0.0 { Stage::Deviated } else { Stage::Strict };
            self.deviations.push(DeviationVar {
                kind: ElementKind::Room,
                var: d,
                a_element: a_var,
                s_element: s_var,
                p_dev: rp.p_dev,
                stage,
                factor,
                prior,
                prior_sigma: (st, sr),
            });
            self.matched_rooms.push((rp.a, rp.s));
        }
        for sp in &m.surface_pairs {
            if self.matched_surfaces.contains(&sp.a) || self.deviations.iter().any(|d| d.s_element == sp.s) {
                continue;
            }
            for v in [sp.a, sp.s] {
                if !self.sg.graph.contains(v) {
                    return Err(MergeError::MissingVariable(v));
                }
            }
            let face = ag.surfaces.get(&sp.a).ok_or(MergeError::MissingVariable(sp.a))?.face_center;
            let d = self.sg.graph.add_variable(
                IdSpace::Fusion,
                VarKind::DeviationPlane,
                Value::Vector(DVector::zeros(3)),
                fixed_d,
            );
            let factor = self.sg.graph.add_factor(
                FactorKind::SurfaceDeviation { anchor: Pose3::from_translation(face) },
                vec![self.transform, sp.s, sp.a, d],
                information_from_sigmas(&[mr, mr, p.meas_m]),
                huber,
            )?;
            let (st, sr) = prior_sigmas(sp.p_dev, &p);
            let srr = sr.to_radians();
            let prior = self.sg.graph.add_factor(
                FactorKind::VectorPrior { measurement: DVector::zeros(3) },
                vec![d],
                information_from_sigmas(&[srr, srr, st]),
                None,
            )?;
            self.deviations.push(DeviationVar {
                kind: ElementKind::Surface,
                var: d,
                a_element: sp.a,
                s_element: sp.s,
                p_dev: sp.p_dev,
                stage: sp.stage,
                factor,
                prior,
                prior_sigma: (st, sr),
            });
            self.matched_surfaces.insert(sp.a);
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<SolveReport, FusionError> {
        Ok(self.sg.optimize()?)
    }

    fn set_deviations_fixed(&mut self, fixed: bool) {
        let pin = fixed || self.params.mode == Mode::Nodev;
        for d in &self.deviations {
            let _ = self.sg.graph.set_fixed(d.var, pin);
        }
    }

    /// Transform estimation: deviations pinned at zero, factors of possibly
    /// deviated elements disabled and the S-Graph entities held at their
    /// online estimates, so small unflagged deviations cannot bend the map.
    pub fn pass1(&mut self) -> Result<SolveReport, FusionError> {
        self.set_deviations_fixed(true);
        let deviated: Vec<FactorId> =
            self.deviations.iter().filter(|d| d.stage == Stage::Deviated || d.p_dev > 0.0).map(|d| d.factor).collect();
        for &f in &deviated {
            self.sg.graph.set_factor_enabled(f, false);
        }
        let frozen: Vec<VariableId> = self
            .sg
            .graph
            .variables()
            .filter(|v| {
                !v.fixed
                    && v.id.space == IdSpace::Slam
                    && matches!(
                        v.kind,
                        VarKind::KeyframePose | VarKind::WallSurface | VarKind::Room | VarKind::TwoWallRoom
                    )
            })
            .map(|v| v.id)
            .collect();
        for &v in &frozen {
            let _ = self.sg.graph.set_fixed(v, true);
        }
        let report = self.solve();
        for &v in &frozen {
            let _ = self.sg.graph.set_fixed(v, false);
        }
        for &f in &deviated {
            self.sg.graph.set_factor_enabled(f, true);
        }
        report
    }

    /// Deviation estimation with every other variable frozen.
    pub fn pass2(&mut self) -> Result<SolveReport, FusionError> {
        let frozen: Vec<VariableId> = self
            .sg
            .graph
            .variables()
            .filter(|v| !v.fixed && !matches!(v.kind, VarKind::DeviationPose | VarKind::DeviationPlane))
            .map(|v| v.id)
            .collect();
        for &v in &frozen {
            let _ = self.sg.graph.set_fixed(v, true);
        }
        self.set_deviations_fixed(false);
        let report = self.solve();
        for &v in &frozen {
            let _ = self.sg.graph.set_fixed(v, false);
        }
        report
    }

    /// Combined optimization over the whole state.
    pub fn pass3(&mut self) -> Result<SolveReport, FusionError> {
        self.set_deviations_fixed(false);
        self.solve()
    }

    /// Alternating schedule: transform from non-deviated elements, then
    /// deviations with everything else frozen, then a combined solve.
    pub fn stage_a(&mut self) -> Result<StageAReport, FusionError> {
        if matches!(self.params.mode, Mode::So | Mode::Nodev) {
            let pass3 = self.pass3()?;
            return Ok(StageAReport { pass1: None, pass2: None, pass3 });
        }
        let pass1 = self.pass1()?;
        let pass2 = self.pass2()?;
        let pass3 = self.pass3()?;
        Ok(StageAReport { pass1: Some(pass1), pass2: Some(pass2), pass3 })
    }

    /// Adds the new pairs and runs one combined solve.
    pub fn stage_b(&mut self, ag: &AGraph, new_pairs: &MatchResult) -> Result<SolveReport, FusionError> {
        self.add_pairs(ag, new_pairs)?;
        self.set_deviations_fixed(false);
        self.solve()
    }

    pub fn deviation_vector(&self, d: &DeviationVar) -> Vec<f64> {
        match self.sg.graph.value(d.var) {
            Some(Value::Pose(p)) => p.boxminus(&Pose3::identity()).iter().copied().collect(),
            Some(Value::Vector(v)) => v.iter().copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Estimated deviations in physical units.
    pub fn deviation_estimates(&self, ag: &AGraph) -> Vec<DeviationEstimate> {
        self.deviations
            .iter()
            .map(|d| {
                let (t, r) = match d.kind {
                    ElementKind::Room => {
                        let p = self.sg.graph.pose(d.var).expect("room deviation");
                        (p.translation.norm(), p.rotation.angle().to_degrees())
                    }
                    ElementKind::Surface => {
                        let (t, yaw) = self.surface_deviation(ag, d);
                        (t, yaw.to_degrees())
                    }
                };
                let element_id = match d.kind {
                    ElementKind::Room => ag
                        .rooms
                        .iter()
                        .find(|r| r.var == d.a_element)
                        .map(|r| r.id.clone())
                        .unwrap_or_else(|| d.a_element.to_string()),
                    ElementKind::Surface => d.a_element.to_string(),
                };
                DeviationEstimate {
                    element_id,
                    kind: d.kind,
                    p_dev: d.p_dev,
                    d_translation_m: t,
                    d_rotation_deg: r,
                    prior_sigma: d.prior_sigma.0,
                }
            })
            .collect()
    }

    /// Signed distance change of the A plane (in its own normal direction)
    /// and signed yaw of the corrected normal, for a surface deviation.
    pub fn surface_deviation(&self, ag: &AGraph, d: &DeviationVar) -> (f64, f64) {
        let v = self.sg.graph.vector(d.var).expect("surface deviation");
        let a = ag.graph.plane(d.a_element).expect("A surface");
        let face = ag.surfaces[&d.a_element].face_center;
        let k = Pose3::from_translation(face);
        let local = transform_plane(&k.inverse(), &a);
        let moved = plane_boxplus(&local, &Vector3::new(v[0], v[1], v[2]));
        let n0 = local.normal;
        let n1 = moved.normal;
        let yaw = n0.cross(&n1).z.atan2(n0.dot(&n1));
        (v[2], yaw)
    }
}

/// Renders deviation estimates as CSV.
pub fn deviations_csv(rows: &[DeviationEstimate]) -> String {
    let mut s = String::from("element_id,kind,p_dev,d_translation_m,d_rotation_deg,prior_sigma\n");
    for r in rows {
        let kind = match r.kind {
            ElementKind::Room => "room",
            ElementKind::Surface => "surface",
        };
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.element_id, kind, r.p_dev, r.d_translation_m, r.d_rotation_deg, r.prior_sigma
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_ramp_endpoints() {
        let p = FusionParams::default();
        assert_eq!(prior_sigmas(0.0, &p).0, 0.03);
        assert_eq!(prior_sigmas(1.0, &p).0, 0.5);
        assert!((prior_sigmas(0.5, &p).0 - 0.265).abs() < 1e-12);
        let uc = FusionParams { mode: Mode::Uc, ..p };
        assert_eq!(prior_sigmas(1.0, &uc).0, 0.03);
    }
}
