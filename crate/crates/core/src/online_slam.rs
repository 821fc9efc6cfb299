//! Online situational graph: keyframes, wall surfaces, rooms and two-wall
//! rooms estimated from odometry and plane observations.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_graph::{
    information_from_sigmas, FactorGraph, FactorId, FactorKind, GraphError, IdSpace, SolveError, SolveOptions,
    SolveReport, Value, VarKind, VariableId,
};
use crate::geometry::{angle_between, plane_horizontal_dir, transform_plane, Plane, Pose3};
use crate::plan_model::{check_room_planes, room_center_from_planes, ROOM_ANTIPODAL_TOL_DEG, ROOM_ORTHOGONAL_TOL_DEG};

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneObservation {
    /// Plane in the robot frame.
    pub plane: Plane,
    pub step: usize,
    /// Hidden ground-truth surface id. Only evaluation code reads it.
    pub surface_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlamParams {
    pub keyframe_translation: f64,
    pub keyframe_yaw_deg: f64,
    pub assoc_angle_deg: f64,
    pub assoc_distance: f64,
    /// Allowed gap between an observation's foot point and the footprint
    /// already seen on a map plane.
    pub footprint_margin: f64,
    pub max_normal_z: f64,
    pub odom_sigma_t: f64,
    pub odom_sigma_r: f64,
    pub plane_sigma_d: f64,
    pub plane_sigma_n: f64,
    pub min_room_width: f64,
    pub max_room_width: f64,
    pub solve: SolveOptions,
}

impl Default for SlamParams {
    fn default() -> Self {
        Self {
            keyframe_translation: 1.0,
            keyframe_yaw_deg: 30.0,
            assoc_angle_deg: 10.0,
            assoc_distance: 0.35,
            footprint_margin: 1.5,
            max_normal_z: 0.5,
            odom_sigma_t: 0.002,
            odom_sigma_r: 0.05f64.to_radians(),
            plane_sigma_d: 0.01,
            plane_sigma_n: 0.5f64.to_radians(),
            min_room_width: 1.5,
            max_room_width: 15.0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlamError {
    #[error("non-finite odometry at step {0}")]
    NonFiniteOdometry(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parent {
    Room(usize),
    TwoWall(usize),
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub var: VariableId,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct SPlane {
    pub var: VariableId,
    pub observations: usize,
    pub parent: Option<Parent>,
    pub keyframes: BTreeSet<usize>,
    /// Horizontal direction used for the footprint interval.
    pub dir: Vector2<f64>,
    pub footprint: [f64; 2],
    /// Hidden ids of the observations associated here, with counts.
    pub true_ids: BTreeMap<usize, usize>,
}

impl SPlane {
    pub fn majority_true_id(&self) -> Option<usize> {
        self.true_ids.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone)]
pub struct SRoom {
    pub var: VariableId,
    /// Plane indices `[+x, -x, +y, -y]` in the room's own frame.
    pub planes: [usize; 4],
    pub factor: FactorId,
    pub keyframe: usize,
}

#[derive(Debug, Clone)]
pub struct STwoWallRoom {
    pub var: VariableId,
    pub planes: [usize; 2],
    pub factor: FactorId,
    pub active: bool,
}

/// Online S-graph plus association bookkeeping.
#[derive(Debug, Clone)]
pub struct SGraph {
    pub graph: FactorGraph,
    pub params: SlamParams,
    pub origin: VariableId,
    pub floor: VariableId,
    pub keyframes: Vec<Keyframe>,
    pub planes: Vec<SPlane>,
    pub rooms: Vec<SRoom>,
    pub two_wall_rooms: Vec<STwoWallRoom>,
    pub steps: usize,
    pub dropped_observations: usize,
    pub solves: usize,
    pub non_monotone_solves: usize,
    pub last_report: Option<SolveReport>,
    accumulated: Pose3,
    accumulated_steps: usize,
}

impl SGraph {
    pub fn new(params: SlamParams) -> Self {
        let mut graph = FactorGraph::new();
        let sp = IdSpace::Slam;
        let origin = graph.add_variable(sp, VarKind::OriginTransform, Value::Pose(Pose3::identity()), true);
        let floor = graph.add_variable(sp, VarKind::Floor, Value::Pose(Pose3::identity()), true);
        Self {
            graph,
            params,
            origin,
            floor,
            keyframes: Vec::new(),
            planes: Vec::new(),
            rooms: Vec::new(),
            two_wall_rooms: Vec::new(),
            steps: 0,
            dropped_observations: 0,
            solves: 0,
            non_monotone_solves: 0,
            last_report: None,
            accumulated: Pose3::identity(),
            accumulated_steps: 0,
        }
    }

    pub fn keyframe_pose(&self, k: usize) -> Pose3 {
        self.graph.pose(self.keyframes[k].var).expect("keyframe variable exists")
    }

    pub fn plane(&self, i: usize) -> Plane {
        self.graph.plane(self.planes[i].var).expect("plane variable exists")
    }

    pub fn room_pose(&self, r: usize) -> Pose3 {
        self.graph.pose(self.rooms[r].var).expect("room variable exists")
    }

    pub fn plane_index(&self, var: VariableId) -> Option<usize> {
        self.planes.iter().position(|p| p.var == var)
    }

    /// Current estimate of the robot pose, including motion since the last
    /// keyframe.
    pub fn current_pose(&self) -> Option<Pose3> {
        let k = self.keyframes.len().checked_sub(1)?;
        Some(self.keyframe_pose(k).compose(&self.accumulated))
    }

    /// Ingests one odometry increment and the observations of that step.
    /// Returns the new keyframe index when one was created.
    pub fn process_step(&mut self, odom_delta: &Pose3, obs: &[PlaneObservation]) -> Result<Option<usize>, SlamError> {
        if !odom_delta.is_finite() {
            return Err(SlamError::NonFiniteOdometry(self.steps));
        }
        let step = self.steps;
        self.steps += 1;
        if self.keyframes.is_empty() {
            let var = self.graph.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), true);
            self.keyframes.push(Keyframe { var, step });
            self.associate(0, obs)?;
            self.optimize()?;
            return Ok(Some(0));
        }
        self.accumulated = self.accumulated.compose(odom_delta);
        self.accumulated_steps += 1;
        let moved = self.accumulated.translation.norm() > self.params.keyframe_translation
            || self.accumulated.yaw().abs() > self.params.keyframe_yaw_deg.to_radians();
        if !moved {
            return Ok(None);
        }
        let prev = self.keyframes.len() - 1;
        let prev_pose = self.keyframe_pose(prev);
        let var = self.graph.add_variable(
            IdSpace::Slam,
            VarKind::KeyframePose,
            Value::Pose(prev_pose.compose(&self.accumulated)),
            false,
        );
        let n = self.accumulated_steps as f64;
        let sr = self.params.odom_sigma_r.max(1e-3) * n.sqrt();
        let st = self.params.odom_sigma_t.max(1e-3) * n.sqrt();
        self.graph.add_factor(
            FactorKind::Between { measurement: self.accumulated },
            vec![self.keyframes[prev].var, var],
            information_from_sigmas(&[sr, sr, sr, st, st, st]),
            None,
        )?;
        self.keyframes.push(Keyframe { var, step });
        self.accumulated = Pose3::identity();
        self.accumulated_steps = 0;
        let k = self.keyframes.len() - 1;
        self.associate(k, obs)?;
        self.optimize()?;
        Ok(Some(k))
    }

    pub fn optimize(&mut self) -> Result<SolveReport, SlamError> {
        let report = self.graph.optimize(&self.params.solve)?;
        self.solves += 1;
        if !report.is_monotone() {
            self.non_monotone_solves += 1;
        }
        self.last_report = Some(report.clone());
        Ok(report)
    }

    fn footprint_coord(&self, dir: &Vector2<f64>, plane: &Plane, position: &Vector3<f64>) -> f64 {
        dir.dot(&plane.closest_point(position).xy())
    }

    fn associate(&mut self, k: usize, obs: &[PlaneObservation]) -> Result<(), SlamError> {
        let pose = self.keyframe_pose(k);
        let p = pose.translation;
        let gate_angle = self.params.assoc_angle_deg.to_radians();
        let mut valid = Vec::new();
        for o in obs {
            let n = o.plane.normal;
            if !n.iter().all(|x| x.is_finite()) || !o.plane.distance.is_finite() || n.z.abs() > self.params.max_normal_z {
                self.dropped_observations += 1;
                continue;
            }
            valid.push((o, transform_plane(&pose, &o.plane)));
        }
        let mut candidates = Vec::new();
        for (oi, (_, g)) in valid.iter().enumerate() {
            for (pi, sp) in self.planes.iter().enumerate() {
                let m = self.plane(pi);
                let ang = angle_between(&g.normal, &m.normal);
                let dd = (g.distance - m.distance).abs();
                if ang >= gate_angle || dd >= self.params.assoc_distance {
                    continue;
                }
                let s = self.footprint_coord(&sp.dir, &m, &p);
                let margin = self.params.footprint_margin;
                if s < sp.footprint[0] - margin || s > sp.footprint[1] + margin {
                    continue;
                }
                let score = ang / gate_angle + dd / self.params.assoc_distance;
                candidates.push((score, oi, pi));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_obs = BTreeSet::new();
        let mut used_planes = BTreeSet::new();
        let mut assignment: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, oi, pi) in candidates {
            if used_obs.contains(&oi) || used_planes.contains(&pi) {
                continue;
            }
            used_obs.insert(oi);
            used_planes.insert(pi);
            assignment.insert(oi, pi);
        }
        let info = information_from_sigmas(&[self.params.plane_sigma_n, self.params.plane_sigma_n, self.params.plane_sigma_d]);
        for (oi, (o, g)) in valid.iter().enumerate() {
            let pi = match assignment.get(&oi) {
                Some(&pi) => pi,
                None => {
                    let var = self.graph.add_variable(IdSpace::Slam, VarKind::WallSurface, Value::Plane(*g), false);
                    let dir = plane_horizontal_dir(&g.normal);
                    let s = self.footprint_coord(&dir, g, &p);
                    self.planes.push(SPlane {
                        var,
                        observations: 0,
                        parent: None,
                        keyframes: BTreeSet::new(),
                        dir,
                        footprint: [s, s],
                        true_ids: BTreeMap::new(),
                    });
                    self.planes.len() - 1
                }
            };
            let m = self.plane(pi);
            let s = self.footprint_coord(&self.planes[pi].dir, &m, &p);
            let sp = &mut self.planes[pi];
            sp.footprint = [sp.footprint[0].min(s), sp.footprint[1].max(s)];
            sp.observations += 1;
            sp.keyframes.insert(k);
            *sp.true_ids.entry(o.surface_id).or_insert(0) += 1;
            let var = sp.var;
            self.graph.add_factor(
                FactorKind::PosePlane { measurement: o.plane },
                vec![self.keyframes[k].var, var],
                info.clone(),
                None,
            )?;
        }
        Ok(())
    }

    fn interval_along(&self, i: usize, dir: &Vector2<f64>) -> [f64; 2] {
        let sp = &self.planes[i];
        if sp.dir.dot(dir) >= 0.0 {
            sp.footprint
        } else {
            [-sp.footprint[1], -sp.footprint[0]]
        }
    }

    /// Antipodal pairs facing each other at a plausible room width, seen
    /// together from some keyframe, with overlapping footprints.
    fn room_pairs(&self) -> Vec<(usize, usize, f64)> {
        let anti = -ROOM_ANTIPODAL_TOL_DEG.to_radians().cos();
        let mut out = Vec::new();
        for a in 0..self.planes.len() {
            let pa = self.plane(a);
            for b in a + 1..self.planes.len() {
                let pb = self.plane(b);
                if pa.normal.dot(&pb.normal) > anti {
                    continue;
                }
                let width = pa.distance + pb.distance;
                if !(self.params.min_room_width..=self.params.max_room_width).contains(&width) {
                    continue;
                }
                if self.planes[a].keyframes.is_disjoint(&self.planes[b].keyframes) {
                    continue;
                }
                let dir = self.planes[a].dir;
                let ia = self.interval_along(a, &dir);
                let ib = self.interval_along(b, &dir);
                if ia[0].max(ib[0]) > ia[1].min(ib[1]) {
                    continue;
                }
                out.push((a, b, width));
            }
        }
        out
    }

    fn order_room_planes(&self, p: [usize; 4]) -> [usize; 4] {
        let n = |i: usize| self.plane(i).normal;
        let (x_pair, y_pair) = if n(p[0]).x.abs() >= n(p[2]).x.abs() { ([p[0], p[1]], [p[2], p[3]]) } else { ([p[2], p[3]], [p[0], p[1]]) };
        let (p1, p2) = if n(x_pair[0]).x > 0.0 { (x_pair[0], x_pair[1]) } else { (x_pair[1], x_pair[0]) };
        let (p3, p4) = if n(y_pair[0]).y > 0.0 { (y_pair[0], y_pair[1]) } else { (y_pair[1], y_pair[0]) };
        [p1, p2, p3, p4]
    }

    fn room_parented(&self, i: usize) -> bool {
        matches!(self.planes[i].parent, Some(Parent::Room(_)))
    }

    /// Detects four-wall rooms and two-wall rooms among unparented planes.
    /// Returns the number of new rooms and two-wall rooms.
    pub fn detect_rooms(&mut self) -> Result<(usize, usize), SlamError> {
        let pairs = self.room_pairs();
        let ortho = ROOM_ORTHOGONAL_TOL_DEG.to_radians().sin();
        let mut rooms = Vec::new();
        for (i, &(a, b, wa)) in pairs.iter().enumerate() {
            for &(c, e, wc) in &pairs[i + 1..] {
                let set = [a, b, c, e];
                if set.iter().any(|&x| self.room_parented(x)) {
                    continue;
                }
                if BTreeSet::from(set).len() < 4 {
                    continue;
                }
                if self.plane(a).normal.dot(&self.plane(c).normal).abs() > ortho {
                    continue;
                }
                rooms.push((wa * wc, set));
            }
        }
        rooms.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut new_rooms = 0;
        for (_, set) in rooms {
            if set.iter().any(|&x| self.room_parented(x)) {
                continue;
            }
            let planes: Vec<Plane> = set.iter().map(|&i| self.plane(i)).collect();
            let common = set[1..].iter().fold(self.planes[set[0]].keyframes.clone(), |acc, &i| {
                acc.intersection(&self.planes[i].keyframes).copied().collect()
            });
            let inside = common.iter().copied().find(|&k| {
                let p = self.keyframe_pose(k).translation;
                planes.iter().all(|pl| pl.signed_distance(&p) > 0.0)
            });
            let Some(kf) = inside else { continue };
            let ordered = self.order_room_planes(set);
            let pl = ordered.map(|i| self.plane(i));
            if check_room_planes([&pl[0], &pl[1], &pl[2], &pl[3]]).is_err() {
                continue;
            }
            let Ok(centre) = room_center_from_planes([&pl[0], &pl[1], &pl[2], &pl[3]], 0.0) else { continue };
            let var = self.graph.add_variable(IdSpace::Slam, VarKind::Room, Value::Pose(centre), false);
            let mut vars = vec![var];
            vars.extend(ordered.iter().map(|&i| self.planes[i].var));
            let factor = self.graph.add_factor(
                FactorKind::RoomFromPlanes { floor_z: 0.0 },
                vars,
                information_from_sigmas(&[0.01; 6]),
                None,
            )?;
            let ri = self.rooms.len();
            for &i in &ordered {
                if let Some(Parent::TwoWall(t)) = self.planes[i].parent {
                    self.retire_two_wall(t);
                }
                self.planes[i].parent = Some(Parent::Room(ri));
            }
            self.rooms.push(SRoom { var, planes: ordered, factor, keyframe: kf });
            new_rooms += 1;
        }
        let mut new_two = 0;
        for (a, b, _) in self.room_pairs() {
            if self.planes[a].parent.is_some() || self.planes[b].parent.is_some() {
                continue;
            }
            let (pa, pb) = (self.plane(a), self.plane(b));
            let axis = pa.normal;
            let mid = (-pa.distance / pa.normal.dot(&axis) - pb.distance / pb.normal.dot(&axis)) / 2.0;
            let var = self.graph.add_variable(
                IdSpace::Slam,
                VarKind::TwoWallRoom,
                Value::Vector(nalgebra::DVector::from_element(1, mid)),
                false,
            );
            let factor = self.graph.add_factor(
                FactorKind::TwoWallRoom { axis },
                vec![var, self.planes[a].var, self.planes[b].var],
                information_from_sigmas(&[0.01]),
                None,
            )?;
            let ti = self.two_wall_rooms.len();
            self.planes[a].parent = Some(Parent::TwoWall(ti));
            self.planes[b].parent = Some(Parent::TwoWall(ti));
            self.two_wall_rooms.push(STwoWallRoom { var, planes: [a, b], factor, active: true });
            new_two += 1;
        }
        Ok((new_rooms, new_two))
    }

    fn retire_two_wall(&mut self, t: usize) {
        let tw = &mut self.two_wall_rooms[t];
        if !tw.active {
            return;
        }
        tw.active = false;
        let (var, factor, planes) = (tw.var, tw.factor, tw.planes);
        self.graph.set_factor_enabled(factor, false);
        let _ = self.graph.set_fixed(var, true);
        for i in planes {
            if self.planes[i].parent == Some(Parent::TwoWall(t)) {
                self.planes[i].parent = None;
            }
        }
    }

    /// Keyframe trajectory as `(step, pose)` in the S frame.
    pub fn trajectory(&self) -> Vec<(usize, Pose3)> {
        self.keyframes.iter().enumerate().map(|(k, kf)| (kf.step, self.keyframe_pose(k))).collect()
    }
}
