//! Declarative floor plans and the as-planned graph built from them.
//!
//! A plan lists floors, rectangular rooms, straight walls and doorways.
//! A wall with `axis = x` is the slab `offset ± width/2` along x, spanning
//! `extent` along y. Its surface 0 faces `+axis`, surface 1 faces `-axis`.
//! Rooms give their interior centre and interior size.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::GPlane;
use crate::factor_graph::{
    information_from_sigmas, FactorGraph, FactorKind, IdSpace, Value, VarKind, VariableId,
};
use crate::geometry::{Plane, Pose3};

const FACE_TOL: f64 = 1e-6;
/// Opposing surfaces of a room may deviate from antiparallel by this much.
pub const ROOM_ANTIPODAL_TOL_DEG: f64 = 25.0;
/// The two surface pairs of a room may deviate from orthogonal by this much.
pub const ROOM_ORTHOGONAL_TOL_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn unit(&self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
        }
    }

    fn index(&self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorSpec {
    pub level: i32,
    pub z_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub id: String,
    pub floor: i32,
    pub center_xy: [f64; 2],
    pub size_xy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub id: String,
    pub room_ids: Vec<String>,
    pub axis: Axis,
    /// Centreline coordinate along `axis`.
    pub offset: f64,
    /// `[min, max]` along the other horizontal axis.
    pub extent: [f64; 2],
    pub width: f64,
}

impl WallSpec {
    /// Plane of surface `side` (0 faces `+axis`, 1 faces `-axis`).
    pub fn surface(&self, side: usize) -> Plane {
        let n = self.axis.unit();
        if side == 0 {
            Plane { normal: n, distance: -(self.offset + self.width / 2.0) }
        } else {
            Plane { normal: -n, distance: self.offset - self.width / 2.0 }
        }
    }

    /// Wall midpoint in the xy-plane.
    pub fn center_xy(&self) -> Vector2<f64> {
        let along = (self.extent[0] + self.extent[1]) / 2.0;
        match self.axis {
            Axis::X => Vector2::new(self.offset, along),
            Axis::Y => Vector2::new(along, self.offset),
        }
    }

    /// Endpoints of surface `side` in the xy-plane.
    pub fn surface_segment(&self, side: usize) -> [Vector2<f64>; 2] {
        let o = if side == 0 { self.offset + self.width / 2.0 } else { self.offset - self.width / 2.0 };
        match self.axis {
            Axis::X => [Vector2::new(o, self.extent[0]), Vector2::new(o, self.extent[1])],
            Axis::Y => [Vector2::new(self.extent[0], o), Vector2::new(self.extent[1], o)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorwaySpec {
    pub id: String,
    pub room_id_pair: [String; 2],
    pub position_xy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub floors: Vec<FloorSpec>,
    pub rooms: Vec<RoomSpec>,
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub doorways: Vec<DoorwaySpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("cannot read plan: {0}")]
    Io(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("geometry error: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RoomError {
    #[error("plane pairs do not form a near-rectangular room")]
    DegenerateRoom,
}

/// Room sides in the order west, east, south, north.
pub const SIDES: [&str; 4] = ["west", "east", "south", "north"];

impl PlanFile {
    pub fn room_index(&self, id: &str) -> Option<usize> {
        self.rooms.iter().position(|r| r.id == id)
    }

    pub fn wall_index(&self, id: &str) -> Option<usize> {
        self.walls.iter().position(|w| w.id == id)
    }

    pub fn floor_z(&self, level: i32) -> Option<f64> {
        self.floors.iter().find(|f| f.level == level).map(|f| f.z_height)
    }

    /// Bounding walls of a room as `[west, east, south, north]` wall indices.
    pub fn room_walls(&self, room: usize) -> Result<[usize; 4], PlanError> {
        let r = &self.rooms[room];
        let lo = [r.center_xy[0] - r.size_xy[0] / 2.0, r.center_xy[1] - r.size_xy[1] / 2.0];
        let hi = [r.center_xy[0] + r.size_xy[0] / 2.0, r.center_xy[1] + r.size_xy[1] / 2.0];
        let mut found: [Vec<usize>; 4] = Default::default();
        for (wi, w) in self.walls.iter().enumerate() {
            let a = w.axis.index();
            let b = 1 - a;
            let covers = w.extent[0] <= lo[b] + FACE_TOL && w.extent[1] >= hi[b] - FACE_TOL;
            if !covers {
                continue;
            }
            let plus_face = w.offset + w.width / 2.0;
            let minus_face = w.offset - w.width / 2.0;
            if (plus_face - lo[a]).abs() < FACE_TOL {
                found[2 * a].push(wi);
            } else if (minus_face - hi[a]).abs() < FACE_TOL {
                found[2 * a + 1].push(wi);
            }
        }
        let mut out = [0; 4];
        for (side, ws) in found.iter().enumerate() {
            if ws.len() != 1 {
                return Err(PlanError::Geometry(format!(
                    "room {} has {} walls on its {} side, expected exactly 1",
                    r.id,
                    ws.len(),
                    SIDES[side]
                )));
            }
            let w = &self.walls[ws[0]];
            if !w.room_ids.iter().any(|id| id == &r.id) {
                return Err(PlanError::Geometry(format!("wall {} bounds room {} but does not list it", w.id, r.id)));
            }
            out[side] = ws[0];
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let geo = |m: String| Err(PlanError::Geometry(m));
        if self.floors.is_empty() {
            return Err(PlanError::Schema("floors must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for id in self
            .rooms
            .iter()
            .map(|r| &r.id)
            .chain(self.walls.iter().map(|w| &w.id))
            .chain(self.doorways.iter().map(|d| &d.id))
        {
            if !seen.insert(id.clone()) {
                return Err(PlanError::Schema(format!("duplicate id {id}")));
            }
        }
        for r in &self.rooms {
            if self.floor_z(r.floor).is_none() {
                return geo(format!("room {} references missing floor {}", r.id, r.floor));
            }
            if !(r.size_xy[0] > 0.0 && r.size_xy[1] > 0.0) {
                return geo(format!("room {} has non-positive size", r.id));
            }
        }
        for w in &self.walls {
            if !(w.width > 0.0) {
                return geo(format!("wall {} has non-positive width", w.id));
            }
            if !(w.extent[0] < w.extent[1]) {
                return geo(format!("wall {} has an empty extent", w.id));
            }
            for rid in &w.room_ids {
                if self.room_index(rid).is_none() {
                    return geo(format!("wall {} references missing room {rid}", w.id));
                }
            }
        }
        for (i, r) in self.rooms.iter().enumerate() {
            let walls = self.room_walls(i)?;
            let max_w = walls.iter().map(|w| self.walls[*w].width).fold(0.0, f64::max);
            if r.size_xy[0] <= 2.0 * max_w || r.size_xy[1] <= 2.0 * max_w {
                return geo(format!("room {} is not larger than twice its wall width", r.id));
            }
        }
        for i in 0..self.rooms.len() {
            for j in i + 1..self.rooms.len() {
                let (a, b) = (&self.rooms[i], &self.rooms[j]);
                if a.floor != b.floor {
                    continue;
                }
                let overlap = (0..2).all(|k| {
                    let lo = (a.center_xy[k] - a.size_xy[k] / 2.0).max(b.center_xy[k] - b.size_xy[k] / 2.0);
                    let hi = (a.center_xy[k] + a.size_xy[k] / 2.0).min(b.center_xy[k] + b.size_xy[k] / 2.0);
                    hi - lo > FACE_TOL
                });
                if overlap {
                    return geo(format!("rooms {} and {} overlap", a.id, b.id));
                }
            }
        }
        for d in &self.doorways {
            for rid in &d.room_id_pair {
                if self.room_index(rid).is_none() {
                    return geo(format!("doorway {} references missing room {rid}", d.id));
                }
            }
            if d.room_id_pair[0] == d.room_id_pair[1] {
                return geo(format!("doorway {} connects a room to itself", d.id));
            }
        }
        Ok(())
    }
}

pub fn parse_plan(text: &str) -> Result<PlanFile, PlanError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PlanError::Parse { line: e.line(), reason: e.to_string() })?;
    let plan: PlanFile = serde_json::from_value(value).map_err(|e| PlanError::Schema(e.to_string()))?;
    plan.validate()?;
    Ok(plan)
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<PlanFile, PlanError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| PlanError::Io(e.to_string()))?;
    parse_plan(&text)
}

/// Room frame from two opposing plane pairs `(p1, p2)` and `(p3, p4)`.
///
/// The centre is equidistant from both planes of each pair, `z` is the
/// floor height and the yaw follows the normal of `p1`.
pub fn room_center_from_planes(p: [&Plane; 4], floor_z: f64) -> Result<Pose3, RoomError> {
    check_room_planes(p)?;
    let g: Vec<GPlane<f64>> = p.iter().map(|x| GPlane::from_f64(x)).collect();
    let c = crate::factor_graph::room_center_f64([&g[0], &g[1], &g[2], &g[3]], floor_z);
    if !c.is_finite() {
        return Err(RoomError::DegenerateRoom);
    }
    Ok(c)
}

pub fn check_room_planes(p: [&Plane; 4]) -> Result<(), RoomError> {
    let anti = -ROOM_ANTIPODAL_TOL_DEG.to_radians().cos();
    let ortho = ROOM_ORTHOGONAL_TOL_DEG.to_radians().sin();
    if p[0].normal.dot(&p[1].normal) > anti || p[2].normal.dot(&p[3].normal) > anti {
        return Err(RoomError::DegenerateRoom);
    }
    if p[0].normal.dot(&p[2].normal).abs() > ortho {
        return Err(RoomError::DegenerateRoom);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AFloor {
    pub level: i32,
    pub z_height: f64,
    pub var: VariableId,
}

#[derive(Debug, Clone)]
pub struct AWall {
    pub id: String,
    pub pose: VariableId,
    pub surfaces: [VariableId; 2],
    pub width: f64,
}

#[derive(Debug, Clone)]
pub struct ARoom {
    pub id: String,
    pub var: VariableId,
    /// `[west +x face, east -x face, south +y face, north -y face]`.
    pub surfaces: [VariableId; 4],
    pub walls: [usize; 4],
    pub floor: VariableId,
    pub floor_z: f64,
}

#[derive(Debug, Clone)]
pub struct ADoorway {
    pub id: String,
    pub var: VariableId,
    pub rooms: [usize; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct ASurface {
    pub wall: usize,
    pub side: usize,
    /// Centre of the surface face at floor height.
    pub face_center: Vector3<f64>,
}

/// As-planned graph. All variables are fixed: the plan is the reference.
#[derive(Debug, Clone)]
pub struct AGraph {
    pub graph: FactorGraph,
    pub origin: VariableId,
    pub floors: Vec<AFloor>,
    pub walls: Vec<AWall>,
    pub rooms: Vec<ARoom>,
    pub doorways: Vec<ADoorway>,
    pub surfaces: BTreeMap<VariableId, ASurface>,
}

impl AGraph {
    pub fn factor_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for f in self.graph.factors() {
            *m.entry(f.kind.name()).or_insert(0) += 1;
        }
        m
    }

    pub fn room_pose(&self, room: usize) -> Pose3 {
        self.graph.pose(self.rooms[room].var).expect("room variable exists")
    }

    pub fn surface_plane(&self, id: VariableId) -> Option<Plane> {
        self.graph.plane(id)
    }

    pub fn room_of_surface(&self, id: VariableId) -> Option<usize> {
        self.rooms.iter().position(|r| r.surfaces.contains(&id))
    }

    pub fn floor_of_room(&self, room: usize) -> &AFloor {
        let v = self.rooms[room].floor;
        self.floors.iter().find(|f| f.var == v).expect("room floor exists")
    }
}

const STRUCT_SIGMA: f64 = 0.01;
const FLOOR_INFORMATION: f64 = 1e-2;

pub fn build_agraph(plan: &PlanFile) -> Result<AGraph, PlanError> {
    plan.validate()?;
    let mut g = FactorGraph::new();
    let sp = IdSpace::Plan;
    let origin = g.add_variable(sp, VarKind::OriginTransform, Value::Pose(Pose3::identity()), true);

    let room_walls: Vec<[usize; 4]> = (0..plan.rooms.len()).map(|i| plan.room_walls(i)).collect::<Result<_, _>>()?;

    let mut floors = Vec::new();
    for f in &plan.floors {
        let centres: Vec<&RoomSpec> = plan.rooms.iter().filter(|r| r.floor == f.level).collect();
        let (cx, cy) = if centres.is_empty() {
            (0.0, 0.0)
        } else {
            let n = centres.len() as f64;
            (
                centres.iter().map(|r| r.center_xy[0]).sum::<f64>() / n,
                centres.iter().map(|r| r.center_xy[1]).sum::<f64>() / n,
            )
        };
        let pose = Pose3::from_translation(Vector3::new(cx, cy, f.z_height));
        let var = g.add_variable(sp, VarKind::Floor, Value::Pose(pose), true);
        floors.push(AFloor { level: f.level, z_height: f.z_height, var });
    }

    let wall_z = |w: &WallSpec| {
        w.room_ids
            .first()
            .and_then(|rid| plan.room_index(rid))
            .and_then(|ri| plan.floor_z(plan.rooms[ri].floor))
            .unwrap_or(plan.floors[0].z_height)
    };

    let struct_info6 = information_from_sigmas(&[STRUCT_SIGMA; 6]);
    let mut walls = Vec::new();
    let mut surfaces = BTreeMap::new();
    for (wi, w) in plan.walls.iter().enumerate() {
        let c = w.center_xy();
        let z = wall_z(w);
        let yaw = match w.axis {
            Axis::X => 0.0,
            Axis::Y => std::f64::consts::FRAC_PI_2,
        };
        let pose = Pose3::from_xy_yaw(c.x, c.y, z, yaw);
        let pv = g.add_variable(sp, VarKind::WallPose, Value::Pose(pose), true);
        let mut sv = [pv; 2];
        for side in 0..2 {
            let plane = w.surface(side);
            sv[side] = g.add_variable(sp, VarKind::WallSurface, Value::Plane(plane), true);
            let face = Vector3::new(c.x, c.y, z) + plane.normal * (w.width / 2.0);
            surfaces.insert(sv[side], ASurface { wall: wi, side, face_center: face });
        }
        g.add_factor(FactorKind::WallFromSurfaces { width: w.width }, vec![pv, sv[0], sv[1]], struct_info6.clone(), None)
            .expect("wall factor is well formed");
        walls.push(AWall { id: w.id.clone(), pose: pv, surfaces: sv, width: w.width });
    }

    let mut rooms = Vec::new();
    for (ri, r) in plan.rooms.iter().enumerate() {
        let z = plan.floor_z(r.floor).expect("validated");
        let fl = floors.iter().find(|f| f.level == r.floor).expect("validated").var;
        let ws = room_walls[ri];
        let surf = [walls[ws[0]].surfaces[0], walls[ws[1]].surfaces[1], walls[ws[2]].surfaces[0], walls[ws[3]].surfaces[1]];
        let pose = Pose3::from_xy_yaw(r.center_xy[0], r.center_xy[1], z, 0.0);
        let var = g.add_variable(sp, VarKind::Room, Value::Pose(pose), true);
        let mut vars = vec![var];
        vars.extend_from_slice(&surf);
        g.add_factor(FactorKind::RoomFromPlanes { floor_z: z }, vars, struct_info6.clone(), None)
            .expect("room factor is well formed");
        let fpose = g.pose(fl).expect("floor exists");
        let rel = fpose.inverse().transform_point(&pose.translation);
        g.add_factor(
            FactorKind::FloorRoom { measurement: Vector2::new(rel.x, rel.y) },
            vec![fl, var],
            DMatrix::identity(2, 2) * FLOOR_INFORMATION,
            None,
        )
        .expect("floor factor is well formed");
        rooms.push(ARoom { id: r.id.clone(), var, surfaces: surf, walls: ws, floor: fl, floor_z: z });
    }

    let mut doorways = Vec::new();
    for d in &plan.doorways {
        let ra = plan.room_index(&d.room_id_pair[0]).expect("validated");
        let rb = plan.room_index(&d.room_id_pair[1]).expect("validated");
        let z = rooms[ra].floor_z;
        let pose = Pose3::from_xy_yaw(d.position_xy[0], d.position_xy[1], z, 0.0);
        let var = g.add_variable(sp, VarKind::Doorway, Value::Pose(pose), true);
        let pa = g.pose(rooms[ra].var).expect("room exists");
        let pb = g.pose(rooms[rb].var).expect("room exists");
        g.add_factor(
            FactorKind::Doorway { rel_a: pa.inverse().compose(&pose), rel_b: pb.inverse().compose(&pose) },
            vec![rooms[ra].var, rooms[rb].var, var],
            information_from_sigmas(&[STRUCT_SIGMA; 12]),
            None,
        )
        .expect("doorway factor is well formed");
        doorways.push(ADoorway { id: d.id.clone(), var, rooms: [ra, rb] });
    }

    Ok(AGraph { graph: g, origin, floors, walls, rooms, doorways, surfaces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surfaces_are_antipodal_and_width_apart() {
        let w = WallSpec {
            id: "W".into(),
            room_ids: vec![],
            axis: Axis::Y,
            offset: 3.0,
            extent: [0.0, 4.0],
            width: 0.2,
        };
        let a = w.surface(0);
        let b = w.surface(1);
        assert_eq!(a.normal, -b.normal);
        assert!((a.distance + b.distance + 0.2).abs() < 1e-15);
        assert!(a.signed_distance(&Vector3::new(1.0, 3.1, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_room_rejected() {
        let p = Plane::new(Vector3::x(), 0.0).unwrap();
        let q = Plane::new(Vector3::y(), 0.0).unwrap();
        assert_eq!(room_center_from_planes([&p, &q, &p, &q], 0.0), Err(RoomError::DegenerateRoom));
    }
}
