//! Paired as-planned / as-built worlds, robot tours and noisy sensor traces.
//!
//! Grid rooms are staggered row by row and column by column so that no two
//! distinct walls share a plane within sensing range. A corridor room can be
//! added south of the grid.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{transform_plane, Plane, Pose3};
use crate::online_slam::PlaneObservation;
use crate::plan_model::{Axis, DoorwaySpec, FloorSpec, PlanFile, RoomSpec, WallSpec};

pub const VISIBILITY_RADIUS: f64 = 8.0;
pub const STEP_LENGTH: f64 = 0.1;
pub const MAX_TURN_STEP_DEG: f64 = 10.0;
const MAX_DEVIATION_T: f64 = 0.5;
const MAX_DEVIATION_YAW_DEG: f64 = 20.0;
const JITTER: f64 = 0.3;
const DEFAULT_SIZE_STEP: f64 = 0.6;
const MIN_SAME_FACING_SEPARATION: f64 = 1.0;
const MIN_COPLANAR_GAP: f64 = 2.0;
const MIN_DOOR_OVERLAP: f64 = 1.0;
const CORRIDOR_GAP: f64 = 1.2;
const CORRIDOR_WIDTH: f64 = 2.2;
const MAX_LAYOUT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSpec {
    pub wall_id: String,
    /// Metres along the wall's surface-0 normal.
    pub d_translation: f64,
    /// Degrees about +z through the wall centre.
    pub d_yaw: f64,
    /// Move only this surface instead of the whole wall.
    #[serde(default)]
    pub surface: Option<usize>,
}

fn default_true() -> bool {
    true
}

fn default_size_step() -> f64 {
    DEFAULT_SIZE_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub seed: u64,
    /// `[rows, cols]`.
    pub grid: [usize; 2],
    pub room_size_xy: [f64; 2],
    pub wall_width: f64,
    #[serde(default)]
    pub corridor: bool,
    #[serde(default = "default_true")]
    pub jitter: bool,
    /// Room width grows by this much per column and depth per row, which
    /// breaks the point symmetry of the staggered grid. Zero gives equal rooms.
    #[serde(default = "default_size_step")]
    pub size_step: f64,
    #[serde(default)]
    pub deviations: Vec<DeviationSpec>,
}

impl EnvironmentSpec {
    pub fn grid(rows: usize, cols: usize, seed: u64) -> Self {
        Self {
            seed,
            grid: [rows, cols],
            room_size_xy: [4.0, 4.0],
            wall_width: 0.2,
            corridor: false,
            jitter: true,
            size_step: DEFAULT_SIZE_STEP,
            deviations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid environment spec: {0}")]
    Spec(String),
    #[error("no doorway path from room {0} to room {1}")]
    NoPath(String, String),
    #[error("trace parse error at line {line}: {reason}")]
    Trace { line: usize, reason: String },
}

/// Accumulated deviation of one wall relative to the plan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WallDeviation {
    pub translation: f64,
    pub yaw_deg: f64,
    /// Per-surface translation and yaw when only one face was moved.
    #[serde(default)]
    pub surface_only: [(f64, f64); 2],
}

impl WallDeviation {
    pub fn is_zero(&self) -> bool {
        self.translation == 0.0
            && self.yaw_deg == 0.0
            && self.surface_only.iter().all(|(t, y)| *t == 0.0 && *y == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSurface {
    /// Hidden ground-truth id, `2 * wall + side`.
    pub id: usize,
    pub wall: usize,
    pub side: usize,
    pub plane: Plane,
    pub segment: [Vector2<f64>; 2],
}

/// As-built world: the plan plus per-wall deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub plan: PlanFile,
    pub deviations: Vec<WallDeviation>,
}

impl WorldModel {
    pub fn from_plan(plan: PlanFile) -> Self {
        let n = plan.walls.len();
        Self { plan, deviations: vec![WallDeviation::default(); n] }
    }

    /// Adds deviations to the accumulated per-wall state.
    pub fn apply(&mut self, devs: &[DeviationSpec]) -> Result<(), SimError> {
        let mut next = self.deviations.clone();
        for d in devs {
            let wi = self
                .plan
                .wall_index(&d.wall_id)
                .ok_or_else(|| SimError::Spec(format!("deviation on nonexistent wall {}", d.wall_id)))?;
            if !(d.d_translation.abs() <= MAX_DEVIATION_T) || !(d.d_yaw.abs() <= MAX_DEVIATION_YAW_DEG) {
                return Err(SimError::Spec(format!("deviation on {} out of range", d.wall_id)));
            }
            match d.surface {
                None => {
                    next[wi].translation += d.d_translation;
                    next[wi].yaw_deg += d.d_yaw;
                }
                Some(s) if s < 2 => {
                    next[wi].surface_only[s].0 += d.d_translation;
                    next[wi].surface_only[s].1 += d.d_yaw;
                }
                Some(s) => return Err(SimError::Spec(format!("wall surface index {s} out of range"))),
            }
        }
        let candidate = WorldModel { plan: self.plan.clone(), deviations: next };
        candidate.check_rooms()?;
        *self = candidate;
        Ok(())
    }

    fn check_rooms(&self) -> Result<(), SimError> {
        let surfaces = self.surfaces();
        for (ri, r) in self.plan.rooms.iter().enumerate() {
            let walls = self.plan.room_walls(ri).map_err(|e| SimError::Spec(e.to_string()))?;
            let face = |k: usize, side: usize| surfaces[2 * walls[k] + side].plane;
            let w = walls.iter().map(|wi| self.plan.walls[*wi].width).fold(0.0, f64::max);
            for (a, b) in [(face(0, 0), face(1, 1)), (face(2, 0), face(3, 1))] {
                if a.distance + b.distance <= 2.0 * w || a.normal.dot(&b.normal) > -0.5 {
                    return Err(SimError::Spec(format!("room {} collapses after deviation", r.id)));
                }
            }
        }
        Ok(())
    }

    /// All surfaces of the as-built world, indexed by hidden id.
    pub fn surfaces(&self) -> Vec<WorldSurface> {
        let mut out = Vec::with_capacity(self.plan.walls.len() * 2);
        for (wi, w) in self.plan.walls.iter().enumerate() {
            let dev = self.deviations[wi];
            let c = w.center_xy();
            for side in 0..2 {
                let plane = w.surface(side);
                let seg = w.surface_segment(side);
                let (t, yaw) = (
                    dev.translation + dev.surface_only[side].0,
                    dev.yaw_deg + dev.surface_only[side].1,
                );
                let (plane, segment) = if t == 0.0 && yaw == 0.0 {
                    (plane, seg)
                } else {
                    let rot = nalgebra::Rotation2::new(yaw.to_radians());
                    let shift = w.axis.unit().xy() * t;
                    let seg = [rot * (seg[0] - c) + c + shift, rot * (seg[1] - c) + c + shift];
                    let n2 = rot * plane.normal.xy();
                    let n = Vector3::new(n2.x, n2.y, 0.0);
                    let p = Vector3::new(seg[0].x, seg[0].y, 0.0);
                    (Plane { normal: n, distance: -n.dot(&p) }, seg)
                };
                out.push(WorldSurface { id: 2 * wi + side, wall: wi, side, plane, segment });
            }
        }
        out
    }
}

struct Grid {
    /// `xs[r][k]`: lower x face of vertical wall `k` in row `r`.
    xs: Vec<Vec<f64>>,
    /// `ys[c][k]`: lower y face of horizontal wall `k` in column `c`.
    ys: Vec<Vec<f64>>,
}

fn stagger(size: f64, w: f64) -> f64 {
    (2.0f64).min((size + w) / 2.0 - 0.2)
}

fn draw_grid(spec: &EnvironmentSpec, rng: &mut ChaCha8Rng) -> Grid {
    let [rows, cols] = spec.grid;
    let [sx, sy] = spec.room_size_xy;
    let w = spec.wall_width;
    let (dx, dy) = (stagger(sx, w), stagger(sy, w));
    let jitter = |rng: &mut ChaCha8Rng| if spec.jitter { rng.random_range(-JITTER..JITTER) } else { 0.0 };
    // Lower face of wall k when cell j has size s + j * step.
    let face = |k: usize, s: f64| k as f64 * (s + w) + spec.size_step * (k * k.saturating_sub(1)) as f64 / 2.0;
    let xs = (0..rows)
        .map(|r| (0..=cols).map(|k| face(k, sx) + r as f64 * dx + jitter(rng)).collect())
        .collect();
    let ys = (0..cols)
        .map(|c| (0..=rows).map(|k| face(k, sy) - c as f64 * dy + jitter(rng)).collect())
        .collect();
    Grid { xs, ys }
}

fn room_id(r: usize, c: usize) -> String {
    format!("R{r}_{c}")
}

fn build_plan(spec: &EnvironmentSpec, g: &Grid) -> PlanFile {
    let [rows, cols] = spec.grid;
    let w = spec.wall_width;
    let interior = |r: usize, c: usize| {
        ([g.xs[r][c] + w, g.xs[r][c + 1]], [g.ys[c][r] + w, g.ys[c][r + 1]])
    };
    let mut rooms = Vec::new();
    let mut walls = Vec::new();
    let mut doorways = Vec::new();
    let room_spec = |id: String, x: [f64; 2], y: [f64; 2]| RoomSpec {
        id,
        floor: 0,
        center_xy: [(x[0] + x[1]) / 2.0, (y[0] + y[1]) / 2.0],
        size_xy: [x[1] - x[0], y[1] - y[0]],
    };

    let corridor = if spec.corridor {
        let y_top = (0..cols).map(|c| g.ys[c][0]).fold(f64::INFINITY, f64::min) - CORRIDOR_GAP - w;
        let y = [y_top - CORRIDOR_WIDTH, y_top];
        // Corridor end walls stay clear of every vertical grid wall.
        let x_lo = (0..rows).map(|r| g.xs[r][0]).fold(f64::INFINITY, f64::min);
        let x_hi = (0..rows).map(|r| g.xs[r][cols] + w).fold(f64::NEG_INFINITY, f64::max);
        let x = [x_lo - CORRIDOR_GAP, x_hi + CORRIDOR_GAP];
        rooms.push(room_spec("C0".into(), x, y));
        Some((x, y))
    } else {
        None
    };
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = interior(r, c);
            rooms.push(room_spec(room_id(r, c), x, y));
        }
    }

    let mut wid = 0;
    let mut push_wall = |walls: &mut Vec<WallSpec>, room_ids: Vec<String>, axis: Axis, lower: f64, extent: [f64; 2]| {
        walls.push(WallSpec { id: format!("W{wid}"), room_ids, axis, offset: lower + w / 2.0, extent, width: w });
        wid += 1;
    };
    for r in 0..rows {
        for k in 0..=cols {
            let adjacent: Vec<usize> = [k.checked_sub(1), (k < cols).then_some(k)].into_iter().flatten().collect();
            let lo = adjacent.iter().map(|&c| g.ys[c][r]).fold(f64::INFINITY, f64::min);
            let hi = adjacent.iter().map(|&c| g.ys[c][r + 1] + w).fold(f64::NEG_INFINITY, f64::max);
            let ids = adjacent.iter().map(|&c| room_id(r, c)).collect();
            push_wall(&mut walls, ids, Axis::X, g.xs[r][k], [lo, hi]);
        }
    }
    for c in 0..cols {
        for k in 0..=rows {
            let adjacent: Vec<usize> = [k.checked_sub(1), (k < rows).then_some(k)].into_iter().flatten().collect();
            let lo = adjacent.iter().map(|&r| g.xs[r][c]).fold(f64::INFINITY, f64::min);
            let hi = adjacent.iter().map(|&r| g.xs[r][c + 1] + w).fold(f64::NEG_INFINITY, f64::max);
            let ids = adjacent.iter().map(|&r| room_id(r, c)).collect();
            push_wall(&mut walls, ids, Axis::Y, g.ys[c][k], [lo, hi]);
        }
    }
    if let Some((x, y)) = corridor {
        let ids = vec!["C0".to_string()];
        let ext_y = [y[0] - w, y[1] + w];
        let ext_x = [x[0] - w, x[1] + w];
        push_wall(&mut walls, ids.clone(), Axis::X, x[0] - w, ext_y);
        push_wall(&mut walls, ids.clone(), Axis::X, x[1], ext_y);
        push_wall(&mut walls, ids.clone(), Axis::Y, y[0] - w, ext_x);
        push_wall(&mut walls, ids, Axis::Y, y[1], ext_x);
    }

    let mut did = 0;
    let mut push_door = |doorways: &mut Vec<DoorwaySpec>, a: String, b: String, p: [f64; 2]| {
        doorways.push(DoorwaySpec { id: format!("D{did}"), room_id_pair: [a, b], position_xy: p });
        did += 1;
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let (_, ya) = interior(r, c);
                let (_, yb) = interior(r, c + 1);
                let y = (ya[0].max(yb[0]) + ya[1].min(yb[1])) / 2.0;
                push_door(&mut doorways, room_id(r, c), room_id(r, c + 1), [g.xs[r][c + 1] + w / 2.0, y]);
            }
            if r + 1 < rows {
                let (xa, _) = interior(r, c);
                let (xb, _) = interior(r + 1, c);
                let x = (xa[0].max(xb[0]) + xa[1].min(xb[1])) / 2.0;
                push_door(&mut doorways, room_id(r, c), room_id(r + 1, c), [x, g.ys[c][r + 1] + w / 2.0]);
            }
        }
    }
    if let Some((_, y)) = corridor {
        for c in 0..cols {
            let (x, yr) = interior(0, c);
            let p = [(x[0] + x[1]) / 2.0, (y[1] + w + yr[0] - w) / 2.0];
            push_door(&mut doorways, "C0".into(), room_id(0, c), p);
        }
    }
    PlanFile { floors: vec![FloorSpec { level: 0, z_height: 0.0 }], rooms, walls, doorways }
}

fn interval_gap(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0].max(b[0]) - a[1].min(b[1])).max(0.0)
}

fn check_layout(plan: &PlanFile, spec: &EnvironmentSpec, g: &Grid) -> Result<(), String> {
    plan.validate().map_err(|e| e.to_string())?;
    let w = spec.wall_width;
    // Walls must not cut through room interiors.
    for wall in &plan.walls {
        let a = wall.axis;
        let slab = [wall.offset - w / 2.0, wall.offset + w / 2.0];
        for r in &plan.rooms {
            let lo = [r.center_xy[0] - r.size_xy[0] / 2.0, r.center_xy[1] - r.size_xy[1] / 2.0];
            let hi = [r.center_xy[0] + r.size_xy[0] / 2.0, r.center_xy[1] + r.size_xy[1] / 2.0];
            let (ai, bi) = if a == Axis::X { (0, 1) } else { (1, 0) };
            let o1 = slab[1].min(hi[ai]) - slab[0].max(lo[ai]);
            let o2 = wall.extent[1].min(hi[bi]) - wall.extent[0].max(lo[bi]);
            if o1 > 1e-9 && o2 > 1e-9 {
                return Err(format!("wall {} intersects room {}", wall.id, r.id));
            }
        }
    }
    // Same-facing surfaces of distinct walls must be separable.
    for (i, a) in plan.walls.iter().enumerate() {
        for b in plan.walls.iter().skip(i + 1) {
            if a.axis != b.axis {
                continue;
            }
            let sep = (a.offset - b.offset).abs();
            if sep < MIN_SAME_FACING_SEPARATION && interval_gap(a.extent, b.extent) < MIN_COPLANAR_GAP {
                return Err(format!("walls {} and {} are nearly coplanar", a.id, b.id));
            }
        }
    }
    // Doorways need a real opening.
    let [rows, cols] = spec.grid;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let ov = g.ys[c][r + 1].min(g.ys[c + 1][r + 1]) - (g.ys[c][r].max(g.ys[c + 1][r]) + w);
                if ov < MIN_DOOR_OVERLAP {
                    return Err("horizontal neighbours do not overlap".into());
                }
            }
            if r + 1 < rows {
                let ov = g.xs[r][c + 1].min(g.xs[r + 1][c + 1]) - (g.xs[r][c].max(g.xs[r + 1][c]) + w);
                if ov < MIN_DOOR_OVERLAP {
                    return Err("vertical neighbours do not overlap".into());
                }
            }
        }
    }
    Ok(())
}

/// Generates the plan and the as-built world for `spec`.
pub fn generate_environment(spec: &EnvironmentSpec) -> Result<(PlanFile, WorldModel), SimError> {
    let [rows, cols] = spec.grid;
    if rows == 0 || cols == 0 {
        return Err(SimError::Spec("grid must have at least one room".into()));
    }
    if !(spec.wall_width > 0.0) || spec.room_size_xy.iter().any(|s| !(*s > 2.0 * spec.wall_width)) {
        return Err(SimError::Spec("room size must exceed twice the wall width".into()));
    }
    if !(spec.size_step >= 0.0 && spec.size_step.is_finite()) {
        return Err(SimError::Spec("size step must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last = String::new();
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let g = draw_grid(spec, &mut rng);
        let plan = build_plan(spec, &g);
        match check_layout(&plan, spec, &g) {
            Ok(()) => {
                let mut world = WorldModel::from_plan(plan.clone());
                world.apply(&spec.deviations)?;
                return Ok((plan, world));
            }
            Err(e) => {
                last = e;
                if !spec.jitter {
                    break;
                }
            }
        }
    }
    Err(SimError::Spec(format!("no valid layout: {last}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

fn doorway_graph(plan: &PlanFile) -> BTreeMap<usize, Vec<(usize, [f64; 2])>> {
    let mut adj: BTreeMap<usize, Vec<(usize, [f64; 2])>> = BTreeMap::new();
    for d in &plan.doorways {
        let (Some(a), Some(b)) = (plan.room_index(&d.room_id_pair[0]), plan.room_index(&d.room_id_pair[1])) else {
            continue;
        };
        adj.entry(a).or_default().push((b, d.position_xy));
        adj.entry(b).or_default().push((a, d.position_xy));
    }
    for v in adj.values_mut() {
        v.sort_by(|x, y| x.0.cmp(&y.0));
    }
    adj
}

fn room_path(plan: &PlanFile, from: usize, to: usize) -> Result<Vec<(usize, [f64; 2])>, SimError> {
    let adj = doorway_graph(plan);
    let mut prev: BTreeMap<usize, (usize, [f64; 2])> = BTreeMap::new();
    let mut seen = BTreeSet::from([from]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        if u == to {
            break;
        }
        for &(v, door) in adj.get(&u).map(|x| x.as_slice()).unwrap_or(&[]) {
            if seen.insert(v) {
                prev.insert(v, (u, door));
                q.push_back(v);
            }
        }
    }
    if !seen.contains(&to) {
        return Err(SimError::NoPath(plan.rooms[from].id.clone(), plan.rooms[to].id.clone()));
    }
    let mut hops = Vec::new();
    let mut cur = to;
    while cur != from {
        let (p, door) = prev[&cur];
        hops.push((cur, door));
        cur = p;
    }
    hops.reverse();
    Ok(hops)
}

/// Greedy tour: from the first room, repeatedly the closest unvisited room
/// by doorway hops, ties broken by room order.
pub fn default_visit_order(plan: &PlanFile) -> Vec<String> {
    if plan.rooms.is_empty() {
        return Vec::new();
    }
    let mut order = vec![0];
    let mut visited = BTreeSet::from([0]);
    while visited.len() < plan.rooms.len() {
        let cur = *order.last().expect("non-empty");
        let best = (0..plan.rooms.len())
            .filter(|r| !visited.contains(r))
            .filter_map(|r| room_path(plan, cur, r).ok().map(|p| (p.len(), r)))
            .min();
        match best {
            Some((_, r)) => {
                order.push(r);
                visited.insert(r);
            }
            None => break,
        }
    }
    order.into_iter().map(|i| plan.rooms[i].id.clone()).collect()
}

fn viewpoints(r: &RoomSpec) -> Vec<Vector2<f64>> {
    let c = Vector2::new(r.center_xy[0], r.center_xy[1]);
    let a = 0.25 * r.size_xy[0];
    let b = 0.25 * r.size_xy[1];
    vec![c + Vector2::new(a, 0.0), c + Vector2::new(0.0, b), c - Vector2::new(a, 0.0), c - Vector2::new(0.0, b)]
}

/// Piecewise-linear tour through the rooms in `visit_order`, passing
/// through doorway positions, sampled at [`STEP_LENGTH`] with in-place
/// turns of at most [`MAX_TURN_STEP_DEG`].
pub fn plan_trajectory(world: &WorldModel, visit_order: &[String]) -> Result<Vec<Waypoint>, SimError> {
    let plan = &world.plan;
    let idx: Vec<usize> = visit_order
        .iter()
        .map(|id| plan.room_index(id).ok_or_else(|| SimError::Spec(format!("unknown room {id}"))))
        .collect::<Result<_, _>>()?;
    let Some(&first) = idx.first() else {
        return Ok(Vec::new());
    };
    let centre = |i: usize| Vector2::new(plan.rooms[i].center_xy[0], plan.rooms[i].center_xy[1]);
    let mut points = vec![centre(first)];
    points.extend(viewpoints(&plan.rooms[first]));
    if idx.len() == 1 {
        points.push(centre(first));
    }
    for w in idx.windows(2) {
        for (room, door) in room_path(plan, w[0], w[1])? {
            points.push(Vector2::new(door[0], door[1]));
            points.push(centre(room));
        }
        points.extend(viewpoints(&plan.rooms[w[1]]));
    }
    Ok(sample_path(&points))
}

fn sample_path(points: &[Vector2<f64>]) -> Vec<Waypoint> {
    let mut out = Vec::new();
    let first_heading = points
        .windows(2)
        .find(|w| (w[1] - w[0]).norm() > 1e-9)
        .map(|w| (w[1] - w[0]).y.atan2((w[1] - w[0]).x))
        .unwrap_or(0.0);
    let mut yaw = first_heading;
    out.push(Waypoint { x: points[0].x, y: points[0].y, yaw });
    for w in points.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        if len < 1e-9 {
            continue;
        }
        let heading = d.y.atan2(d.x);
        let turn = crate::geometry::wrap_angle(heading - yaw);
        let n_turn = (turn.abs() / MAX_TURN_STEP_DEG.to_radians() - 1e-9).ceil().max(0.0) as usize;
        for k in 1..=n_turn {
            out.push(Waypoint { x: w[0].x, y: w[0].y, yaw: yaw + turn * k as f64 / n_turn as f64 });
        }
        yaw = heading;
        let n = (len / STEP_LENGTH - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n {
            let p = w[0] + d * (k as f64 / n as f64);
            out.push(Waypoint { x: p.x, y: p.y, yaw });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseParams {
    pub odom_sigma_t: f64,
    /// Radians per step.
    pub odom_sigma_r: f64,
    /// Metres per step along the direction of travel.
    pub odom_bias: f64,
    pub plane_sigma_d: f64,
    /// Radians.
    pub plane_sigma_n: f64,
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        Self { odom_sigma_t: 0.001, odom_sigma_r: 0.02f64.to_radians(), odom_bias: 0.0, plane_sigma_d: 0.01, plane_sigma_n: 0.2f64.to_radians() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub seed: u64,
    pub noise: NoiseParams,
    pub ground_truth: Vec<Pose3>,
    pub deviations: Vec<DeviationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub odom_delta: Pose3,
    pub observations: Vec<PlaneObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(p: Vector2<f64>, q: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> bool {
    let d1 = cross2(q - p, a - p);
    let d2 = cross2(q - p, b - p);
    let d3 = cross2(b - a, p - a);
    let d4 = cross2(b - a, q - a);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Whether `s` is seen from `p`: it faces `p`, lies within range, the
/// perpendicular foot is on the segment and no other surface blocks the ray.
pub fn is_visible(p: Vector2<f64>, s: &WorldSurface, all: &[WorldSurface]) -> bool {
    let n = s.plane.normal.xy();
    let sd = n.dot(&p) + s.plane.distance;
    if !(sd > 0.0 && sd <= VISIBILITY_RADIUS) {
        return false;
    }
    let foot = p - n * sd;
    let ab = s.segment[1] - s.segment[0];
    let t = (foot - s.segment[0]).dot(&ab) / ab.norm_squared();
    if !(0.0..=1.0).contains(&t) {
        return false;
    }
    let end = p + (foot - p) * (1.0 - 1e-9);
    !all.iter().any(|o| o.id != s.id && segments_cross(p, end, o.segment[0], o.segment[1]))
}

fn planar_pose(w: &Waypoint, z: f64) -> Pose3 {
    Pose3::from_xy_yaw(w.x, w.y, z, w.yaw)
}

/// Simulates odometry and plane observations along `waypoints`.
pub fn simulate_run(world: &WorldModel, waypoints: &[Waypoint], noise: &NoiseParams, seed: u64) -> SensorTrace {
    let z = world.plan.floors.first().map(|f| f.z_height).unwrap_or(0.0);
    let surfaces = world.surfaces();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |s: f64| Normal::new(0.0, s.max(0.0)).expect("finite sigma");
    let (nt, nr, nd, nn) = (
        normal(noise.odom_sigma_t),
        normal(noise.odom_sigma_r),
        normal(noise.plane_sigma_d),
        normal(noise.plane_sigma_n),
    );
    let mut records = Vec::with_capacity(waypoints.len());
    let mut gt = Vec::with_capacity(waypoints.len());
    for (k, w) in waypoints.iter().enumerate() {
        let pose = planar_pose(w, z);
        let odom_delta = if k == 0 {
            Pose3::identity()
        } else {
            let prev = planar_pose(&waypoints[k - 1], z);
            let d = prev.inverse().compose(&pose);
            let t = d.translation.xy();
            let len = t.norm();
            let bias = if len > 1e-9 { t / len * noise.odom_bias } else { Vector2::zeros() };
            let ex = nt.sample(&mut rng);
            let ey = nt.sample(&mut rng);
            let eyaw = nr.sample(&mut rng);
            Pose3::from_xy_yaw(t.x + ex + bias.x, t.y + ey + bias.y, 0.0, d.yaw() + eyaw)
        };
        let inv = pose.inverse();
        let p = Vector2::new(w.x, w.y);
        let mut observations = Vec::new();
        for s in &surfaces {
            if !is_visible(p, s, &surfaces) {
                continue;
            }
            let local = transform_plane(&inv, &s.plane);
            let rv = Vector3::new(nn.sample(&mut rng), nn.sample(&mut rng), nn.sample(&mut rng));
            let n = UnitQuaternion::from_scaled_axis(rv) * local.normal;
            let plane = Plane { normal: n / n.norm(), distance: local.distance + nd.sample(&mut rng) };
            observations.push(PlaneObservation { plane, step: k, surface_id: s.id });
        }
        gt.push(pose);
        records.push(TraceRecord { odom_delta, observations });
    }
    let deviations = injected_deviations(world);
    SensorTrace { header: TraceHeader { seed, noise: *noise, ground_truth: gt, deviations }, records }
}

/// Non-zero accumulated deviations as a list.
pub fn injected_deviations(world: &WorldModel) -> Vec<DeviationSpec> {
    let mut out = Vec::new();
    for (wi, d) in world.deviations.iter().enumerate() {
        let id = world.plan.walls[wi].id.clone();
        if d.translation != 0.0 || d.yaw_deg != 0.0 {
            out.push(DeviationSpec { wall_id: id.clone(), d_translation: d.translation, d_yaw: d.yaw_deg, surface: None });
        }
        for (s, (t, y)) in d.surface_only.iter().enumerate() {
            if *t != 0.0 || *y != 0.0 {
                out.push(DeviationSpec { wall_id: id.clone(), d_translation: *t, d_yaw: *y, surface: Some(s) });
            }
        }
    }
    out
}

fn pose_fields(p: &Pose3) -> String {
    let q = p.rotation;
    format!("{} {} {} {} {} {} {}", p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w)
}

pub fn write_trace(trace: &SensorTrace) -> String {
    let mut s = String::new();
    let h = &trace.header;
    let _ = writeln!(s, "# format=devslam-trace-1");
    let _ = writeln!(s, "# seed={}", h.seed);
    let _ = writeln!(s, "# odom_sigma_t={}", h.noise.odom_sigma_t);
    let _ = writeln!(s, "# odom_sigma_r={}", h.noise.odom_sigma_r);
    let _ = writeln!(s, "# odom_bias={}", h.noise.odom_bias);
    let _ = writeln!(s, "# plane_sigma_d={}", h.noise.plane_sigma_d);
    let _ = writeln!(s, "# plane_sigma_n={}", h.noise.plane_sigma_n);
    for d in &h.deviations {
        let surf = d.surface.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "# deviation={} {} {} {}", d.wall_id, d.d_translation, d.d_yaw, surf);
    }
    for (k, p) in h.ground_truth.iter().enumerate() {
        let _ = writeln!(s, "# gt={} {}", k, pose_fields(p));
    }
    for r in &trace.records {
        let _ = writeln!(s, "ODOM {}", pose_fields(&r.odom_delta));
        for o in &r.observations {
            let n = o.plane.normal;
            let _ = writeln!(s, "OBS {} {} {} {} {}", o.surface_id, n.x, n.y, n.z, o.plane.distance);
        }
    }
    s
}

fn parse_pose(f: &[f64]) -> Pose3 {
    Pose3::new(
        Unit::new_unchecked(Quaternion::new(f[6], f[3], f[4], f[5])),
        Vector3::new(f[0], f[1], f[2]),
    )
}

pub fn parse_trace(text: &str) -> Result<SensorTrace, SimError> {
    let mut noise = NoiseParams::zero();
    let mut seed = 0;
    let mut gt = Vec::new();
    let mut deviations = Vec::new();
    let mut records: Vec<TraceRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |reason: &str| SimError::Trace { line: i + 1, reason: reason.to_string() };
        let floats = |parts: &[&str]| -> Result<Vec<f64>, SimError> {
            parts.iter().map(|p| p.parse::<f64>().map_err(|_| err("bad number"))).collect()
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix('#') {
            let Some((k, v)) = kv.trim().split_once('=') else {
                continue;
            };
            let num = || v.trim().parse::<f64>().map_err(|_| err("bad header value"));
            match k.trim() {
                "seed" => seed = v.trim().parse().map_err(|_| err("bad seed"))?,
                "odom_sigma_t" => noise.odom_sigma_t = num()?,
                "odom_sigma_r" => noise.odom_sigma_r = num()?,
                "odom_bias" => noise.odom_bias = num()?,
                "plane_sigma_d" => noise.plane_sigma_d = num()?,
                "plane_sigma_n" => noise.plane_sigma_n = num()?,
                "deviation" => {
                    let p: Vec<&str> = v.split_whitespace().collect();
                    if p.len() != 4 {
                        return Err(err("deviation needs 4 fields"));
                    }
                    let f = floats(&p[1..3])?;
                    let surface = if p[3] == "-" { None } else { Some(p[3].parse().map_err(|_| err("bad surface"))?) };
                    deviations.push(DeviationSpec { wall_id: p[0].to_string(), d_translation: f[0], d_yaw: f[1], surface });
                }
                "gt" => {
                    let p: Vec<&str> = v.split_whitespace().collect();
                    if p.len() != 8 {
                        return Err(err("gt needs 8 fields"));
                    }
                    gt.push(parse_pose(&floats(&p[1..])?));
                }
                _ => {}
            }
            continue;
        }
        let p: Vec<&str> = line.split_whitespace().collect();
        match p[0] {
            "ODOM" if p.len() == 8 => {
                records.push(TraceRecord { odom_delta: parse_pose(&floats(&p[1..])?), observations: Vec::new() });
            }
            "OBS" if p.len() == 6 => {
                let id: usize = p[1].parse().map_err(|_| err("bad surface id"))?;
                let f = floats(&p[2..])?;
                let step = records.len().checked_sub(1).ok_or_else(|| err("OBS before ODOM"))?;
                let plane = Plane { normal: Vector3::new(f[0], f[1], f[2]), distance: f[3] };
                if (plane.normal.norm() - 1.0).abs() > 1e-6 {
                    return Err(err("normal is not unit length"));
                }
                records[step].observations.push(PlaneObservation { plane, step, surface_id: id });
            }
            _ => return Err(err("unknown record")),
        }
    }
    Ok(SensorTrace { header: TraceHeader { seed, noise, ground_truth: gt, deviations }, records })
}
