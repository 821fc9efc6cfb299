//! Hierarchical plan-to-map matching with a strict stage for
//! non-deviated elements and a relaxed stage for deviated ones.
//!
//! Candidates are generated per room-pair hypothesis (A room, S room and a
//! multiple of 90° yaw), filtered by pairwise geometric consistency via an
//! exact maximum clique, and scored. A match is unique when the best
//! hypothesis outscores the runner-up by the uniqueness margin.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_graph::VariableId;
use crate::geometry::{angle_between, transform_plane, wrap_angle, Plane, Pose3};
use crate::online_slam::{Parent, SGraph};
use crate::plan_model::AGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub eps_room: f64,
    pub eps_wall_strict_m: f64,
    pub eps_wall_strict_deg: f64,
    pub eps_wall_dev_m: f64,
    pub eps_wall_dev_deg: f64,
    pub uniqueness_margin: f64,
    pub min_rooms: usize,
    pub max_tilt_deg: f64,
    /// Maximum normal angle when pairing room surfaces by orientation.
    pub surface_normal_gate_deg: f64,
    pub orphan_weight: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            eps_room: 0.5,
            eps_wall_strict_m: 0.10,
            eps_wall_strict_deg: 3.0,
            eps_wall_dev_m: 0.60,
            eps_wall_dev_deg: 20.0,
            uniqueness_margin: 1.3,
            min_rooms: 2,
            max_tilt_deg: 2.0,
            surface_normal_gate_deg: 20.0,
            orphan_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Strict,
    Deviated,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Strict => "strict",
            Stage::Deviated => "deviated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPair {
    /// Index into `AGraph::rooms`.
    pub a: usize,
    /// Index into `SGraph::rooms`.
    pub s: usize,
    /// Yaw by a multiple of 90° that aligns the S room frame with the A room.
    pub alignment: Pose3,
    pub p_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePair {
    pub a: VariableId,
    pub s: VariableId,
    pub p_dev: f64,
    pub stage: Stage,
    /// A room the pair was found in.
    pub a_room: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub room_pairs: Vec<RoomPair>,
    pub surface_pairs: Vec<SurfacePair>,
    pub transform_seed: Pose3,
    pub score: f64,
    pub unique: bool,
}

impl MatchResult {
    /// `ROOMPAIR a s` and `SURFPAIR a s p_dev stage` lines.
    pub fn to_lines(&self, agraph: &AGraph, sgraph: &SGraph) -> String {
        let mut out = String::new();
        for r in &self.room_pairs {
            out.push_str(&format!("ROOMPAIR {} {}\n", agraph.rooms[r.a].var, sgraph.rooms[r.s].var));
        }
        for s in &self.surface_pairs {
            out.push_str(&format!("SURFPAIR {} {} {:.6} {}\n", s.a, s.s, s.p_dev, s.stage));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoMatchReason {
    InsufficientRooms,
    SymmetricAmbiguity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("no unique match: {reason:?} (best {best:.3}, second {second:.3})")]
    NoUniqueMatch { reason: NoMatchReason, best: f64, second: f64 },
}

/// Maximum clique of an undirected graph. Among cliques of maximum size the
/// lexicographically smallest sorted index sequence wins.
pub fn max_clique(adj: &[Vec<bool>]) -> Vec<usize> {
    let n = adj.len();
    let mut best: Vec<usize> = Vec::new();
    let mut r = Vec::new();
    let p: Vec<usize> = (0..n).collect();
    bron_kerbosch(adj, &mut r, p, Vec::new(), &mut best);
    best
}

fn bron_kerbosch(adj: &[Vec<bool>], r: &mut Vec<usize>, p: Vec<usize>, x: Vec<usize>, best: &mut Vec<usize>) {
    if p.is_empty() && x.is_empty() {
        let mut c = r.clone();
        c.sort_unstable();
        if c.len() > best.len() || (c.len() == best.len() && c < *best) {
            *best = c;
        }
        return;
    }
    if r.len() + p.len() < best.len() {
        return;
    }
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| (p.iter().filter(|&&v| v != u && adj[u][v]).count(), std::cmp::Reverse(u)))
        .expect("p or x non-empty");
    let mut p = p;
    let mut x = x;
    // Self-loops in `adj` are ignored.
    let branch: Vec<usize> = p.iter().copied().filter(|&v| v == pivot || !adj[pivot][v]).collect();
    for v in branch {
        r.push(v);
        let np = p.iter().copied().filter(|&u| u != v && adj[v][u]).collect();
        let nx = x.iter().copied().filter(|&u| u != v && adj[v][u]).collect();
        bron_kerbosch(adj, r, np, nx, best);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

/// Pairwise distance consistency of correspondences `a[i] <-> s[i]`.
/// Returns the score `clique size + (1 - mean residual / eps)` and the
/// clique as indices into the input.
pub fn consistency_score(a: &[Vector3<f64>], s: &[Vector3<f64>], eps: f64) -> (f64, Vec<usize>) {
    let n = a.len().min(s.len());
    let mut res = vec![vec![0.0; n]; n];
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = ((a[i] - a[j]).norm() - (s[i] - s[j]).norm()).abs();
            res[i][j] = r;
            res[j][i] = r;
            adj[i][j] = r <= eps;
            adj[j][i] = r <= eps;
        }
    }
    let clique = max_clique(&adj);
    let mut sum = 0.0;
    let mut count = 0;
    for (k, &i) in clique.iter().enumerate() {
        for &j in &clique[k + 1..] {
            sum += res[i][j];
            count += 1;
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    let refine = if clique.is_empty() { 0.0 } else { 1.0 - mean / eps };
    (clique.len() as f64 + refine, clique)
}

/// Widths between the opposite inward-facing planes, measured through the
/// room centre so that a rotated wall does not distort them.
fn room_widths(planes: &[Plane; 4], centre: &Vector3<f64>) -> [f64; 2] {
    let d = planes.map(|p| p.signed_distance(centre));
    [d[0] + d[1], d[2] + d[3]]
}

struct ARoomView {
    centre: Vector3<f64>,
    yaw: f64,
    widths: [f64; 2],
    surfaces: [VariableId; 4],
    planes: [Plane; 4],
    faces: [Vector3<f64>; 4],
}

struct SRoomView {
    centre: Vector3<f64>,
    yaw: f64,
    widths: [f64; 2],
    surfaces: [VariableId; 4],
    planes: [Plane; 4],
}

fn a_views(ag: &AGraph) -> Vec<ARoomView> {
    ag.rooms
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let pose = ag.room_pose(i);
            let planes = r.surfaces.map(|v| ag.graph.plane(v).expect("A surface"));
            ARoomView {
                centre: pose.translation,
                yaw: pose.yaw(),
                widths: room_widths(&planes, &pose.translation),
                surfaces: r.surfaces,
                planes,
                faces: r.surfaces.map(|v| ag.surfaces[&v].face_center),
            }
        })
        .collect()
}

fn s_views(sg: &SGraph) -> Vec<SRoomView> {
    sg.rooms
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let pose = sg.room_pose(i);
            let planes = r.planes.map(|p| sg.plane(p));
            SRoomView {
                centre: pose.translation,
                yaw: pose.yaw(),
                widths: room_widths(&planes, &pose.translation),
                surfaces: r.planes.map(|p| sg.planes[p].var),
                planes,
            }
        })
        .collect()
}

struct Candidate {
    a_room: usize,
    a: VariableId,
    s: VariableId,
    dist: f64,
    angle_deg: f64,
    a_point: Vector3<f64>,
    s_point: Vector3<f64>,
}

/// Result of evaluating one transform hypothesis.
struct Hypothesis {
    rooms: Vec<(usize, usize)>,
    strict: Vec<Candidate>,
    deviated: Vec<(Candidate, f64)>,
    transform: Pose3,
    score: f64,
}

fn yaw_pose(yaw: f64, t: Vector2<f64>, z: f64) -> Pose3 {
    Pose3::from_xy_yaw(t.x, t.y, z, yaw)
}

fn quarter_turn(yaw: f64) -> i32 {
    (wrap_angle(yaw) / std::f64::consts::FRAC_PI_2).round() as i32
}

/// Rotation tilt implied by aligning `from` normals onto `to` normals.
fn kabsch_tilt_deg(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let mut h = Matrix3::zeros();
    for (f, t) in from.iter().zip(to) {
        h += f * t.transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else { return 0.0 };
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let z = r * Vector3::z();
    angle_between(&z, &Vector3::z()).to_degrees()
}

struct Ctx<'a> {
    ag: &'a AGraph,
    sg: &'a SGraph,
    av: Vec<ARoomView>,
    sv: Vec<SRoomView>,
    params: MatchParams,
    floor_z: f64,
}

impl<'a> Ctx<'a> {
    fn new(ag: &'a AGraph, sg: &'a SGraph, params: &MatchParams) -> Self {
        let floor_z = ag.floors.first().map(|f| f.z_height).unwrap_or(0.0);
        Self { ag, sg, av: a_views(ag), sv: s_views(sg), params: *params, floor_z }
    }

    fn widths_compatible(&self, a: usize, s: usize, yaw: f64) -> bool {
        let sw = self.sv[s].widths;
        let rel = quarter_turn(self.av[a].yaw - yaw - self.sv[s].yaw);
        let sw = if rel.rem_euclid(2) == 1 { [sw[1], sw[0]] } else { sw };
        let tol = self.params.eps_wall_dev_m;
        (sw[0] - self.av[a].widths[0]).abs() <= tol && (sw[1] - self.av[a].widths[1]).abs() <= tol
    }

    /// Pairs each A surface of the room with the S surface whose mapped
    /// normal is closest.
    fn surface_candidates(&self, a: usize, s: usize, t: &Pose3) -> Vec<Candidate> {
        let ar = &self.av[a];
        let sr = &self.sv[s];
        let tinv = t.inverse();
        let a_centre_in_s = tinv.transform_point(&ar.centre);
        let gate = self.params.surface_normal_gate_deg;
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for j in 0..4 {
            let best = (0..4)
                .filter(|k| !used.contains(k))
                .map(|k| (k, transform_plane(t, &sr.planes[k])))
                .map(|(k, m)| (k, m, angle_between(&m.normal, &ar.planes[j].normal).to_degrees()))
                .min_by(|x, y| x.2.total_cmp(&y.2));
            let Some((k, mapped, ang)) = best else { continue };
            if ang >= gate {
                continue;
            }
            used.insert(k);
            out.push(Candidate {
                a_room: a,
                a: ar.surfaces[j],
                s: sr.surfaces[k],
                dist: mapped.signed_distance(&ar.faces[j]).abs(),
                angle_deg: ang,
                a_point: ar.planes[j].closest_point(&ar.centre),
                s_point: sr.planes[k].closest_point(&a_centre_in_s),
            });
        }
        out
    }

    fn is_strict(&self, c: &Candidate) -> bool {
        c.dist <= self.params.eps_wall_strict_m && c.angle_deg <= self.params.eps_wall_strict_deg
    }

    fn deviation_probability(&self, c: &Candidate) -> Option<f64> {
        let p = &self.params;
        if c.dist / p.eps_wall_dev_m > 1.0 || c.angle_deg / p.eps_wall_dev_deg > 1.0 {
            return None;
        }
        let rt = (c.dist - p.eps_wall_strict_m) / (p.eps_wall_dev_m - p.eps_wall_strict_m);
        let rr = (c.angle_deg - p.eps_wall_strict_deg) / (p.eps_wall_dev_deg - p.eps_wall_strict_deg);
        Some(rt.max(rr).clamp(0.0, 1.0))
    }

    /// Closed-form yaw and planar translation from surface correspondences
    /// and (weakly weighted) room centres.
    fn refine(&self, strict: &[&Candidate], rooms: &[(usize, usize)], prior: &Pose3, room_weight: f64) -> Pose3 {
        let (mut sx, mut sy) = (0.0, 0.0);
        for c in strict {
            let na = self.ag.graph.plane(c.a).expect("A surface").normal;
            let ns = self.sg.graph.plane(c.s).expect("S surface").normal;
            let d = wrap_angle(na.y.atan2(na.x) - ns.y.atan2(ns.x) - prior.yaw());
            sx += d.cos();
            sy += d.sin();
        }
        let yaw = if strict.is_empty() { prior.yaw() } else { prior.yaw() + sy.atan2(sx) };
        let rot = nalgebra::Rotation2::new(yaw);
        let mut h = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for c in strict {
            let ps = self.sg.graph.plane(c.s).expect("S surface");
            let n = rot * ps.normal.xy();
            // The mapped S plane should pass through the A face centre.
            let face = self.ag.surfaces[&c.a].face_center.xy();
            let rhs = ps.distance + n.dot(&face);
            h += n * n.transpose();
            b += n * rhs;
        }
        for &(a, s) in rooms {
            let r = self.av[a].centre.xy() - rot * self.sv[s].centre.xy();
            h += Matrix2::identity() * room_weight;
            b += r * room_weight;
        }
        let t = h.try_inverse().map(|hi| hi * b).unwrap_or(prior.translation.xy());
        yaw_pose(yaw, t, self.floor_z)
    }

    fn orphan_score(&self, t: &Pose3) -> f64 {
        let mut n = 0;
        for sp in &self.sg.planes {
            if matches!(sp.parent, Some(Parent::Room(_))) {
                continue;
            }
            let m = transform_plane(t, &self.sg.graph.plane(sp.var).expect("S surface"));
            let hit = self.ag.surfaces.iter().any(|(v, info)| {
                let pa = self.ag.graph.plane(*v).expect("A surface");
                angle_between(&pa.normal, &m.normal).to_degrees() <= self.params.eps_wall_strict_deg
                    && m.signed_distance(&info.face_center).abs() <= self.params.eps_wall_strict_m
            });
            if hit {
                n += 1;
            }
        }
        n as f64 * self.params.orphan_weight
    }

    /// Strict and deviated surface pairs for the given room pairs.
    fn classify(&self, rooms: &[(usize, usize)], t: &Pose3) -> (Vec<Candidate>, Vec<(Candidate, f64)>, f64) {
        let mut all: Vec<Candidate> = rooms.iter().flat_map(|&(a, s)| self.surface_candidates(a, s, t)).collect();
        let strict_idx: Vec<usize> = (0..all.len()).filter(|&i| self.is_strict(&all[i])).collect();
        let pa: Vec<Vector3<f64>> = strict_idx.iter().map(|&i| all[i].a_point).collect();
        let ps: Vec<Vector3<f64>> = strict_idx.iter().map(|&i| all[i].s_point).collect();
        let (score, clique) = consistency_score(&pa, &ps, self.params.eps_wall_strict_m);
        let keep: BTreeSet<usize> = clique.iter().map(|&k| strict_idx[k]).collect();
        let mut strict = Vec::new();
        let mut deviated = Vec::new();
        for (i, c) in all.drain(..).enumerate() {
            if keep.contains(&i) {
                strict.push(c);
            } else if let Some(p) = self.deviation_probability(&c) {
                deviated.push((c, p));
            }
        }
        (strict, deviated, score)
    }

    fn evaluate(&self, a0: usize, s0: usize, k: i32) -> Option<Hypothesis> {
        let p = &self.params;
        let yaw = wrap_angle(self.av[a0].yaw - self.sv[s0].yaw + k as f64 * std::f64::consts::FRAC_PI_2);
        if !self.widths_compatible(a0, s0, yaw) {
            return None;
        }
        let rot = nalgebra::Rotation2::new(yaw);
        let t0 = yaw_pose(yaw, self.av[a0].centre.xy() - rot * self.sv[s0].centre.xy(), self.floor_z);

        // Room candidates: nearest compatible A room for each mapped S room.
        let mut cands = Vec::new();
        for s in 0..self.sv.len() {
            let c = t0.transform_point(&self.sv[s].centre);
            for a in 0..self.av.len() {
                let d = (c - self.av[a].centre).xy().norm();
                if d <= p.eps_room && self.widths_compatible(a, s, yaw) {
                    cands.push((d, a, s));
                }
            }
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let (mut ua, mut us) = (BTreeSet::new(), BTreeSet::new());
        let mut pairs = Vec::new();
        for (_, a, s) in cands {
            if ua.insert(a) && us.insert(s) {
                pairs.push((a, s));
            }
        }
        pairs.sort_unstable();
        let ca: Vec<Vector3<f64>> = pairs.iter().map(|&(a, _)| self.av[a].centre).collect();
        let cs: Vec<Vector3<f64>> = pairs.iter().map(|&(_, s)| self.sv[s].centre).collect();
        let (room_score, clique) = consistency_score(&ca, &cs, p.eps_room);
        let rooms: Vec<(usize, usize)> = clique.iter().map(|&i| pairs[i]).collect();
        if rooms.len() < p.min_rooms.min(self.sv.len()).max(1) {
            return None;
        }

        // Refine from candidates within the relaxed gate, then from the
        // strict set only.
        let first: Vec<Candidate> = rooms.iter().flat_map(|&(a, s)| self.surface_candidates(a, s, &t0)).collect();
        let loose: Vec<&Candidate> =
            first.iter().filter(|c| c.dist <= p.eps_wall_dev_m / 2.0 && c.angle_deg <= p.eps_wall_dev_deg / 2.0).collect();
        let t1 = self.refine(&loose, &rooms, &t0, 1.0);
        let (strict1, _, _) = self.classify(&rooms, &t1);
        let t2 = self.refine(&strict1.iter().collect::<Vec<_>>(), &rooms, &t1, 1e-3);
        let (strict, deviated, surf_score) = self.classify(&rooms, &t2);

        let from: Vec<Vector3<f64>> =
            strict.iter().map(|c| t2.rotation * self.sg.graph.plane(c.s).expect("S surface").normal).collect();
        let to: Vec<Vector3<f64>> = strict.iter().map(|c| self.ag.graph.plane(c.a).expect("A surface").normal).collect();
        if kabsch_tilt_deg(&from, &to) > p.max_tilt_deg {
            return None;
        }
        let score = room_score + surf_score + self.orphan_score(&t2);
        Some(Hypothesis { rooms, strict, deviated, transform: t2, score })
    }

    fn alignment(&self, a: usize, s: usize, t: &Pose3) -> Pose3 {
        let k = quarter_turn(self.av[a].yaw - t.yaw() - self.sv[s].yaw);
        Pose3::from_yaw(k as f64 * std::f64::consts::FRAC_PI_2, Vector3::zeros())
    }

    fn to_result(&self, h: Hypothesis, unique: bool) -> MatchResult {
        let mut surface_pairs: Vec<SurfacePair> = h
            .strict
            .iter()
            .map(|c| SurfacePair { a: c.a, s: c.s, p_dev: 0.0, stage: Stage::Strict, a_room: c.a_room })
            .chain(h.deviated.iter().map(|(c, p)| SurfacePair {
                a: c.a,
                s: c.s,
                p_dev: *p,
                stage: Stage::Deviated,
                a_room: c.a_room,
            }))
            .collect();
        surface_pairs.sort_by(|x, y| x.a.cmp(&y.a));
        let room_pairs = h
            .rooms
            .iter()
            .map(|&(a, s)| {
                let p_dev = surface_pairs.iter().filter(|sp| sp.a_room == a).map(|sp| sp.p_dev).fold(0.0, f64::max);
                RoomPair { a, s, alignment: self.alignment(a, s, &h.transform), p_dev }
            })
            .collect();
        MatchResult { room_pairs, surface_pairs, transform_seed: h.transform, score: h.score, unique }
    }
}

/// Matches the whole S-graph against the plan.
pub fn global_match(ag: &AGraph, sg: &SGraph, params: &MatchParams) -> Result<MatchResult, MatchError> {
    if sg.rooms.len() < params.min_rooms {
        return Err(MatchError::NoUniqueMatch { reason: NoMatchReason::InsufficientRooms, best: 0.0, second: 0.0 });
    }
    let ctx = Ctx::new(ag, sg, params);
    let mut best_by_set: BTreeMap<Vec<(usize, usize)>, Hypothesis> = BTreeMap::new();
    for a in 0..ctx.av.len() {
        for s in 0..ctx.sv.len() {
            for k in 0..4 {
                let Some(h) = ctx.evaluate(a, s, k) else { continue };
                match best_by_set.get(&h.rooms) {
                    Some(prev) if prev.score >= h.score => {}
                    _ => {
                        best_by_set.insert(h.rooms.clone(), h);
                    }
                }
            }
        }
    }
    let mut hyps: Vec<Hypothesis> = best_by_set.into_values().collect();
    hyps.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.rooms.cmp(&y.rooms)));
    let mut it = hyps.into_iter();
    let Some(best) = it.next() else {
        return Err(MatchError::NoUniqueMatch { reason: NoMatchReason::InsufficientRooms, best: 0.0, second: 0.0 });
    };
    if best.rooms.len() < params.min_rooms {
        return Err(MatchError::NoUniqueMatch {
            reason: NoMatchReason::InsufficientRooms,
            best: best.score,
            second: 0.0,
        });
    }
    // A hypothesis whose room pairs all belong to the best one supports the
    // same assignment and is not a competitor.
    let second = it
        .find(|h| !h.rooms.iter().all(|p| best.rooms.contains(p)))
        .map(|h| h.score)
        .unwrap_or(0.0);
    if second > 0.0 && best.score / second < params.uniqueness_margin {
        return Err(MatchError::NoUniqueMatch {
            reason: NoMatchReason::SymmetricAmbiguity,
            best: best.score,
            second,
        });
    }
    Ok(ctx.to_result(best, true))
}

/// Incremental matching of S rooms that are not yet matched, using the
/// current transform estimate. Returns only the additions.
pub fn local_match(
    ag: &AGraph,
    sg: &SGraph,
    transform: &Pose3,
    matched_rooms: &[(usize, usize)],
    params: &MatchParams,
) -> MatchResult {
    let ctx = Ctx::new(ag, sg, params);
    let used_a: BTreeSet<usize> = matched_rooms.iter().map(|r| r.0).collect();
    let used_s: BTreeSet<usize> = matched_rooms.iter().map(|r| r.1).collect();
    let yaw = transform.yaw();
    let mut cands = Vec::new();
    for s in (0..ctx.sv.len()).filter(|s| !used_s.contains(s)) {
        let c = transform.transform_point(&ctx.sv[s].centre);
        for a in (0..ctx.av.len()).filter(|a| !used_a.contains(a)) {
            let d = (c - ctx.av[a].centre).xy().norm();
            if d > params.eps_room || !ctx.widths_compatible(a, s, yaw) {
                continue;
            }
            // Consistency against the established room pairs.
            let consistent = matched_rooms
                .iter()
                .filter(|&&(ma, ms)| {
                    let da = (ctx.av[a].centre - ctx.av[ma].centre).norm();
                    let ds = (ctx.sv[s].centre - ctx.sv[ms].centre).norm();
                    (da - ds).abs() <= params.eps_room
                })
                .count();
            if 2 * consistent >= matched_rooms.len() {
                cands.push((d, a, s));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let (mut ua, mut us) = (BTreeSet::new(), BTreeSet::new());
    let mut rooms = Vec::new();
    for (_, a, s) in cands {
        if ua.insert(a) && us.insert(s) {
            rooms.push((a, s));
        }
    }
    rooms.sort_unstable();
    let (strict, deviated, _) = ctx.classify(&rooms, transform);
    let h = Hypothesis { rooms, strict, deviated, transform: *transform, score: 0.0 };
    ctx.to_result(h, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clique_of_complete_graph_is_everything() {
        let adj = vec![vec![true; 4]; 4];
        assert_eq!(max_clique(&adj), vec![0, 1, 2, 3]);
    }

    #[test]
    fn clique_ties_prefer_smallest_ids() {
        // Two disjoint edges.
        let mut adj = vec![vec![false; 4]; 4];
        for (i, j) in [(0, 1), (2, 3)] {
            adj[i][j] = true;
            adj[j][i] = true;
        }
        assert_eq!(max_clique(&adj), vec![0, 1]);
    }
}
