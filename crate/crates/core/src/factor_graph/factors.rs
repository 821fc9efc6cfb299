//! Residual functions for every factor kind, written once over [`Real`] so
//! the same code yields values and Jacobians.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{FactorGraph, FactorId, Value};
use crate::autodiff::{dot, GPlane, GPose, Jet, Quat, Real, V3};
use crate::geometry::{Plane, Pose3};

/// Largest residual dimension of any factor kind.
pub const MAX_RESIDUAL: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorKind {
    /// `[x]`: `x ⊟ m`.
    PosePrior { measurement: Pose3 },
    /// `[a, b]`: `(a⁻¹·b) ⊟ m`.
    Between { measurement: Pose3 },
    /// `[π]`: `π ⊟ m`.
    PlanePrior { measurement: Plane },
    /// `[v]`: `v - m`.
    VectorPrior { measurement: DVector<f64> },
    /// `[x, π]`: `m ⊟ (x⁻¹·π)`.
    PosePlane { measurement: Plane },
    /// `[room, p1, p2, p3, p4]`: `room ⊟ center(p1..p4)`.
    RoomFromPlanes { floor_z: f64 },
    /// `[γ, a, b]`: midpoint of the pair along `axis` minus `γ`.
    TwoWallRoom { axis: Vector3<f64> },
    /// `[wall, s0, s1]`: alignment, centring, width and antipodality.
    WallFromSurfaces { width: f64 },
    /// `[room_a, room_b, door]`: door relative to both rooms.
    Doorway { rel_a: Pose3, rel_b: Pose3 },
    /// `[floor, room]`: planar room position in the floor frame.
    FloorRoom { measurement: Vector2<f64> },
    /// `[a_origin, t, s_origin]`: `(T·S_O) ⊟ A_O`.
    OriginMerge,
    /// `[t, s_floor, a_floor]`: roll, pitch and height agreement of floors.
    FloorAlign,
    /// `[t, s_room, a_room, d]`: `(d⁻¹·T·S·Q) ⊟ A`.
    RoomDeviation { alignment: Pose3 },
    /// `[t, s_plane, a_plane, d]`: plane deviation expressed in the anchor frame.
    SurfaceDeviation { anchor: Pose3 },
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Pose,
    Plane,
    Vector(usize),
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::PosePrior { .. } => "PosePrior",
            FactorKind::Between { .. } => "Between",
            FactorKind::PlanePrior { .. } => "PlanePrior",
            FactorKind::VectorPrior { .. } => "VectorPrior",
            FactorKind::PosePlane { .. } => "PosePlane",
            FactorKind::RoomFromPlanes { .. } => "RoomFromPlanes",
            FactorKind::TwoWallRoom { .. } => "TwoWallRoom",
            FactorKind::WallFromSurfaces { .. } => "WallFromSurfaces",
            FactorKind::Doorway { .. } => "Doorway",
            FactorKind::FloorRoom { .. } => "FloorRoom",
            FactorKind::OriginMerge => "OriginMerge",
            FactorKind::FloorAlign => "FloorAlign",
            FactorKind::RoomDeviation { .. } => "RoomDeviation",
            FactorKind::SurfaceDeviation { .. } => "SurfaceDeviation",
        }
    }

    fn slots(&self) -> Vec<Slot> {
        use Slot::*;
        match self {
            FactorKind::PosePrior { .. } => vec![Pose],
            FactorKind::Between { .. } => vec![Pose, Pose],
            FactorKind::PlanePrior { .. } => vec![Plane],
            FactorKind::VectorPrior { measurement } => vec![Vector(measurement.len())],
            FactorKind::PosePlane { .. } => vec![Pose, Plane],
            FactorKind::RoomFromPlanes { .. } => vec![Pose, Plane, Plane, Plane, Plane],
            FactorKind::TwoWallRoom { .. } => vec![Vector(1), Plane, Plane],
            FactorKind::WallFromSurfaces { .. } => vec![Pose, Plane, Plane],
            FactorKind::Doorway { .. } => vec![Pose, Pose, Pose],
            FactorKind::FloorRoom { .. } => vec![Pose, Pose],
            FactorKind::OriginMerge => vec![Pose, Pose, Pose],
            FactorKind::FloorAlign => vec![Pose, Pose, Pose],
            FactorKind::RoomDeviation { .. } => vec![Pose, Pose, Pose, Pose],
            FactorKind::SurfaceDeviation { .. } => vec![Pose, Plane, Plane, Vector(3)],
        }
    }

    pub fn arity(&self) -> usize {
        self.slots().len()
    }

    pub(crate) fn accepts(&self, slot: usize, value: &Value) -> bool {
        match (self.slots().get(slot), value) {
            (Some(Slot::Pose), Value::Pose(_)) => true,
            (Some(Slot::Plane), Value::Plane(_)) => true,
            (Some(Slot::Vector(n)), Value::Vector(v)) => v.len() == *n,
            _ => false,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FactorKind::PosePrior { .. } | FactorKind::Between { .. } => 6,
            FactorKind::PlanePrior { .. } => 3,
            FactorKind::VectorPrior { measurement } => measurement.len(),
            FactorKind::PosePlane { .. } => 3,
            FactorKind::RoomFromPlanes { .. } => 6,
            FactorKind::TwoWallRoom { .. } => 1,
            FactorKind::WallFromSurfaces { .. } => 6,
            FactorKind::Doorway { .. } => 12,
            FactorKind::FloorRoom { .. } => 2,
            FactorKind::OriginMerge => 6,
            FactorKind::FloorAlign => 3,
            FactorKind::RoomDeviation { .. } => 6,
            FactorKind::SurfaceDeviation { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum GVal<T> {
    Pose(GPose<T>),
    Plane(GPlane<T>),
    Vector([T; 6], usize),
}

impl<T: Real> GVal<T> {
    fn pose(&self) -> &GPose<T> {
        match self {
            GVal::Pose(p) => p,
            _ => unreachable!("slot types are validated when the factor is added"),
        }
    }
    fn plane(&self) -> &GPlane<T> {
        match self {
            GVal::Plane(p) => p,
            _ => unreachable!("slot types are validated when the factor is added"),
        }
    }
    fn vector(&self) -> &[T] {
        match self {
            GVal::Vector(v, n) => &v[..*n],
            _ => unreachable!("slot types are validated when the factor is added"),
        }
    }
}

fn constant<T: Real>(v: &Value) -> GVal<T> {
    match v {
        Value::Pose(p) => GVal::Pose(GPose::from_f64(p)),
        Value::Plane(p) => GVal::Plane(GPlane::from_f64(p)),
        Value::Vector(x) => {
            let mut a = [T::cst(0.0); 6];
            for (i, xi) in x.iter().enumerate() {
                a[i] = T::cst(*xi);
            }
            GVal::Vector(a, x.len())
        }
    }
}

/// Value lifted to `x ⊞ δ` with `δ` seeded as jet variables starting at `offset`.
fn lifted<const N: usize>(v: &Value, offset: usize) -> GVal<Jet<N>> {
    let dim = v.dim();
    let mut delta = [Jet::<N>::constant(0.0); 6];
    for (i, d) in delta.iter_mut().enumerate().take(dim) {
        *d = Jet::variable(0.0, offset + i);
    }
    match v {
        Value::Pose(p) => GVal::Pose(GPose::from_f64(p).boxplus(&delta)),
        Value::Plane(p) => GVal::Plane(GPlane::from_f64(p).boxplus(&delta)),
        Value::Vector(x) => {
            let mut a = [Jet::constant(0.0); 6];
            for (i, xi) in x.iter().enumerate() {
                a[i] = Jet::constant(*xi) + delta[i];
            }
            GVal::Vector(a, x.len())
        }
    }
}

fn rot_z<T: Real>(yaw: T) -> Quat<T> {
    let h = yaw.scale(0.5);
    Quat { w: h.cos(), v: [T::cst(0.0), T::cst(0.0), h.sin()] }
}

/// Room frame from two opposing plane pairs: xy from the equidistance
/// conditions of each pair, `z` fixed, yaw from the first plane's normal.
pub(crate) fn room_center<T: Real>(p: [&GPlane<T>; 4], floor_z: f64) -> GPose<T> {
    let z = T::cst(floor_z);
    let row = |a: &GPlane<T>, b: &GPlane<T>| {
        let m = [a.n[0] - b.n[0], a.n[1] - b.n[1], a.n[2] - b.n[2]];
        (m[0], m[1], b.d - a.d - m[2] * z)
    };
    let (a11, a12, r1) = row(p[0], p[1]);
    let (a21, a22, r2) = row(p[2], p[3]);
    let det = a11 * a22 - a12 * a21;
    let x = (r1 * a22 - a12 * r2) / det;
    let y = (a11 * r2 - a21 * r1) / det;
    let yaw = p[0].n[1].atan2(p[0].n[0]);
    GPose { q: rot_z(yaw), t: [x, y, z] }
}

fn two_wall_mid<T: Real>(a: &GPlane<T>, b: &GPlane<T>, axis: &Vector3<f64>) -> T {
    let u: V3<T> = [T::cst(axis.x), T::cst(axis.y), T::cst(axis.z)];
    let sa = -a.d / dot(&a.n, &u);
    let sb = -b.d / dot(&b.n, &u);
    (sa + sb).scale(0.5)
}

/// Residual of `kind` at generic values. Returns the filled buffer.
pub(crate) fn residual<T: Real>(kind: &FactorKind, v: &[GVal<T>]) -> [T; MAX_RESIDUAL] {
    let mut r = [T::cst(0.0); MAX_RESIDUAL];
    let mut put = |vals: &[T]| {
        for (i, x) in vals.iter().enumerate() {
            r[i] = *x;
        }
    };
    match kind {
        FactorKind::PosePrior { measurement } => {
            put(&v[0].pose().boxminus(&GPose::from_f64(measurement)));
        }
        FactorKind::Between { measurement } => {
            let rel = v[0].pose().inverse().compose(v[1].pose());
            put(&rel.boxminus(&GPose::from_f64(measurement)));
        }
        FactorKind::PlanePrior { measurement } => {
            put(&v[0].plane().boxminus(&GPlane::from_f64(measurement)));
        }
        FactorKind::VectorPrior { measurement } => {
            let x = v[0].vector();
            let d: Vec<T> = x.iter().zip(measurement.iter()).map(|(a, m)| *a - T::cst(*m)).collect();
            put(&d);
        }
        FactorKind::PosePlane { measurement } => {
            let local = v[1].plane().transform(&v[0].pose().inverse());
            put(&GPlane::from_f64(measurement).boxminus(&local));
        }
        FactorKind::RoomFromPlanes { floor_z } => {
            let c = room_center([v[1].plane(), v[2].plane(), v[3].plane(), v[4].plane()], *floor_z);
            put(&v[0].pose().boxminus(&c));
        }
        FactorKind::TwoWallRoom { axis } => {
            let mid = two_wall_mid(v[1].plane(), v[2].plane(), axis);
            put(&[mid - v[0].vector()[0]]);
        }
        FactorKind::WallFromSurfaces { width } => {
            let w = v[0].pose();
            let s0 = v[1].plane();
            let s1 = v[2].plane();
            let qi = w.q.conj();
            let m = qi.rotate(&s0.n);
            let sum = [s0.n[0] + s1.n[0], s0.n[1] + s1.n[1], s0.n[2] + s1.n[2]];
            let a = qi.rotate(&sum);
            let centre = dot(&s0.n, &w.t) + (s0.d - s1.d).scale(0.5);
            let width = s0.d + s1.d + T::cst(*width);
            put(&[m[1], m[2], centre, width, a[1], a[2]]);
        }
        FactorKind::Doorway { rel_a, rel_b } => {
            let d = v[2].pose();
            let ra = v[0].pose().inverse().compose(d).boxminus(&GPose::from_f64(rel_a));
            let rb = v[1].pose().inverse().compose(d).boxminus(&GPose::from_f64(rel_b));
            let mut all = [T::cst(0.0); 12];
            all[..6].copy_from_slice(&ra);
            all[6..].copy_from_slice(&rb);
            put(&all);
        }
        FactorKind::FloorRoom { measurement } => {
            let p = v[0].pose().inverse().transform_point(&v[1].pose().t);
            put(&[p[0] - T::cst(measurement.x), p[1] - T::cst(measurement.y)]);
        }
        FactorKind::OriginMerge => {
            let s = v[1].pose().compose(v[2].pose());
            put(&s.boxminus(v[0].pose()));
        }
        FactorKind::FloorAlign => {
            let t = v[0].pose();
            let fs = v[1].pose();
            let fa = v[2].pose();
            let mapped = t.compose(fs);
            let phi = fa.q.conj().mul(&mapped.q).log();
            put(&[phi[0], phi[1], mapped.t[2] - fa.t[2]]);
        }
        FactorKind::RoomDeviation { alignment } => {
            let mapped = v[0].pose().compose(v[1].pose()).compose(&GPose::from_f64(alignment));
            let corrected = v[3].pose().inverse().compose(&mapped);
            put(&corrected.boxminus(v[2].pose()));
        }
        FactorKind::SurfaceDeviation { anchor } => {
            let kinv = GPose::from_f64(&anchor.inverse());
            let s = v[1].plane().transform(&kinv.compose(v[0].pose()));
            let a = v[2].plane().transform(&kinv);
            let d = v[3].vector();
            let corrected = s.boxplus(&[-d[0], -d[1], -d[2]]);
            put(&corrected.boxminus(&a));
        }
    }
    r
}

pub(crate) fn evaluate_f64(kind: &FactorKind, vals: &[&Value]) -> Option<DVector<f64>> {
    let g: Vec<GVal<f64>> = vals.iter().map(|v| constant(v)).collect();
    let r = residual(kind, &g);
    let out = DVector::from_column_slice(&r[..kind.dim()]);
    if out.iter().all(|x| x.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Residual and Jacobian with respect to the variables flagged in `active`,
/// stacked in order. Columns for inactive variables are absent.
pub(crate) fn linearize(kind: &FactorKind, vals: &[&Value], active: &[bool]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n: usize = vals.iter().zip(active).filter(|(_, a)| **a).map(|(v, _)| v.dim()).sum();
    match n {
        0 => evaluate_f64(kind, vals).map(|r| (r, DMatrix::zeros(kind.dim(), 0))),
        1..=6 => linearize_n::<6>(kind, vals, active, n),
        7..=12 => linearize_n::<12>(kind, vals, active, n),
        13..=18 => linearize_n::<18>(kind, vals, active, n),
        19..=24 => linearize_n::<24>(kind, vals, active, n),
        25..=36 => linearize_n::<36>(kind, vals, active, n),
        _ => None,
    }
}

fn linearize_n<const N: usize>(
    kind: &FactorKind,
    vals: &[&Value],
    active: &[bool],
    n: usize,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let mut offset = 0;
    let g: Vec<GVal<Jet<N>>> = vals
        .iter()
        .zip(active)
        .map(|(v, a)| {
            if *a {
                let l = lifted::<N>(v, offset);
                offset += v.dim();
                l
            } else {
                constant(v)
            }
        })
        .collect();
    let r = residual(kind, &g);
    let m = kind.dim();
    let res = DVector::from_iterator(m, r[..m].iter().map(|j| j.v));
    let jac = DMatrix::from_fn(m, n, |i, k| r[i].d[k]);
    if res.iter().all(|x| x.is_finite()) && jac.iter().all(|x| x.is_finite()) {
        Some((res, jac))
    } else {
        None
    }
}

/// Max elementwise difference between the autodiff Jacobian and central
/// differences of the `f64` residual, over all variables of the factor.
pub(crate) fn jacobian_error(graph: &FactorGraph, id: FactorId, eps: f64) -> f64 {
    let f = &graph.factors()[id];
    let vals: Vec<&Value> = f.variables.iter().map(|v| graph.value(*v).expect("factor variables exist")).collect();
    let active = vec![true; vals.len()];
    let Some((_, jac)) = linearize(&f.kind, &vals, &active) else {
        return f64::INFINITY;
    };
    let mut col = 0;
    let mut worst = 0.0f64;
    for (slot, v) in vals.iter().enumerate() {
        for k in 0..v.dim() {
            let mut delta = vec![0.0; v.dim()];
            delta[k] = eps;
            let plus = v.boxplus(&delta);
            delta[k] = -eps;
            let minus = v.boxplus(&delta);
            let eval = |x: &Value| {
                let mut vs: Vec<&Value> = vals.clone();
                vs[slot] = x;
                evaluate_f64(&f.kind, &vs)
            };
            let (Some(rp), Some(rm)) = (eval(&plus), eval(&minus)) else {
                return f64::INFINITY;
            };
            let fd = (rp - rm) / (2.0 * eps);
            for i in 0..fd.len() {
                worst = worst.max((fd[i] - jac[(i, col)]).abs());
            }
            col += 1;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_center_of_axis_box() {
        let planes = [
            Plane::new(Vector3::x(), 0.0).unwrap(),
            Plane::new(-Vector3::x(), 4.2).unwrap(),
            Plane::new(Vector3::y(), 0.0).unwrap(),
            Plane::new(-Vector3::y(), 5.0).unwrap(),
        ];
        let g: Vec<GPlane<f64>> = planes.iter().map(GPlane::from_f64).collect();
        let c = room_center([&g[0], &g[1], &g[2], &g[3]], 0.5);
        assert!((c.t[0] - 2.1).abs() < 1e-12);
        assert!((c.t[1] - 2.5).abs() < 1e-12);
        assert!((c.t[2] - 0.5).abs() < 1e-12);
        assert!((c.q.w - 1.0).abs() < 1e-12);
    }
}
