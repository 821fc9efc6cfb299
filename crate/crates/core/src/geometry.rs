//! Rigid-body poses, oriented planes and their manifold operators.
//!
//! Planes use the convention `n·p + d = 0` with `n` pointing into the free
//! space the plane is observed from. Pose tangents are ordered
//! `[rotation(3), translation(3)]`; plane tangents are
//! `[sphere tangent(2), distance(1)]`.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Tangent6 = Vector6<f64>;
pub type Tangent3 = Vector3<f64>;

/// Planes whose normals have a dot product below this are treated as antipodal.
pub const ANTIPODAL_DOT: f64 = -0.99;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("planes are antipodal (normal dot {0:.4})")]
    AntipodalPlanes(f64),
    #[error("plane normal has zero length")]
    DegenerateNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: t }
    }

    /// Pose with a rotation about +z only.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), translation }
    }

    pub fn from_xy_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::from_yaw(yaw, Vector3::new(x, y, z))
    }

    /// Heading of the rotated x-axis projected on the xy-plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }

    /// Angle between the rotated z-axis and world z.
    pub fn tilt(&self) -> f64 {
        let z = self.rotation * Vector3::z();
        z.z.clamp(-1.0, 1.0).acos()
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose3 {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn boxplus(&self, delta: &Tangent6) -> Pose3 {
        pose_boxplus(self, delta)
    }

    pub fn boxminus(&self, other: &Pose3) -> Tangent6 {
        pose_boxminus(self, other)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

fn renormalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-12 {
        Unit::new_unchecked(q / n)
    } else {
        Unit::new_unchecked(q)
    }
}

pub fn compose(a: &Pose3, b: &Pose3) -> Pose3 {
    Pose3 {
        rotation: renormalize(a.rotation.into_inner() * b.rotation.into_inner()),
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(p: &Pose3) -> Pose3 {
    let r = p.rotation.inverse();
    Pose3 { rotation: r, translation: -(r * p.translation) }
}

/// `R·Exp(φ)`, `t + ρ` for `δ = [φ, ρ]`.
pub fn pose_boxplus(x: &Pose3, delta: &Tangent6) -> Pose3 {
    let phi = Vector3::new(delta[0], delta[1], delta[2]);
    let rho = Vector3::new(delta[3], delta[4], delta[5]);
    let dq = UnitQuaternion::from_scaled_axis(phi);
    Pose3 {
        rotation: renormalize(x.rotation.into_inner() * dq.into_inner()),
        translation: x.translation + rho,
    }
}

/// Inverse of [`pose_boxplus`]: `boxplus(b, boxminus(a, b)) == a`.
pub fn pose_boxminus(a: &Pose3, b: &Pose3) -> Tangent6 {
    let dr = b.rotation.inverse() * a.rotation;
    let phi = dr.scaled_axis();
    let dt = a.translation - b.translation;
    Vector6::new(phi.x, phi.y, phi.z, dt.x, dt.y, dt.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

impl Plane {
    /// Normalizes `normal` and scales `distance` accordingly.
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if !(n > 1e-12) {
            return Err(GeometryError::DegenerateNormal);
        }
        Ok(Self { normal: normal / n, distance: distance / n })
    }

    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if !(n > 1e-12) {
            return Err(GeometryError::DegenerateNormal);
        }
        let n = normal / n;
        Ok(Self { normal: n, distance: -n.dot(point) })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.distance
    }

    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    pub fn boxplus(&self, delta: &Tangent3) -> Plane {
        plane_boxplus(self, delta)
    }

    pub fn boxminus(&self, other: &Plane) -> Result<Tangent3, GeometryError> {
        plane_boxminus(self, other)
    }
}

/// Orthonormal basis of the tangent space of the unit sphere at `n`.
///
/// For horizontal normals the second basis vector is `+z`, so the second
/// tangent coordinate is a rotation about the vertical axis.
pub fn sphere_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if n.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let b1 = reference.cross(n).normalize();
    let b2 = n.cross(&b1);
    (b1, b2)
}

pub fn transform_plane(t: &Pose3, p: &Plane) -> Plane {
    let n = t.rotation * p.normal;
    let n = n / n.norm();
    Plane { normal: n, distance: p.distance - n.dot(&t.translation) }
}

/// `n' = Exp(B(n)·δ_rot)·n`, `d' = d + δ_d`.
pub fn plane_boxplus(p: &Plane, delta: &Tangent3) -> Plane {
    let (b1, b2) = sphere_basis(&p.normal);
    let w = b1 * delta[0] + b2 * delta[1];
    let n = UnitQuaternion::from_scaled_axis(w) * p.normal;
    Plane { normal: n / n.norm(), distance: p.distance + delta[2] }
}

/// Rotation taking `b.normal` to `a.normal` in the tangent basis of `b`,
/// stacked with `a.distance - b.distance`.
pub fn plane_boxminus(a: &Plane, b: &Plane) -> Result<Tangent3, GeometryError> {
    let c = b.normal.dot(&a.normal);
    if c < ANTIPODAL_DOT {
        return Err(GeometryError::AntipodalPlanes(c));
    }
    let axis = b.normal.cross(&a.normal);
    let s = axis.norm();
    let w = if s < 1e-300 { Vector3::zeros() } else { axis * (s.atan2(c) / s) };
    let (b1, b2) = sphere_basis(&b.normal);
    Ok(Vector3::new(b1.dot(&w), b2.dot(&w), a.distance - b.distance))
}

/// Angle between two unit vectors in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Horizontal in-plane direction of a plane, `normalize(z × n)`.
pub fn plane_horizontal_dir(n: &Vector3<f64>) -> Vector2<f64> {
    let v = Vector2::new(-n.y, n.x);
    let l = v.norm();
    if l < 1e-12 {
        Vector2::x()
    } else {
        v / l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_yaw_then_translate() {
        let a = Pose3::from_yaw(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let b = Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&b);
        assert!((c.translation - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((c.yaw() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let p = Pose3::from_yaw(0.3, Vector3::new(1.0, -2.0, 0.5));
        let q = p.compose(&Pose3::identity());
        assert!(q.boxminus(&p).norm() < 1e-12);
        let r = p.compose(&p.inverse());
        assert!(r.boxminus(&Pose3::identity()).norm() < 1e-12);
    }

    #[test]
    fn transform_plane_translation_and_yaw() {
        let p = Plane::new(Vector3::x(), -2.0).unwrap();
        let t = Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let q = transform_plane(&t, &p);
        assert!((q.normal - Vector3::x()).norm() < 1e-15);
        assert!((q.distance + 3.0).abs() < 1e-15);

        let r = Pose3::from_yaw(FRAC_PI_2, Vector3::zeros());
        let q = transform_plane(&r, &p);
        assert!((q.normal - Vector3::y()).norm() < 1e-15);
        assert!((q.distance + 2.0).abs() < 1e-15);
    }

    #[test]
    fn plane_boxminus_cases() {
        let b = Plane::new(Vector3::x(), -2.0).unwrap();
        assert_eq!(plane_boxminus(&b, &b).unwrap(), Vector3::zeros());
        let a = Plane::new(Vector3::x(), -2.1).unwrap();
        let d = plane_boxminus(&a, &b).unwrap();
        assert!((d - Vector3::new(0.0, 0.0, -0.1)).norm() < 1e-12);
        let flipped = Plane::new(-Vector3::x(), 2.0).unwrap();
        assert!(matches!(plane_boxminus(&flipped, &b), Err(GeometryError::AntipodalPlanes(_))));
    }

    #[test]
    fn plane_boxplus_inverts_boxminus() {
        let b = Plane::new(Vector3::new(0.3, -0.8, 0.1), 1.5).unwrap();
        let delta = Vector3::new(0.05, -0.07, 0.09);
        let a = plane_boxplus(&b, &delta);
        let back = plane_boxminus(&a, &b).unwrap();
        assert!((back - delta).norm() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
