//! Forward-mode dual numbers and scalar-generic geometry used to evaluate
//! factor residuals together with their Jacobians.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use nalgebra::Vector3;

use crate::geometry::{Plane, Pose3};

pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Dual number with `N` infinitesimal parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    pub fn variable(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> AddAssign for Jet<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = -*x;
        }
        Self { v: -self.v, d }
    }
}

impl<const N: usize> Real for Jet<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let ds = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.chain(s, ds)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        let v = self.v.atan2(x.v);
        let mut d = [0.0; N];
        if r2 > 0.0 {
            for i in 0..N {
                d[i] = (x.v * self.d[i] - self.v * x.d[i]) / r2;
            }
        }
        Self { v, d }
    }
    fn scale(self, k: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= k;
        }
        Self { v: self.v * k, d }
    }
}

pub type V3<T> = [T; 3];

pub fn v3c<T: Real>(v: &Vector3<f64>) -> V3<T> {
    [T::cst(v.x), T::cst(v.y), T::cst(v.z)]
}

pub fn add<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Real>(a: &V3<T>, k: T) -> V3<T> {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn neg<T: Real>(a: &V3<T>) -> V3<T> {
    [-a[0], -a[1], -a[2]]
}

pub fn dot<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm<T: Real>(a: &V3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn normalize<T: Real>(a: &V3<T>) -> V3<T> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Returns `sin(θ/2)/θ` and `cos(θ/2)` from `θ²`, with a series near zero.
fn half_angle_factors<T: Real>(theta2: T) -> (T, T) {
    if theta2.value() < 1e-8 {
        let k = T::cst(0.5) - theta2.scale(1.0 / 48.0);
        let c = T::cst(1.0) - theta2.scale(1.0 / 8.0);
        (k, c)
    } else {
        let theta = theta2.sqrt();
        let half = theta.scale(0.5);
        (half.sin() / theta, half.cos())
    }
}

/// Unit quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy)]
pub struct Quat<T> {
    pub w: T,
    pub v: V3<T>,
}

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Self { w: T::cst(1.0), v: [T::cst(0.0); 3] }
    }

    pub fn from_f64(q: &nalgebra::UnitQuaternion<f64>) -> Self {
        Self { w: T::cst(q.w), v: [T::cst(q.i), T::cst(q.j), T::cst(q.k)] }
    }

    pub fn exp(phi: &V3<T>) -> Self {
        let (k, c) = half_angle_factors(dot(phi, phi));
        Self { w: c, v: scale(phi, k) }
    }

    /// Rotation vector of the quaternion, taking the short way round.
    pub fn log(&self) -> V3<T> {
        let (w, v) = if self.w.value() < 0.0 { (-self.w, neg(&self.v)) } else { (self.w, self.v) };
        let s2 = dot(&v, &v);
        let factor = if s2.value() < 1e-16 {
            // atan2(s, w)/s ≈ (1/w)(1 - s²/(3w²))
            let inv_w = T::cst(1.0) / w;
            (T::cst(1.0) - s2 * inv_w * inv_w.scale(1.0 / 3.0)) * inv_w.scale(2.0)
        } else {
            let s = s2.sqrt();
            s.atan2(w).scale(2.0) / s
        };
        scale(&v, factor)
    }

    pub fn mul(&self, o: &Quat<T>) -> Quat<T> {
        let w = self.w * o.w - dot(&self.v, &o.v);
        let c = cross(&self.v, &o.v);
        let v = add(&add(&scale(&o.v, self.w), &scale(&self.v, o.w)), &c);
        Quat { w, v }
    }

    pub fn conj(&self) -> Quat<T> {
        Quat { w: self.w, v: neg(&self.v) }
    }

    pub fn rotate(&self, p: &V3<T>) -> V3<T> {
        // p + 2w(v×p) + 2 v×(v×p)
        let t = scale(&cross(&self.v, p), T::cst(2.0));
        add(&add(p, &scale(&t, self.w)), &cross(&self.v, &t))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GPose<T> {
    pub q: Quat<T>,
    pub t: V3<T>,
}

impl<T: Real> GPose<T> {
    pub fn from_f64(p: &Pose3) -> Self {
        Self { q: Quat::from_f64(&p.rotation), t: v3c(&p.translation) }
    }

    pub fn compose(&self, o: &GPose<T>) -> GPose<T> {
        GPose { q: self.q.mul(&o.q), t: add(&self.q.rotate(&o.t), &self.t) }
    }

    pub fn inverse(&self) -> GPose<T> {
        let qi = self.q.conj();
        GPose { q: qi, t: neg(&qi.rotate(&self.t)) }
    }

    pub fn transform_point(&self, p: &V3<T>) -> V3<T> {
        add(&self.q.rotate(p), &self.t)
    }

    pub fn boxplus(&self, d: &[T]) -> GPose<T> {
        let dq = Quat::exp(&[d[0], d[1], d[2]]);
        GPose { q: self.q.mul(&dq), t: [self.t[0] + d[3], self.t[1] + d[4], self.t[2] + d[5]] }
    }

    /// `[Log(q_bᵀ q_a), t_a - t_b]`.
    pub fn boxminus(&self, b: &GPose<T>) -> [T; 6] {
        let phi = b.q.conj().mul(&self.q).log();
        let dt = sub(&self.t, &b.t);
        [phi[0], phi[1], phi[2], dt[0], dt[1], dt[2]]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GPlane<T> {
    pub n: V3<T>,
    pub d: T,
}

impl<T: Real> GPlane<T> {
    pub fn from_f64(p: &Plane) -> Self {
        Self { n: v3c(&p.normal), d: T::cst(p.distance) }
    }

    pub fn transform(&self, x: &GPose<T>) -> GPlane<T> {
        let n = x.q.rotate(&self.n);
        GPlane { n, d: self.d - dot(&n, &x.t) }
    }

    fn basis(n: &V3<T>) -> (V3<T>, V3<T>) {
        let r: V3<T> = if n[2].value().abs() < 0.9 {
            [T::cst(0.0), T::cst(0.0), T::cst(1.0)]
        } else {
            [T::cst(1.0), T::cst(0.0), T::cst(0.0)]
        };
        let b1 = normalize(&cross(&r, n));
        let b2 = cross(n, &b1);
        (b1, b2)
    }

    pub fn boxplus(&self, delta: &[T]) -> GPlane<T> {
        let (b1, b2) = Self::basis(&self.n);
        let w = add(&scale(&b1, delta[0]), &scale(&b2, delta[1]));
        GPlane { n: Quat::exp(&w).rotate(&self.n), d: self.d + delta[2] }
    }

    /// Rotation taking `b.n` to `self.n` in the tangent basis of `b`, plus
    /// distance difference.
    pub fn boxminus(&self, b: &GPlane<T>) -> [T; 3] {
        let c = dot(&b.n, &self.n);
        let axis = cross(&b.n, &self.n);
        let s2 = dot(&axis, &axis);
        let k = if s2.value() < 1e-16 {
            // atan2(s, c)/s ≈ (1/c)(1 - s²/(3c²))
            let inv_c = T::cst(1.0) / c;
            (T::cst(1.0) - s2 * inv_c * inv_c.scale(1.0 / 3.0)) * inv_c
        } else {
            let s = s2.sqrt();
            s.atan2(c) / s
        };
        let w = scale(&axis, k);
        let (b1, b2) = Self::basis(&b.n);
        [dot(&b1, &w), dot(&b2, &w), self.d - b.d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{plane_boxminus, pose_boxminus};
    use nalgebra::UnitQuaternion;

    #[test]
    fn jet_product_rule() {
        let x = Jet::<2>::variable(3.0, 0);
        let y = Jet::<2>::variable(2.0, 1);
        let f = x * y + x.sin();
        assert!((f.d[0] - (2.0 + 3.0f64.cos())).abs() < 1e-15);
        assert!((f.d[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn generic_matches_f64_geometry() {
        let a = Pose3::from_yaw(0.4, Vector3::new(1.0, 2.0, 0.1));
        let b = Pose3::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 1.3),
            Vector3::new(-0.5, 0.2, 0.3),
        );
        let ga = GPose::<f64>::from_f64(&a);
        let gb = GPose::<f64>::from_f64(&b);
        let r = ga.boxminus(&gb);
        let e = pose_boxminus(&a, &b);
        for i in 0..6 {
            assert!((r[i] - e[i]).abs() < 1e-12);
        }
        let p = Plane::new(Vector3::new(0.2, 0.9, 0.05), -1.0).unwrap();
        let q = Plane::new(Vector3::new(0.25, 0.85, 0.0), -1.2).unwrap();
        let r = GPlane::<f64>::from_f64(&p).boxminus(&GPlane::from_f64(&q));
        let e = plane_boxminus(&p, &q).unwrap();
        for i in 0..3 {
            assert!((r[i] - e[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_derivative_finite_at_identity() {
        let phi = [Jet::<3>::variable(0.0, 0), Jet::variable(0.0, 1), Jet::variable(0.0, 2)];
        let back = Quat::exp(&phi).log();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((back[i].d[j] - expect).abs() < 1e-12);
            }
        }
    }
}
