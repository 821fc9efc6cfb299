mod common;

use deviation_slam::geometry::{plane_boxminus, plane_boxplus, transform_plane, wrap_angle, Plane, Pose3};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

#[test]
fn group_properties_hold_on_random_samples() {
    for (name, err) in common::group_property_errors(500, 3) {
        assert!(err < 1e-9, "{name}: {err:e}");
    }
}

#[test]
fn transformed_plane_keeps_points_on_it() {
    let mut r = common::rng(11);
    for _ in 0..200 {
        let t = common::random_pose(&mut r);
        let p = common::random_plane(&mut r);
        let on = p.closest_point(&common::random_vec3(&mut r, 5.0));
        let q = transform_plane(&t, &p);
        assert!(q.signed_distance(&t.transform_point(&on)).abs() < 1e-9);
        assert!((q.normal.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn plane_from_zero_normal_is_rejected() {
    assert!(Plane::new(Vector3::zeros(), 1.0).is_err());
}

proptest! {
    #[test]
    fn pose_boxplus_boxminus_roundtrip(v in prop::array::uniform6(-1.0f64..1.0), yaw in -3.0f64..3.0) {
        let x = Pose3::from_xy_yaw(1.0, -2.0, 0.5, yaw);
        let d = Vector6::from_row_slice(&v);
        let back = x.boxplus(&d).boxminus(&x);
        prop_assert!((back - d).norm() < 1e-9);
    }

    #[test]
    fn plane_boxplus_boxminus_roundtrip(a in -0.5f64..0.5, b in -0.5f64..0.5, c in -2.0f64..2.0) {
        let p = Plane::new(Vector3::new(0.3, -0.8, 0.2), 1.5).unwrap();
        let d = Vector3::new(a, b, c);
        let back = plane_boxminus(&plane_boxplus(&p, &d), &p).unwrap();
        prop_assert!((back - d).norm() < 1e-9);
    }

    #[test]
    fn wrapped_angle_is_equivalent_and_in_range(a in -50.0f64..50.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!((w.sin() - a.sin()).abs() < 1e-9 && (w.cos() - a.cos()).abs() < 1e-9);
    }
}
