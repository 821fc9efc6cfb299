mod common;

use deviation_slam::geometry::transform_plane;
use deviation_slam::plan_model::{parse_plan, PlanError};
use deviation_slam::simulator::{
    generate_environment, is_visible, parse_trace, plan_trajectory, write_trace, DeviationSpec,
    EnvironmentSpec, NoiseParams, SimError, WorldModel, STEP_LENGTH,
};
use nalgebra::Vector2;
use statrs::statistics::Statistics;

#[test]
fn generation_and_simulation_are_deterministic() {
    let spec = EnvironmentSpec::grid(2, 3, 21);
    assert_eq!(generate_environment(&spec).unwrap(), generate_environment(&spec).unwrap());
    let a = common::scenario(&spec, NoiseParams::standard());
    let b = common::scenario(&spec, NoiseParams::standard());
    assert_eq!(write_trace(&a.trace), write_trace(&b.trace));
    let mut other = spec.clone();
    other.seed = 22;
    assert_ne!(generate_environment(&other).unwrap().0, a.plan);
}

#[test]
fn trace_text_roundtrips() {
    let sc = common::scenario(&EnvironmentSpec::grid(2, 2, 4), NoiseParams::standard());
    let text = write_trace(&sc.trace);
    assert_eq!(parse_trace(&text).unwrap(), sc.trace);
    let broken = text.replacen("ODOM", "ODOMX", 1);
    assert!(matches!(parse_trace(&broken), Err(SimError::Trace { .. })));
}

#[test]
fn noise_has_the_requested_spread() {
    let noise = NoiseParams::standard();
    let sc = common::scenario(&EnvironmentSpec::grid(2, 3, 8), noise);
    let gt = &sc.trace.header.ground_truth;
    let mut odom = Vec::new();
    for k in 1..gt.len() {
        let truth = gt[k - 1].inverse().compose(&gt[k]);
        let e = sc.trace.records[k].odom_delta.translation - truth.translation;
        odom.extend([e.x, e.y]);
    }
    let surfaces = sc.world.surfaces();
    let mut dist = Vec::new();
    for (k, r) in sc.trace.records.iter().enumerate() {
        for o in &r.observations {
            let truth = transform_plane(&gt[k].inverse(), &surfaces[o.surface_id].plane);
            dist.push(o.plane.distance - truth.distance);
        }
    }
    // Five standard errors of the sample standard deviation.
    for (v, sigma) in [(odom, noise.odom_sigma_t), (dist, noise.plane_sigma_d)] {
        let n = v.len() as f64;
        let sd = v.as_slice().std_dev();
        assert!((sd - sigma).abs() < 5.0 * sigma / (2.0 * n).sqrt(), "sd {sd} vs {sigma} over {n}");
        assert!(v.as_slice().mean().abs() < 5.0 * sigma / n.sqrt());
    }
}

#[test]
fn zero_noise_trace_matches_ground_truth() {
    let sc = common::scenario(&EnvironmentSpec::grid(1, 2, 3), NoiseParams::zero());
    let gt = &sc.trace.header.ground_truth;
    for k in 1..gt.len() {
        let truth = gt[k - 1].inverse().compose(&gt[k]);
        assert!(sc.trace.records[k].odom_delta.boxminus(&truth).norm() < 1e-12);
    }
}

#[test]
fn trajectory_steps_are_short() {
    let sc = common::scenario(&EnvironmentSpec::grid(2, 2, 9), NoiseParams::zero());
    for w in sc.trace.header.ground_truth.windows(2) {
        assert!((w[1].translation - w[0].translation).norm() <= STEP_LENGTH + 1e-9);
    }
}

#[test]
fn walls_block_the_view_into_other_rooms() {
    let (plan, world) = generate_environment(&EnvironmentSpec::grid(1, 2, 5)).unwrap();
    let surfaces = world.surfaces();
    let c = Vector2::new(plan.rooms[0].center_xy[0], plan.rooms[0].center_xy[1]);
    let seen: Vec<_> = surfaces.iter().filter(|s| is_visible(c, s, &surfaces)).collect();
    assert_eq!(seen.len(), 4);
    let own = plan.room_walls(0).unwrap();
    assert!(seen.iter().all(|s| own.contains(&s.wall)));
}

#[test]
fn disconnected_rooms_have_no_path() {
    let (mut plan, _) = generate_environment(&EnvironmentSpec::grid(1, 2, 5)).unwrap();
    plan.doorways.clear();
    let world = WorldModel::from_plan(plan.clone());
    let order = [plan.rooms[0].id.clone(), plan.rooms[1].id.clone()];
    assert!(matches!(plan_trajectory(&world, &order), Err(SimError::NoPath(..))));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = EnvironmentSpec::grid(2, 2, 1);
    spec.deviations = vec![DeviationSpec { wall_id: "nope".into(), d_translation: 0.1, d_yaw: 0.0, surface: None }];
    assert!(matches!(generate_environment(&spec), Err(SimError::Spec(_))));
    let mut spec = EnvironmentSpec::grid(2, 2, 1);
    spec.deviations = vec![DeviationSpec { wall_id: "W1".into(), d_translation: 0.0, d_yaw: 45.0, surface: None }];
    assert!(generate_environment(&spec).is_err());
    assert!(generate_environment(&EnvironmentSpec::grid(0, 2, 1)).is_err());
}

#[test]
fn deviation_moves_only_its_wall() {
    let mut spec = EnvironmentSpec::grid(2, 2, 6);
    let (_, clean) = generate_environment(&spec).unwrap();
    spec.deviations = vec![DeviationSpec { wall_id: "W1".into(), d_translation: 0.2, d_yaw: 0.0, surface: None }];
    let (plan, moved) = generate_environment(&spec).unwrap();
    let w = plan.wall_index("W1").unwrap();
    for (a, b) in clean.surfaces().iter().zip(moved.surfaces()) {
        let shift = b.plane.distance - a.plane.distance;
        if a.wall == w {
            assert!((shift.abs() - 0.2).abs() < 1e-12);
        } else {
            assert_eq!(shift, 0.0);
        }
    }
}

#[test]
fn plan_parser_rejects_bad_input() {
    let (plan, _) = generate_environment(&EnvironmentSpec::grid(2, 2, 2)).unwrap();
    let text = serde_json::to_string(&plan).unwrap();
    assert_eq!(parse_plan(&text).unwrap(), plan);
    assert!(matches!(parse_plan("{\"floors\": ["), Err(PlanError::Parse { .. })));
    let mut bad = plan.clone();
    bad.walls[0].room_ids = vec!["missing".into()];
    assert!(parse_plan(&serde_json::to_string(&bad).unwrap()).is_err());
    let mut bad = plan;
    bad.walls[0].width = -0.1;
    assert!(parse_plan(&serde_json::to_string(&bad).unwrap()).is_err());
}

#[test]
fn bundled_plans_load_and_build() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/plans");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let plan = deviation_slam::plan_model::load_plan(entry.unwrap().path()).unwrap();
        deviation_slam::plan_model::build_agraph(&plan).unwrap();
        n += 1;
    }
    assert_eq!(n, 3);
}
