mod common;

use deviation_slam::factor_graph::{
    information_from_sigmas, FactorGraph, FactorKind, GraphError, IdSpace, SolveError, SolveOptions, Value, VarKind,
};
use deviation_slam::geometry::Pose3;
use nalgebra::{DMatrix, Vector6};

#[test]
fn analytic_jacobians_match_finite_differences() {
    let worst = common::jacobian_errors(5, 1e-6);
    assert_eq!(worst.len(), 14);
    for (kind, err) in worst {
        assert!(err < 1e-5, "{kind}: {err:e}");
    }
}

#[test]
fn pose_chain_recovers_odometry() {
    let mut g = FactorGraph::new();
    let truth: Vec<Pose3> = (0..6).map(|k| Pose3::from_xy_yaw(k as f64, 0.3 * k as f64, 0.0, 0.2 * k as f64)).collect();
    let mut r = common::rng(5);
    let ids: Vec<_> = truth
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (a, b) = (common::random_vec3(&mut r, 0.05), common::random_vec3(&mut r, 0.3));
            let init = if k == 0 { *p } else { p.boxplus(&Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)) };
            g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(init), k == 0)
        })
        .collect();
    let info = information_from_sigmas(&[0.01; 6]);
    for k in 1..truth.len() {
        let z = truth[k - 1].inverse().compose(&truth[k]);
        g.add_factor(FactorKind::Between { measurement: z }, vec![ids[k - 1], ids[k]], info.clone(), None).unwrap();
    }
    let rep = g.optimize(&SolveOptions::default()).unwrap();
    assert!(rep.converged && rep.is_monotone());
    for (id, t) in ids.iter().zip(&truth) {
        assert!(g.pose(*id).unwrap().boxminus(t).norm() < 1e-8);
    }
}

#[test]
fn unanchored_graph_reports_singularity() {
    let mut g = FactorGraph::new();
    let a = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), false);
    let b = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), false);
    g.add_factor(
        FactorKind::Between { measurement: Pose3::from_xy_yaw(1.0, 0.0, 0.0, 0.0) },
        vec![a, b],
        information_from_sigmas(&[1.0; 6]),
        None,
    )
    .unwrap();
    assert!(matches!(g.optimize(&SolveOptions::default()), Err(SolveError::SingularNormalEquations(_))));
}

#[test]
fn bad_factors_are_rejected() {
    let mut g = FactorGraph::new();
    let a = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), false);
    let prior = FactorKind::PosePrior { measurement: Pose3::identity() };
    let err = g.add_factor(prior.clone(), vec![a, a], information_from_sigmas(&[1.0; 6]), None);
    assert!(matches!(err, Err(GraphError::Arity { .. })));
    let err = g.add_factor(prior, vec![a], -DMatrix::identity(6, 6), None);
    assert!(matches!(err, Err(GraphError::InvalidInformation(6))));
}

#[test]
fn huber_limits_outlier_pull() {
    let solve = |huber: Option<f64>| {
        let mut g = FactorGraph::new();
        let x = g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(Pose3::identity()), false);
        let info = information_from_sigmas(&[0.1; 6]);
        for _ in 0..5 {
            g.add_factor(FactorKind::PosePrior { measurement: Pose3::identity() }, vec![x], info.clone(), huber).unwrap();
        }
        let outlier = Pose3::from_xy_yaw(5.0, 0.0, 0.0, 0.0);
        g.add_factor(FactorKind::PosePrior { measurement: outlier }, vec![x], info, huber).unwrap();
        g.optimize(&SolveOptions::default()).unwrap();
        g.pose(x).unwrap().translation.x
    };
    let plain = solve(None);
    let robust = solve(Some(1.0));
    assert!((plain - 5.0 / 6.0).abs() < 1e-6);
    assert!(robust < 0.1 * plain, "{robust} vs {plain}");
}
