mod common;

use deviation_slam::fusion::{merge, DisGraph, ElementKind, FusionParams};
use deviation_slam::matching::{global_match, MatchParams};
use deviation_slam::simulator::{DeviationSpec, EnvironmentSpec, NoiseParams};

fn merged(spec: &EnvironmentSpec, noise: NoiseParams) -> (common::Scenario, DisGraph) {
    let sc = common::scenario(spec, noise);
    let sg = common::ingest(&sc.trace, usize::MAX);
    let m = global_match(&sc.ag, &sg, &MatchParams::default()).unwrap();
    let dis = merge(&sc.ag, sg, &m, &FusionParams::default()).unwrap();
    (sc, dis)
}

/// Wall-level translation along the wall axis, per deviated surface.
fn wall_translations(sc: &common::Scenario, dis: &DisGraph) -> Vec<(usize, f64)> {
    dis.deviations
        .iter()
        .filter(|d| d.kind == ElementKind::Surface)
        .map(|d| {
            let w = sc.ag.walls.iter().position(|w| w.surfaces.contains(&d.a_element)).unwrap();
            let axis = sc.plan.walls[w].axis.unit();
            let n = sc.ag.graph.plane(d.a_element).unwrap().normal;
            let (t, _) = dis.surface_deviation(&sc.ag, d);
            (w, -t * n.dot(&axis))
        })
        .collect()
}

#[test]
fn exact_data_recovers_transform_and_zero_deviations() {
    let (sc, mut dis) = merged(&EnvironmentSpec::grid(2, 2, 3), NoiseParams::zero());
    let rep = dis.stage_a().unwrap();
    assert!(rep.pass3.final_cost <= rep.pass2.as_ref().unwrap().final_cost);
    let err = dis.transform_estimate().boxminus(&sc.trace.header.ground_truth[0]);
    assert!(err.norm() < 1e-6, "{err:?}");
    for d in &dis.deviations {
        assert!(dis.deviation_vector(d).iter().all(|x| x.abs() < 1e-6));
    }
}

#[test]
fn shifted_wall_is_recovered_by_the_deviation_pass() {
    let mut spec = EnvironmentSpec::grid(2, 2, 3);
    spec.deviations.push(DeviationSpec { wall_id: "W1".into(), d_translation: 0.3, d_yaw: 0.0, surface: None });
    let (sc, mut dis) = merged(&spec, NoiseParams::zero());
    let gt = sc.trace.header.ground_truth[0];
    let w1 = sc.plan.wall_index("W1").unwrap();
    dis.pass1().unwrap();
    let p2 = dis.pass2().unwrap();
    assert!(dis.transform_estimate().boxminus(&gt).norm() < 1e-4);
    for (w, t) in wall_translations(&sc, &dis) {
        let expected = if w == w1 { 0.3 } else { 0.0 };
        assert!((t - expected).abs() < 1e-3, "wall {w}: {t}");
    }
    let p3 = dis.pass3().unwrap();
    assert!(p3.final_cost <= p2.final_cost);
    // The combined pass trades a little transform error against the
    // deviation priors.
    assert!(dis.transform_estimate().boxminus(&gt).norm() < 1e-2);
    for (w, t) in wall_translations(&sc, &dis) {
        let expected = if w == w1 { 0.3 } else { 0.0 };
        assert!((t - expected).abs() < 1e-2, "wall {w}: {t}");
    }
}
