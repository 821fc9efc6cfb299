mod common;

use std::collections::BTreeMap;

use deviation_slam::eval::{ate, deviation_metrics, summary_csv, run_experiment, PipelineConfig, Scenario};
use deviation_slam::geometry::Pose3;
use deviation_slam::simulator::{generate_environment, DeviationSpec, EnvironmentSpec, NoiseParams};
use nalgebra::Vector3;

#[test]
fn ate_of_constant_offset_is_its_length() {
    let mut r = common::rng(1);
    let gt: Vec<Pose3> = (0..50).map(|_| common::random_pose(&mut r)).collect();
    let est: Vec<Pose3> = gt
        .iter()
        .map(|p| Pose3::new(p.rotation, p.translation + Vector3::new(0.03, -0.04, 0.0)))
        .collect();
    assert!((ate(&est, &gt).unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn ate_matches_direct_rms() {
    let mut r = common::rng(2);
    let gt: Vec<Pose3> = (0..100).map(|_| common::random_pose(&mut r)).collect();
    let est: Vec<Pose3> = gt.iter().map(|p| p.compose(&common::random_pose(&mut r))).collect();
    let mut sum = 0.0;
    for (e, g) in est.iter().zip(&gt) {
        let d = e.translation - g.translation;
        sum += d.x * d.x + d.y * d.y + d.z * d.z;
    }
    let oracle = 100.0 * (sum / 100.0).sqrt();
    assert!((ate(&est, &gt).unwrap() - oracle).abs() < 1e-9);
    assert_eq!(ate(&[], &[]).unwrap(), 0.0);
}

fn dev(wall: &str, t: f64, yaw: f64) -> DeviationSpec {
    DeviationSpec { wall_id: wall.into(), d_translation: t, d_yaw: yaw, surface: None }
}

#[test]
fn detection_counts_follow_thresholds_and_sign() {
    let (plan, _) = generate_environment(&EnvironmentSpec::grid(2, 2, 1)).unwrap();
    let w = |id: &str| plan.wall_index(id).unwrap();
    let injected = [dev("W1", 0.2, 0.0), dev("W2", -0.15, 0.0), dev("W3", 0.0, 6.0), dev("W4", 0.05, 0.0)];
    let estimates = BTreeMap::from([
        (w("W1"), (0.19, 0.1)),
        // Wrong sign is a miss.
        (w("W2"), (0.12, 0.0)),
        (w("W3"), (0.0, 2.0)),
        (w("W4"), (0.04, 0.0)),
        // Nothing injected here.
        (w("W5"), (0.10, 0.0)),
        (w("W6"), (0.02, 1.0)),
    ]);
    let (rows, s) = deviation_metrics(&plan, &injected, &estimates);
    assert_eq!(s.eligible, 3);
    assert_eq!(s.detected, 1);
    assert_eq!(s.false_positives, 1);
    assert!((s.rate.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let detected: Vec<_> = rows.iter().filter(|r| r.detected).map(|r| r.wall_id.as_str()).collect();
    assert_eq!(detected, ["W1"]);
    // Mean over the four injected walls only.
    let oracle_m = (0.01 + 0.27 + 0.0 + 0.01) / 4.0;
    assert!((s.mean_abs_error_m.unwrap() - oracle_m).abs() < 1e-12);
}

#[test]
fn summary_has_one_row_per_report() {
    let sc = Scenario { environment: EnvironmentSpec::grid(1, 2, 3), noise: NoiseParams::zero(), trace_seed: 3 };
    let rep = run_experiment(&sc, &PipelineConfig::default()).unwrap();
    let csv = summary_csv(&[("a".into(), rep.clone()), ("b".into(), rep)]);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("a,full,true,"));
    assert_eq!(lines[0].split(',').count(), lines[2].split(',').count());
}
