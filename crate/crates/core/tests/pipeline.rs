use std::path::Path;

use deviation_slam::eval::{golden_artifacts, run_experiment, PipelineConfig, Scenario};
use deviation_slam::fusion::Mode;
use deviation_slam::simulator::{DeviationSpec, EnvironmentSpec, NoiseParams};

#[test]
fn exact_grid_converges_with_zero_error() {
    let sc = Scenario { environment: EnvironmentSpec::grid(2, 2, 1), noise: NoiseParams::zero(), trace_seed: 1 };
    let r = run_experiment(&sc, &PipelineConfig::default()).unwrap();
    assert!(r.converged);
    assert!(r.ate_cm.unwrap() < 0.1);
    assert!(r.deviation_table.is_empty());
}

#[test]
fn shifted_wall_is_detected_under_noise() {
    let mut env = EnvironmentSpec::grid(2, 3, 11);
    env.deviations = vec![DeviationSpec { wall_id: "W1".into(), d_translation: 0.25, d_yaw: 0.0, surface: None }];
    let sc = Scenario { environment: env, noise: NoiseParams::standard(), trace_seed: 5 };
    let r = run_experiment(&sc, &PipelineConfig::with_mode(Mode::Full)).unwrap();
    assert!(r.converged);
    let row = r.deviation_table.iter().find(|row| row.wall_id == "W1").expect("W1 row");
    assert!(row.detected);
    assert!((row.estimated[0] - 0.25).abs() < 0.05, "{:?}", row.estimated);
}

#[test]
fn golden_files_match() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for (name, contents) in golden_artifacts().unwrap() {
        let on_disk = std::fs::read_to_string(dir.join(&name)).unwrap();
        assert!(on_disk == contents, "{name} differs; regenerate with `devslam golden --update`");
    }
}
