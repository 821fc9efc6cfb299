mod common;

use deviation_slam::matching::{global_match, max_clique, MatchParams, Stage};
use deviation_slam::simulator::{DeviationSpec, EnvironmentSpec, NoiseParams};

#[test]
fn exact_grid_matches_uniquely_with_true_transform() {
    let sc = common::scenario(&EnvironmentSpec::grid(2, 2, 3), NoiseParams::zero());
    let sg = common::ingest(&sc.trace, usize::MAX);
    let m = global_match(&sc.ag, &sg, &MatchParams::default()).unwrap();
    assert!(m.unique);
    assert_eq!(m.room_pairs.len(), 4);
    assert_eq!(m.surface_pairs.len(), 16);
    assert!(m.surface_pairs.iter().all(|p| p.stage == Stage::Strict && p.p_dev == 0.0));
    let gt = sc.trace.header.ground_truth[0];
    let err = m.transform_seed.boxminus(&gt);
    assert!(err.norm() < 1e-6, "{err:?}");
}

#[test]
fn shifted_wall_is_found_in_deviated_stage() {
    let mut spec = EnvironmentSpec::grid(2, 2, 3);
    spec.deviations.push(DeviationSpec { wall_id: "W1".into(), d_translation: 0.3, d_yaw: 0.0, surface: None });
    let sc = common::scenario(&spec, NoiseParams::zero());
    let sg = common::ingest(&sc.trace, usize::MAX);
    let m = global_match(&sc.ag, &sg, &MatchParams::default()).unwrap();
    let w1 = sc.plan.wall_index("W1").unwrap();
    let dev_walls: Vec<usize> = m
        .surface_pairs
        .iter()
        .filter(|p| p.stage == Stage::Deviated)
        .map(|p| sc.ag.walls.iter().position(|w| w.surfaces.contains(&p.a)).unwrap())
        .collect();
    assert_eq!(dev_walls, vec![w1, w1]);
    for p in m.surface_pairs.iter().filter(|p| p.stage == Stage::Deviated) {
        assert!(p.p_dev > 0.0 && p.p_dev <= 1.0);
    }
    println!("{:?} {}", m.transform_seed, m.score);
}

#[test]
fn clique_search_agrees_with_exhaustive_enumeration() {
    use rand::Rng;
    for seed in 0..40 {
        let mut r = common::rng(seed);
        let n = r.random_range(1..13);
        let density = r.random_range(0.2..0.9);
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let e = r.random_bool(density);
                adj[i][j] = e;
                adj[j][i] = e;
            }
        }
        assert_eq!(max_clique(&adj), common::exhaustive_clique(&adj), "seed {seed}");
    }
}
