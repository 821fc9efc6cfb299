use deviation_slam::geometry::{angle_between, Plane};
use deviation_slam::online_slam::{SGraph, SlamParams};
use deviation_slam::simulator::{
    default_visit_order, generate_environment, plan_trajectory, simulate_run, EnvironmentSpec, NoiseParams,
};

fn run(spec: &EnvironmentSpec, noise: NoiseParams) -> (SGraph, deviation_slam::simulator::SensorTrace, deviation_slam::simulator::WorldModel) {
    let (plan, world) = generate_environment(spec).unwrap();
    let order = default_visit_order(&plan);
    let wp = plan_trajectory(&world, &order).unwrap();
    let trace = simulate_run(&world, &wp, &noise, spec.seed);
    let mut sg = SGraph::new(SlamParams::default());
    for r in &trace.records {
        if sg.process_step(&r.odom_delta, &r.observations).unwrap().is_some() {
            sg.detect_rooms().unwrap();
        }
    }
    (sg, trace, world)
}

#[test]
fn exact_data_recovers_as_built_planes() {
    let spec = EnvironmentSpec::grid(2, 2, 7);
    let (sg, trace, world) = run(&spec, NoiseParams::zero());
    let surfaces = world.surfaces();
    let t0 = trace.header.ground_truth[0];
    let mut worst: f64 = 0.0;
    for p in &sg.planes {
        assert_eq!(p.true_ids.len(), 1, "association merged distinct surfaces");
        let id = p.majority_true_id().unwrap();
        let est = deviation_slam::geometry::transform_plane(&t0, &sg.graph.plane(p.var).unwrap());
        let truth: Plane = surfaces[id].plane;
        worst = worst.max(angle_between(&est.normal, &truth.normal)).max((est.distance - truth.distance).abs());
    }
    assert!(worst < 1e-8, "worst plane error {worst}");
    assert_eq!(sg.rooms.len(), 4);
    assert_eq!(sg.non_monotone_solves, 0);
    println!("kf {} planes {} rooms {} two {}", sg.keyframes.len(), sg.planes.len(), sg.rooms.len(), sg.two_wall_rooms.len());
}
