#![allow(dead_code)]

use std::collections::BTreeMap;

use deviation_slam::online_slam::{SGraph, SlamParams};
use deviation_slam::plan_model::{build_agraph, AGraph, PlanFile};
use deviation_slam::simulator::{
    default_visit_order, generate_environment, plan_trajectory, simulate_run, EnvironmentSpec, NoiseParams,
    SensorTrace, WorldModel,
};

pub struct Scenario {
    pub plan: PlanFile,
    pub world: WorldModel,
    pub trace: SensorTrace,
    pub ag: AGraph,
}

pub fn scenario(spec: &EnvironmentSpec, noise: NoiseParams) -> Scenario {
    let (plan, world) = generate_environment(spec).unwrap();
    let order = default_visit_order(&plan);
    let wp = plan_trajectory(&world, &order).unwrap();
    let trace = simulate_run(&world, &wp, &noise, spec.seed);
    let ag = build_agraph(&plan).unwrap();
    Scenario { plan, world, trace, ag }
}

/// Ingests the first `steps` records of the trace.
pub fn ingest(trace: &SensorTrace, steps: usize) -> SGraph {
    let mut sg = SGraph::new(SlamParams::default());
    for r in trace.records.iter().take(steps) {
        if sg.process_step(&r.odom_delta, &r.observations).unwrap().is_some() {
            sg.detect_rooms().unwrap();
        }
    }
    sg
}

use deviation_slam::factor_graph::{information_from_sigmas, FactorGraph, FactorKind, IdSpace, Value, VarKind};
use deviation_slam::geometry::{transform_plane, Plane, Pose3};
use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose3 {
    let mut axis = random_vec3(rng, 1.0);
    while axis.norm() < 1e-3 {
        axis = random_vec3(rng, 1.0);
    }
    let angle = rng.random_range(0.0..3.0);
    Pose3::new(UnitQuaternion::from_scaled_axis(axis.normalize() * angle), random_vec3(rng, 10.0))
}

pub fn random_plane(rng: &mut ChaCha8Rng) -> Plane {
    let mut n = random_vec3(rng, 1.0);
    while n.norm() < 1e-3 {
        n = random_vec3(rng, 1.0);
    }
    Plane::new(n, rng.random_range(-5.0..5.0)).unwrap()
}

/// Worst violation of each group property over `samples` random draws.
pub fn group_property_errors(samples: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 7];
    let pose_err = |a: &Pose3, b: &Pose3| {
        let d = a.boxminus(b);
        d.norm()
    };
    for _ in 0..samples {
        let (a, b, c) = (random_pose(&mut r), random_pose(&mut r), random_pose(&mut r));
        worst[0] = worst[0].max(pose_err(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        worst[1] = worst[1].max(pose_err(&a.compose(&a.inverse()), &Pose3::identity()));
        worst[2] = worst[2].max(pose_err(&b.boxplus(&a.boxminus(&b)), &a));
        let delta = Vector6::from_iterator((0..6).map(|_| r.random_range(-0.5..0.5)));
        worst[3] = worst[3].max((a.boxplus(&delta).boxminus(&a) - delta).norm());

        let p = random_plane(&mut r);
        let q = random_plane(&mut r);
        if p.normal.dot(&q.normal) > -0.9 {
            let back = q.boxplus(&p.boxminus(&q).unwrap());
            worst[4] = worst[4].max((back.normal - p.normal).norm() + (back.distance - p.distance).abs());
        }
        let lhs = transform_plane(&a.compose(&b), &p);
        let rhs = transform_plane(&a, &transform_plane(&b, &p));
        worst[5] = worst[5].max((lhs.normal - rhs.normal).norm() + (lhs.distance - rhs.distance).abs());
        let x = random_vec3(&mut r, 10.0);
        let moved = transform_plane(&a, &p).signed_distance(&a.transform_point(&x));
        worst[6] = worst[6].max((moved - p.signed_distance(&x)).abs());
    }
    let names = [
        "pose associativity",
        "pose inverse",
        "pose boxminus then boxplus",
        "pose boxplus then boxminus",
        "plane boxminus then boxplus",
        "plane transform composition",
        "plane transform preserves point distance",
    ];
    names.into_iter().zip(worst).collect()
}

/// Box-like planes `[+x, -x, +y, -y]` around a room, slightly perturbed.
fn room_planes(rng: &mut ChaCha8Rng) -> [Plane; 4] {
    let mut p = |n: Vector3<f64>, d: f64| Plane::new(n + random_vec3(rng, 0.05), d + rng.random_range(-0.3..0.3)).unwrap();
    [p(Vector3::x(), -1.0), p(-Vector3::x(), 3.0), p(Vector3::y(), -0.5), p(-Vector3::y(), 4.0)]
}

/// A graph holding one factor of every kind at random values.
pub fn all_kinds_graph(seed: u64) -> FactorGraph {
    let mut r = rng(seed);
    let mut g = FactorGraph::new();
    let pose = |g: &mut FactorGraph, r: &mut ChaCha8Rng| {
        g.add_variable(IdSpace::Slam, VarKind::KeyframePose, Value::Pose(random_pose(r)), false)
    };
    let p: Vec<_> = (0..5).map(|_| pose(&mut g, &mut r)).collect();
    let planes = room_planes(&mut r);
    let pl: Vec<_> =
        planes.iter().map(|x| g.add_variable(IdSpace::Slam, VarKind::WallSurface, Value::Plane(*x), false)).collect();
    let gamma = g.add_variable(IdSpace::Slam, VarKind::TwoWallRoom, Value::Vector(DVector::from_element(1, 1.3)), false);
    let d3 = DVector::from_iterator(3, (0..3).map(|_| r.random_range(-0.2..0.2)));
    let dev = g.add_variable(IdSpace::Fusion, VarKind::DeviationPlane, Value::Vector(d3), false);

    let factors = vec![
        (FactorKind::PosePrior { measurement: random_pose(&mut r) }, vec![p[0]]),
        (FactorKind::Between { measurement: random_pose(&mut r) }, vec![p[0], p[1]]),
        (FactorKind::PlanePrior { measurement: random_plane(&mut r) }, vec![pl[0]]),
        (FactorKind::VectorPrior { measurement: DVector::from_element(3, 0.1) }, vec![dev]),
        (FactorKind::PosePlane { measurement: random_plane(&mut r) }, vec![p[0], pl[0]]),
        (FactorKind::RoomFromPlanes { floor_z: 0.4 }, vec![p[2], pl[0], pl[1], pl[2], pl[3]]),
        (FactorKind::TwoWallRoom { axis: Vector3::x() }, vec![gamma, pl[0], pl[1]]),
        (FactorKind::WallFromSurfaces { width: 0.2 }, vec![p[3], pl[0], pl[1]]),
        (
            FactorKind::Doorway { rel_a: random_pose(&mut r), rel_b: random_pose(&mut r) },
            vec![p[0], p[1], p[2]],
        ),
        (FactorKind::FloorRoom { measurement: Vector2::new(0.7, -1.2) }, vec![p[4], p[2]]),
        (FactorKind::OriginMerge, vec![p[0], p[1], p[2]]),
        (FactorKind::FloorAlign, vec![p[0], p[3], p[4]]),
        (FactorKind::RoomDeviation { alignment: random_pose(&mut r) }, vec![p[0], p[1], p[2], p[3]]),
        (FactorKind::SurfaceDeviation { anchor: random_pose(&mut r) }, vec![p[0], pl[0], pl[2], dev]),
    ];
    for (kind, vars) in factors {
        let info = information_from_sigmas(&vec![1.0; kind.dim()]);
        g.add_factor(kind, vars, info, None).unwrap();
    }
    g
}

/// Worst central-difference Jacobian error per factor kind over `graphs`
/// random graphs.
pub fn jacobian_errors(graphs: u64, epsilon: f64) -> BTreeMap<&'static str, f64> {
    let mut worst = BTreeMap::new();
    for seed in 0..graphs {
        let g = all_kinds_graph(seed);
        for (id, err) in g.check_jacobians(epsilon) {
            let e = worst.entry(g.factors()[id].kind.name()).or_insert(0.0f64);
            *e = e.max(err);
        }
    }
    worst
}

/// Maximum clique by enumerating every subset; ties go to the
/// lexicographically smallest sorted index list.
pub fn exhaustive_clique(adj: &[Vec<bool>]) -> Vec<usize> {
    let n = adj.len();
    let mut best: Vec<usize> = Vec::new();
    for mask in 0u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() < best.len() {
            continue;
        }
        let ok = set.iter().enumerate().all(|(k, &i)| set[k + 1..].iter().all(|&j| adj[i][j]));
        if ok && (set.len() > best.len() || set < best) {
            best = set;
        }
    }
    best
}
