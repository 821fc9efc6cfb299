//! End-to-end runs and metrics: trajectory error, deviation recovery,
//! convergence and update timing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{merge, DisGraph, ElementKind, FusionParams, Mode, StageAReport};
use crate::geometry::Pose3;
use crate::matching::{global_match, local_match, MatchParams};
use crate::online_slam::{SGraph, SlamParams};
use crate::plan_model::{build_agraph, AGraph, PlanFile};
use crate::simulator::{
    default_visit_order, generate_environment, plan_trajectory, simulate_run, DeviationSpec, EnvironmentSpec,
    NoiseParams, SensorTrace,
};

pub const DETECTION_THRESHOLD_M: f64 = 0.09;
pub const DETECTION_THRESHOLD_DEG: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{stage}: {message}")]
    Pipeline { stage: &'static str, message: String },
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> EvalError {
    move |e| EvalError::Pipeline { stage, message: e.to_string() }
}

/// Root-mean-square translational error in centimetres.
pub fn ate(estimated: &[Pose3], ground_truth: &[Pose3]) -> Result<f64, EvalError> {
    if estimated.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(estimated.len(), ground_truth.len()));
    }
    if estimated.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (e.translation - g.translation).norm_squared())
        .sum();
    Ok((sum / estimated.len() as f64).sqrt() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub slam: SlamParams,
    pub matching: MatchParams,
    pub fusion: FusionParams,
    pub stage_b_every: usize,
    /// Match, merge and optimize once after the whole trace instead of
    /// incrementally.
    pub batch: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            slam: SlamParams::default(),
            matching: MatchParams::default(),
            fusion: FusionParams::default(),
            stage_b_every: 5,
            batch: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_mode(mode: Mode) -> Self {
        let mut c = Self::default();
        c.fusion.mode = mode;
        c
    }
}

pub struct PipelineOutput {
    pub sg: Option<SGraph>,
    pub dis: Option<DisGraph>,
    pub convergence_step: Option<usize>,
    pub stage_a: Option<StageAReport>,
    pub stage_b_ms: Vec<f64>,
    pub match_attempts: usize,
}

impl PipelineOutput {
    pub fn sgraph(&self) -> &SGraph {
        match (&self.dis, &self.sg) {
            (Some(d), _) => &d.sg,
            (None, Some(s)) => s,
            (None, None) => unreachable!("pipeline output always holds a graph"),
        }
    }

    pub fn transform(&self) -> Option<Pose3> {
        self.dis.as_ref().map(|d| d.transform_estimate())
    }

    /// Keyframe trajectory in the plan frame with the step of each pose.
    pub fn trajectory(&self) -> Vec<(usize, Pose3)> {
        let t = self.transform().unwrap_or_else(Pose3::identity);
        self.sgraph().trajectory().into_iter().map(|(s, p)| (s, t.compose(&p))).collect()
    }

    /// Every optimization so far only accepted cost-decreasing steps.
    pub fn monotone(&self) -> bool {
        self.sgraph().non_monotone_solves == 0
    }
}

fn try_global(
    ag: &AGraph,
    sg: &SGraph,
    cfg: &PipelineConfig,
) -> Result<Option<(DisGraph, StageAReport)>, EvalError> {
    let Ok(m) = global_match(ag, sg, &cfg.matching) else { return Ok(None) };
    let mut dis = merge(ag, sg.clone(), &m, &cfg.fusion).map_err(|e| stage_err("merge")(&e))?;
    let rep = dis.stage_a().map_err(|e| stage_err("stage_a")(&e))?;
    let ok = rep.pass1.as_ref().map(|r| r.converged).unwrap_or(rep.pass3.converged);
    Ok(ok.then_some((dis, rep)))
}

fn stage_b_update(ag: &AGraph, dis: &mut DisGraph, cfg: &PipelineConfig) -> Result<f64, EvalError> {
    let start = Instant::now();
    let add = local_match(ag, &dis.sg, &dis.transform_estimate(), &dis.matched_rooms, &cfg.matching);
    dis.stage_b(ag, &add).map_err(|e| stage_err("stage_b")(&e))?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Runs ingestion, matching, merging and the optimization schedules over a
/// recorded trace.
pub fn run_pipeline(ag: &AGraph, trace: &SensorTrace, cfg: &PipelineConfig) -> Result<PipelineOutput, EvalError> {
    let mut sg = Some(SGraph::new(cfg.slam));
    let mut dis: Option<DisGraph> = None;
    let mut out_stage_a = None;
    let mut convergence_step = None;
    let mut stage_b_ms = Vec::new();
    let mut match_attempts = 0;
    let mut rooms_at_last_attempt = 0;
    let mut keyframes_since_b = 0;
    for (step, rec) in trace.records.iter().enumerate() {
        let graph = match (&mut dis, &mut sg) {
            (Some(d), _) => &mut d.sg,
            (None, Some(s)) => s,
            (None, None) => unreachable!(),
        };
        let kf = graph.process_step(&rec.odom_delta, &rec.observations).map_err(|e| stage_err("slam")(&e))?;
        if kf.is_none() {
            continue;
        }
        graph.detect_rooms().map_err(|e| stage_err("room_detection")(&e))?;
        if let Some(d) = dis.as_mut() {
            keyframes_since_b += 1;
            if keyframes_since_b >= cfg.stage_b_every {
                keyframes_since_b = 0;
                stage_b_ms.push(stage_b_update(ag, d, cfg)?);
            }
            continue;
        }
        let s = sg.as_ref().expect("not merged yet");
        if cfg.batch || s.rooms.len() < cfg.matching.min_rooms || s.rooms.len() == rooms_at_last_attempt {
            continue;
        }
        rooms_at_last_attempt = s.rooms.len();
        match_attempts += 1;
        if let Some((d, rep)) = try_global(ag, s, cfg)? {
            dis = Some(d);
            sg = None;
            out_stage_a = Some(rep);
            convergence_step = Some(step);
        }
    }
    if cfg.batch {
        if let Some(s) = sg.as_ref() {
            match_attempts += 1;
            if let Some((d, rep)) = try_global(ag, s, cfg)? {
                dis = Some(d);
                sg = None;
                out_stage_a = Some(rep);
                convergence_step = Some(trace.records.len().saturating_sub(1));
            }
        }
    } else if let Some(d) = dis.as_mut() {
        stage_b_ms.push(stage_b_update(ag, d, cfg)?);
    }
    Ok(PipelineOutput { sg, dis, convergence_step, stage_a: out_stage_a, stage_b_ms, match_attempts })
}

/// Wall-level deviation estimated from the matched surfaces of the wall:
/// translation along the wall axis and yaw, averaged over surfaces.
pub fn wall_estimates(ag: &AGraph, plan: &PlanFile, dis: &DisGraph) -> BTreeMap<usize, (f64, f64)> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for d in dis.deviations.iter().filter(|d| d.kind == ElementKind::Surface) {
        let Some(w) = ag.walls.iter().position(|w| w.surfaces.contains(&d.a_element)) else { continue };
        let axis = plan.walls[w].axis.unit();
        let n = ag.graph.plane(d.a_element).expect("A surface").normal;
        let (t, yaw) = dis.surface_deviation(ag, d);
        let e = acc.entry(w).or_insert((0.0, 0.0, 0));
        e.0 += -t * n.dot(&axis);
        e.1 += yaw.to_degrees();
        e.2 += 1;
    }
    acc.into_iter().map(|(w, (t, y, n))| (w, (t / n as f64, y / n as f64))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub wall_id: String,
    pub injected: [f64; 2],
    pub estimated: [f64; 2],
    pub abs_error: [f64; 2],
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// Components (translation or rotation) injected above threshold.
    pub eligible: usize,
    pub detected: usize,
    pub rate: Option<f64>,
    pub false_positives: usize,
    pub mean_abs_error_m: Option<f64>,
    pub mean_abs_error_deg: Option<f64>,
}

fn component_detected(injected: f64, estimated: f64, threshold: f64) -> bool {
    estimated.abs() >= threshold && injected.signum() == estimated.signum()
}

/// Deviation table and detection statistics against the injected list.
pub fn deviation_metrics(
    plan: &PlanFile,
    injected: &[DeviationSpec],
    estimates: &BTreeMap<usize, (f64, f64)>,
) -> (Vec<DeviationRow>, DetectionSummary) {
    let mut inj: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
    for d in injected {
        if let Some(w) = plan.wall_index(&d.wall_id) {
            let e = inj.entry(w).or_insert([0.0, 0.0]);
            e[0] += d.d_translation;
            e[1] += d.d_yaw;
        }
    }
    let mut rows = Vec::new();
    let mut s = DetectionSummary::default();
    let (mut err_m, mut err_deg) = (Vec::new(), Vec::new());
    for w in 0..plan.walls.len() {
        let i = inj.get(&w).copied().unwrap_or([0.0, 0.0]);
        let e = estimates.get(&w).map(|&(t, y)| [t, y]).unwrap_or([0.0, 0.0]);
        let flagged = [e[0].abs() >= DETECTION_THRESHOLD_M, e[1].abs() >= DETECTION_THRESHOLD_DEG];
        let injected_any = i[0] != 0.0 || i[1] != 0.0;
        if !injected_any {
            if flagged[0] || flagged[1] {
                s.false_positives += 1;
                rows.push(DeviationRow {
                    wall_id: plan.walls[w].id.clone(),
                    injected: i,
                    estimated: e,
                    abs_error: [(i[0] - e[0]).abs(), (i[1] - e[1]).abs()],
                    detected: false,
                });
            }
            continue;
        }
        let mut all = true;
        for (k, th) in [DETECTION_THRESHOLD_M, DETECTION_THRESHOLD_DEG].into_iter().enumerate() {
            if i[k].abs() >= th {
                s.eligible += 1;
                if component_detected(i[k], e[k], th) {
                    s.detected += 1;
                } else {
                    all = false;
                }
            }
        }
        err_m.push((i[0] - e[0]).abs());
        err_deg.push((i[1] - e[1]).abs());
        rows.push(DeviationRow {
            wall_id: plan.walls[w].id.clone(),
            injected: i,
            estimated: e,
            abs_error: [(i[0] - e[0]).abs(), (i[1] - e[1]).abs()],
            detected: all && (flagged[0] || flagged[1]),
        });
    }
    s.rate = (s.eligible > 0).then(|| s.detected as f64 / s.eligible as f64);
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    s.mean_abs_error_m = mean(&err_m);
    s.mean_abs_error_deg = mean(&err_deg);
    (rows, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub converged: bool,
    pub convergence_time_steps: Option<usize>,
    pub ate_cm: Option<f64>,
    pub mean_update_ms: f64,
    pub stage_b_updates: usize,
    /// Translation (m) and rotation (deg) error of the origin transform.
    pub transform_error: Option<[f64; 2]>,
    pub keyframes: usize,
    pub s_rooms: usize,
    pub room_pairs: usize,
    pub surface_pairs: usize,
    pub monotone: bool,
    pub deviation_table: Vec<DeviationRow>,
    pub detection: DetectionSummary,
}

impl RunReport {
    /// Copy with wall-clock fields zeroed, for byte-stable comparisons.
    pub fn normalized(&self) -> RunReport {
        RunReport { mean_update_ms: 0.0, ..self.clone() }
    }
}

/// Builds the report for a finished pipeline run.
pub fn report(plan: &PlanFile, ag: &AGraph, trace: &SensorTrace, out: &PipelineOutput, mode: Mode) -> RunReport {
    let sg = out.sgraph();
    let converged = out.dis.is_some();
    let (ate_cm, transform_error) = if let Some(t) = out.transform() {
        let traj = out.trajectory();
        let gt: Vec<Pose3> = traj.iter().map(|(s, _)| trace.header.ground_truth[*s]).collect();
        let est: Vec<Pose3> = traj.iter().map(|(_, p)| *p).collect();
        let a = ate(&est, &gt).ok();
        let te = trace.header.ground_truth.first().map(|g| {
            let d = t.boxminus(g);
            [nalgebra::Vector3::new(d[3], d[4], d[5]).norm(), nalgebra::Vector3::new(d[0], d[1], d[2]).norm().to_degrees()]
        });
        (a, te)
    } else {
        (None, None)
    };
    let (table, detection) = match &out.dis {
        Some(d) => deviation_metrics(plan, &trace.header.deviations, &wall_estimates(ag, plan, d)),
        None => (Vec::new(), DetectionSummary::default()),
    };
    let mean_update_ms =
        if out.stage_b_ms.is_empty() { 0.0 } else { out.stage_b_ms.iter().sum::<f64>() / out.stage_b_ms.len() as f64 };
    RunReport {
        mode,
        converged,
        convergence_time_steps: out.convergence_step,
        ate_cm,
        mean_update_ms,
        stage_b_updates: out.stage_b_ms.len(),
        transform_error,
        keyframes: sg.keyframes.len(),
        s_rooms: sg.rooms.len(),
        room_pairs: out.dis.as_ref().map(|d| d.matched_rooms.len()).unwrap_or(0),
        surface_pairs: out.dis.as_ref().map(|d| d.matched_surfaces.len()).unwrap_or(0),
        monotone: out.monotone(),
        deviation_table: table,
        detection,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub environment: EnvironmentSpec,
    pub noise: NoiseParams,
    pub trace_seed: u64,
}

/// Generates the world, simulates the tour and returns the plan and trace.
pub fn simulate_scenario(sc: &Scenario) -> Result<(PlanFile, SensorTrace), EvalError> {
    let (plan, world) = generate_environment(&sc.environment).map_err(|e| stage_err("generate")(&e))?;
    let order = default_visit_order(&plan);
    let wp = plan_trajectory(&world, &order).map_err(|e| stage_err("trajectory")(&e))?;
    Ok((plan, simulate_run(&world, &wp, &sc.noise, sc.trace_seed)))
}

/// Full pipeline on a plan and trace.
pub fn run_on_trace(plan: &PlanFile, trace: &SensorTrace, cfg: &PipelineConfig) -> Result<RunReport, EvalError> {
    let ag = build_agraph(plan).map_err(|e| stage_err("plan")(&e))?;
    let out = run_pipeline(&ag, trace, cfg)?;
    Ok(report(plan, &ag, trace, &out, cfg.fusion.mode))
}

/// Generate, simulate and run one scenario.
pub fn run_experiment(sc: &Scenario, cfg: &PipelineConfig) -> Result<RunReport, EvalError> {
    let (plan, trace) = simulate_scenario(sc)?;
    run_on_trace(&plan, &trace, cfg)
}

/// `step tx ty tz qx qy qz qw` per pose.
pub fn trajectory_lines(traj: &[(usize, Pose3)]) -> String {
    let mut s = String::new();
    for (k, p) in traj {
        let q = p.rotation;
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            k, p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w
        ));
    }
    s
}

/// Aggregate CSV over named reports.
pub fn summary_csv(reports: &[(String, RunReport)]) -> String {
    let mut s = String::from(
        "report,mode,converged,convergence_time_steps,ate_cm,mean_update_ms,detection_rate,false_positives,mean_abs_error_m,mean_abs_error_deg\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (name, r) in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{:.3},{},{},{},{}\n",
            name,
            r.mode,
            r.converged,
            r.convergence_time_steps.map(|x| x.to_string()).unwrap_or_default(),
            opt(r.ate_cm),
            r.mean_update_ms,
            opt(r.detection.rate),
            r.detection.false_positives,
            opt(r.detection.mean_abs_error_m),
            opt(r.detection.mean_abs_error_deg),
        ));
    }
    s
}

/// Scenario behind the golden files for `seed`: a 2×2 grid with three
/// injected deviations and standard noise.
pub fn golden_scenario(seed: u64) -> Scenario {
    let mut environment = EnvironmentSpec::grid(2, 2, seed);
    environment.deviations = vec![
        DeviationSpec { wall_id: "W1".into(), d_translation: 0.3, d_yaw: 0.0, surface: None },
        DeviationSpec { wall_id: "W4".into(), d_translation: -0.15, d_yaw: 0.0, surface: None },
        DeviationSpec { wall_id: "W7".into(), d_translation: 0.0, d_yaw: 8.0, surface: None },
    ];
    Scenario { environment, noise: NoiseParams::standard(), trace_seed: seed }
}

pub const GOLDEN_SEEDS: [u64; 3] = [42, 7, 2024];

/// `(file name, contents)` of every golden artifact.
pub fn golden_artifacts() -> Result<Vec<(String, String)>, EvalError> {
    let mut out = Vec::new();
    for seed in GOLDEN_SEEDS {
        let (plan, trace) = simulate_scenario(&golden_scenario(seed))?;
        out.push((format!("trace_seed{seed}.txt"), crate::simulator::write_trace(&trace)));
        if seed == GOLDEN_SEEDS[0] {
            let report = run_on_trace(&plan, &trace, &PipelineConfig::default())?.normalized();
            let json = serde_json::to_string_pretty(&report).map_err(|e| stage_err("report")(&e))?;
            out.push((format!("report_seed{seed}.json"), json + "\n"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn constant_offset_gives_closed_form_ate() {
        let gt: Vec<Pose3> = (0..10).map(|i| Pose3::from_translation(Vector3::new(i as f64, 0.0, 0.0))).collect();
        let est: Vec<Pose3> =
            gt.iter().map(|p| Pose3::from_translation(p.translation + Vector3::new(0.0, 0.05, 0.0))).collect();
        assert!((ate(&est, &gt).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(ate(&est[..3], &gt), Err(EvalError::LengthMismatch(3, 10)));
    }
}
