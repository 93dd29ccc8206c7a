//! Per-agent primitive selection and replanning triggers.

use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{
    exact_obstacle_clear, exact_peer_clear, mark_agent_conflicts, mark_obstacle_conflicts,
    reservoir_sample, CheckWindow, PeerSamples, PeerTrajectory, PointBuckets, UnsafeMask,
};
use crate::error::{Error, Result};
use crate::frame::{velocity_frame, VelocityFrame};
use crate::library::MotionLibrary;
use crate::occupancy::OccupancyRelations;
use crate::topp::KinematicState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub lambda_g: f64,
    pub lambda_b: f64,
    pub c_b: f64,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_b: 1.0,
            c_b: 1e4,
            bounds_min: [f64::NEG_INFINITY; 3],
            bounds_max: [f64::INFINITY; 3],
        }
    }
}

impl CostWeights {
    pub fn in_bounds(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.bounds_min[k] && p[k] <= self.bounds_max[k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_g > 0.0 && self.lambda_b >= 0.0 && self.c_b > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cost weights {self:?}")))
        }
    }
}

/// Goal-progress cost plus a bound penalty.
pub fn score_primitive(
    p_end: &Vector3<f64>,
    p_start: &Vector3<f64>,
    p_goal: &Vector3<f64>,
    w: &CostWeights,
) -> f64 {
    goal_cost((p_end - p_goal).norm(), p_start, p_goal, w) + bound_cost(p_end, w)
}

fn goal_cost(
    end_distance: f64,
    p_start: &Vector3<f64>,
    p_goal: &Vector3<f64>,
    w: &CostWeights,
) -> f64 {
    w.lambda_g * (end_distance - (p_start - p_goal).norm())
}

fn bound_cost(p_end: &Vector3<f64>, w: &CostWeights) -> f64 {
    if w.in_bounds(p_end) {
        0.0
    } else {
        w.lambda_b * w.c_b
    }
}

/// Nearest library speed index to `min(speed, v_max)`; ties round down.
pub fn select_start_speed(speed: f64, speed_step: f64, v_max: f64) -> usize {
    let k = speed.clamp(0.0, v_max) / speed_step;
    let f = k.floor();
    let idx = if k - f > 0.5 + 1e-9 { f + 1.0 } else { f };
    idx.min((v_max / speed_step).round()) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub weights: CostWeights,
    /// Point budget per check.
    pub n_pc: usize,
    pub r_goal: f64,
    pub v_goal: f64,
    pub eps_v: f64,
    pub replan_period: f64,
    pub replan_fraction: f64,
    /// Robot radius for the exact peer check; set from the occupancy
    /// parameters.
    #[serde(skip)]
    pub r_robot: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            n_pc: 2000,
            r_goal: 0.3,
            v_goal: 0.1,
            eps_v: 0.05,
            replan_period: 1.0,
            replan_fraction: 0.8,
            r_robot: 0.15,
        }
    }
}

impl PlannerParams {
    pub fn replan_threshold(&self, duration: f64) -> f64 {
        self.replan_period.min(self.replan_fraction * duration)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let ok = self.n_pc > 0
            && self.r_goal > 0.0
            && self.v_goal >= 0.0
            && self.eps_v > 0.0
            && self.replan_period > 0.0
            && self.replan_fraction > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid planner parameters {self:?}"
            )))
        }
    }
}

/// A selected primitive placed in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPlan {
    pub frame: VelocityFrame,
    pub primitive: usize,
    pub start_time: f64,
    pub cost: f64,
}

impl AgentPlan {
    pub fn state_at(&self, library: &MotionLibrary, t: f64) -> KinematicState {
        let s = library
            .sample(self.primitive, t - self.start_time)
            .expect("plan primitive exists");
        KinematicState {
            position: self.frame.to_world(&s.position),
            velocity: self.frame.vector_to_world(&s.velocity),
            acceleration: self.frame.vector_to_world(&s.acceleration),
        }
    }

    pub fn end_time(&self, library: &MotionLibrary) -> f64 {
        self.start_time + library.primitives()[self.primitive].duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanOutcome {
    Planned(AgentPlan),
    EmergencyStop,
    GoalReached,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlanDiagnostics {
    pub group_size: usize,
    pub safe_count: usize,
    pub obstacle_flags: usize,
    pub agent_flags: usize,
    pub cloud_points: usize,
    /// Primitives cleared by the exact peer check.
    pub exact_rescues: usize,
    pub compute_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanResult {
    pub outcome: PlanOutcome,
    pub diagnostics: PlanDiagnostics,
}

/// World points inside the grid box of `frame`, reduced to at most `n_pc`,
/// expressed in the frame.
pub fn prepare_cloud<'a, R: Rng + ?Sized>(
    points: impl IntoIterator<Item = &'a Vector3<f64>>,
    frame: &VelocityFrame,
    rel: &OccupancyRelations,
    n_pc: usize,
    rng: &mut R,
) -> Vec<Vector3<f64>> {
    let lo = rel.grid.min;
    let hi = rel.grid.max();
    let inside = points.into_iter().map(|p| frame.to_local(p)).filter(|q| {
        q.x >= lo.x && q.x < hi.x && q.y >= lo.y && q.y < hi.y && q.z >= lo.z && q.z < hi.z
    });
    reservoir_sample(inside, n_pc, rng)
}

pub fn check_compatible(library: &MotionLibrary, rel: &OccupancyRelations) -> Result<()> {
    if library.hash() != rel.library_hash {
        return Err(Error::Config(format!(
            "relations were built for library {}, not {}",
            rel.hash_hex(),
            library.hash_hex()
        )));
    }
    Ok(())
}

/// Inputs of one replanning call.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    pub state: KinematicState,
    pub goal: Vector3<f64>,
    pub t_now: f64,
    pub peers: &'a [PeerTrajectory],
    /// Heading used when the robot is too slow to define a frame; the
    /// horizontal goal direction when `None`.
    pub heading: Option<Vector3<f64>>,
}

/// Builds the frame, labels the start-speed group, and picks the cheapest
/// safe primitive.
pub fn replan<'a, R: Rng + ?Sized>(
    req: &PlanRequest<'_>,
    cloud: impl IntoIterator<Item = &'a Vector3<f64>>,
    library: &MotionLibrary,
    rel: &OccupancyRelations,
    params: &PlannerParams,
    rng: &mut R,
) -> Result<PlanResult> {
    let clock = Instant::now();
    check_compatible(library, rel)?;
    let p = req.state.position;
    let v = req.state.velocity;
    let to_goal = req.goal - p;
    let mut diag = PlanDiagnostics::default();
    if to_goal.norm() <= params.r_goal && v.norm() <= params.v_goal {
        diag.compute_time = clock.elapsed().as_secs_f64();
        return Ok(PlanResult {
            outcome: PlanOutcome::GoalReached,
            diagnostics: diag,
        });
    }
    let fallback = {
        let h = req
            .heading
            .unwrap_or(Vector3::new(to_goal.x, to_goal.y, 0.0));
        if h.norm() > 1e-9 {
            h.normalize()
        } else {
            Vector3::x()
        }
    };
    let frame = velocity_frame(p, v, fallback, params.eps_v);
    let settings = library.settings();
    let k = select_start_speed(v.norm(), settings.speed_step, settings.limits.v_max);
    let group = library.group(k);
    let mut mask = UnsafeMask::new(group.clone());
    diag.group_size = group.len();

    let local = prepare_cloud(cloud, &frame, rel, params.n_pc, rng);
    diag.cloud_points = local.len();
    diag.obstacle_flags = mark_obstacle_conflicts(&local, rel, &mut mask);
    let window = CheckWindow::planning(req.t_now, library.max_group_duration(k));
    let mut agent_mask = UnsafeMask::new(group.clone());
    diag.agent_flags =
        mark_agent_conflicts(req.peers, &frame, window, library, rel, &mut agent_mask);
    let obstacle_mask = mask.clone();
    for id in group.clone() {
        if agent_mask.is_unsafe(id) {
            mask.set_unsafe(id);
        }
    }
    if mask.all_unsafe() && !group.is_empty() {
        // The grid checks are conservative by a cell half-diagonal, which can
        // box in a robot that stopped close to something. When nothing is
        // left, re-check the flagged primitives against the raw inputs.
        let r_infl = rel.r_infl();
        let buckets = PointBuckets::new(&local, r_infl.max(1e-3));
        // Relative motion between 10 ms samples is covered by the slack.
        let step = 0.01;
        let clearance = 2.0 * params.r_robot + settings.limits.v_max * step;
        let reach = library.horizon() + clearance;
        let samples = PeerSamples::new(
            library,
            req.peers,
            &p,
            reach,
            (window.from, window.until),
            step,
        );
        for id in group.clone() {
            let obstacle_ok = !obstacle_mask.is_unsafe(id)
                || exact_obstacle_clear(library, id, &buckets, r_infl, rel.t_res);
            let agent_ok = !agent_mask.is_unsafe(id)
                || exact_peer_clear(library, id, &frame, req.t_now, &samples, clearance);
            if obstacle_ok && agent_ok {
                mask.clear(id);
                diag.exact_rescues += 1;
            }
        }
    }

    let near_goal = to_goal.norm() < library.horizon();
    let mut best: Option<(f64, usize)> = None;
    for id in mask.safe_ids() {
        diag.safe_count += 1;
        let prim = &library.primitives()[id];
        let end = frame.to_world(&prim.end_position);
        // Close to the goal every end point overshoots, so use the closest
        // approach along the path instead.
        let d_goal = if near_goal {
            library
                .waypoints(prim.path_index)
                .iter()
                .map(|(_, q)| (frame.to_world(q) - req.goal).norm())
                .fold(f64::INFINITY, f64::min)
        } else {
            (end - req.goal).norm()
        };
        let cost =
            goal_cost(d_goal, &p, &req.goal, &params.weights) + bound_cost(&end, &params.weights);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, id));
        }
    }
    let outcome = match best {
        Some((cost, primitive)) => PlanOutcome::Planned(AgentPlan {
            frame,
            primitive,
            start_time: req.t_now,
            cost,
        }),
        None => PlanOutcome::EmergencyStop,
    };
    diag.compute_time = clock.elapsed().as_secs_f64();
    Ok(PlanResult {
        outcome,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplanReason {
    Time,
    Obstacle,
    Agent,
}

/// Whether the executing plan should be replaced now. `cloud` is `None` when
/// no fresh sensor data arrived since the last check.
/// Whether a peer check rejects `plan` from `t_now` on. Uses the same
/// grid check and exact fallback as [`replan`] so a chosen plan passes.
pub fn conflicts_with_peers(
    plan: &AgentPlan,
    t_now: f64,
    peers: &[PeerTrajectory],
    library: &MotionLibrary,
    rel: &OccupancyRelations,
    params: &PlannerParams,
) -> bool {
    if peers.is_empty() {
        return false;
    }
    let prim = &library.primitives()[plan.primitive];
    let window = CheckWindow {
        self_start: plan.start_time,
        from: t_now.max(plan.start_time),
        until: plan.start_time + library.max_group_duration(prim.speed_index),
    };
    let mut mask = UnsafeMask::new(plan.primitive..plan.primitive + 1);
    if mark_agent_conflicts(peers, &plan.frame, window, library, rel, &mut mask) == 0 {
        return false;
    }
    let step = 0.01;
    let clearance = 2.0 * params.r_robot + library.limits().v_max * step;
    let reach = library.horizon() + clearance;
    let samples = PeerSamples::new(
        library,
        peers,
        &plan.frame.translation,
        reach,
        (window.from, window.until),
        step,
    );
    !exact_peer_clear(
        library,
        plan.primitive,
        &plan.frame,
        plan.start_time,
        &samples,
        clearance,
    )
}

#[allow(clippy::too_many_arguments, clippy::needless_lifetimes)]
pub fn should_replan<'a, R: Rng + ?Sized>(
    exec: &AgentPlan,
    t_now: f64,
    cloud: Option<&mut dyn Iterator<Item = &'a Vector3<f64>>>,
    peers: &[PeerTrajectory],
    library: &MotionLibrary,
    rel: &OccupancyRelations,
    params: &PlannerParams,
    rng: &mut R,
) -> Option<ReplanReason> {
    let prim = &library.primitives()[exec.primitive];
    if t_now - exec.start_time >= params.replan_threshold(prim.duration()) - 1e-9 {
        return Some(ReplanReason::Time);
    }
    let single = exec.primitive..exec.primitive + 1;
    if let Some(points) = cloud {
        let local = prepare_cloud(points, &exec.frame, rel, params.n_pc, rng);
        let mut mask = UnsafeMask::new(single.clone());
        if mark_obstacle_conflicts(&local, rel, &mut mask) > 0 {
            return Some(ReplanReason::Obstacle);
        }
    }
    if !peers.is_empty() {
        let window = CheckWindow {
            self_start: exec.start_time,
            from: t_now,
            until: exec.start_time + library.max_group_duration(prim.speed_index),
        };
        let mut mask = UnsafeMask::new(single);
        if mark_agent_conflicts(peers, &exec.frame, window, library, rel, &mut mask) > 0 {
            return Some(ReplanReason::Agent);
        }
    }
    None
}
