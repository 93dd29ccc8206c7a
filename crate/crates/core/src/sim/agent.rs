//! One simulated robot: sensing, replanning and trajectory execution.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bus::TrajectoryBus;
use super::map::ObstacleMap;
use super::sensor::{sense_point_cloud, SensorParams};
use crate::collision::{braking_position, PeerMotion, PeerTrajectory, PointCloudStack};
use crate::frame::VelocityFrame;
use crate::library::MotionLibrary;
use crate::occupancy::OccupancyRelations;
use crate::replanner::{
    conflicts_with_peers, replan, should_replan, AgentPlan, PlanOutcome, PlanRequest, PlannerParams,
};
use crate::topp::KinematicState;

/// What the robot is executing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Hold {
        position: Vector3<f64>,
    },
    Plan(AgentPlan),
    Brake {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
        t0: f64,
        decel: f64,
    },
}

impl Motion {
    pub fn state_at(&self, library: &MotionLibrary, t: f64) -> KinematicState {
        match *self {
            Motion::Hold { position } => KinematicState::at_rest(position),
            Motion::Plan(plan) => plan.state_at(library, t),
            Motion::Brake {
                start,
                velocity,
                t0,
                decel,
            } => {
                let speed = velocity.norm();
                let tau = (t - t0).max(0.0);
                if speed <= 0.0 || tau >= speed / decel {
                    return KinematicState::at_rest(braking_position(start, velocity, decel, tau));
                }
                let dir = velocity / speed;
                KinematicState {
                    position: braking_position(start, velocity, decel, tau),
                    velocity: dir * (speed - decel * tau),
                    acceleration: -dir * decel,
                }
            }
        }
    }

    pub fn to_peer(&self, agent: usize) -> PeerTrajectory {
        match *self {
            Motion::Hold { position } => PeerTrajectory {
                agent,
                start_time: 0.0,
                frame: VelocityFrame::identity_at(position),
                motion: PeerMotion::Hover,
            },
            Motion::Plan(plan) => PeerTrajectory {
                agent,
                start_time: plan.start_time,
                frame: plan.frame,
                motion: PeerMotion::Primitive { id: plan.primitive },
            },
            Motion::Brake {
                start,
                velocity,
                t0,
                decel,
            } => PeerTrajectory {
                agent,
                start_time: t0,
                frame: VelocityFrame::identity_at(start),
                motion: PeerMotion::Braking { velocity, decel },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Waiting,
    Flying,
    Emergency,
    Arriving,
    Done,
}

/// Read-only inputs shared by all agents.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub library: &'a MotionLibrary,
    pub relations: &'a OccupancyRelations,
    pub map: &'a ObstacleMap,
    pub bus: &'a TrajectoryBus,
    pub planner: &'a PlannerParams,
    pub sensor: &'a SensorParams,
    pub sense_period: f64,
    /// First-order tracking time constant; zero for perfect tracking.
    pub tracking_lag: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentStats {
    pub replans: usize,
    pub emergencies: usize,
    pub compute_times: Vec<f64>,
    pub departure: Option<f64>,
    pub arrival: Option<f64>,
}

/// Motion of one agent over one tick, for the audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickMotion {
    pub motion: Motion,
    pub t0: f64,
    pub t1: f64,
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    /// Interpolate linearly instead of following `motion`.
    pub lagged: bool,
    pub done: bool,
}

impl TickMotion {
    pub fn position_at(&self, library: &MotionLibrary, t: f64) -> Vector3<f64> {
        if self.lagged {
            let a = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
            self.p0 + (self.p1 - self.p0) * a
        } else {
            self.motion.state_at(library, t).position
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: usize,
    pub state: KinematicState,
    pub goal: Vector3<f64>,
    pub motion: Motion,
    pub phase: Phase,
    pub stats: AgentStats,
    stack: PointCloudStack,
    rng: ChaCha8Rng,
    next_sense: f64,
    first_plan: f64,
    fresh_cloud: bool,
    /// Heading tried on the next replan after stalling at rest.
    retry_heading: Option<Vector3<f64>>,
    /// Bus stamp at the last peer check.
    peer_stamp: f64,
    /// Announced plan waiting for the bus latency to pass.
    pending: Option<AgentPlan>,
}

impl AgentRuntime {
    pub fn new(
        id: usize,
        start: Vector3<f64>,
        goal: Vector3<f64>,
        seed: u64,
        n_f: usize,
        first_plan: f64,
        first_sense: f64,
    ) -> Self {
        Self {
            id,
            state: KinematicState::at_rest(start),
            goal,
            motion: Motion::Hold { position: start },
            phase: Phase::Waiting,
            stats: AgentStats::default(),
            stack: PointCloudStack::new(n_f),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_sense: first_sense,
            first_plan,
            fresh_cloud: false,
            retry_heading: None,
            peer_stamp: f64::NEG_INFINITY,
            pending: None,
        }
    }

    pub fn trajectory(&self) -> PeerTrajectory {
        self.motion.to_peer(self.id)
    }

    fn start_brake(&mut self, ctx: &AgentContext<'_>, t: f64) {
        self.motion = Motion::Brake {
            start: self.state.position,
            velocity: self.state.velocity,
            t0: t,
            decel: ctx.library.limits().a_max,
        };
        ctx.bus.publish(self.trajectory(), t);
    }

    fn plan(&mut self, ctx: &AgentContext<'_>, t: f64) {
        let peers = ctx.bus.collect_peers(
            self.id,
            &self.state.position,
            ctx.library.horizon(),
            t,
            ctx.library,
        );
        // With latency a new plan starts only once peers can see it, from
        // where the current motion will be by then.
        let lead = ctx.bus.latency();
        let state = if lead > 0.0 {
            self.motion.state_at(ctx.library, t + lead)
        } else {
            self.state
        };
        let req = PlanRequest {
            state,
            goal: self.goal,
            t_now: t + lead,
            peers: &peers,
            heading: self.retry_heading.take(),
        };
        let result = replan(
            &req,
            self.stack.points(),
            ctx.library,
            ctx.relations,
            ctx.planner,
            &mut self.rng,
        )
        .expect("library and relations are checked before the run");
        self.stats.replans += 1;
        self.stats
            .compute_times
            .push(result.diagnostics.compute_time);
        match result.outcome {
            PlanOutcome::Planned(plan) if lead > 0.0 => {
                self.pending = Some(plan);
                ctx.bus.publish_with(
                    self.trajectory(),
                    Some(Motion::Plan(plan).to_peer(self.id)),
                    t,
                );
            }
            PlanOutcome::Planned(plan) => {
                self.stats.departure.get_or_insert(t);
                self.motion = Motion::Plan(plan);
                self.phase = Phase::Flying;
                ctx.bus.publish(self.trajectory(), t);
            }
            PlanOutcome::EmergencyStop => {
                // At rest the frame heading is arbitrary, so a stalled robot
                // looks around instead of retrying the same direction.
                if self.state.velocity.norm() < ctx.planner.eps_v {
                    let yaw = self
                        .rng
                        .random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    self.retry_heading = Some(Vector3::new(yaw.cos(), yaw.sin(), 0.0));
                }
                if self.phase != Phase::Emergency {
                    self.stats.emergencies += 1;
                    self.phase = Phase::Emergency;
                    if self.state.velocity.norm() > 0.0 {
                        self.start_brake(ctx, t);
                    } else {
                        self.motion = Motion::Hold {
                            position: self.state.position,
                        };
                        ctx.bus.publish(self.trajectory(), t);
                    }
                }
            }
            PlanOutcome::GoalReached => {
                self.phase = Phase::Done;
                self.stats.arrival = Some(t);
                self.motion = Motion::Hold {
                    position: self.state.position,
                };
                ctx.bus.publish(self.trajectory(), t);
            }
        }
    }
}

/// Runs one control tick `[t, t + dt]` and returns the executed motion.
pub fn step_agent(agent: &mut AgentRuntime, ctx: &AgentContext<'_>, t: f64, dt: f64) -> TickMotion {
    if t + 1e-9 >= agent.next_sense {
        let frame = sense_point_cloud(ctx.map, &agent.state.position, ctx.sensor, &mut agent.rng);
        agent.stack.push(t, frame);
        agent.fresh_cloud = true;
        agent.next_sense += ctx.sense_period;
    }
    let a_max = ctx.library.limits().a_max;
    if let Some(plan) = agent.pending {
        step_pending(agent, ctx, plan, t);
    } else {
        step_phase(agent, ctx, t, a_max);
    }
    if agent.phase != Phase::Flying {
        agent.fresh_cloud = false;
    }
    advance(agent, ctx, t, dt)
}

/// Waits out the bus latency for an announced plan, dropping it when a
/// newly visible peer plan conflicts.
fn step_pending(agent: &mut AgentRuntime, ctx: &AgentContext<'_>, plan: AgentPlan, t: f64) {
    let stamp = ctx.bus.latest_stamp(agent.id, t);
    let due = t + 1e-9 >= plan.start_time;
    let mut ok = true;
    if stamp > agent.peer_stamp || due {
        agent.peer_stamp = stamp;
        let peers = ctx.bus.collect_peers(
            agent.id,
            &agent.state.position,
            ctx.library.horizon(),
            t,
            ctx.library,
        );
        ok = !conflicts_with_peers(&plan, t, &peers, ctx.library, ctx.relations, ctx.planner);
    }
    if !ok {
        agent.pending = None;
        ctx.bus.publish(agent.trajectory(), t);
        agent.plan(ctx, t);
    } else if due {
        agent.pending = None;
        agent.stats.departure.get_or_insert(t);
        agent.motion = Motion::Plan(plan);
        agent.phase = Phase::Flying;
        ctx.bus.publish(agent.trajectory(), t);
    }
}

fn step_phase(agent: &mut AgentRuntime, ctx: &AgentContext<'_>, t: f64, a_max: f64) {
    match agent.phase {
        Phase::Done => {}
        Phase::Waiting => {
            if t + 1e-9 >= agent.first_plan {
                agent.plan(ctx, t);
            }
        }
        Phase::Emergency => agent.plan(ctx, t),
        Phase::Arriving => {
            if agent.state.velocity.norm() <= 1e-3 {
                agent.plan(ctx, t);
            }
        }
        Phase::Flying => {
            let speed = agent.state.velocity.norm();
            let to_goal = (agent.goal - agent.state.position).norm();
            if speed > ctx.planner.v_goal
                && to_goal + speed * speed / (2.0 * a_max) <= ctx.planner.r_goal
            {
                agent.phase = Phase::Arriving;
                agent.start_brake(ctx, t);
            } else if let Motion::Plan(exec) = agent.motion {
                let fresh = std::mem::take(&mut agent.fresh_cloud);
                let peers = if fresh {
                    ctx.bus.collect_peers(
                        agent.id,
                        &agent.state.position,
                        ctx.library.horizon(),
                        t,
                        ctx.library,
                    )
                } else {
                    Vec::new()
                };
                let mut points = agent.stack.points();
                let cloud: Option<&mut dyn Iterator<Item = &Vector3<f64>>> =
                    if fresh { Some(&mut points) } else { None };
                let reason = should_replan(
                    &exec,
                    t,
                    cloud,
                    &peers,
                    ctx.library,
                    ctx.relations,
                    ctx.planner,
                    &mut agent.rng,
                );
                drop(points);
                if reason.is_some() {
                    agent.plan(ctx, t);
                }
            }
        }
    }
}

fn advance(agent: &mut AgentRuntime, ctx: &AgentContext<'_>, t: f64, dt: f64) -> TickMotion {
    let p0 = agent.state.position;
    let reference = agent.motion.state_at(ctx.library, t + dt);
    let lagged = ctx.tracking_lag > 0.0 && agent.phase != Phase::Done;
    if lagged {
        let v0 = agent.state.velocity;
        let alpha = 1.0 - (-dt / ctx.tracking_lag).exp();
        let v1 = v0 + (reference.velocity - v0) * alpha;
        agent.state = KinematicState {
            position: p0 + (v0 + v1) * (0.5 * dt),
            velocity: v1,
            acceleration: (v1 - v0) / dt,
        };
    } else {
        agent.state = reference;
    }
    TickMotion {
        motion: agent.motion,
        t0: t,
        t1: t + dt,
        p0,
        p1: agent.state.position,
        lagged,
        done: agent.phase == Phase::Done,
    }
}
