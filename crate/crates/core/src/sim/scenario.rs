//! Multi-agent scenario runner with a 1 ms safety audit.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use nalgebra::Vector3;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{step_agent, AgentContext, AgentRuntime, TickMotion};
use super::bus::TrajectoryBus;
use super::map::ObstacleMap;
use super::sensor::SensorParams;
use crate::error::{Error, Result};
use crate::library::MotionLibrary;
use crate::metrics::{percentile, AgentMetrics, MetricsReport};
use crate::occupancy::OccupancyRelations;
use crate::replanner::{check_compatible, PlannerParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub sense_period: f64,
    pub n_f: usize,
    pub timeout: f64,
    pub latency: f64,
    /// Run agents one after the other in id order on the calling thread.
    pub deterministic: bool,
    /// Upper bound of the random delay before an agent's first plan.
    pub phase_jitter: f64,
    pub tracking_lag: f64,
    pub audit_step: f64,
    pub seed: u64,
    pub sensor: SensorParams,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            sense_period: 0.1,
            n_f: 5,
            timeout: 120.0,
            latency: 0.0,
            deterministic: false,
            phase_jitter: 0.5,
            tracking_lag: 0.0,
            audit_step: 1e-3,
            seed: 0,
            sensor: SensorParams::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.sense_period >= self.dt
            && self.n_f > 0
            && self.timeout > 0.0
            && self.latency >= 0.0
            && self.phase_jitter >= 0.0
            && self.tracking_lag >= 0.0
            && self.audit_step > 0.0
            && self.audit_step <= self.dt
            && self.sensor.range > 0.0
            && self.sensor.spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid simulation parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: [f64; 3],
    pub goal: [f64; 3],
}

/// `count` agents evenly spaced on a horizontal circle, each flying to the
/// antipodal point.
pub fn circle_agents(count: usize, radius: f64, center: [f64; 3]) -> Vec<AgentSpec> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let (s, c) = a.sin_cos();
            AgentSpec {
                start: [center[0] + radius * c, center[1] + radius * s, center[2]],
                goal: [center[0] - radius * c, center[1] - radius * s, center[2]],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub library: &'a MotionLibrary,
    pub relations: &'a OccupancyRelations,
    pub map: &'a ObstacleMap,
    pub agents: &'a [AgentSpec],
    pub planner: &'a PlannerParams,
    pub sim: &'a SimParams,
    /// Robot radius used by the audit.
    pub r_robot: f64,
}

fn agent_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (id as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Running per-agent safety totals.
#[derive(Debug, Clone)]
struct AuditState {
    distance: Vec<f64>,
    min_obstacle: Vec<Option<f64>>,
    min_agent: Vec<Option<f64>>,
    obstacle_hits: Vec<usize>,
    agent_hits: Vec<usize>,
    in_obstacle: Vec<bool>,
    in_pair: Vec<Vec<bool>>,
}

impl AuditState {
    fn new(n: usize) -> Self {
        Self {
            distance: vec![0.0; n],
            min_obstacle: vec![None; n],
            min_agent: vec![None; n],
            obstacle_hits: vec![0; n],
            agent_hits: vec![0; n],
            in_obstacle: vec![false; n],
            in_pair: vec![vec![false; n]; n],
        }
    }

    fn min_into(slot: &mut Option<f64>, v: f64) {
        *slot = Some(slot.map_or(v, |m| m.min(v)));
    }

    /// Resamples every agent across one tick.
    fn audit(
        &mut self,
        ticks: &[TickMotion],
        library: &MotionLibrary,
        map: &ObstacleMap,
        sim: &SimParams,
        r_robot: f64,
    ) {
        let n = ticks.len();
        let Some(first) = ticks.first() else { return };
        let steps = ((first.t1 - first.t0) / sim.audit_step).round().max(1.0) as usize;
        let v_max = library.limits().v_max;
        let reach = 2.0 * v_max * (first.t1 - first.t0) + 0.5;
        let samples: Vec<Vec<Vector3<f64>>> = ticks
            .iter()
            .map(|m| {
                (0..=steps)
                    .map(|j| m.position_at(library, m.t0 + (m.t1 - m.t0) * j as f64 / steps as f64))
                    .collect()
            })
            .collect();
        for i in 0..n {
            let s = &samples[i];
            self.distance[i] += s.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();
            let near = map.near(&s[0], reach + 2.0);
            if near.is_empty() {
                continue;
            }
            for p in s {
                let d = near
                    .iter()
                    .map(|&k| map.obstacles[k].distance(p))
                    .fold(f64::INFINITY, f64::min);
                Self::min_into(&mut self.min_obstacle[i], d);
                let hit = d < r_robot;
                if hit && !self.in_obstacle[i] {
                    self.obstacle_hits[i] += 1;
                    log::debug!(
                        "agent {i} touches an obstacle at {:?} ({d:.3} m)",
                        p.as_slice()
                    );
                }
                self.in_obstacle[i] = hit;
            }
        }
        let limit = 2.0 * r_robot;
        for i in 0..n {
            for j in i + 1..n {
                let coarse = (samples[i][0] - samples[j][0]).norm();
                let d = if coarse > reach + 2.0 {
                    coarse
                } else {
                    (0..=steps)
                        .map(|k| (samples[i][k] - samples[j][k]).norm())
                        .fold(f64::INFINITY, f64::min)
                };
                Self::min_into(&mut self.min_agent[i], d);
                Self::min_into(&mut self.min_agent[j], d);
                let hit = d < limit;
                if hit && !self.in_pair[i][j] {
                    self.agent_hits[i] += 1;
                    self.agent_hits[j] += 1;
                }
                self.in_pair[i][j] = hit;
            }
        }
    }
}

/// Runs the scenario to completion or timeout.
pub fn run_scenario(sc: &Scenario<'_>) -> Result<MetricsReport> {
    sc.sim.validate()?;
    sc.planner.validate()?;
    check_compatible(sc.library, sc.relations)?;
    let sim = sc.sim;
    let n = sc.agents.len();
    let bus = TrajectoryBus::new(n, sim.latency);
    let planner = PlannerParams {
        r_robot: sc.r_robot,
        ..*sc.planner
    };
    let ctx = AgentContext {
        library: sc.library,
        relations: sc.relations,
        map: sc.map,
        bus: &bus,
        planner: &planner,
        sensor: &sim.sensor,
        sense_period: sim.sense_period,
        tracking_lag: sim.tracking_lag,
    };
    let mut phase_rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut agents: Vec<AgentRuntime> = sc
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let ticks = (sim.phase_jitter / sim.dt).floor() as u64;
            let first_plan = phase_rng.random_range(0..=ticks) as f64 * sim.dt;
            let sense_ticks = (sim.sense_period / sim.dt).round().max(1.0) as u64;
            let first_sense = (first_plan / sim.dt).round() as u64 % sense_ticks;
            AgentRuntime::new(
                i,
                Vector3::from(a.start),
                Vector3::from(a.goal),
                agent_seed(sim.seed, i),
                sim.n_f,
                first_plan,
                first_sense as f64 * sim.dt,
            )
        })
        .collect();
    for a in &agents {
        bus.publish(a.trajectory(), 0.0);
    }

    let wall = Instant::now();
    let max_ticks = (sim.timeout / sim.dt).ceil() as usize;
    let mut audit = AuditState::new(n);
    let mut ticks_run = 0;
    let mut all_done = n == 0;

    if sim.deterministic || n <= 1 {
        let mut motions = Vec::with_capacity(n);
        while ticks_run < max_ticks && !all_done {
            let t = ticks_run as f64 * sim.dt;
            motions.clear();
            for a in agents.iter_mut() {
                motions.push(step_agent(a, &ctx, t, sim.dt));
            }
            audit.audit(&motions, sc.library, sc.map, sim, sc.r_robot);
            all_done = motions.iter().all(|m| m.done);
            ticks_run += 1;
        }
    } else {
        let slots: Vec<Mutex<Option<TickMotion>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let barrier = Barrier::new(n + 1);
        let stop = AtomicBool::new(false);
        let ctx = &ctx;
        let (slots, barrier, stop) = (&slots, &barrier, &stop);
        agents = std::thread::scope(|scope| {
            let handles: Vec<_> = agents
                .into_iter()
                .map(|mut agent| {
                    scope.spawn(move || {
                        let mut k = 0usize;
                        loop {
                            barrier.wait();
                            if stop.load(Ordering::Acquire) {
                                break;
                            }
                            let m = step_agent(&mut agent, ctx, k as f64 * sim.dt, sim.dt);
                            *slots[agent.id].lock() = Some(m);
                            k += 1;
                            barrier.wait();
                        }
                        agent
                    })
                })
                .collect();
            let mut motions = Vec::with_capacity(n);
            loop {
                if ticks_run >= max_ticks || all_done {
                    stop.store(true, Ordering::Release);
                    barrier.wait();
                    break;
                }
                barrier.wait();
                barrier.wait();
                motions.clear();
                motions.extend(slots.iter().map(|s| s.lock().expect("agent stepped")));
                audit.audit(&motions, sc.library, sc.map, sim, sc.r_robot);
                all_done = motions.iter().all(|m| m.done);
                ticks_run += 1;
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("agent thread panicked"))
                .collect()
        });
    }
    let wall_time = wall.elapsed().as_secs_f64();
    let sim_time = ticks_run as f64 * sim.dt;

    let mut all_compute = Vec::new();
    let rows = agents
        .iter()
        .map(|a| {
            let ms: Vec<f64> = a.stats.compute_times.iter().map(|t| t * 1e3).collect();
            all_compute.extend_from_slice(&ms);
            let flight_time = match (a.stats.departure, a.stats.arrival) {
                (Some(d), Some(r)) => Some(r - d),
                _ => None,
            };
            AgentMetrics {
                agent: a.id,
                reached: a.stats.arrival.is_some(),
                flight_time,
                flight_distance: audit.distance[a.id],
                replans: a.stats.replans,
                emergencies: a.stats.emergencies,
                compute_p50_ms: percentile(&ms, 50.0),
                compute_p90_ms: percentile(&ms, 90.0),
                compute_max_ms: percentile(&ms, 100.0),
                min_obstacle_clearance: audit.min_obstacle[a.id],
                min_agent_distance: audit.min_agent[a.id],
                obstacle_collisions: audit.obstacle_hits[a.id],
                agent_collisions: audit.agent_hits[a.id],
            }
        })
        .collect();
    let mut report = MetricsReport::from_agents(rows, &all_compute, sim_time, wall_time, !all_done);
    if sim.deterministic {
        report.strip_timing();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_is_antipodal() {
        let a = circle_agents(8, 12.0, [0.0, 0.0, 1.0]);
        assert_eq!(a.len(), 8);
        for s in &a {
            let d = (Vector3::from(s.start) - Vector3::from(s.goal)).norm();
            assert!((d - 24.0).abs() < 1e-9);
            assert_eq!(s.start[2], 1.0);
        }
    }
}
