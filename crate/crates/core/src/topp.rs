//! Reachability-based time-optimal path parameterization.
//!
//! The path is discretized into `N` segments. At each grid position the state
//! is the squared path speed `x = ṡ²` and the control is the path acceleration
//! `u = s̈`, linked by `x[i+1] = x[i] + 2Δ[i]u[i]`. Velocity and per-axis
//! acceleration limits become linear rows on `(u, x)`. A backward pass computes
//! the controllable set at every stage, a greedy forward pass picks the largest
//! admissible control, and the time grid follows from the average speed on each
//! segment.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, Bounds, Objective, Row};
use crate::path_library::GeometricPath;

/// Box limits on speed and per-axis acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
}

impl DynamicLimits {
    pub fn new(v_max: f64, a_max: f64) -> Self {
        Self { v_max, a_max }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.a_max > 0.0)
            || !self.v_max.is_finite()
            || !self.a_max.is_finite()
        {
            return Err(Error::Config(format!(
                "limits must be positive, got v_max={} a_max={}",
                self.v_max, self.a_max
            )));
        }
        Ok(())
    }
}

/// Grid positions `s_0 = 0 < s_1 < ... < s_N = s_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    positions: Vec<f64>,
}

impl PathGrid {
    pub fn uniform(s_end: f64, segments: usize) -> Result<Self> {
        if segments < 2 {
            return Err(Error::Config(format!(
                "need at least 2 segments, got {segments}"
            )));
        }
        if !(s_end > 0.0) {
            return Err(Error::Config(format!(
                "path length must be positive, got {s_end}"
            )));
        }
        let mut positions: Vec<f64> = (0..=segments)
            .map(|i| s_end * i as f64 / segments as f64)
            .collect();
        positions[segments] = s_end;
        Ok(Self { positions })
    }

    pub fn from_positions(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 3 {
            return Err(Error::Config("grid needs at least 3 points".into()));
        }
        if positions[0] != 0.0 || positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "grid must start at 0 and increase strictly".into(),
            ));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn segments(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.positions[i + 1] - self.positions[i]
    }

    pub fn s_end(&self) -> f64 {
        *self.positions.last().unwrap()
    }
}

/// Linear rows `a*u + b*x + c <= 0` at one grid position: one speed row then
/// six acceleration rows (+x, -x, +y, -y, +z, -z).
#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraints {
    pub rows: [Row; 7],
}

pub fn build_stage_constraints(
    path: &GeometricPath,
    grid: &PathGrid,
    limits: DynamicLimits,
) -> Vec<StageConstraints> {
    let a_max = limits.a_max;
    grid.positions()
        .iter()
        .map(|&s| {
            let (_, d1, d2) = path.frame_at(s);
            let speed = Row::new(0.0, d1.norm_squared(), -limits.v_max * limits.v_max);
            let axis = |k: usize, sign: f64| Row::new(sign * d1[k], sign * d2[k], -a_max);
            StageConstraints {
                rows: [
                    speed,
                    axis(0, 1.0),
                    axis(0, -1.0),
                    axis(1, 1.0),
                    axis(1, -1.0),
                    axis(2, 1.0),
                    axis(2, -1.0),
                ],
            }
        })
        .collect()
}

/// Controllable interval `[lower[i], upper[i]]` of squared path speed per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllableSets {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControllableSets {
    pub fn contains(&self, i: usize, x: f64) -> bool {
        let tol = 1e-9 * (1.0 + self.upper[i].abs());
        x >= self.lower[i] - tol && x <= self.upper[i] + tol
    }

    /// `other[i] ⊆ self[i]` at every stage, within a rounding tolerance.
    pub fn includes(&self, other: &ControllableSets) -> bool {
        self.lower.len() == other.lower.len()
            && (0..self.lower.len()).all(|i| {
                let tol = 1e-9 * (1.0 + self.upper[i].abs());
                self.lower[i] <= other.lower[i] + tol && self.upper[i] + tol >= other.upper[i]
            })
    }
}

const STATE_CAP: f64 = 1e8;
const CONTROL_CAP: f64 = 1e8;

/// Computes `K_N = {ṡ_N²}` and `K_i = Q_i(K_{i+1})` by solving a min-x and a
/// max-x LP per stage.
pub fn backward_pass(
    constraints: &[StageConstraints],
    grid: &PathGrid,
    sd_end: f64,
) -> Result<ControllableSets> {
    let n = grid.segments();
    if constraints.len() != n + 1 {
        return Err(Error::Config(format!(
            "expected {} stage constraint sets, got {}",
            n + 1,
            constraints.len()
        )));
    }
    if !(sd_end >= 0.0) {
        return Err(Error::Config(format!(
            "end speed must be >= 0, got {sd_end}"
        )));
    }
    let mut lower = vec![0.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    let x_end = sd_end * sd_end;
    if constraints[n]
        .rows
        .iter()
        .any(|r| r.eval(0.0, x_end) > 1e-9 && r.a == 0.0)
    {
        return Err(Error::Infeasible);
    }
    lower[n] = x_end;
    upper[n] = x_end;

    let bounds = Bounds::new((-CONTROL_CAP, CONTROL_CAP), (0.0, STATE_CAP));
    let mut rows: Vec<Row> = Vec::with_capacity(10);
    for i in (0..n).rev() {
        let two_delta = 2.0 * grid.delta(i);
        rows.clear();
        rows.extend_from_slice(&constraints[i].rows);
        rows.push(Row::new(two_delta, 1.0, -upper[i + 1]));
        rows.push(Row::new(-two_delta, -1.0, lower[i + 1]));
        let lo = lp::solve_lp_2var(Objective::MIN_X, &rows, bounds)?;
        let hi = lp::solve_lp_2var(Objective::MAX_X, &rows, bounds)?;
        lower[i] = lo.value.max(0.0);
        upper[i] = hi.value.max(lower[i]);
    }
    Ok(ControllableSets { lower, upper })
}

/// Greedy forward pass: the largest control keeping the next state controllable.
/// Returns `(states, controls)` with `N + 1` states and `N` controls.
pub fn forward_pass(
    constraints: &[StageConstraints],
    grid: &PathGrid,
    sets: &ControllableSets,
    sd_start: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.segments();
    let x0 = sd_start * sd_start;
    if !sets.contains(0, x0) {
        return Err(Error::Infeasible);
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut x = x0.clamp(sets.lower[0], sets.upper[0]);
    states.push(x);
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(9);
    for i in 0..n {
        let two_delta = 2.0 * grid.delta(i);
        pairs.clear();
        pairs.extend(constraints[i].rows.iter().map(|r| (r.a, -(r.b * x + r.c))));
        pairs.push((two_delta, sets.upper[i + 1] - x));
        pairs.push((-two_delta, x - sets.lower[i + 1]));
        let u = match lp::solve_lp_1var(true, &pairs, -CONTROL_CAP, CONTROL_CAP) {
            Ok(u) => u,
            // Rounding can leave x a hair outside the admissible set; the
            // reachable target interval alone still defines the step.
            Err(Error::Infeasible) => {
                let target = sets.upper[i + 1].min(STATE_CAP);
                let u_hi = (target - x) / two_delta;
                let u_lo = (sets.lower[i + 1] - x) / two_delta;
                if u_hi + 1e-6 < u_lo {
                    return Err(Error::Infeasible);
                }
                let admissible = constraints[i]
                    .rows
                    .iter()
                    .all(|r| r.eval(u_lo, x) <= 1e-6 * (1.0 + r.c.abs()));
                if !admissible {
                    return Err(Error::Infeasible);
                }
                u_lo
            }
            Err(e) => return Err(e),
        };
        let next = if i + 1 == n {
            sets.lower[n]
        } else {
            (x + two_delta * u)
                .clamp(sets.lower[i + 1], sets.upper[i + 1])
                .max(0.0)
        };
        // Keep the recorded control consistent with the state update.
        controls.push((next - x) / two_delta);
        x = next;
        states.push(x);
    }
    Ok((states, controls))
}

const SPEED_FLOOR: f64 = 1e-12;

/// `t[i+1] = t[i] + Δ[i] / ((√x[i] + √x[i+1]) / 2)`, `t[0] = 0`.
pub fn time_allocation(grid: &PathGrid, states: &[f64]) -> Result<Vec<f64>> {
    let n = grid.segments();
    if states.len() != n + 1 {
        return Err(Error::Config(format!(
            "expected {} states, got {}",
            n + 1,
            states.len()
        )));
    }
    let root = |x: f64| {
        if x.abs() < SPEED_FLOOR {
            0.0
        } else {
            x.max(0.0).sqrt()
        }
    };
    let mut times = Vec::with_capacity(n + 1);
    let mut t = 0.0;
    times.push(t);
    for i in 0..n {
        let average = 0.5 * (root(states[i]) + root(states[i + 1]));
        if average <= 0.0 {
            return Err(Error::DegenerateSegment { index: i });
        }
        t += grid.delta(i) / average;
        times.push(t);
    }
    Ok(times)
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl KinematicState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

/// A time-parameterized path from the library.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    /// Position in the library (grouped by start speed, then path).
    pub id: usize,
    pub path_index: usize,
    pub speed_index: usize,
    /// Grid positions along the path.
    pub s: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub end_position: Vector3<f64>,
}

impl MotionPrimitive {
    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn start_speed(&self) -> f64 {
        self.states[0].max(0.0).sqrt()
    }

    /// State on the path at time `t` (clamped to `[0, T]`), evolving under the
    /// constant control of the enclosing segment.
    pub fn sample(&self, path: &GeometricPath, t: f64) -> KinematicState {
        let (s, sd, sdd) = self.path_state(t);
        let (q, d1, d2) = path.frame_at(s);
        KinematicState {
            position: q,
            velocity: d1 * sd,
            acceleration: d2 * (sd * sd) + d1 * sdd,
        }
    }

    /// `(s, ṡ, s̈)` at time `t`.
    pub fn path_state(&self, t: f64) -> (f64, f64, f64) {
        let n = self.controls.len();
        let t = t.clamp(0.0, self.duration());
        let i = self
            .times
            .partition_point(|&ti| ti <= t)
            .saturating_sub(1)
            .min(n - 1);
        let tau = t - self.times[i];
        let u = self.controls[i];
        let sd0 = self.states[i].max(0.0).sqrt();
        let sd = (sd0 + u * tau).max(0.0);
        let s = (self.s[i] + sd0 * tau + 0.5 * u * tau * tau).clamp(self.s[i], self.s[i + 1]);
        (s, sd, u)
    }
}

/// Convenience wrapper matching the operation name.
pub fn sample_primitive(prim: &MotionPrimitive, path: &GeometricPath, t: f64) -> KinematicState {
    prim.sample(path, t)
}

/// Runs the full pipeline on one path between two path speeds.
pub fn parameterize_path(
    path: &GeometricPath,
    limits: DynamicLimits,
    sd_start: f64,
    sd_end: f64,
    segments: usize,
) -> Result<MotionPrimitive> {
    let grid = PathGrid::uniform(path.s_end(), segments)?;
    let constraints = build_stage_constraints(path, &grid, limits);
    let sets = backward_pass(&constraints, &grid, sd_end)?;
    let (states, controls) = forward_pass(&constraints, &grid, &sets, sd_start)?;
    let times = time_allocation(&grid, &states)?;
    Ok(MotionPrimitive {
        id: 0,
        path_index: path.index,
        speed_index: 0,
        s: grid.positions().to_vec(),
        times,
        states,
        controls,
        end_position: path.end_point(),
    })
}

/// Start speeds `{0, step, 2*step, ..., v_max}`.
pub fn start_speeds(v_max: f64, speed_step: f64) -> Result<Vec<f64>> {
    if !(speed_step > 0.0) {
        return Err(Error::Config(format!(
            "speed step must be positive, got {speed_step}"
        )));
    }
    let k = v_max / speed_step;
    if (k - k.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "speed step {speed_step} does not divide v_max {v_max}"
        )));
    }
    let k = k.round() as usize;
    Ok((0..=k).map(|i| i as f64 * speed_step).collect())
}

/// Output of [`parameterize_library`].
#[derive(Debug, Clone)]
pub struct ParameterizedLibrary {
    pub primitives: Vec<MotionPrimitive>,
    /// `(path index, speed index)` pairs that could not be parameterized.
    pub dropped: Vec<(usize, usize)>,
}

/// Parameterizes every path at every start speed, ending at rest. Infeasible
/// pairs are dropped. Primitives are ordered by speed index, then path index.
pub fn parameterize_library(
    paths: &[GeometricPath],
    limits: DynamicLimits,
    speed_step: f64,
    segments: usize,
) -> Result<ParameterizedLibrary> {
    limits.validate()?;
    let speeds = start_speeds(limits.v_max, speed_step)?;
    let jobs: Vec<(usize, usize)> = (0..speeds.len())
        .flat_map(|k| (0..paths.len()).map(move |p| (k, p)))
        .collect();
    let results: Vec<Result<MotionPrimitive>> = jobs
        .par_iter()
        .map(|&(k, p)| {
            let path = &paths[p];
            // Path speed from Cartesian speed; the tangent is unit length here
            // but the general ratio is kept.
            let tangent = path.frame_at(0.0).1.norm();
            let tangent_end = path.frame_at(path.s_end()).1.norm();
            let sd0 = speeds[k] / tangent;
            let sd_end = 0.0 / tangent_end;
            let mut prim = parameterize_path(path, limits, sd0, sd_end, segments)?;
            prim.speed_index = k;
            Ok(prim)
        })
        .collect();

    let mut primitives = Vec::with_capacity(jobs.len());
    let mut dropped = Vec::new();
    for (&(k, p), res) in jobs.iter().zip(results) {
        match res {
            Ok(mut prim) => {
                prim.id = primitives.len();
                primitives.push(prim);
            }
            Err(Error::Infeasible | Error::DegenerateSegment { .. }) => dropped.push((p, k)),
            Err(e) => return Err(e),
        }
    }
    if !dropped.is_empty() {
        log::info!("dropped {} infeasible (path, speed) pairs", dropped.len());
    }
    Ok(ParameterizedLibrary {
        primitives,
        dropped,
    })
}
