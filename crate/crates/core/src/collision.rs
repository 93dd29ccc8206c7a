//! Online batch labeling of unsafe primitives from obstacle points and peer
//! trajectories.

use std::collections::{HashMap, VecDeque};
use std::ops::Range;

use log::warn;
use nalgebra::Vector3;
use rand::Rng;

use crate::frame::VelocityFrame;
use crate::library::MotionLibrary;
use crate::occupancy::OccupancyRelations;

/// The latest `capacity` sensor frames, oldest first.
#[derive(Debug, Clone)]
pub struct PointCloudStack {
    capacity: usize,
    frames: VecDeque<(f64, Vec<Vector3<f64>>)>,
}

impl PointCloudStack {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            frames: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, stamp: f64, points: Vec<Vector3<f64>>) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back((stamp, points));
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn stamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|f| f.0)
    }

    pub fn points(&self) -> impl Iterator<Item = &Vector3<f64>> + '_ {
        self.frames.iter().flat_map(|f| f.1.iter())
    }

    pub fn point_count(&self) -> usize {
        self.frames.iter().map(|f| f.1.len()).sum()
    }
}

/// Uniform sample of at most `n` items in one pass (Li's Algorithm L).
pub fn reservoir_sample<T, I, R>(items: I, n: usize, rng: &mut R) -> Vec<T>
where
    I: IntoIterator<Item = T>,
    R: Rng + ?Sized,
{
    let mut iter = items.into_iter();
    let mut reservoir: Vec<T> = iter.by_ref().take(n).collect();
    if reservoir.len() < n || n == 0 {
        return reservoir;
    }
    let mut rng_u = || -> f64 { 1.0 - rng.random::<f64>() };
    let mut w = (rng_u().ln() / n as f64).exp();
    loop {
        let skip = (rng_u().ln() / (1.0 - w).ln()).floor();
        if !skip.is_finite() {
            break;
        }
        match iter.nth(skip as usize) {
            Some(item) => {
                let idx = (rng_u() * n as f64) as usize;
                reservoir[idx.min(n - 1)] = item;
                w *= (rng_u().ln() / n as f64).exp();
            }
            None => break,
        }
    }
    reservoir
}

/// Unsafe flags for one start-speed group of the library.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsafeMask {
    group: Range<usize>,
    flags: Vec<bool>,
}

impl UnsafeMask {
    pub fn new(group: Range<usize>) -> Self {
        Self {
            flags: vec![false; group.len()],
            group,
        }
    }

    pub fn group(&self) -> Range<usize> {
        self.group.clone()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_unsafe(&self, id: usize) -> bool {
        self.flags[id - self.group.start]
    }

    pub fn set_unsafe(&mut self, id: usize) {
        self.flags[id - self.group.start] = true;
    }

    pub fn clear(&mut self, id: usize) {
        self.flags[id - self.group.start] = false;
    }

    pub fn unsafe_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn safe_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| !f)
            .map(move |(i, _)| self.group.start + i)
    }

    pub fn all_unsafe(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }
}

/// Flags every primitive of the mask's group whose spatial relation covers
/// the cell of some point. Points are in the planning frame. Returns the
/// number of primitives newly flagged.
pub fn mark_obstacle_conflicts(
    points: &[Vector3<f64>],
    rel: &OccupancyRelations,
    mask: &mut UnsafeMask,
) -> usize {
    let mut cells: Vec<u32> = points
        .iter()
        .filter_map(|p| rel.grid.cell_of(p))
        .map(|c| c as u32)
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let before = mask.unsafe_count();
    let start = mask.group.start;
    for &cell in &cells {
        for &id in rel.ro_group(cell as usize, &mask.group) {
            mask.flags[id as usize - start] = true;
        }
    }
    mask.unsafe_count() - before
}

/// How a peer moves after its plan start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeerMotion {
    /// Library primitive `id`, executed in the sender's plan frame.
    Primitive { id: usize },
    /// Straight-line stop from `velocity` (world) at deceleration `decel`.
    Braking { velocity: Vector3<f64>, decel: f64 },
    /// Holding position.
    Hover,
}

/// A broadcast trajectory. Everything refers to the shared library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerTrajectory {
    pub agent: usize,
    pub start_time: f64,
    pub frame: VelocityFrame,
    pub motion: PeerMotion,
}

/// Position after decelerating from `v` at `decel` for `tau` seconds.
pub fn braking_position(p0: Vector3<f64>, v: Vector3<f64>, decel: f64, tau: f64) -> Vector3<f64> {
    let speed = v.norm();
    if speed <= 0.0 || decel <= 0.0 {
        return p0;
    }
    let t = tau.clamp(0.0, speed / decel);
    p0 + v / speed * (speed * t - 0.5 * decel * t * t)
}

impl PeerTrajectory {
    pub fn is_valid(&self, library: &MotionLibrary) -> bool {
        match self.motion {
            PeerMotion::Primitive { id } => id < library.len(),
            _ => true,
        }
    }

    /// World position at absolute time `t`. Before the start the start
    /// position is returned, after the end the end position.
    pub fn position_at(&self, library: &MotionLibrary, t: f64) -> Vector3<f64> {
        let tau = (t - self.start_time).max(0.0);
        match self.motion {
            PeerMotion::Primitive { id } => {
                let local = library
                    .sample(id, tau)
                    .map(|s| s.position)
                    .unwrap_or_else(Vector3::zeros);
                self.frame.to_world(&local)
            }
            PeerMotion::Braking { velocity, decel } => {
                braking_position(self.frame.translation, velocity, decel, tau)
            }
            PeerMotion::Hover => self.frame.translation,
        }
    }
}

/// Timing of the self side of an agent check, all absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckWindow {
    /// When the self primitives start.
    pub self_start: f64,
    /// First instant of interest; peers are rasterized from here.
    pub from: f64,
    /// Last instant of interest.
    pub until: f64,
}

impl CheckWindow {
    pub fn planning(t_now: f64, horizon: f64) -> Self {
        Self {
            self_start: t_now,
            from: t_now,
            until: t_now + horizon,
        }
    }
}

/// Flags primitives of the mask's group whose spatio-temporal relation
/// overlaps a cell occupied by a peer during an intersecting interval.
/// Returns the number of primitives newly flagged.
pub fn mark_agent_conflicts(
    peers: &[PeerTrajectory],
    self_frame: &VelocityFrame,
    window: CheckWindow,
    library: &MotionLibrary,
    rel: &OccupancyRelations,
    mask: &mut UnsafeMask,
) -> usize {
    let before = mask.unsafe_count();
    let t_res = rel.t_res;
    let steps = ((window.until - window.from) / t_res).ceil().max(0.0) as usize;
    let mut occ: Vec<(u32, f64, f64)> = Vec::with_capacity(steps);
    let start = mask.group.start;
    for peer in peers {
        if !peer.is_valid(library) {
            warn!("peer {} references unknown primitive; skipped", peer.agent);
            continue;
        }
        occ.clear();
        for k in 0..steps {
            let t0 = window.from + k as f64 * t_res;
            let t1 = t0 + t_res;
            let p = self_frame.to_local(&peer.position_at(library, 0.5 * (t0 + t1)));
            if let Some(cell) = rel.grid.cell_of(&p) {
                occ.push((cell as u32, t0, t1));
            }
        }
        occ.sort_by_key(|o| o.0);
        let mut i = 0;
        while i < occ.len() {
            let cell = occ[i].0;
            let (mut lo, mut hi) = (occ[i].1, occ[i].2);
            let mut j = i + 1;
            while j < occ.len() && occ[j].0 == cell {
                lo = lo.min(occ[j].1);
                hi = hi.max(occ[j].2);
                j += 1;
            }
            for e in rel.rt_group(cell as usize, &mask.group) {
                let a = window.self_start + e.t_start as f64;
                let b = if rel.reaches_end(e) {
                    f64::INFINITY
                } else {
                    window.self_start + e.t_end as f64
                };
                if a <= hi && lo <= b {
                    mask.flags[e.prim as usize - start] = true;
                }
            }
            i = j;
        }
    }
    mask.unsafe_count() - before
}

/// Points hashed into cubes of side `size` for radius queries up to `size`.
pub struct PointBuckets<'a> {
    points: &'a [Vector3<f64>],
    size: f64,
    cells: HashMap<[i32; 3], Vec<u32>>,
}

impl<'a> PointBuckets<'a> {
    pub fn new(points: &'a [Vector3<f64>], size: f64) -> Self {
        let mut cells: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, size)).or_default().push(i as u32);
        }
        Self {
            points,
            size,
            cells,
        }
    }

    fn key(p: &Vector3<f64>, size: f64) -> [i32; 3] {
        [0, 1, 2].map(|k| (p[k] / size).floor() as i32)
    }

    /// Whether any point lies within `r <= size` of `q`.
    pub fn any_within(&self, q: &Vector3<f64>, r: f64) -> bool {
        let c = Self::key(q, self.size);
        let r2 = r * r;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if ids
                            .iter()
                            .any(|&i| (self.points[i as usize] - q).norm_squared() < r2)
                        {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Whether primitive `id`, sampled every `step`, keeps at least `clearance`
/// from every bucketed point. Points and primitive share the library frame.
pub fn exact_obstacle_clear(
    library: &MotionLibrary,
    id: usize,
    points: &PointBuckets<'_>,
    clearance: f64,
    step: f64,
) -> bool {
    let Some(prim) = library.primitives().get(id) else {
        return false;
    };
    let n = (prim.duration() / step).ceil() as usize;
    (0..=n).all(|k| {
        let t = (k as f64 * step).min(prim.duration());
        let p = prim.sample(library.path_of(prim), t).position;
        !points.any_within(&p, clearance)
    })
}

/// Peer positions sampled every `step` over a window, keeping only peers
/// that come within `reach` of `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerSamples {
    from: f64,
    until: f64,
    step: f64,
    tracks: Vec<Vec<Vector3<f64>>>,
}

impl PeerSamples {
    pub fn new(
        library: &MotionLibrary,
        peers: &[PeerTrajectory],
        center: &Vector3<f64>,
        reach: f64,
        window: (f64, f64),
        step: f64,
    ) -> Self {
        let (from, until) = window;
        let n = ((until - from) / step).ceil().max(0.0) as usize;
        let tracks = peers
            .iter()
            .filter(|p| p.is_valid(library))
            .map(|p| {
                (0..=n)
                    .map(|k| p.position_at(library, (from + k as f64 * step).min(until)))
                    .collect::<Vec<_>>()
            })
            .filter(|track| track.iter().any(|q| (q - center).norm() <= reach))
            .collect();
        Self {
            from,
            until,
            step,
            tracks,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Exact peer check: whether primitive `id` in `frame` stays farther than
/// `clearance` from every sampled peer. The robot rests at the primitive
/// end afterwards.
pub fn exact_peer_clear(
    library: &MotionLibrary,
    id: usize,
    frame: &VelocityFrame,
    self_start: f64,
    peers: &PeerSamples,
    clearance: f64,
) -> bool {
    let Some(prim) = library.primitives().get(id) else {
        return false;
    };
    if peers.is_empty() {
        return true;
    }
    let path = library.path_of(prim);
    let c2 = clearance * clearance;
    let n = peers.tracks[0].len();
    (0..n).all(|k| {
        let t = (peers.from + k as f64 * peers.step).min(peers.until);
        let me = frame.to_world(&prim.sample(path, t - self_start).position);
        peers
            .tracks
            .iter()
            .all(|track| (track[k] - me).norm_squared() > c2)
    })
}
