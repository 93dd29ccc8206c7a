//! Broadcast channel for planned trajectories.

use std::collections::VecDeque;

use nalgebra::Vector3;
use parking_lot::Mutex;

use crate::collision::PeerTrajectory;
use crate::library::MotionLibrary;

/// Kept per agent so delayed readers still find a mature message.
const HISTORY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Message {
    published: f64,
    trajectory: PeerTrajectory,
    /// Announced plan the sender has not switched to yet.
    tentative: Option<PeerTrajectory>,
}

/// Last-writer-wins trajectory board with an optional fixed latency.
#[derive(Debug)]
pub struct TrajectoryBus {
    latency: f64,
    slots: Vec<Mutex<VecDeque<Message>>>,
}

impl TrajectoryBus {
    pub fn new(agents: usize, latency: f64) -> Self {
        Self {
            latency: latency.max(0.0),
            slots: (0..agents)
                .map(|_| Mutex::new(VecDeque::with_capacity(HISTORY)))
                .collect(),
        }
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn agents(&self) -> usize {
        self.slots.len()
    }

    pub fn publish(&self, trajectory: PeerTrajectory, t_now: f64) {
        self.publish_with(trajectory, None, t_now);
    }

    /// Publishes the executed trajectory together with a plan the sender
    /// intends to switch to once every peer can see it.
    pub fn publish_with(
        &self,
        trajectory: PeerTrajectory,
        tentative: Option<PeerTrajectory>,
        t_now: f64,
    ) {
        let mut slot = self.slots[trajectory.agent].lock();
        if slot.len() == HISTORY {
            slot.pop_front();
        }
        slot.push_back(Message {
            published: t_now,
            trajectory,
            tentative,
        });
    }

    fn latest_message(&self, agent: usize, t_now: f64) -> Option<Message> {
        let slot = self.slots[agent].lock();
        slot.iter()
            .rev()
            .find(|m| m.published + self.latency <= t_now + 1e-12)
            .copied()
    }

    /// Newest message of `agent` that has matured by `t_now`.
    pub fn latest(&self, agent: usize, t_now: f64) -> Option<PeerTrajectory> {
        self.latest_message(agent, t_now).map(|m| m.trajectory)
    }

    /// Publish time of the newest message from another agent that has
    /// matured by `t_now`; grows whenever a peer announces a new plan.
    pub fn latest_stamp(&self, me: usize, t_now: f64) -> f64 {
        (0..self.slots.len())
            .filter(|&a| a != me)
            .filter_map(|a| self.latest_message(a, t_now))
            .map(|m| m.published)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mature trajectories of other agents whose current position is within
    /// `2 * horizon` of `position`. Tentative plans are included as extra
    /// entries.
    pub fn collect_peers(
        &self,
        me: usize,
        position: &Vector3<f64>,
        horizon: f64,
        t_now: f64,
        library: &MotionLibrary,
    ) -> Vec<PeerTrajectory> {
        (0..self.slots.len())
            .filter(|&a| a != me)
            .filter_map(|a| self.latest_message(a, t_now))
            .filter(|m| {
                (m.trajectory.position_at(library, t_now) - position).norm() <= 2.0 * horizon
            })
            .flat_map(|m| std::iter::once(m.trajectory).chain(m.tentative))
            .collect()
    }
}
