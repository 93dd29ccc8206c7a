//! Run metrics and their CSV / JSON forms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: usize,
    pub reached: bool,
    pub flight_time: Option<f64>,
    pub flight_distance: f64,
    pub replans: usize,
    pub emergencies: usize,
    pub compute_p50_ms: f64,
    pub compute_p90_ms: f64,
    pub compute_max_ms: f64,
    /// Closest center-to-surface distance to any obstacle.
    pub min_obstacle_clearance: Option<f64>,
    /// Closest center distance to any other agent.
    pub min_agent_distance: Option<f64>,
    pub obstacle_collisions: usize,
    pub agent_collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub agents: usize,
    pub reached: usize,
    pub success_rate: f64,
    pub mean_flight_time: Option<f64>,
    pub mean_flight_distance: Option<f64>,
    pub min_obstacle_clearance: Option<f64>,
    pub min_agent_distance: Option<f64>,
    pub replans: usize,
    pub emergencies: usize,
    pub obstacle_collisions: usize,
    pub agent_collisions: usize,
    pub compute_median_ms: f64,
    pub compute_p99_ms: f64,
    pub sim_time: f64,
    pub wall_time: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: AggregateMetrics,
    pub agents: Vec<AgentMetrics>,
}

/// Nearest-rank percentile of an unsorted sample, zero when empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    /// Aggregates per-agent rows. `compute_ms` holds every replan time.
    pub fn from_agents(
        agents: Vec<AgentMetrics>,
        compute_ms: &[f64],
        sim_time: f64,
        wall_time: f64,
        timed_out: bool,
    ) -> Self {
        let reached = agents.iter().filter(|a| a.reached).count();
        let aggregate = AggregateMetrics {
            agents: agents.len(),
            reached,
            success_rate: if agents.is_empty() {
                0.0
            } else {
                reached as f64 / agents.len() as f64
            },
            mean_flight_time: mean(agents.iter().filter_map(|a| a.flight_time)),
            mean_flight_distance: mean(
                agents
                    .iter()
                    .filter(|a| a.reached)
                    .map(|a| a.flight_distance),
            ),
            min_obstacle_clearance: agents
                .iter()
                .fold(None, |m, a| opt_min(m, a.min_obstacle_clearance)),
            min_agent_distance: agents
                .iter()
                .fold(None, |m, a| opt_min(m, a.min_agent_distance)),
            replans: agents.iter().map(|a| a.replans).sum(),
            emergencies: agents.iter().map(|a| a.emergencies).sum(),
            obstacle_collisions: agents.iter().map(|a| a.obstacle_collisions).sum(),
            agent_collisions: agents.iter().map(|a| a.agent_collisions).sum::<usize>() / 2,
            compute_median_ms: percentile(compute_ms, 50.0),
            compute_p99_ms: percentile(compute_ms, 99.0),
            sim_time,
            wall_time,
            timed_out,
        };
        Self { aggregate, agents }
    }

    pub fn collision_free(&self) -> bool {
        self.aggregate.obstacle_collisions == 0 && self.aggregate.agent_collisions == 0
    }

    /// Zeroes every wall-clock field so reports of identical runs compare
    /// byte for byte.
    pub fn strip_timing(&mut self) {
        for a in &mut self.agents {
            a.compute_p50_ms = 0.0;
            a.compute_p90_ms = 0.0;
            a.compute_max_ms = 0.0;
        }
        self.aggregate.compute_median_ms = 0.0;
        self.aggregate.compute_p99_ms = 0.0;
        self.aggregate.wall_time = 0.0;
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for a in &self.agents {
            w.serialize(a)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<AgentMetrics>> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<AgentMetrics>, _>>()?;
        Ok(rows)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
