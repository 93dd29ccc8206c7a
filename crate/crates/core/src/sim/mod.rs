//! Decentralized multi-agent simulation.

pub mod agent;
pub mod bus;
pub mod map;
pub mod scenario;
pub mod sensor;

pub use agent::{step_agent, AgentRuntime, Motion, Phase};
pub use bus::TrajectoryBus;
pub use map::{generate_map, MapSpec, Obstacle, ObstacleMap};
pub use scenario::{circle_agents, run_scenario, AgentSpec, Scenario, SimParams};
pub use sensor::{sense_point_cloud, SensorParams};
