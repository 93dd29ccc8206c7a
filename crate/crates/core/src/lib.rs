//! Decentralized swarm navigation with a shared, pre-computed motion
//! primitive library and grid-indexed batch collision checking.

// `!(a <= b)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collision;
pub mod config;
pub mod error;
pub mod frame;
pub mod library;
pub mod lp;
pub mod metrics;
pub mod occupancy;
pub mod path_library;
pub mod replanner;
pub mod sim;
pub mod topp;

pub use collision::{PeerMotion, PeerTrajectory, PointCloudStack, UnsafeMask};
pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use frame::VelocityFrame;
pub use library::{LibrarySettings, MotionLibrary};
pub use metrics::{AgentMetrics, AggregateMetrics, MetricsReport};
pub use occupancy::{GridIndex, OccupancyParams, OccupancyRelations};
pub use path_library::{ArcSpec, GeometricPath, LibraryConfig, Radius};
pub use replanner::{AgentPlan, CostWeights, PlanOutcome, PlanResult, PlannerParams};
pub use sim::{AgentSpec, ObstacleMap, Scenario, SimParams};
pub use topp::{DynamicLimits, KinematicState, MotionPrimitive};
