//! TOML scenario files.
//!
//! Every key has a default, so an empty file is a valid (if dull) scenario.
//! See `scenarios/` at the repository root for complete files.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{LibrarySettings, MotionLibrary};
use crate::metrics::MetricsReport;
use crate::occupancy::{self, OccupancyParams, OccupancyRelations};
use crate::path_library::{presets, ArcSpec, LibraryConfig};
use crate::replanner::PlannerParams;
use crate::sim::{
    circle_agents, generate_map, run_scenario, AgentSpec, MapSpec, ObstacleMap, Scenario, SimParams,
};
use crate::topp::DynamicLimits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySection {
    /// One of the named presets; ignored when `arcs` is given.
    pub preset: String,
    pub arcs: Option<Vec<ArcSpec>>,
    pub rotation_step_deg: Option<f64>,
    pub v_max: f64,
    pub a_max: f64,
    pub speed_step: f64,
    pub segments: usize,
}

impl Default for LibrarySection {
    fn default() -> Self {
        Self {
            preset: "dense".into(),
            arcs: None,
            rotation_step_deg: None,
            v_max: 1.0,
            a_max: 3.0,
            speed_step: 0.1,
            segments: 1000,
        }
    }
}

impl LibrarySection {
    pub fn settings(&self) -> Result<LibrarySettings> {
        let mut paths = match &self.arcs {
            Some(arcs) => LibraryConfig {
                arcs: arcs.clone(),
                rotation_step_deg: 30.0,
            },
            None => presets::by_name(&self.preset).ok_or_else(|| {
                Error::Config(format!("unknown library preset '{}'", self.preset))
            })?,
        };
        if let Some(step) = self.rotation_step_deg {
            paths.rotation_step_deg = step;
        }
        paths.validate()?;
        let limits = DynamicLimits::new(self.v_max, self.a_max);
        limits.validate()?;
        Ok(LibrarySettings {
            paths,
            limits,
            speed_step: self.speed_step,
            segments: self.segments,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    pub count: usize,
    pub radius: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

/// Agents crossing a field from `x = start_x` to `x = goal_x` at random
/// lateral offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingSpec {
    pub count: usize,
    pub start_x: f64,
    pub goal_x: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsSection {
    pub circle: Option<CircleSpec>,
    pub crossing: Option<CrossingSpec>,
    pub list: Vec<AgentSpec>,
}

impl AgentsSection {
    pub fn resolve(&self, seed: u64) -> Result<Vec<AgentSpec>> {
        let mut out = self.list.clone();
        if let Some(c) = self.circle {
            if !(c.radius > 0.0) {
                return Err(Error::Config("circle radius must be positive".into()));
            }
            out.extend(circle_agents(c.count, c.radius, c.center));
        }
        if let Some(c) = self.crossing {
            if !(c.y_max >= c.y_min) {
                return Err(Error::Config("crossing needs y_max >= y_min".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
            for _ in 0..c.count {
                let y0 = rng.random_range(c.y_min..=c.y_max);
                let y1 = rng.random_range(c.y_min..=c.y_max);
                out.push(AgentSpec {
                    start: [c.start_x, y0, c.z],
                    goal: [c.goal_x, y1, c.z],
                });
            }
        }
        if out.is_empty() {
            return Err(Error::Config("scenario has no agents".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilesSection {
    pub library: Option<PathBuf>,
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub library: LibrarySection,
    pub occupancy: OccupancyParams,
    pub planner: PlannerParams,
    pub sim: SimParams,
    pub map: MapSpec,
    pub agents: AgentsSection,
    pub files: FilesSection,
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut cfg.files.library,
            &mut cfg.files.relations,
            &mut cfg.output.csv,
            &mut cfg.output.json,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.library.settings()?;
        self.occupancy.validate()?;
        self.planner.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// Loads the library file if configured, otherwise builds it.
    pub fn library(&self) -> Result<MotionLibrary> {
        let settings = self.library.settings()?;
        match &self.files.library {
            Some(p) if p.exists() => {
                let lib = MotionLibrary::load(p)?;
                if lib.settings() != &settings {
                    return Err(Error::Config(format!(
                        "library file {} was built with different settings",
                        p.display()
                    )));
                }
                Ok(lib)
            }
            _ => MotionLibrary::build(settings),
        }
    }

    /// Loads the relations file if configured, otherwise builds them.
    pub fn relations(&self, library: &MotionLibrary) -> Result<OccupancyRelations> {
        match &self.files.relations {
            Some(p) if p.exists() => {
                let rel = occupancy::load_relations(p, library)?;
                let expect = (
                    self.occupancy.d1(),
                    self.occupancy.d2(library.limits().v_max),
                );
                let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
                if !close(rel.d1, expect.0)
                    || !close(rel.d2, expect.1)
                    || !close(rel.t_res, self.occupancy.t_res)
                {
                    return Err(Error::Config(format!(
                        "relations file {} was built with different occupancy parameters",
                        p.display()
                    )));
                }
                Ok(rel)
            }
            _ => occupancy::build_for_library(library, &self.occupancy),
        }
    }

    /// Agents and a map generated with the configured seed.
    pub fn world(&self) -> Result<(Vec<AgentSpec>, ObstacleMap)> {
        let agents = self.agents.resolve(self.sim.seed)?;
        let keep: Vec<Vector3<f64>> = agents
            .iter()
            .flat_map(|a| [Vector3::from(a.start), Vector3::from(a.goal)])
            .collect();
        let map = if self.map.count == 0 {
            ObstacleMap::empty()
        } else {
            generate_map(self.sim.seed, &self.map, &keep)?
        };
        Ok((agents, map))
    }

    /// Generates the world and simulates it with prebuilt library data.
    pub fn run(
        &self,
        library: &MotionLibrary,
        relations: &OccupancyRelations,
    ) -> Result<MetricsReport> {
        let (agents, map) = self.world()?;
        run_scenario(&Scenario {
            library,
            relations,
            map: &map,
            agents: &agents,
            planner: &self.planner,
            sim: &self.sim,
            r_robot: self.occupancy.r_robot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_agents_only() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg.library.preset, "dense");
        assert!(cfg.agents.resolve(0).is_err());
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            [library]
            preset = "small"
            v_max = 1.0
            [occupancy]
            s_res = 0.1
            r_infl = 0.2
            [planner]
            n_pc = 1500
            [planner.weights]
            bounds_min = [-30.0, -30.0, 0.3]
            bounds_max = [30.0, 30.0, 3.0]
            [sim]
            seed = 4
            deterministic = true
            [sim.sensor]
            range = 4.0
            [map]
            count = 10
            [agents]
            circle = { count = 4, radius = 5.0, center = [0.0, 0.0, 1.0] }
            list = [{ start = [0.0, 0.0, 1.0], goal = [1.0, 0.0, 1.0] }]
            [output]
            csv = "out.csv"
        "#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.planner.n_pc, 1500);
        assert_eq!(cfg.sim.sensor.range, 4.0);
        assert_eq!(cfg.agents.resolve(cfg.sim.seed).unwrap().len(), 5);
        assert_eq!(cfg.library.settings().unwrap().paths.expected_count(), 37);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(ScenarioConfig::from_toml("[sim]\nbogus = 1").is_err());
        assert!(ScenarioConfig::from_toml("[sim]\ndt = -1.0").is_err());
        assert!(ScenarioConfig::from_toml("[library]\npreset = \"nope\"").is_err());
    }

    #[test]
    fn crossing_is_seeded() {
        let a = AgentsSection {
            crossing: Some(CrossingSpec {
                count: 3,
                start_x: -18.0,
                goal_x: 18.0,
                y_min: -9.0,
                y_max: 9.0,
                z: 1.0,
            }),
            ..Default::default()
        };
        assert_eq!(a.resolve(1).unwrap(), a.resolve(1).unwrap());
        assert_ne!(a.resolve(1).unwrap(), a.resolve(2).unwrap());
        assert!(a
            .resolve(1)
            .unwrap()
            .iter()
            .all(|s| s.start[0] == -18.0 && s.goal[0] == 18.0));
    }
}
