//! Random obstacle maps.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    /// Vertical cylinder spanning `[z_min, z_max]`.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    Box {
        center: [f64; 3],
        half: [f64; 3],
    },
}

impl Obstacle {
    /// Signed distance from `p` to the surface, negative inside.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Obstacle::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let dr = Vector2::new(p.x - center[0], p.y - center[1]).norm() - radius;
                let dz = (z_min - p.z).max(p.z - z_max);
                if dr <= 0.0 && dz <= 0.0 {
                    dr.max(dz)
                } else {
                    Vector2::new(dr.max(0.0), dz.max(0.0)).norm()
                }
            }
            Obstacle::Box { center, half } => {
                let q = Vector3::new(
                    (p.x - center[0]).abs() - half[0],
                    (p.y - center[1]).abs() - half[1],
                    (p.z - center[2]).abs() - half[2],
                );
                let outside = q.sup(&Vector3::zeros()).norm();
                outside + q.max().min(0.0)
            }
        }
    }

    /// Radius of a vertical bounding cylinder around the obstacle axis.
    pub fn footprint(&self) -> ([f64; 2], f64) {
        match *self {
            Obstacle::Cylinder { center, radius, .. } => (center, radius),
            Obstacle::Box { center, half } => ([center[0], center[1]], half[0].hypot(half[1])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSpec {
    pub count: usize,
    /// Share of cylinders; the rest are boxes.
    pub cylinder_fraction: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub region_min: [f64; 3],
    pub region_max: [f64; 3],
    /// Obstacle heights above `region_min[2]`, drawn uniformly; capped at
    /// the region top.
    pub height_min: f64,
    pub height_max: f64,
    /// Minimum surface distance from any start or goal.
    pub clearance: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            count: 0,
            cylinder_fraction: 1.0,
            radius_min: 0.3,
            radius_max: 0.9,
            region_min: [-13.0, -10.0, 0.0],
            region_max: [13.0, 10.0, 3.0],
            height_min: 0.0,
            height_max: 3.0,
            clearance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    pub obstacles: Vec<Obstacle>,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub seed: u64,
}

impl ObstacleMap {
    pub fn empty() -> Self {
        Self {
            obstacles: Vec::new(),
            bounds_min: [0.0; 3],
            bounds_max: [0.0; 3],
            seed: 0,
        }
    }

    /// Smallest signed surface distance over all obstacles.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Share of `res`-sized voxels inside the bounds whose center lies in an
    /// obstacle.
    pub fn occupancy_ratio(&self, res: f64) -> f64 {
        let n: Vec<usize> = (0..3)
            .map(|k| {
                ((self.bounds_max[k] - self.bounds_min[k]) / res)
                    .round()
                    .max(0.0) as usize
            })
            .collect();
        let total = n[0] * n[1] * n[2];
        if total == 0 {
            return 0.0;
        }
        let mut hit = 0usize;
        for i in 0..n[0] {
            let x = self.bounds_min[0] + (i as f64 + 0.5) * res;
            for j in 0..n[1] {
                let y = self.bounds_min[1] + (j as f64 + 0.5) * res;
                let near = self.near(&Vector3::new(x, y, 0.0), 0.0);
                if near.is_empty() {
                    continue;
                }
                for k in 0..n[2] {
                    let p = Vector3::new(x, y, self.bounds_min[2] + (k as f64 + 0.5) * res);
                    hit += near.iter().any(|&o| self.obstacles[o].distance(&p) <= 0.0) as usize;
                }
            }
        }
        hit as f64 / total as f64
    }

    /// Indices of obstacles whose footprint comes within `r` of `p` in xy.
    pub fn near(&self, p: &Vector3<f64>, r: f64) -> Vec<usize> {
        self.obstacles
            .iter()
            .enumerate()
            .filter(|(_, o)| {
                let (c, rad) = o.footprint();
                (p.x - c[0]).hypot(p.y - c[1]) <= r + rad
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Places `spec.count` obstacles uniformly in the region with radii and
/// heights drawn uniformly from their ranges, rejecting any that crowd a
/// keep-clear point.
pub fn generate_map(seed: u64, spec: &MapSpec, keep_clear: &[Vector3<f64>]) -> Result<ObstacleMap> {
    let lo = spec.region_min;
    let hi = spec.region_max;
    if (0..3).any(|k| !(hi[k] > lo[k]))
        || !(spec.radius_max >= spec.radius_min)
        || !(spec.radius_min > 0.0)
        || !(spec.height_max >= spec.height_min)
        || !(spec.height_min >= 0.0)
    {
        return Err(Error::Config(format!("invalid map spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles = Vec::with_capacity(spec.count);
    let max_tries = 1000 * spec.count.max(1);
    let mut tries = 0;
    while obstacles.len() < spec.count {
        if tries == max_tries {
            return Err(Error::MapGeneration {
                requested: spec.count,
                placed: obstacles.len(),
            });
        }
        tries += 1;
        let r = rng.random_range(spec.radius_min..=spec.radius_max);
        let x = rng.random_range(lo[0]..hi[0]);
        let y = rng.random_range(lo[1]..hi[1]);
        let top = (lo[2] + rng.random_range(spec.height_min..=spec.height_max)).min(hi[2]);
        let o = if rng.random::<f64>() < spec.cylinder_fraction {
            Obstacle::Cylinder {
                center: [x, y],
                radius: r,
                z_min: lo[2],
                z_max: top,
            }
        } else {
            let h = r / std::f64::consts::SQRT_2;
            let hz = 0.5 * (top - lo[2]);
            Obstacle::Box {
                center: [x, y, lo[2] + hz],
                half: [h, h, hz],
            }
        };
        if keep_clear.iter().all(|p| o.distance(p) >= spec.clearance) {
            obstacles.push(o);
        }
    }
    Ok(ObstacleMap {
        obstacles,
        bounds_min: lo,
        bounds_max: hi,
        seed,
    })
}
