//! Omnidirectional range sensing of obstacle surfaces.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::map::{Obstacle, ObstacleMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    pub range: f64,
    /// Surface point spacing.
    pub spacing: f64,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub jitter: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            range: 5.0,
            spacing: 0.1,
            jitter: 0.0,
        }
    }
}

/// Surface points within `range` of `position`. The sampling lattice gets a
/// random offset per call so consecutive frames interleave.
pub fn sense_point_cloud<R: Rng + ?Sized>(
    map: &ObstacleMap,
    position: &Vector3<f64>,
    params: &SensorParams,
    rng: &mut R,
) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    let range2 = params.range * params.range;
    let h = params.spacing;
    for o in &map.obstacles {
        match *o {
            Obstacle::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let ch = (position.x - center[0]).hypot(position.y - center[1]);
                if ch - radius > params.range {
                    continue;
                }
                let n = ((std::f64::consts::TAU * radius / h).ceil() as usize).max(3);
                let step = std::f64::consts::TAU / n as f64;
                let phase = rng.random::<f64>() * step;
                let z0 = rng.random::<f64>() * h;
                for k in 0..n {
                    let a = phase + k as f64 * step;
                    let x = center[0] + radius * a.cos();
                    let y = center[1] + radius * a.sin();
                    let dh2 = (x - position.x).powi(2) + (y - position.y).powi(2);
                    if dh2 > range2 {
                        continue;
                    }
                    let dz = (range2 - dh2).sqrt();
                    let lo = z_min.max(position.z - dz);
                    let hi = z_max.min(position.z + dz);
                    if lo > hi {
                        continue;
                    }
                    // First lattice level at or above `lo`.
                    let mut z = z_min + z0 + ((lo - z_min - z0) / h).ceil().max(0.0) * h;
                    while z <= hi {
                        out.push(Vector3::new(x, y, z));
                        z += h;
                    }
                }
                // Top cap on a square lattice clipped to the disk.
                let m = (radius / h).ceil() as i64;
                let (ou, ov) = (rng.random::<f64>() * h, rng.random::<f64>() * h);
                for i in -m..=m {
                    for j in -m..=m {
                        let (dx, dy) = (i as f64 * h + ou - 0.5 * h, j as f64 * h + ov - 0.5 * h);
                        if dx * dx + dy * dy > radius * radius {
                            continue;
                        }
                        let p = Vector3::new(center[0] + dx, center[1] + dy, z_max);
                        if (p - position).norm_squared() <= range2 {
                            out.push(p);
                        }
                    }
                }
            }
            Obstacle::Box { center, half } => {
                let c = Vector3::from(center);
                let hv = Vector3::from(half);
                if (o.distance(position)) > params.range {
                    continue;
                }
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let nu = ((2.0 * hv[u] / h).ceil() as usize).max(1);
                    let nv = ((2.0 * hv[v] / h).ceil() as usize).max(1);
                    let (ou, ov) = (rng.random::<f64>(), rng.random::<f64>());
                    for side in [-1.0, 1.0] {
                        for i in 0..nu {
                            for j in 0..nv {
                                let mut p = c;
                                p[axis] += side * hv[axis];
                                p[u] += -hv[u] + 2.0 * hv[u] * (i as f64 + ou) / nu as f64;
                                p[v] += -hv[v] + 2.0 * hv[v] * (j as f64 + ov) / nv as f64;
                                if (p - position).norm_squared() <= range2 {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if params.jitter > 0.0 {
        let noise = Normal::new(0.0, params.jitter).expect("finite jitter");
        for p in &mut out {
            for k in 0..3 {
                p[k] += noise.sample(rng);
            }
        }
    }
    out
}
