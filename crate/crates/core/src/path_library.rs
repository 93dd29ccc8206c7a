//! Geometric path library: circular arcs tangent to +x at the origin, replicated
//! by rolling them about the x axis.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Arc radius. `Infinite` is a straight line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Finite(f64),
    Infinite,
}

impl Radius {
    pub fn is_straight(self) -> bool {
        matches!(self, Radius::Infinite)
    }

    /// Curvature `1/r`, zero for a straight line.
    pub fn curvature(self) -> f64 {
        match self {
            Radius::Finite(r) => 1.0 / r,
            Radius::Infinite => 0.0,
        }
    }

    /// Radius in meters, `f64::INFINITY` for a straight line.
    pub fn meters(self) -> f64 {
        match self {
            Radius::Finite(r) => r,
            Radius::Infinite => f64::INFINITY,
        }
    }

    pub fn from_meters(r: f64) -> Self {
        if r.is_infinite() {
            Radius::Infinite
        } else {
            Radius::Finite(r)
        }
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Radius::Finite(r) => write!(f, "{r}"),
            Radius::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Radius {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Finite(r) => serializer.serialize_f64(*r),
            Radius::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(r) => Ok(Radius::from_meters(r)),
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinite" | "infinity" | "straight" => Ok(Radius::Infinite),
                other => other
                    .parse::<f64>()
                    .map(Radius::from_meters)
                    .map_err(|_| serde::de::Error::custom(format!("bad radius {s:?}"))),
            },
        }
    }
}

/// One arc before replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    #[serde(rename = "radius_m")]
    pub radius: Radius,
    #[serde(rename = "length_m")]
    pub length: f64,
    /// Initial roll about the x axis, degrees.
    #[serde(rename = "roll_deg", default)]
    pub roll_deg: f64,
}

impl ArcSpec {
    pub fn new(radius: Radius, length: f64, roll_deg: f64) -> Self {
        Self {
            radius,
            length,
            roll_deg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::Config(format!(
                "arc length must be > 0, got {}",
                self.length
            )));
        }
        if let Radius::Finite(r) = self.radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!(
                    "arc radius must be > 0 or inf, got {r}"
                )));
            }
        }
        if !self.roll_deg.is_finite() {
            return Err(Error::Config("arc roll must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub arcs: Vec<ArcSpec>,
    /// Roll increment between replicas, degrees. Must divide 360.
    pub rotation_step_deg: f64,
}

impl LibraryConfig {
    /// Arcs sharing one length, given as `(radius, roll_deg)` pairs.
    pub fn uniform(length: f64, arcs: &[(Radius, f64)], rotation_step_deg: f64) -> Self {
        Self {
            arcs: arcs
                .iter()
                .map(|&(r, roll)| ArcSpec::new(r, length, roll))
                .collect(),
            rotation_step_deg,
        }
    }

    /// Number of roll replicas per curved arc.
    pub fn replicas(&self) -> usize {
        (360.0 / self.rotation_step_deg).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.arcs.is_empty() {
            return Err(Error::Config("library needs at least one arc".into()));
        }
        let step = self.rotation_step_deg;
        if !(step > 0.0) || step > 360.0 {
            return Err(Error::Config(format!(
                "rotation step must be in (0, 360], got {step}"
            )));
        }
        let k = 360.0 / step;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rotation step {step} does not divide 360"
            )));
        }
        for arc in &self.arcs {
            arc.validate()?;
        }
        // Replicas of two arcs with the same shape collide when their initial
        // rolls are congruent modulo the step.
        for (i, a) in self.arcs.iter().enumerate() {
            for b in &self.arcs[..i] {
                if a.radius != b.radius || a.length != b.length {
                    continue;
                }
                let same = a.radius.is_straight() || {
                    let d = (a.roll_deg - b.roll_deg).rem_euclid(step);
                    d < 1e-9 || step - d < 1e-9
                };
                if same {
                    return Err(Error::Config(format!(
                        "arcs r={} l={} produce duplicate paths",
                        a.radius, a.length
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form path count: curved arcs times replicas, plus one per straight arc.
    pub fn expected_count(&self) -> usize {
        let curved = self.arcs.iter().filter(|a| !a.radius.is_straight()).count();
        let straight = self.arcs.len() - curved;
        curved * self.replicas() + straight
    }

    /// The largest arc length in the library (the planning horizon).
    pub fn max_length(&self) -> f64 {
        self.arcs.iter().map(|a| a.length).fold(0.0, f64::max)
    }
}

/// An arc-length parameterized curve starting at the origin tangent to +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricPath {
    pub index: usize,
    pub arc: ArcSpec,
    /// Total roll about x in radians.
    pub total_roll: f64,
}

/// Which derivative of the path to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Position,
    Tangent,
    Curvature,
}

impl GeometricPath {
    pub fn s_end(&self) -> f64 {
        self.arc.length
    }

    /// `q(s)`, `q'(s)` or `q''(s)`. Errors outside `[0, s_end]`.
    pub fn evaluate(&self, s: f64, order: Derivative) -> Result<Vector3<f64>> {
        let s_end = self.s_end();
        // A relative tolerance so callers can pass grid endpoints computed by summation.
        let tol = 1e-12 * s_end.max(1.0);
        if !(s >= -tol && s <= s_end + tol) {
            return Err(Error::Domain { s, s_end });
        }
        Ok(self.eval_unchecked(s.clamp(0.0, s_end), order))
    }

    pub(crate) fn eval_unchecked(&self, s: f64, order: Derivative) -> Vector3<f64> {
        let planar = match self.arc.radius {
            Radius::Infinite => match order {
                Derivative::Position => Vector3::new(s, 0.0, 0.0),
                Derivative::Tangent => Vector3::new(1.0, 0.0, 0.0),
                Derivative::Curvature => Vector3::zeros(),
            },
            Radius::Finite(r) => {
                let (sin, cos) = (s / r).sin_cos();
                match order {
                    Derivative::Position => Vector3::new(r * sin, r * (1.0 - cos), 0.0),
                    Derivative::Tangent => Vector3::new(cos, sin, 0.0),
                    Derivative::Curvature => Vector3::new(-sin / r, cos / r, 0.0),
                }
            }
        };
        self.roll(planar)
    }

    /// Position, tangent and curvature vectors at `s` in one call.
    pub fn frame_at(&self, s: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let s = s.clamp(0.0, self.s_end());
        (
            self.eval_unchecked(s, Derivative::Position),
            self.eval_unchecked(s, Derivative::Tangent),
            self.eval_unchecked(s, Derivative::Curvature),
        )
    }

    pub fn end_point(&self) -> Vector3<f64> {
        self.eval_unchecked(self.s_end(), Derivative::Position)
    }

    fn roll(&self, v: Vector3<f64>) -> Vector3<f64> {
        // The planar curve has z = 0, so the rotation only mixes y into y/z.
        let (sin, cos) = self.total_roll.sin_cos();
        Vector3::new(v.x, v.y * cos - v.z * sin, v.y * sin + v.z * cos)
    }
}

/// Replicates every curved arc at rolls `theta + k * step`; straight arcs appear once.
pub fn build_path_library(config: &LibraryConfig) -> Result<Vec<GeometricPath>> {
    config.validate()?;
    let replicas = config.replicas();
    let mut paths = Vec::with_capacity(config.expected_count());
    for arc in &config.arcs {
        let copies = if arc.radius.is_straight() {
            1
        } else {
            replicas
        };
        for k in 0..copies {
            let roll_deg = arc.roll_deg + k as f64 * config.rotation_step_deg;
            paths.push(GeometricPath {
                index: paths.len(),
                arc: *arc,
                total_roll: roll_deg.to_radians(),
            });
        }
    }
    Ok(paths)
}

/// Named library configurations used by the experiments.
pub mod presets {
    use super::{LibraryConfig, Radius};

    const ROLL_PATTERN: [f64; 3] = [0.0, -10.0, -20.0];

    fn with_pattern(length: f64, radii: &[f64], step: f64) -> LibraryConfig {
        let arcs: Vec<(Radius, f64)> = radii
            .iter()
            .enumerate()
            .map(|(i, &r)| (Radius::from_meters(r), ROLL_PATTERN[i % 3]))
            .collect();
        LibraryConfig::uniform(length, &arcs, step)
    }

    const INF: f64 = f64::INFINITY;

    /// 7 arcs of 5 m: 73 paths.
    pub fn seven_arc() -> LibraryConfig {
        with_pattern(5.0, &[6.0, 8.0, 12.0, 20.0, 36.0, 78.0, INF], 30.0)
    }

    /// 37 paths, 3 m.
    pub fn small() -> LibraryConfig {
        with_pattern(3.0, &[8.0, 20.0, 78.0, INF], 30.0)
    }

    /// 61 paths, 3 m.
    pub fn medium() -> LibraryConfig {
        with_pattern(3.0, &[6.0, 12.0, 20.0, 36.0, 78.0, INF], 30.0)
    }

    /// 109 paths, 3 m.
    pub fn large() -> LibraryConfig {
        with_pattern(
            3.0,
            &[2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 20.0, 36.0, 78.0, INF],
            30.0,
        )
    }

    /// 181 paths, 3 m: fifteen curved radii plus the straight line.
    pub fn dense() -> LibraryConfig {
        with_pattern(
            3.0,
            &[
                2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 16.0, 20.0, 36.0, 78.0,
                INF,
            ],
            30.0,
        )
    }

    /// 361 paths, 6 m, 15 degree roll step.
    pub fn swarm_scale() -> LibraryConfig {
        with_pattern(
            6.0,
            &[
                3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0, 36.0, 50.0, 78.0,
                150.0, INF,
            ],
            15.0,
        )
    }

    pub fn by_name(name: &str) -> Option<LibraryConfig> {
        Some(match name {
            "seven-arc" | "seven_arc" | "73" => seven_arc(),
            "small" | "37" => small(),
            "medium" | "61" => medium(),
            "large" | "109" => large(),
            "dense" | "181" => dense(),
            "swarm-scale" | "swarm_scale" | "361" => swarm_scale(),
            _ => return None,
        })
    }
}
