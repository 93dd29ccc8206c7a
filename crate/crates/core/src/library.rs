//! The shared motion primitive library and its binary file format.
//!
//! Layout (all integers `u32`, all reals `f64`, little-endian):
//!
//! ```text
//! magic            8 bytes  "PSWMLIB\0"
//! version          u32      1
//! v_max a_max speed_step    f64 x3
//! segments         u32      N
//! rotation_step    f64      degrees
//! arc count        u32
//!   radius length roll      f64 x3 per arc (radius +inf for a straight line)
//! path count       u32
//! primitive count  u32
//!   path_index speed_index  u32 x2
//!   times          f64 x (N+1)
//!   states         f64 x (N+1)
//!   controls       f64 x N
//!   end_position   f64 x3
//! ```
//!
//! The library hash is the SHA-256 of exactly these bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::path_library::{build_path_library, ArcSpec, GeometricPath, LibraryConfig, Radius};
use crate::topp::{self, DynamicLimits, KinematicState, MotionPrimitive, PathGrid};

const MAGIC: &[u8; 8] = b"PSWMLIB\0";
const VERSION: u32 = 1;

/// Everything needed to regenerate a library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySettings {
    pub paths: LibraryConfig,
    pub limits: DynamicLimits,
    pub speed_step: f64,
    pub segments: usize,
}

impl LibrarySettings {
    pub fn new(paths: LibraryConfig, limits: DynamicLimits) -> Self {
        Self {
            paths,
            limits,
            speed_step: 0.1,
            segments: 1000,
        }
    }
}

/// Waypoint spacing used for cheap geometric queries along each path.
const WAYPOINT_SPACING: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct MotionLibrary {
    settings: LibrarySettings,
    paths: Vec<GeometricPath>,
    primitives: Vec<MotionPrimitive>,
    groups: Vec<Range<usize>>,
    dropped: Vec<(usize, usize)>,
    waypoints: Vec<Vec<(f64, Vector3<f64>)>>,
    hash: [u8; 32],
}

impl MotionLibrary {
    /// Builds paths and parameterizes them.
    pub fn build(settings: LibrarySettings) -> Result<Self> {
        let paths = build_path_library(&settings.paths)?;
        let out = topp::parameterize_library(
            &paths,
            settings.limits,
            settings.speed_step,
            settings.segments,
        )?;
        if out.primitives.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        Self::assemble(settings, paths, out.primitives, out.dropped)
    }

    fn assemble(
        settings: LibrarySettings,
        paths: Vec<GeometricPath>,
        primitives: Vec<MotionPrimitive>,
        dropped: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n_speeds = topp::start_speeds(settings.limits.v_max, settings.speed_step)?.len();
        let mut groups = vec![0..0; n_speeds];
        let mut start = 0;
        for (k, group) in groups.iter_mut().enumerate() {
            let end = start
                + primitives[start..]
                    .iter()
                    .take_while(|p| p.speed_index == k)
                    .count();
            *group = start..end;
            start = end;
        }
        if start != primitives.len() {
            return Err(Error::Config(
                "primitives are not grouped by speed index".into(),
            ));
        }
        let waypoints = paths
            .iter()
            .map(|p| {
                let n = (p.s_end() / WAYPOINT_SPACING).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|k| {
                        let s = p.s_end() * k as f64 / n as f64;
                        (s, p.frame_at(s).0)
                    })
                    .collect()
            })
            .collect();
        let mut lib = Self {
            settings,
            paths,
            primitives,
            groups,
            dropped,
            waypoints,
            hash: [0; 32],
        };
        let mut hasher = HashWriter(Sha256::new());
        lib.encode(&mut hasher)?;
        lib.hash = hasher.0.finalize().into();
        Ok(lib)
    }

    pub fn settings(&self) -> &LibrarySettings {
        &self.settings
    }

    pub fn limits(&self) -> DynamicLimits {
        self.settings.limits
    }

    pub fn paths(&self) -> &[GeometricPath] {
        &self.paths
    }

    pub fn primitives(&self) -> &[MotionPrimitive] {
        &self.primitives
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitive(&self, id: usize) -> Option<&MotionPrimitive> {
        self.primitives.get(id)
    }

    pub fn path_of(&self, prim: &MotionPrimitive) -> &GeometricPath {
        &self.paths[prim.path_index]
    }

    /// Primitive ids starting at speed index `k`.
    pub fn group(&self, speed_index: usize) -> Range<usize> {
        self.groups.get(speed_index).cloned().unwrap_or(0..0)
    }

    pub fn speed_count(&self) -> usize {
        self.groups.len()
    }

    pub fn dropped(&self) -> &[(usize, usize)] {
        &self.dropped
    }

    /// Planning horizon: the longest path length.
    pub fn horizon(&self) -> f64 {
        self.settings.paths.max_length()
    }

    pub fn max_duration(&self) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.duration())
            .fold(0.0, f64::max)
    }

    pub fn max_group_duration(&self, speed_index: usize) -> f64 {
        self.primitives[self.group(speed_index)]
            .iter()
            .map(|p| p.duration())
            .fold(0.0, f64::max)
    }

    /// Local-frame state of primitive `id` at time `t` after its start.
    pub fn sample(&self, id: usize, t: f64) -> Option<KinematicState> {
        let prim = self.primitives.get(id)?;
        Some(prim.sample(self.path_of(prim), t))
    }

    /// `(s, position)` waypoints roughly every 10 cm along a path.
    pub fn waypoints(&self, path_index: usize) -> &[(f64, Vector3<f64>)] {
        &self.waypoints[path_index]
    }

    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let mut w = CountingWriter::new(BufWriter::new(File::create(path)?));
        self.encode(&mut w)?;
        w.inner.flush()?;
        Ok(w.count)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = HashingReader {
            inner: BufReader::new(File::open(path)?),
            hasher: Sha256::new(),
        };
        let lib = Self::decode(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::format(path, "truncated library file")
            }
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })?;
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(Error::format(path, "trailing bytes after library"));
        }
        let digest: [u8; 32] = r.hasher.finalize().into();
        debug_assert_eq!(digest, lib.hash);
        Ok(lib)
    }

    fn encode<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.settings;
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_f64(w, s.limits.v_max)?;
        put_f64(w, s.limits.a_max)?;
        put_f64(w, s.speed_step)?;
        put_u32(w, s.segments as u32)?;
        put_f64(w, s.paths.rotation_step_deg)?;
        put_u32(w, s.paths.arcs.len() as u32)?;
        for arc in &s.paths.arcs {
            put_f64(w, arc.radius.meters())?;
            put_f64(w, arc.length)?;
            put_f64(w, arc.roll_deg)?;
        }
        put_u32(w, self.paths.len() as u32)?;
        put_u32(w, self.primitives.len() as u32)?;
        for p in &self.primitives {
            put_u32(w, p.path_index as u32)?;
            put_u32(w, p.speed_index as u32)?;
            for v in p.times.iter().chain(&p.states).chain(&p.controls) {
                put_f64(w, *v)?;
            }
            for k in 0..3 {
                put_f64(w, p.end_position[k])?;
            }
        }
        Ok(())
    }

    fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("", "not a primitive library (bad magic)"));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::format(
                "",
                format!("unsupported library version {version}"),
            ));
        }
        let limits = DynamicLimits::new(get_f64(r)?, get_f64(r)?);
        let speed_step = get_f64(r)?;
        let segments = get_u32(r)? as usize;
        let rotation_step_deg = get_f64(r)?;
        let n_arcs = get_u32(r)? as usize;
        let mut arcs = Vec::with_capacity(n_arcs.min(1 << 16));
        for _ in 0..n_arcs {
            let radius = Radius::from_meters(get_f64(r)?);
            arcs.push(ArcSpec::new(radius, get_f64(r)?, get_f64(r)?));
        }
        let settings = LibrarySettings {
            paths: LibraryConfig {
                arcs,
                rotation_step_deg,
            },
            limits,
            speed_step,
            segments,
        };
        let paths = build_path_library(&settings.paths)
            .map_err(|e| Error::format("", format!("bad path config: {e}")))?;
        if get_u32(r)? as usize != paths.len() {
            return Err(Error::format("", "path count does not match path config"));
        }
        let n_prims = get_u32(r)? as usize;
        let mut primitives = Vec::with_capacity(n_prims.min(1 << 20));
        let mut grids: Vec<Option<PathGrid>> = vec![None; paths.len()];
        for id in 0..n_prims {
            let path_index = get_u32(r)? as usize;
            let speed_index = get_u32(r)? as usize;
            let path = paths.get(path_index).ok_or_else(|| {
                Error::format("", format!("primitive {id} references path {path_index}"))
            })?;
            let grid = match &grids[path_index] {
                Some(g) => g.clone(),
                None => {
                    let g = PathGrid::uniform(path.s_end(), segments)?;
                    grids[path_index] = Some(g.clone());
                    g
                }
            };
            let times = get_f64s(r, segments + 1)?;
            let states = get_f64s(r, segments + 1)?;
            let controls = get_f64s(r, segments)?;
            let end_position = Vector3::new(get_f64(r)?, get_f64(r)?, get_f64(r)?);
            primitives.push(MotionPrimitive {
                id,
                path_index,
                speed_index,
                s: grid.positions().to_vec(),
                times,
                states,
                controls,
                end_position,
            });
        }
        Self::assemble(settings, paths, primitives, Vec::new())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32<W: Write>(w: &mut W, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn get_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

pub(crate) struct CountingWriter<W> {
    pub inner: W,
    pub count: u64,
}

impl<W> CountingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, count: 0 }
    }
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_library::Radius;

    fn tiny() -> MotionLibrary {
        let cfg = LibraryConfig::uniform(
            2.0,
            &[(Radius::Finite(3.0), -10.0), (Radius::Infinite, 0.0)],
            90.0,
        );
        let mut s = LibrarySettings::new(cfg, DynamicLimits::new(1.0, 3.0));
        s.speed_step = 0.5;
        s.segments = 50;
        MotionLibrary::build(s).unwrap()
    }

    #[test]
    fn groups_cover_library() {
        let lib = tiny();
        assert_eq!(lib.speed_count(), 3);
        assert_eq!(lib.group(0), 0..5);
        assert_eq!(lib.group(2), 10..15);
        assert_eq!(lib.group(7), 0..0);
        assert!(lib.max_group_duration(0) > lib.max_group_duration(2));
    }

    #[test]
    fn save_load_round_trip() {
        let lib = tiny();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("lib.bin");
        let bytes = lib.save(&f).unwrap();
        assert_eq!(bytes, std::fs::metadata(&f).unwrap().len());
        let back = MotionLibrary::load(&f).unwrap();
        assert_eq!(back.primitives(), lib.primitives());
        assert_eq!(back.settings(), lib.settings());
        assert_eq!(back.hash(), lib.hash());
    }

    #[test]
    fn corrupt_files_rejected() {
        let lib = tiny();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("lib.bin");
        lib.save(&f).unwrap();
        let mut bytes = std::fs::read(&f).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&f, &bytes).unwrap();
        assert!(matches!(MotionLibrary::load(&f), Err(Error::Format { .. })));
        bytes[0] = b'X';
        std::fs::write(&f, &bytes).unwrap();
        assert!(matches!(MotionLibrary::load(&f), Err(Error::Format { .. })));
    }

    #[test]
    fn hash_depends_on_content() {
        let a = tiny();
        let cfg = LibraryConfig::uniform(
            2.0,
            &[(Radius::Finite(3.5), -10.0), (Radius::Infinite, 0.0)],
            90.0,
        );
        let mut s = a.settings().clone();
        s.paths = cfg;
        let b = MotionLibrary::build(s).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
