//! Offline spatial and spatio-temporal occupancy relations between the
//! primitive library and a uniform grid over its bounding box.
//!
//! Relations file layout (little-endian):
//!
//! ```text
//! magic            8 bytes  "PSWMREL\0"
//! version          u32      1
//! library hash     32 bytes SHA-256 of the library file
//! s_res t_res d1 d2         f64 x4
//! grid min corner  f64 x3
//! grid dims        u32 x3
//! primitive count  u32
//!   duration       f64 per primitive
//! R_o offsets      u64 x (cells + 1)
//! R_o ids          u32 per entry
//! R_t offsets      u64 x (cells + 1)
//! R_t entries      (u32 id, f32 t_start, f32 t_end) per entry
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{
    self, get_f32, get_f64, get_u32, put_f32, put_f64, put_u32, CountingWriter, MotionLibrary,
};

const MAGIC: &[u8; 8] = b"PSWMREL\0";
const VERSION: u32 = 1;

/// Half diagonal factor of a cubic cell.
pub const HALF_DIAGONAL: f64 = 0.866_025_403_784_438_6;

/// Uniform grid over an axis-aligned box in the velocity-aligned frame.
/// Cells are half-open `[lo, hi)` along every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridIndex {
    pub min: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridIndex {
    pub fn max(&self) -> Vector3<f64> {
        self.min
            + Vector3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            ) * self.resolution
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    #[inline]
    pub fn unlinear(&self, i: usize) -> (usize, usize, usize) {
        let iz = i % self.dims[2];
        let rest = i / self.dims[2];
        (rest / self.dims[1], rest % self.dims[1], iz)
    }

    #[inline]
    fn axis_cell(&self, v: f64, axis: usize) -> Option<usize> {
        let f = ((v - self.min[axis]) / self.resolution).floor();
        if f >= 0.0 && f < self.dims[axis] as f64 {
            Some(f as usize)
        } else {
            None
        }
    }

    /// Cell containing `p`, or `None` outside the box.
    #[inline]
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<usize> {
        let ix = self.axis_cell(p.x, 0)?;
        let iy = self.axis_cell(p.y, 1)?;
        let iz = self.axis_cell(p.z, 2)?;
        Some(self.linear(ix, iy, iz))
    }

    #[inline]
    fn axis_center(&self, i: usize, axis: usize) -> f64 {
        self.min[axis] + (i as f64 + 0.5) * self.resolution
    }

    pub fn center(&self, i: usize) -> Vector3<f64> {
        let (ix, iy, iz) = self.unlinear(i);
        Vector3::new(
            self.axis_center(ix, 0),
            self.axis_center(iy, 1),
            self.axis_center(iz, 2),
        )
    }

    /// Indices along `axis` of cells whose centers may lie within `d` of `v`.
    fn axis_span(&self, v: f64, d: f64, axis: usize) -> Range<usize> {
        let lo = ((v - d - self.min[axis]) / self.resolution - 0.5)
            .floor()
            .max(0.0);
        let hi = ((v + d - self.min[axis]) / self.resolution - 0.5).ceil() + 1.0;
        let hi = hi.min(self.dims[axis] as f64).max(lo);
        lo as usize..hi as usize
    }

    /// Calls `f(cell, squared distance)` for every cell whose center lies
    /// within `d` of `p`.
    pub fn for_each_within(&self, p: &Vector3<f64>, d: f64, mut f: impl FnMut(usize, f64)) {
        let d2 = d * d;
        for ix in self.axis_span(p.x, d, 0) {
            let dx = self.axis_center(ix, 0) - p.x;
            for iy in self.axis_span(p.y, d, 1) {
                let dy = self.axis_center(iy, 1) - p.y;
                let dxy = dx * dx + dy * dy;
                if dxy > d2 {
                    continue;
                }
                for iz in self.axis_span(p.z, d, 2) {
                    let dz = self.axis_center(iz, 2) - p.z;
                    let dd = dxy + dz * dz;
                    if dd <= d2 {
                        f(self.linear(ix, iy, iz), dd);
                    }
                }
            }
        }
    }
}

/// Bounding box of all samples, grown by `d_max` and snapped outward to
/// multiples of `s_res`.
pub fn split_coverage_space(table: &SampleTable, s_res: f64, d_max: f64) -> Result<GridIndex> {
    if !(s_res > 0.0) || !(d_max >= 0.0) {
        return Err(Error::Config(format!(
            "grid needs s_res > 0 and d_max >= 0, got {s_res}, {d_max}"
        )));
    }
    if table.rows.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for row in &table.rows {
        lo = lo.inf(&row.position);
        hi = hi.sup(&row.position);
    }
    let mut min = Vector3::zeros();
    let mut dims = [0usize; 3];
    for k in 0..3 {
        let a = ((lo[k] - d_max) / s_res).floor();
        let mut b = ((hi[k] + d_max) / s_res).ceil();
        if b <= a {
            b = a + 1.0;
        }
        min[k] = a * s_res;
        dims[k] = (b - a) as usize;
    }
    Ok(GridIndex {
        min,
        resolution: s_res,
        dims,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub primitive: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub position: Vector3<f64>,
}

/// Time-discretized primitives. Row index is the sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub t_res: f64,
    pub rows: Vec<SampleRow>,
    /// `rows[offsets[i]..offsets[i + 1]]` belong to primitive `i`.
    pub offsets: Vec<usize>,
    pub durations: Vec<f64>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn primitive_rows(&self, i: usize) -> &[SampleRow] {
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Number of `t_res` intervals covering a duration `T`.
pub fn interval_count(duration: f64, t_res: f64) -> usize {
    ((duration / t_res - 1e-9).ceil().max(1.0)) as usize
}

pub fn discretize_primitives(library: &MotionLibrary, t_res: f64) -> Result<SampleTable> {
    if !(t_res > 0.0) {
        return Err(Error::Config(format!(
            "t_res must be positive, got {t_res}"
        )));
    }
    let per_prim: Vec<Vec<SampleRow>> = library
        .primitives()
        .par_iter()
        .map(|prim| {
            let path = library.path_of(prim);
            let t_total = prim.duration();
            (0..interval_count(t_total, t_res))
                .map(|j| {
                    let t_start = j as f64 * t_res;
                    let t_end = ((j + 1) as f64 * t_res).min(t_total);
                    SampleRow {
                        primitive: prim.id,
                        t_start,
                        t_end,
                        position: prim.sample(path, 0.5 * (t_start + t_end)).position,
                    }
                })
                .collect()
        })
        .collect();
    let mut offsets = Vec::with_capacity(per_prim.len() + 1);
    let mut rows = Vec::with_capacity(per_prim.iter().map(Vec::len).sum());
    offsets.push(0);
    for r in per_prim {
        rows.extend(r);
        offsets.push(rows.len());
    }
    Ok(SampleTable {
        t_res,
        rows,
        offsets,
        durations: library.primitives().iter().map(|p| p.duration()).collect(),
    })
}

/// One spatio-temporal entry: primitive `prim` is within `d2` of the cell
/// during `[t_start, t_end]` after its own start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtEntry {
    pub prim: u32,
    pub t_start: f32,
    pub t_end: f32,
}

/// Offline parameters that determine the relations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyParams {
    pub s_res: f64,
    pub t_res: f64,
    pub r_infl: f64,
    pub r_robot: f64,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self {
            s_res: 0.1,
            t_res: 0.05,
            r_infl: 0.25,
            r_robot: 0.15,
        }
    }
}

impl OccupancyParams {
    /// Ball radius used for the spatial relation.
    pub fn d1(&self) -> f64 {
        HALF_DIAGONAL * self.s_res + self.r_infl
    }

    /// Ball radius used for the spatio-temporal relation. The last term covers
    /// the motion of both trajectories within half a time step around their
    /// midpoint samples.
    pub fn d2(&self, v_max: f64) -> f64 {
        HALF_DIAGONAL * self.s_res + 2.0 * self.r_robot + v_max * self.t_res
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.s_res > 0.0 && self.t_res > 0.0 && self.r_infl >= 0.0 && self.r_robot >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid occupancy parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRelations {
    pub grid: GridIndex,
    pub t_res: f64,
    pub d1: f64,
    pub d2: f64,
    pub library_hash: [u8; 32],
    pub durations: Vec<f64>,
    ro_offsets: Vec<usize>,
    ro_ids: Vec<u32>,
    rt_offsets: Vec<usize>,
    rt_entries: Vec<RtEntry>,
}

#[derive(Clone, Copy)]
struct PairHit {
    cell: u32,
    spatial: bool,
    t_start: f32,
    t_end: f32,
}

fn primitive_hits(rows: &[SampleRow], grid: &GridIndex, d1: f64, d2: f64) -> Vec<PairHit> {
    let d = d1.max(d2);
    let d1sq = d1 * d1;
    let d2sq = d2 * d2;
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut hits: Vec<PairHit> = Vec::new();
    for row in rows {
        grid.for_each_within(&row.position, d, |cell, dd| {
            let cell = cell as u32;
            let slot = *index.entry(cell).or_insert_with(|| {
                hits.push(PairHit {
                    cell,
                    spatial: false,
                    t_start: f32::INFINITY,
                    t_end: f32::NEG_INFINITY,
                });
                hits.len() - 1
            });
            let h = &mut hits[slot];
            h.spatial |= dd <= d1sq;
            if dd <= d2sq {
                // Rows are time ordered, so the first match opens the interval
                // and each later one extends it.
                h.t_start = h.t_start.min(row.t_start as f32);
                h.t_end = h.t_end.max(row.t_end as f32);
            }
        });
    }
    hits
}

pub fn build_occupancy_relations(
    table: &SampleTable,
    grid: &GridIndex,
    d1: f64,
    d2: f64,
) -> Result<OccupancyRelations> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::Config(format!(
            "d1 and d2 must be positive, got {d1}, {d2}"
        )));
    }
    let n_prims = table.offsets.len() - 1;
    let hits: Vec<Vec<PairHit>> = (0..n_prims)
        .into_par_iter()
        .map(|i| primitive_hits(table.primitive_rows(i), grid, d1, d2))
        .collect();

    let n_cells = grid.cell_count();
    let mut ro_offsets = vec![0usize; n_cells + 1];
    let mut rt_offsets = vec![0usize; n_cells + 1];
    for h in hits.iter().flatten() {
        if h.spatial {
            ro_offsets[h.cell as usize + 1] += 1;
        }
        if h.t_end >= h.t_start {
            rt_offsets[h.cell as usize + 1] += 1;
        }
    }
    for i in 0..n_cells {
        ro_offsets[i + 1] += ro_offsets[i];
        rt_offsets[i + 1] += rt_offsets[i];
    }
    let mut ro_ids = vec![0u32; ro_offsets[n_cells]];
    let mut rt_entries = vec![
        RtEntry {
            prim: 0,
            t_start: 0.0,
            t_end: 0.0
        };
        rt_offsets[n_cells]
    ];
    let mut ro_fill = ro_offsets[..n_cells].to_vec();
    let mut rt_fill = rt_offsets[..n_cells].to_vec();
    // Primitives are visited in id order, so every cell list ends up ascending.
    for (prim, list) in hits.iter().enumerate() {
        for h in list {
            let c = h.cell as usize;
            if h.spatial {
                ro_ids[ro_fill[c]] = prim as u32;
                ro_fill[c] += 1;
            }
            if h.t_end >= h.t_start {
                rt_entries[rt_fill[c]] = RtEntry {
                    prim: prim as u32,
                    t_start: h.t_start,
                    t_end: h.t_end,
                };
                rt_fill[c] += 1;
            }
        }
    }
    Ok(OccupancyRelations {
        grid: grid.clone(),
        t_res: table.t_res,
        d1,
        d2,
        library_hash: [0; 32],
        durations: table.durations.clone(),
        ro_offsets,
        ro_ids,
        rt_offsets,
        rt_entries,
    })
}

/// Full offline pipeline for one library.
pub fn build_for_library(
    library: &MotionLibrary,
    params: &OccupancyParams,
) -> Result<OccupancyRelations> {
    params.validate()?;
    let d1 = params.d1();
    let d2 = params.d2(library.limits().v_max);
    let table = discretize_primitives(library, params.t_res)?;
    let grid = split_coverage_space(&table, params.s_res, d1.max(d2))?;
    let mut rel = build_occupancy_relations(&table, &grid, d1, d2)?;
    rel.library_hash = library.hash();
    Ok(rel)
}

fn group_slice<'a, T>(items: &'a [T], key: impl Fn(&T) -> u32, group: &Range<usize>) -> &'a [T] {
    let lo = items.partition_point(|e| (key(e) as usize) < group.start);
    let hi = lo + items[lo..].partition_point(|e| (key(e) as usize) < group.end);
    &items[lo..hi]
}

impl OccupancyRelations {
    /// Inflation radius the spatial relation was built with.
    pub fn r_infl(&self) -> f64 {
        self.d1 - HALF_DIAGONAL * self.grid.resolution
    }

    pub fn primitive_count(&self) -> usize {
        self.durations.len()
    }

    pub fn ro(&self, cell: usize) -> &[u32] {
        &self.ro_ids[self.ro_offsets[cell]..self.ro_offsets[cell + 1]]
    }

    pub fn rt(&self, cell: usize) -> &[RtEntry] {
        &self.rt_entries[self.rt_offsets[cell]..self.rt_offsets[cell + 1]]
    }

    /// Ids in `R_o[cell]` that fall inside the id range `group`.
    #[inline]
    pub fn ro_group(&self, cell: usize, group: &Range<usize>) -> &[u32] {
        group_slice(self.ro(cell), |&id| id, group)
    }

    #[inline]
    pub fn rt_group(&self, cell: usize, group: &Range<usize>) -> &[RtEntry] {
        group_slice(self.rt(cell), |e| e.prim, group)
    }

    pub fn ro_len(&self) -> usize {
        self.ro_ids.len()
    }

    pub fn rt_len(&self) -> usize {
        self.rt_entries.len()
    }

    /// Whether an `R_t` entry reaches the end of its primitive, where the
    /// robot comes to rest and keeps occupying the cell.
    pub fn reaches_end(&self, e: &RtEntry) -> bool {
        e.t_end as f64 >= self.durations[e.prim as usize] - 1e-4
    }

    pub fn hash_hex(&self) -> String {
        library::hex(&self.library_hash)
    }
}

/// Writes the relations file; returns the byte count.
pub fn save_relations(rel: &OccupancyRelations, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = CountingWriter::new(BufWriter::with_capacity(
        1 << 20,
        File::create(path.as_ref())?,
    ));
    write_relations(rel, &mut w)?;
    w.inner.flush()?;
    Ok(w.count)
}

fn write_relations<W: Write>(rel: &OccupancyRelations, w: &mut W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    w.write_all(&rel.library_hash)?;
    for v in [rel.grid.resolution, rel.t_res, rel.d1, rel.d2] {
        put_f64(w, v)?;
    }
    for k in 0..3 {
        put_f64(w, rel.grid.min[k])?;
    }
    for k in 0..3 {
        put_u32(w, rel.grid.dims[k] as u32)?;
    }
    put_u32(w, rel.durations.len() as u32)?;
    for &d in &rel.durations {
        put_f64(w, d)?;
    }
    for &o in &rel.ro_offsets {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &id in &rel.ro_ids {
        put_u32(w, id)?;
    }
    for &o in &rel.rt_offsets {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for e in &rel.rt_entries {
        put_u32(w, e.prim)?;
        put_f32(w, e.t_start)?;
        put_f32(w, e.t_end)?;
    }
    Ok(())
}

/// Loads a relations file and checks that it was built for `library`.
pub fn load_relations(
    path: impl AsRef<Path>,
    library: &MotionLibrary,
) -> Result<OccupancyRelations> {
    let path = path.as_ref();
    let mut r = BufReader::with_capacity(1 << 20, File::open(path)?);
    let rel = read_relations(&mut r).map_err(|e| match e {
        Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
            Error::format(path, "truncated relations file")
        }
        Error::Format { reason, .. } => Error::format(path, reason),
        other => other,
    })?;
    if rel.library_hash != library.hash() {
        return Err(Error::HashMismatch {
            expected: rel.hash_hex(),
            found: library.hash_hex(),
        });
    }
    if rel.primitive_count() != library.len() {
        return Err(Error::format(path, "primitive count differs from library"));
    }
    Ok(rel)
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_offsets<R: Read>(r: &mut R, n_cells: usize) -> Result<Vec<usize>> {
    let offsets = (0..=n_cells)
        .map(|_| get_u64(r).map(|v| v as usize))
        .collect::<io::Result<Vec<_>>>()?;
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::format("", "offsets are not monotone"));
    }
    Ok(offsets)
}

fn read_relations<R: Read>(r: &mut R) -> Result<OccupancyRelations> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("", "not a relations file (bad magic)"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::format(
            "",
            format!("unsupported relations version {version}"),
        ));
    }
    let mut library_hash = [0u8; 32];
    r.read_exact(&mut library_hash)?;
    let resolution = get_f64(r)?;
    let t_res = get_f64(r)?;
    let d1 = get_f64(r)?;
    let d2 = get_f64(r)?;
    let min = Vector3::new(get_f64(r)?, get_f64(r)?, get_f64(r)?);
    let dims = [
        get_u32(r)? as usize,
        get_u32(r)? as usize,
        get_u32(r)? as usize,
    ];
    let grid = GridIndex {
        min,
        resolution,
        dims,
    };
    let n_prims = get_u32(r)? as usize;
    let durations = (0..n_prims)
        .map(|_| get_f64(r))
        .collect::<io::Result<Vec<_>>>()?;
    let n_cells = grid.cell_count();
    let ro_offsets = read_offsets(r, n_cells)?;
    let ro_ids = (0..ro_offsets[n_cells])
        .map(|_| get_u32(r))
        .collect::<io::Result<Vec<_>>>()?;
    let rt_offsets = read_offsets(r, n_cells)?;
    let rt_entries = (0..rt_offsets[n_cells])
        .map(|_| {
            Ok(RtEntry {
                prim: get_u32(r)?,
                t_start: get_f32(r)?,
                t_end: get_f32(r)?,
            })
        })
        .collect::<io::Result<Vec<_>>>()?;
    if ro_ids
        .iter()
        .chain(rt_entries.iter().map(|e| &e.prim))
        .any(|&id| id as usize >= n_prims)
    {
        return Err(Error::format("", "primitive id out of range"));
    }
    Ok(OccupancyRelations {
        grid,
        t_res,
        d1,
        d2,
        library_hash,
        durations,
        ro_offsets,
        ro_ids,
        rt_offsets,
        rt_entries,
    })
}
