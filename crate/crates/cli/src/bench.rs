use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use primswarm::collision::{mark_agent_conflicts, mark_obstacle_conflicts, CheckWindow};
use primswarm::frame::velocity_frame;
use primswarm::metrics::percentile;
use primswarm::occupancy::build_for_library;
use primswarm::path_library::presets;
use primswarm::{
    DynamicLimits, LibrarySettings, MotionLibrary, OccupancyParams, OccupancyRelations, PeerMotion,
    PeerTrajectory, UnsafeMask, VelocityFrame,
};

use crate::{ensure_parent, CmdResult, Failure};

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Obstacle check over library size, cloud size and grid resolution.
    Obstacle,
    /// Agent check over peer count.
    Peers,
}

#[derive(clap::Args)]
pub struct Args {
    suite: Suite,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "small,medium,large,dense"
    )]
    presets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000,4000")]
    points: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2")]
    resolutions: Vec<f64>,
    /// Largest peer count of the agent sweep.
    #[arg(long, default_value_t = 16)]
    max_peers: usize,
    /// Path segments per primitive; the checks do not depend on it.
    #[arg(long, default_value_t = 300)]
    segments: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn build(preset: &str, segments: usize) -> Result<MotionLibrary, Failure> {
    let paths = presets::by_name(preset)
        .ok_or_else(|| Failure::Config(format!("unknown preset '{preset}'")))?;
    let mut s = LibrarySettings::new(paths, DynamicLimits::new(1.0, 3.0));
    s.segments = segments;
    Ok(MotionLibrary::build(s)?)
}

/// Median and 90th percentile in milliseconds.
fn time_it(reps: usize, mut f: impl FnMut()) -> (f64, f64) {
    let ms: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    (percentile(&ms, 50.0), percentile(&ms, 90.0))
}

fn cloud_in_box(rel: &OccupancyRelations, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let (lo, hi) = (rel.grid.min, rel.grid.max());
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            )
        })
        .collect()
}

pub fn run(args: Args) -> CmdResult {
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => {
            ensure_parent(p)?;
            Box::new(
                std::fs::File::create(p)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?,
            )
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    match args.suite {
        Suite::Obstacle => {
            w.write_record([
                "preset",
                "paths",
                "group_size",
                "s_res",
                "points",
                "occupied_cells",
                "median_ms",
                "p90_ms",
            ])
            .map_err(Failure::runtime)?;
            for preset in &args.presets {
                let lib = build(preset, args.segments)?;
                let group = lib.group(lib.speed_count() - 1);
                for &s_res in &args.resolutions {
                    let params = OccupancyParams {
                        s_res,
                        ..Default::default()
                    };
                    let rel = build_for_library(&lib, &params)?;
                    for &n in &args.points {
                        let cloud = cloud_in_box(&rel, n, &mut rng);
                        let cells: HashSet<usize> =
                            cloud.iter().filter_map(|p| rel.grid.cell_of(p)).collect();
                        let occupied = cells.len() as f64 / rel.grid.cell_count() as f64;
                        let (p50, p90) = time_it(args.reps, || {
                            let mut mask = UnsafeMask::new(group.clone());
                            std::hint::black_box(mark_obstacle_conflicts(&cloud, &rel, &mut mask));
                        });
                        w.write_record([
                            preset.clone(),
                            lib.paths().len().to_string(),
                            group.len().to_string(),
                            s_res.to_string(),
                            n.to_string(),
                            format!("{occupied:.6}"),
                            format!("{p50:.6}"),
                            format!("{p90:.6}"),
                        ])
                        .map_err(Failure::runtime)?;
                    }
                }
            }
        }
        Suite::Peers => {
            w.write_record(["preset", "group_size", "peers", "median_ms", "p90_ms"])
                .map_err(Failure::runtime)?;
            for preset in &args.presets {
                let lib = build(preset, args.segments)?;
                let rel = build_for_library(&lib, &OccupancyParams::default())?;
                let k = lib.speed_count() - 1;
                let group = lib.group(k);
                let window = CheckWindow::planning(0.0, lib.max_group_duration(k));
                let me = VelocityFrame::identity_at(Vector3::zeros());
                for n in 0..=args.max_peers {
                    let peers: Vec<PeerTrajectory> = (0..n)
                        .map(|i| {
                            let (r, a, yaw): (f64, f64, f64) = (
                                rng.random_range(1.0..4.0),
                                rng.random_range(-3.2..3.2),
                                rng.random_range(-3.2..3.2),
                            );
                            let at =
                                Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(-0.5..0.5));
                            PeerTrajectory {
                                agent: i + 1,
                                start_time: rng.random_range(-0.5..0.0),
                                frame: velocity_frame(
                                    at,
                                    Vector3::zeros(),
                                    Vector3::new(yaw.cos(), yaw.sin(), 0.0),
                                    0.05,
                                ),
                                motion: PeerMotion::Primitive {
                                    id: rng.random_range(0..lib.len()),
                                },
                            }
                        })
                        .collect();
                    let (p50, p90) = time_it(args.reps, || {
                        let mut mask = UnsafeMask::new(group.clone());
                        std::hint::black_box(mark_agent_conflicts(
                            &peers, &me, window, &lib, &rel, &mut mask,
                        ));
                    });
                    w.write_record([
                        preset.clone(),
                        group.len().to_string(),
                        n.to_string(),
                        format!("{p50:.6}"),
                        format!("{p90:.6}"),
                    ])
                    .map_err(Failure::runtime)?;
                }
            }
        }
    }
    w.flush().map_err(Failure::runtime)?;
    Ok(())
}
