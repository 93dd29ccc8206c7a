use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primswarm::collision::mark_obstacle_conflicts;
use primswarm::frame::velocity_frame;
use primswarm::occupancy::load_relations;
use primswarm::replanner::{
    prepare_cloud, replan, score_primitive, select_start_speed, PlanRequest,
};
use primswarm::{KinematicState, MotionLibrary, PlanOutcome, PlannerParams, UnsafeMask};

use crate::{ensure_parent, CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    relations: PathBuf,
    /// World position as `x,y,z`.
    #[arg(long, default_value = "0,0,0", value_parser = parse_vec3, allow_hyphen_values = true)]
    position: Vector3<f64>,
    #[arg(long, default_value = "0,0,0", value_parser = parse_vec3, allow_hyphen_values = true)]
    velocity: Vector3<f64>,
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    goal: Vector3<f64>,
    /// Text file with one `x y z` point per line; `#` starts a comment.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Point budget per check.
    #[arg(long, default_value_t = 2000)]
    n_pc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the end-point cost and obstacle flag of every primitive in the
    /// start-speed group as CSV.
    #[arg(long)]
    dump_costs: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers, got '{s}'")),
    }
}

/// Reads a whitespace or comma separated point file.
pub fn read_cloud(path: &Path) -> Result<Vec<Vector3<f64>>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match nums.as_deref() {
            Ok([x, y, z]) if x.is_finite() && y.is_finite() && z.is_finite() => {
                out.push(Vector3::new(*x, *y, *z))
            }
            _ => {
                return Err(Failure::Config(format!(
                    "{}:{}: expected three numbers",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn run(args: Args) -> CmdResult {
    let lib = MotionLibrary::load(&args.library)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.library.display())))?;
    let rel = load_relations(&args.relations, &lib)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.relations.display())))?;
    let cloud = match &args.cloud {
        Some(p) => read_cloud(p)?,
        None => Vec::new(),
    };
    let params = PlannerParams {
        n_pc: args.n_pc,
        ..Default::default()
    };
    params.validate()?;
    let state = KinematicState {
        velocity: args.velocity,
        ..KinematicState::at_rest(args.position)
    };
    let req = PlanRequest {
        state,
        goal: args.goal,
        t_now: 0.0,
        peers: &[],
        heading: None,
    };
    let res = replan(
        &req,
        &cloud,
        &lib,
        &rel,
        &params,
        &mut ChaCha8Rng::seed_from_u64(args.seed),
    )?;
    let d = res.diagnostics;
    match res.outcome {
        PlanOutcome::Planned(plan) => {
            let prim = &lib.primitives()[plan.primitive];
            let arc = lib.path_of(prim).arc;
            let end = plan.frame.to_world(&prim.end_position);
            println!(
                "PLANNED primitive {} (path {}, start speed {:.2} m/s, radius {} m, roll {:.0} deg)",
                plan.primitive,
                prim.path_index,
                prim.start_speed(),
                arc.radius.meters(),
                lib.path_of(prim).total_roll.to_degrees()
            );
            println!("cost {:.6}", plan.cost);
            println!(
                "end [{:.4}, {:.4}, {:.4}] after {:.3} s",
                end.x,
                end.y,
                end.z,
                prim.duration()
            );
        }
        PlanOutcome::EmergencyStop => println!("EMERGENCY_STOP"),
        PlanOutcome::GoalReached => println!("GOAL_REACHED"),
    }
    println!(
        "group {}, safe {}, obstacle flags {}, agent flags {}, exact rescues {}",
        d.group_size, d.safe_count, d.obstacle_flags, d.agent_flags, d.exact_rescues
    );
    println!("cloud points used {} of {}", d.cloud_points, cloud.len());
    println!("compute {:.3} ms", d.compute_time * 1e3);

    if let Some(out) = &args.dump_costs {
        dump_costs(out, &lib, &rel, &params, &req, &cloud, args.seed)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn dump_costs(
    out: &Path,
    lib: &MotionLibrary,
    rel: &primswarm::OccupancyRelations,
    params: &PlannerParams,
    req: &PlanRequest<'_>,
    cloud: &[Vector3<f64>],
    seed: u64,
) -> CmdResult {
    let p = req.state.position;
    let to_goal = req.goal - p;
    let h = Vector3::new(to_goal.x, to_goal.y, 0.0);
    let fallback = if h.norm() > 1e-9 {
        h.normalize()
    } else {
        Vector3::x()
    };
    let frame = velocity_frame(p, req.state.velocity, fallback, params.eps_v);
    let s = lib.settings();
    let group = lib.group(select_start_speed(
        req.state.velocity.norm(),
        s.speed_step,
        s.limits.v_max,
    ));
    let mut mask = UnsafeMask::new(group.clone());
    let local = prepare_cloud(
        cloud,
        &frame,
        rel,
        params.n_pc,
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    mark_obstacle_conflicts(&local, rel, &mut mask);

    ensure_parent(out)?;
    let mut w = csv::Writer::from_path(out).map_err(Failure::runtime)?;
    w.write_record([
        "id",
        "path",
        "speed_index",
        "radius_m",
        "roll_deg",
        "end_x",
        "end_y",
        "end_z",
        "cost",
        "obstacle_flag",
    ])
    .map_err(Failure::runtime)?;
    for id in group {
        let prim = &lib.primitives()[id];
        let path = lib.path_of(prim);
        let end = frame.to_world(&prim.end_position);
        let cost = score_primitive(&end, &p, &req.goal, &params.weights);
        w.write_record([
            id.to_string(),
            prim.path_index.to_string(),
            prim.speed_index.to_string(),
            path.arc.radius.meters().to_string(),
            format!("{:.3}", path.total_roll.to_degrees()),
            end.x.to_string(),
            end.y.to_string(),
            end.z.to_string(),
            cost.to_string(),
            (mask.is_unsafe(id) as u8).to_string(),
        ])
        .map_err(Failure::runtime)?;
    }
    w.flush().map_err(Failure::runtime)?;
    Ok(())
}
