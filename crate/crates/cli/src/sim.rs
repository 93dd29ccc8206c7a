use std::path::PathBuf;

use primswarm::ScenarioConfig;

use crate::{ensure_parent, CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Overrides `[output] csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides `[output] json`.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Overrides `[sim] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run agents one after another for reproducible output.
    #[arg(long)]
    deterministic: bool,
}

pub fn run(args: Args) -> CmdResult {
    let mut cfg = ScenarioConfig::load(&args.scenario)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.scenario.display())))?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    cfg.sim.deterministic |= args.deterministic;
    let csv = args.csv.or(cfg.output.csv.clone());
    let json = args.json.or(cfg.output.json.clone());

    let lib = cfg.library()?;
    let rel = cfg.relations(&lib)?;
    log::info!("library {} with {} primitives", lib.hash_hex(), lib.len());
    let report = cfg.run(&lib, &rel)?;
    let a = &report.aggregate;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!(
        "reached {}/{} (success {:.1}%)",
        a.reached,
        a.agents,
        100.0 * a.success_rate
    );
    println!(
        "mean flight time {} s, mean flight distance {} m",
        opt(a.mean_flight_time),
        opt(a.mean_flight_distance)
    );
    println!(
        "collisions {} with obstacles, {} between agents; min clearance {} m, min agent distance {} m",
        a.obstacle_collisions,
        a.agent_collisions,
        opt(a.min_obstacle_clearance),
        opt(a.min_agent_distance)
    );
    println!("replans {}, emergencies {}", a.replans, a.emergencies);
    println!(
        "compute median {:.3} ms, p99 {:.3} ms",
        a.compute_median_ms, a.compute_p99_ms
    );
    println!("simulated {:.2} s in {:.2} s wall", a.sim_time, a.wall_time);
    if a.timed_out {
        println!("TIMEOUT: not every agent reached its goal");
    }
    if let Some(p) = &csv {
        ensure_parent(p)?;
        report.write_csv(p)?;
        println!("wrote {}", p.display());
    }
    if let Some(p) = &json {
        ensure_parent(p)?;
        report.write_json(p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
