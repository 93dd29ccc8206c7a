use std::path::PathBuf;
use std::time::Instant;

use primswarm::occupancy::{build_for_library, save_relations};
use primswarm::{MotionLibrary, ScenarioConfig};

use crate::{ensure_parent, CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Scenario or library TOML file.
    config: PathBuf,
    /// Output directory; defaults to the `[files]` paths of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base file name inside `--out`; defaults to the config file stem.
    #[arg(long)]
    name: Option<String>,
}

pub fn run(args: Args) -> CmdResult {
    let cfg = ScenarioConfig::load(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let settings = cfg.library.settings()?;
    let (lib_path, rel_path) = match &args.out {
        Some(dir) => {
            let stem = args
                .name
                .clone()
                .or_else(|| {
                    args.config
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                })
                .unwrap_or_else(|| "library".into());
            (
                dir.join(format!("{stem}.pswlib")),
                dir.join(format!("{stem}.pswocc")),
            )
        }
        None => match (&cfg.files.library, &cfg.files.relations) {
            (Some(l), Some(r)) => (l.clone(), r.clone()),
            _ => {
                return Err(Failure::config(
                    "the config has no [files] library and relations paths; pass --out",
                ))
            }
        },
    };

    let clock = Instant::now();
    let lib = MotionLibrary::build(settings)?;
    let lib_time = clock.elapsed().as_secs_f64();
    println!("{} paths", lib.paths().len());
    println!("{} start speeds", lib.speed_count());
    println!(
        "{} primitives ({} dropped as infeasible)",
        lib.len(),
        lib.dropped().len()
    );
    for (path, speed) in lib.dropped() {
        log::info!("dropped path {path} at speed index {speed}");
    }
    println!("longest primitive {:.3} s", lib.max_duration());
    println!("library built in {lib_time:.2} s");

    let clock = Instant::now();
    let rel = build_for_library(&lib, &cfg.occupancy)?;
    let g = &rel.grid;
    println!(
        "grid {} x {} x {} cells at {} m, d1 {:.4} m, d2 {:.4} m",
        g.dims[0], g.dims[1], g.dims[2], g.resolution, rel.d1, rel.d2
    );
    println!(
        "{} spatial and {} spatio-temporal entries",
        rel.ro_len(),
        rel.rt_len()
    );
    println!("relations built in {:.2} s", clock.elapsed().as_secs_f64());

    ensure_parent(&lib_path)?;
    ensure_parent(&rel_path)?;
    let lib_bytes = lib.save(&lib_path)?;
    let rel_bytes = save_relations(&rel, &rel_path)?;
    println!("wrote {} ({lib_bytes} bytes)", lib_path.display());
    println!("wrote {} ({rel_bytes} bytes)", rel_path.display());
    Ok(())
}
