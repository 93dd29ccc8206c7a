//! End-to-end acceptance run. Every criterion is evaluated, a one-line
//! verdict is printed for each, and the test fails if any criterion fails.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the verdicts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use primswarm::collision::{
    exact_obstacle_clear, mark_agent_conflicts, mark_obstacle_conflicts, CheckWindow, PeerMotion,
    PeerTrajectory, PointBuckets, UnsafeMask,
};
use primswarm::frame::velocity_frame;
use primswarm::occupancy::{self, discretize_primitives};
use primswarm::path_library::{build_path_library, presets, ArcSpec, GeometricPath, Radius};
use primswarm::topp::parameterize_path;
use primswarm::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

type Built = (MotionLibrary, OccupancyRelations);

/// Libraries and relations built once per set of settings.
#[derive(Default)]
struct Cache {
    built: HashMap<String, Built>,
}

impl Cache {
    fn ensure(&mut self, settings: &LibrarySettings, occ: &OccupancyParams) -> String {
        let key = format!("{settings:?}{occ:?}");
        self.built.entry(key.clone()).or_insert_with(|| {
            let lib = MotionLibrary::build(settings.clone()).expect("library builds");
            let rel = occupancy::build_for_library(&lib, occ).expect("relations build");
            (lib, rel)
        });
        key
    }

    fn get(&mut self, settings: &LibrarySettings, occ: &OccupancyParams) -> &Built {
        let key = self.ensure(settings, occ);
        &self.built[&key]
    }

    fn preset_key(&mut self, name: &str) -> String {
        let settings = LibrarySettings::new(
            presets::by_name(name).unwrap(),
            DynamicLimits::new(1.0, 3.0),
        );
        self.ensure(&settings, &OccupancyParams::default())
    }

    fn preset(&mut self, name: &str) -> &Built {
        let key = self.preset_key(name);
        &self.built[&key]
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(cfg: &ScenarioConfig, cache: &mut Cache) -> MetricsReport {
    let (lib, rel) = cache.get(&cfg.library.settings().unwrap(), &cfg.occupancy);
    cfg.run(lib, rel).expect("scenario runs")
}

fn library_counts() -> Verdict {
    let want = [
        ("seven_arc", 73),
        ("small", 37),
        ("medium", 61),
        ("large", 109),
        ("dense", 181),
        ("swarm_scale", 361),
    ];
    let got: Vec<usize> = want
        .iter()
        .map(|(name, _)| {
            build_path_library(&presets::by_name(name).unwrap())
                .unwrap()
                .len()
        })
        .collect();
    Verdict {
        id: 1,
        name: "library counts",
        pass: want.iter().zip(&got).all(|((_, w), g)| w == g),
        detail: format!("N_t = {got:?}"),
    }
}

fn topp_oracle() -> Verdict {
    let line = GeometricPath {
        index: 0,
        arc: ArcSpec::new(Radius::Infinite, 5.0, 0.0),
        total_roll: 0.0,
    };
    let lim = DynamicLimits::new(1.0, 3.0);
    let duration = |sd0: f64, n: usize| {
        parameterize_path(&line, lim, sd0, 0.0, n)
            .unwrap()
            .duration()
    };
    let rest = 16.0 / 3.0;
    let moving = 31.0 / 6.0;
    let rel_rest = (duration(0.0, 1000) - rest).abs() / rest;
    let rel_moving = (duration(1.0, 1000) - moving).abs() / moving;
    let errs: Vec<f64> = [250, 500, 1000]
        .iter()
        .map(|&n| (duration(0.0, n) - rest).abs())
        .collect();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    Verdict {
        id: 2,
        name: "TOPP analytic oracle",
        pass: rel_rest < 0.01 && rel_moving < 0.01 && ratios.iter().all(|&r| r >= 2.0),
        detail: format!(
            "rest err {:.3}%, moving err {:.3}%, error ratios per doubling {:.2} {:.2}",
            rel_rest * 100.0,
            rel_moving * 100.0,
            ratios[0],
            ratios[1]
        ),
    }
}

fn feasibility_audit(cache: &mut Cache) -> Verdict {
    let (lib, _) = cache.preset("large");
    let lim = lib.limits();
    let (mut worst_v, mut worst_a) = (0.0f64, 0.0f64);
    let mut samples = 0usize;
    for id in 0..lib.len() {
        let t_end = lib.primitives()[id].duration();
        let n = (t_end / 1e-3).ceil() as usize;
        for k in 0..=n {
            let s = lib.sample(id, (k as f64 * 1e-3).min(t_end)).unwrap();
            worst_v = worst_v.max(s.velocity.norm());
            worst_a = worst_a.max(s.acceleration.abs().max());
            samples += 1;
        }
    }
    Verdict {
        id: 3,
        name: "dynamic feasibility",
        pass: worst_v <= lim.v_max * (1.0 + 1e-2) && worst_a <= lim.a_max * (1.0 + 2e-2),
        detail: format!(
            "{} primitives, {samples} samples, max |v| {worst_v:.4}, max axis |a| {worst_a:.4}",
            lib.len()
        ),
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn obstacle_conservative(cache: &mut Cache) -> Verdict {
    let (lib, rel) = cache.preset("large");
    let table = discretize_primitives(lib, rel.t_res).unwrap();
    let r_infl = rel.r_infl();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 20_000;
    let (mut hits, mut misses, mut flagged_free) = (0usize, 0usize, 0usize);
    for _ in 0..trials {
        let id = rng.random_range(0..lib.len());
        let rows = table.primitive_rows(id);
        let anchor = rows[rng.random_range(0..rows.len())].position;
        let p = anchor + random_unit(&mut rng) * rng.random_range(0.0..1.5 * r_infl);
        let collides = rows.iter().any(|r| (r.position - p).norm() < r_infl);
        let group = lib.group(lib.primitives()[id].speed_index);
        let mut mask = UnsafeMask::new(group);
        mark_obstacle_conflicts(&[p], rel, &mut mask);
        match (collides, mask.is_unsafe(id)) {
            (true, true) => hits += 1,
            (true, false) => misses += 1,
            (false, true) => flagged_free += 1,
            (false, false) => {}
        }
    }
    Verdict {
        id: 4,
        name: "obstacle check conservative",
        pass: misses == 0,
        detail: format!(
            "{trials} trials, {hits} colliding, {misses} false negatives, {flagged_free} flagged without contact"
        ),
    }
}

fn agent_conservative(cache: &mut Cache) -> Verdict {
    let (lib, rel) = cache.preset("large");
    let r_robot = OccupancyParams::default().r_robot;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 2_000;
    let (mut conflicts, mut misses) = (0usize, 0usize);
    let t0 = 10.0;
    for _ in 0..trials {
        let id = rng.random_range(0..lib.len());
        let k = lib.primitives()[id].speed_index;
        let speed = k as f64 * lib.settings().speed_step;
        let heading = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
        );
        let p = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            1.0,
        );
        let frame = velocity_frame(p, heading.normalize() * speed, heading.normalize(), 0.05);
        let self_at = |t: f64| frame.to_world(&lib.sample(id, t - t0).unwrap().position);

        // Put the peer close to a random point of the self trajectory.
        let tau = rng.random_range(0.0..lib.primitives()[id].duration());
        let meet = self_at(t0 + tau) + random_unit(&mut rng) * rng.random_range(0.0..0.8);
        let peer = match rng.random_range(0..10) {
            0 => PeerTrajectory {
                agent: 1,
                start_time: t0,
                frame: primswarm::VelocityFrame::identity_at(meet),
                motion: PeerMotion::Hover,
            },
            1 => {
                let v = random_unit(&mut rng) * rng.random_range(0.2..1.0);
                PeerTrajectory {
                    agent: 1,
                    start_time: t0 + tau - rng.random_range(0.0..0.3),
                    frame: primswarm::VelocityFrame::identity_at(meet),
                    motion: PeerMotion::Braking {
                        velocity: v,
                        decel: 3.0,
                    },
                }
            }
            _ => {
                let pid = rng.random_range(0..lib.len());
                let tau2 = rng.random_range(0.0..lib.primitives()[pid].duration());
                let dir = random_unit(&mut rng);
                let mut f = velocity_frame(Vector3::zeros(), dir, dir, 0.05);
                let local = lib.sample(pid, tau2).unwrap().position;
                f.translation = meet - f.rotation * local;
                PeerTrajectory {
                    agent: 1,
                    start_time: t0 + tau - tau2,
                    frame: f,
                    motion: PeerMotion::Primitive { id: pid },
                }
            }
        };
        let window = CheckWindow::planning(t0, lib.max_group_duration(k));
        let mut mask = UnsafeMask::new(lib.group(k));
        mark_agent_conflicts(
            std::slice::from_ref(&peer),
            &frame,
            window,
            lib,
            rel,
            &mut mask,
        );

        let steps = ((window.until - window.from) / 1e-3).round() as usize;
        let conflict = (0..=steps).any(|j| {
            let t = window.from + j as f64 * 1e-3;
            let slack = t < window.from + rel.t_res || t > window.until - rel.t_res;
            !slack && (self_at(t) - peer.position_at(lib, t)).norm() < 2.0 * r_robot
        });
        if conflict {
            conflicts += 1;
            if !mask.is_unsafe(id) {
                misses += 1;
            }
        }
    }
    Verdict {
        id: 5,
        name: "agent check conservative",
        pass: misses == 0 && conflicts > 0,
        detail: format!("{trials} pairs, {conflicts} in conflict, {misses} false negatives"),
    }
}

fn check_timing(cache: &mut Cache) -> Verdict {
    // Four cylinders of surface points inside the smallest library's box.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cylinders = [
        (1.5, 0.5, 0.3),
        (2.5, -0.4, 0.4),
        (3.0, 0.5, 0.2),
        (0.8, -0.5, 0.25),
    ];
    let cloud: Vec<Vector3<f64>> = (0..2000)
        .map(|_| {
            let (cx, cy, r) = cylinders[rng.random_range(0..cylinders.len())];
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Vector3::new(
                cx + r * a.cos(),
                cy + r * a.sin(),
                rng.random_range(-0.95..0.95),
            )
        })
        .collect();
    let keys = [cache.preset_key("small"), cache.preset_key("swarm_scale")];
    let libs: Vec<&Built> = keys.iter().map(|k| &cache.built[k]).collect();
    let inside = libs.iter().all(|(_, rel)| {
        let (lo, hi) = (rel.grid.min, rel.grid.max());
        cloud
            .iter()
            .all(|q| (0..3).all(|k| q[k] >= lo[k] && q[k] < hi[k]))
    });

    let rounds = 200;
    let reps = 20;
    let mut grid_ms = [Vec::with_capacity(rounds), Vec::with_capacity(rounds)];
    for _ in 0..rounds {
        for (i, (lib, rel)) in libs.iter().enumerate() {
            let group = lib.group(lib.speed_count() / 2);
            let t = Instant::now();
            for _ in 0..reps {
                let mut mask = UnsafeMask::new(group.clone());
                std::hint::black_box(mark_obstacle_conflicts(&cloud, rel, &mut mask));
            }
            grid_ms[i].push(t.elapsed().as_secs_f64() * 1e3 / reps as f64);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let small = median(&mut grid_ms[0]);
    let large = median(&mut grid_ms[1]);

    // Per-primitive distance checking for contrast.
    let mut naive = [0.0; 2];
    for (i, (lib, rel)) in libs.iter().enumerate() {
        let group = lib.group(lib.speed_count() / 2);
        let buckets = PointBuckets::new(&cloud, rel.r_infl());
        let t = Instant::now();
        for _ in 0..3 {
            for id in group.clone() {
                std::hint::black_box(exact_obstacle_clear(
                    lib,
                    id,
                    &buckets,
                    rel.r_infl(),
                    rel.t_res,
                ));
            }
        }
        naive[i] = t.elapsed().as_secs_f64() * 1e3 / 3.0;
    }
    let ratio = large / small;
    Verdict {
        id: 6,
        name: "primitive count independence",
        pass: inside && ratio < 2.0,
        detail: format!(
            "2000 points, N_t 37 {small:.3} ms, N_t 361 {large:.3} ms, ratio {ratio:.2} \
             (per-primitive checker ratio {:.1}); absolute target < 1 ms is {}",
            naive[1] / naive[0],
            if large < 1.0 {
                "met"
            } else {
                "missed (advisory)"
            }
        ),
    }
}

fn circle_swap(cache: &mut Cache) -> Verdict {
    let mut cfg = scenario("circle8.toml");
    let (mut reached, mut agents, mut collisions) = (0, 0, 0);
    let (mut times, mut dists) = (Vec::new(), Vec::new());
    let mut min_gap = f64::INFINITY;
    for seed in 0..10 {
        cfg.sim.seed = seed;
        let r = run(&cfg, cache);
        reached += r.aggregate.reached;
        agents += r.aggregate.agents;
        collisions += r.aggregate.obstacle_collisions + r.aggregate.agent_collisions;
        times.extend(r.agents.iter().filter_map(|a| a.flight_time));
        dists.extend(
            r.agents
                .iter()
                .filter(|a| a.reached)
                .map(|a| a.flight_distance),
        );
        min_gap = min_gap.min(r.aggregate.min_agent_distance.unwrap_or(f64::INFINITY));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (ft, fd) = (mean(&times), mean(&dists));
    Verdict {
        id: 7,
        name: "circle swap",
        pass: reached == agents && collisions == 0 && ft <= 27.0 && fd <= 25.6 && min_gap >= 0.29,
        detail: format!(
            "{reached}/{agents} reached, {collisions} collisions, mean flight time {ft:.3} s, \
             mean distance {fd:.3} m, min gap {min_gap:.3} m"
        ),
    }
}

fn cluttered(cache: &mut Cache) -> Verdict {
    let mut cfg = scenario("clutter.toml");
    let (mut ok, mut collisions) = (0, 0);
    let mut min_clear = f64::INFINITY;
    let seeds = 20;
    for seed in 0..seeds {
        cfg.sim.seed = seed;
        let r = run(&cfg, cache);
        ok += r.aggregate.reached;
        collisions += r.aggregate.obstacle_collisions + r.aggregate.agent_collisions;
        min_clear = min_clear.min(r.aggregate.min_obstacle_clearance.unwrap_or(f64::INFINITY));
    }
    let rate = ok as f64 / seeds as f64;
    Verdict {
        id: 8,
        name: "cluttered single agent",
        pass: rate >= 0.95 && collisions == 0,
        detail: format!(
            "success {:.0}% ({ok}/{seeds}), {collisions} collision events, min surface clearance {min_clear:.3} m",
            rate * 100.0
        ),
    }
}

fn swarm_scale(cache: &mut Cache) -> Verdict {
    let cfg = scenario("swarm50.toml");
    let r = run(&cfg, cache);
    let a = &r.aggregate;
    let collisions = a.obstacle_collisions + a.agent_collisions;
    let realtime = a.wall_time <= a.sim_time;
    Verdict {
        id: 9,
        name: "50-agent swap",
        pass: collisions == 0 && a.reached == a.agents && a.compute_median_ms < 1.0 && realtime,
        detail: format!(
            "{}/{} reached, {collisions} collisions, median compute {:.3} ms, wall {:.1} s for {:.1} s simulated, min gap {:.3} m",
            a.reached,
            a.agents,
            a.compute_median_ms,
            a.wall_time,
            a.sim_time,
            a.min_agent_distance.unwrap_or(f64::NAN)
        ),
    }
}

fn determinism(cache: &mut Cache) -> Verdict {
    let cfg = scenario("crossing_det.toml");
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<PathBuf> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("run{i}.csv"));
            run(&cfg, cache).write_csv(&path).unwrap();
            path
        })
        .collect();
    let a = std::fs::read(&files[0]).unwrap();
    let b = std::fs::read(&files[1]).unwrap();
    Verdict {
        id: 10,
        name: "determinism",
        pass: a == b && !a.is_empty(),
        detail: format!(
            "two runs, {} and {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut cache = Cache::default();
    let mut verdicts = Vec::new();
    let mut timed = |f: &mut dyn FnMut(&mut Cache) -> Verdict, cache: &mut Cache| {
        let t = Instant::now();
        let v = f(cache);
        println!(
            "criterion {:>2} {:<30} {}  {} [{:.1} s]",
            v.id,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        verdicts.push(v);
    };
    timed(&mut |_| library_counts(), &mut cache);
    timed(&mut |_| topp_oracle(), &mut cache);
    timed(&mut feasibility_audit, &mut cache);
    timed(&mut obstacle_conservative, &mut cache);
    timed(&mut agent_conservative, &mut cache);
    timed(&mut check_timing, &mut cache);
    timed(&mut circle_swap, &mut cache);
    timed(&mut cluttered, &mut cache);
    timed(&mut swarm_scale, &mut cache);
    timed(&mut determinism, &mut cache);
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
