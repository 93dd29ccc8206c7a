use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primswarm::occupancy::build_for_library;
use primswarm::path_library::presets;
use primswarm::sim::agent::{step_agent, AgentContext, AgentRuntime, Motion, Phase};
use primswarm::sim::bus::TrajectoryBus;
use primswarm::sim::map::{generate_map, MapSpec, Obstacle};
use primswarm::sim::scenario::{circle_agents, run_scenario};
use primswarm::sim::sensor::{sense_point_cloud, SensorParams};
use primswarm::*;

fn fixture() -> &'static (MotionLibrary, OccupancyRelations) {
    static CELL: OnceLock<(MotionLibrary, OccupancyRelations)> = OnceLock::new();
    CELL.get_or_init(|| {
        let lib = MotionLibrary::build(LibrarySettings::new(
            presets::dense(),
            DynamicLimits::new(1.0, 3.0),
        ))
        .unwrap();
        let rel = build_for_library(&lib, &OccupancyParams::default()).unwrap();
        (lib, rel)
    })
}

fn run(agents: &[AgentSpec], map: &ObstacleMap, sim: SimParams) -> MetricsReport {
    let (lib, rel) = fixture();
    let sc = Scenario {
        library: lib,
        relations: rel,
        map,
        agents,
        planner: &PlannerParams::default(),
        sim: &sim,
        r_robot: 0.15,
    };
    run_scenario(&sc).unwrap()
}

#[test]
fn single_agent_flies_straight() {
    let (lib, rel) = fixture();
    let map = ObstacleMap::empty();
    let bus = TrajectoryBus::new(1, 0.0);
    let planner = PlannerParams::default();
    let sensor = SensorParams::default();
    let ctx = AgentContext {
        library: lib,
        relations: rel,
        map: &map,
        bus: &bus,
        planner: &planner,
        sensor: &sensor,
        sense_period: 0.1,
        tracking_lag: 0.0,
    };
    let start = Vector3::new(0.0, 0.0, 1.0);
    let goal = Vector3::new(18.0, 0.0, 1.0);
    let mut agent = AgentRuntime::new(0, start, goal, 1, 5, 0.0, 0.0);
    let dt = 0.02;
    let (mut dist, mut speed_integral) = (0.0, 0.0);
    let mut last_gap = (goal - start).norm();
    let mut k = 0;
    while agent.phase != Phase::Done && k < 5000 {
        let v0 = agent.state.velocity.norm();
        let m = step_agent(&mut agent, &ctx, k as f64 * dt, dt);
        // Fine resampling of the executed motion.
        for j in 0..20 {
            let a = m.position_at(lib, m.t0 + dt * j as f64 / 20.0);
            let b = m.position_at(lib, m.t0 + dt * (j + 1) as f64 / 20.0);
            dist += (b - a).norm();
        }
        speed_integral += 0.5 * (v0 + agent.state.velocity.norm()) * dt;
        let gap = (goal - agent.state.position).norm();
        // The arrival brake may coast through the goal ball.
        if gap > planner.r_goal {
            assert!(gap <= last_gap + 1e-9, "goal distance grew at t = {}", m.t1);
        }
        assert!(agent.state.position.y.abs() < 1e-9 && (agent.state.position.z - 1.0).abs() < 1e-9);
        last_gap = gap;
        k += 1;
    }
    assert_eq!(agent.phase, Phase::Done);
    let t = agent.stats.arrival.unwrap() - agent.stats.departure.unwrap();
    assert!(t > 18.0 && t < 19.0, "flight time {t}");
    assert!(last_gap <= planner.r_goal, "{last_gap}");
    assert!(
        (dist - speed_integral).abs() / dist < 0.005,
        "{dist} vs {speed_integral}"
    );

    let report = run(
        &[AgentSpec {
            start: start.into(),
            goal: goal.into(),
        }],
        &map,
        SimParams::default(),
    );
    let a = &report.aggregate;
    assert_eq!(a.reached, 1);
    let ft = a.mean_flight_time.unwrap();
    assert!(ft > 18.0 && ft < 19.0, "{ft}");
    let fd = a.mean_flight_distance.unwrap();
    assert!(fd > 17.7 && fd < 18.1, "{fd}");
}

#[test]
fn head_on_pair_keeps_apart() {
    let agents = [
        AgentSpec {
            start: [-6.0, 0.0, 1.0],
            goal: [6.0, 0.0, 1.0],
        },
        AgentSpec {
            start: [6.0, 0.0, 1.0],
            goal: [-6.0, 0.0, 1.0],
        },
    ];
    for seed in 0..4 {
        let report = run(
            &agents,
            &ObstacleMap::empty(),
            SimParams {
                seed,
                ..Default::default()
            },
        );
        let a = &report.aggregate;
        assert_eq!(a.reached, 2, "seed {seed}");
        assert_eq!(a.agent_collisions, 0);
        assert!(
            a.min_agent_distance.unwrap() >= 2.0 * 0.15 - 0.01,
            "seed {seed}: {:?}",
            a.min_agent_distance
        );
    }
}

#[test]
fn circle_swap_tolerates_bus_latency() {
    let agents = circle_agents(8, 12.0, [0.0, 0.0, 1.0]);
    for latency in [0.0, 0.05, 0.1] {
        for seed in 0..2 {
            let report = run(
                &agents,
                &ObstacleMap::empty(),
                SimParams {
                    seed,
                    latency,
                    ..Default::default()
                },
            );
            let a = &report.aggregate;
            assert_eq!(a.reached, 8, "latency {latency} seed {seed}");
            assert!(report.collision_free(), "latency {latency} seed {seed}");
        }
    }
}

#[test]
fn deterministic_mode_repeats_with_latency() {
    let agents = circle_agents(6, 8.0, [0.0, 0.0, 1.0]);
    let sim = SimParams {
        seed: 4,
        latency: 0.05,
        deterministic: true,
        ..Default::default()
    };
    let mut a = run(&agents, &ObstacleMap::empty(), sim);
    let mut b = run(&agents, &ObstacleMap::empty(), sim);
    a.strip_timing();
    b.strip_timing();
    assert_eq!(a, b);
    assert_eq!(a.aggregate.reached, 6);
}

#[test]
fn timeout_is_flagged() {
    let agents = circle_agents(2, 10.0, [0.0, 0.0, 1.0]);
    let report = run(
        &agents,
        &ObstacleMap::empty(),
        SimParams {
            timeout: 2.0,
            ..Default::default()
        },
    );
    assert!(report.aggregate.timed_out);
    assert_eq!(report.aggregate.reached, 0);
    assert_eq!(report.aggregate.success_rate, 0.0);
}

#[test]
fn random_maps_match_the_spec() {
    let spec = MapSpec {
        count: 200,
        ..Default::default()
    };
    let mut radii = Vec::new();
    for seed in 0..10 {
        let m = generate_map(seed, &spec, &[]).unwrap();
        assert_eq!(m.obstacles.len(), 200);
        for o in &m.obstacles {
            let Obstacle::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } = *o
            else {
                panic!("box in a cylinder map")
            };
            assert!(center[0].abs() <= 13.0 && center[1].abs() <= 10.0);
            assert!(z_min >= 0.0 && z_max <= 3.0 && z_max > z_min);
            radii.push(radius);
        }
    }
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    assert!((mean - 0.6).abs() < 0.05, "{mean}");
    assert_eq!(
        generate_map(3, &spec, &[]).unwrap(),
        generate_map(3, &spec, &[]).unwrap()
    );
    assert!(generate_map(3, &MapSpec::default(), &[])
        .unwrap()
        .obstacles
        .is_empty());
}

#[test]
fn sensing_a_nearby_cylinder() {
    let map = ObstacleMap {
        obstacles: vec![Obstacle::Cylinder {
            center: [2.0, 0.0],
            radius: 0.4,
            z_min: 0.0,
            z_max: 1.5,
        }],
        ..ObstacleMap::empty()
    };
    let at = Vector3::new(0.0, 0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts = sense_point_cloud(&map, &at, &SensorParams::default(), &mut rng);
    assert!(!pts.is_empty());
    assert!(pts
        .iter()
        .all(|p| map.distance(p).abs() < 1e-9 && (p - at).norm() <= 5.0));
    // The flat top is sampled too.
    assert!(pts
        .iter()
        .any(|p| (p.z - 1.5).abs() < 1e-12
            && (p.xy() - nalgebra::Vector2::new(2.0, 0.0)).norm() < 0.3));
}

#[test]
fn bus_range_and_latency() {
    let (lib, _) = fixture();
    let l = lib.horizon();
    let hover = |agent: usize, x: f64| PeerTrajectory {
        agent,
        start_time: 0.0,
        frame: VelocityFrame::identity_at(Vector3::new(x, 0.0, 0.0)),
        motion: PeerMotion::Hover,
    };
    let bus = TrajectoryBus::new(3, 0.05);
    bus.publish(hover(1, 3.0 * l), 0.0);
    bus.publish(hover(2, 1.5 * l), 0.0);
    let peers = bus.collect_peers(0, &Vector3::zeros(), l, 1.0, lib);
    assert_eq!(peers.iter().map(|p| p.agent).collect::<Vec<_>>(), vec![2]);
    bus.publish(hover(2, 0.5 * l), 0.99);
    let peers = bus.collect_peers(0, &Vector3::zeros(), l, 1.0, lib);
    assert_eq!(peers[0].frame.translation.x, 1.5 * l);
}

#[test]
fn executed_plan_starts_and_ends_where_expected() {
    let (lib, _) = fixture();
    let id = lib.group(0).start;
    let frame = VelocityFrame::identity_at(Vector3::new(1.0, 2.0, 3.0));
    let plan = AgentPlan {
        frame,
        primitive: id,
        start_time: 5.0,
        cost: 0.0,
    };
    let m = Motion::Plan(plan);
    assert_eq!(m.state_at(lib, 5.0).position, frame.translation);
    let end = plan.end_time(lib);
    for t in [end, end + 3.0] {
        let s = m.state_at(lib, t);
        assert!((s.position - frame.to_world(&lib.primitives()[id].end_position)).norm() < 1e-9);
        assert!(s.velocity.norm() < 1e-9);
    }
}

#[test]
fn bundled_scenarios_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ScenarioConfig::load(&path).unwrap();
            assert!(!cfg.world().unwrap().0.is_empty(), "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 5);
}
