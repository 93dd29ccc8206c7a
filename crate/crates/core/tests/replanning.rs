use std::sync::OnceLock;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primswarm::collision::mark_obstacle_conflicts;
use primswarm::frame::velocity_frame;
use primswarm::occupancy::build_for_library;
use primswarm::path_library::presets;
use primswarm::replanner::{
    prepare_cloud, replan, score_primitive, select_start_speed, should_replan, PlanRequest,
    ReplanReason,
};
use primswarm::*;

fn fixture() -> &'static (MotionLibrary, OccupancyRelations) {
    static CELL: OnceLock<(MotionLibrary, OccupancyRelations)> = OnceLock::new();
    CELL.get_or_init(|| {
        let lib = MotionLibrary::build(LibrarySettings::new(
            presets::large(),
            DynamicLimits::new(1.0, 3.0),
        ))
        .unwrap();
        let rel = build_for_library(&lib, &OccupancyParams::default()).unwrap();
        (lib, rel)
    })
}

fn moving(speed: f64) -> KinematicState {
    KinematicState {
        velocity: Vector3::new(speed, 0.0, 0.0),
        ..KinematicState::at_rest(Vector3::zeros())
    }
}

fn request(state: KinematicState, goal: Vector3<f64>) -> PlanRequest<'static> {
    PlanRequest {
        state,
        goal,
        t_now: 0.0,
        peers: &[],
        heading: None,
    }
}

fn planned(outcome: PlanOutcome) -> AgentPlan {
    match outcome {
        PlanOutcome::Planned(p) => p,
        other => panic!("expected a plan, got {other:?}"),
    }
}

/// Wall at x = 2 covering y <= 0 at every height.
fn right_wall() -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    for i in 0..=60 {
        for k in 0..=120 {
            pts.push(Vector3::new(
                2.0,
                -3.0 + 0.05 * i as f64,
                -3.0 + 0.05 * k as f64,
            ));
        }
    }
    pts
}

#[test]
fn straight_path_wins_in_empty_space() {
    let (lib, rel) = fixture();
    let goal = Vector3::new(20.0, 0.0, 0.0);
    for speed in [0.0, 0.5, 1.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let req = request(moving(speed), goal);
        let res = replan(
            &req,
            std::iter::empty(),
            lib,
            rel,
            &PlannerParams::default(),
            &mut rng,
        )
        .unwrap();
        let plan = planned(res.outcome);
        let prim = &lib.primitives()[plan.primitive];
        assert!(lib.path_of(prim).arc.radius.is_straight());
        // Exhaustive cost scan over the group.
        let best = lib.primitives()[lib.group(prim.speed_index)]
            .iter()
            .map(|q| {
                score_primitive(
                    &plan.frame.to_world(&q.end_position),
                    &Vector3::zeros(),
                    &goal,
                    &W,
                )
            })
            .fold(f64::INFINITY, f64::min);
        assert!((plan.cost - best).abs() < 1e-12);
        assert_eq!(res.diagnostics.safe_count, res.diagnostics.group_size);
    }
}

const W: CostWeights = CostWeights {
    lambda_g: 1.0,
    lambda_b: 1.0,
    c_b: 1e4,
    bounds_min: [f64::NEG_INFINITY; 3],
    bounds_max: [f64::INFINITY; 3],
};

#[test]
fn wall_forces_a_left_curve() {
    let (lib, rel) = fixture();
    let wall = right_wall();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let req = request(moving(1.0), Vector3::new(20.0, 0.0, 0.0));
    let res = replan(&req, &wall, lib, rel, &PlannerParams::default(), &mut rng).unwrap();
    let plan = planned(res.outcome);
    let prim = &lib.primitives()[plan.primitive];
    assert!(plan.frame.to_world(&prim.end_position).y > 0.3);
    // Brute-force clearance along the chosen primitive.
    let r_infl = OccupancyParams::default().r_infl;
    let path = lib.path_of(prim);
    let mut t = 0.0;
    while t <= prim.duration() {
        let q = plan.frame.to_world(&prim.sample(path, t).position);
        let d = wall
            .iter()
            .map(|w| (w - q).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(d > r_infl, "{d} at t = {t}");
        t += 0.005;
    }
}

#[test]
fn point_at_the_start_stops_the_robot() {
    let (lib, rel) = fixture();
    let cloud = [Vector3::new(0.05, 0.0, 0.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for speed in [0.0, 1.0] {
        let req = request(moving(speed), Vector3::new(20.0, 0.0, 0.0));
        let res = replan(&req, &cloud, lib, rel, &PlannerParams::default(), &mut rng).unwrap();
        assert_eq!(res.outcome, PlanOutcome::EmergencyStop);
        assert_eq!(res.diagnostics.safe_count, 0);
    }
}

#[test]
fn goal_reached_when_close_and_slow() {
    let (lib, rel) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let req = request(moving(0.05), Vector3::new(0.2, 0.0, 0.0));
    let res = replan(
        &req,
        std::iter::empty(),
        lib,
        rel,
        &PlannerParams::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(res.outcome, PlanOutcome::GoalReached);
    let req = request(moving(0.5), Vector3::new(0.2, 0.0, 0.0));
    let res = replan(
        &req,
        std::iter::empty(),
        lib,
        rel,
        &PlannerParams::default(),
        &mut rng,
    )
    .unwrap();
    assert_ne!(res.outcome, PlanOutcome::GoalReached);
}

#[test]
fn mismatched_relations_are_rejected() {
    let (lib, _) = fixture();
    let other = MotionLibrary::build(LibrarySettings::new(
        presets::small(),
        DynamicLimits::new(1.0, 3.0),
    ))
    .unwrap();
    let rel = build_for_library(&other, &OccupancyParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let req = request(moving(0.0), Vector3::new(20.0, 0.0, 0.0));
    let err = replan(
        &req,
        std::iter::empty(),
        lib,
        &rel,
        &PlannerParams::default(),
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn should_replan_reasons() {
    let (lib, rel) = fixture();
    let params = PlannerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let req = request(moving(1.0), Vector3::new(20.0, 0.0, 0.0));
    let plan = planned(
        replan(&req, std::iter::empty(), lib, rel, &params, &mut rng)
            .unwrap()
            .outcome,
    );
    let prim = &lib.primitives()[plan.primitive];
    let t_replan = params.replan_threshold(prim.duration());

    let mut empty = std::iter::empty();
    assert_eq!(
        should_replan(
            &plan,
            0.3,
            Some(&mut empty),
            &[],
            lib,
            rel,
            &params,
            &mut rng
        ),
        None
    );
    assert_eq!(
        should_replan(&plan, t_replan, None, &[], lib, rel, &params, &mut rng),
        Some(ReplanReason::Time)
    );

    // A point on the remaining path.
    let ahead = plan
        .frame
        .to_world(&prim.sample(lib.path_of(prim), 2.0).position);
    let cloud = [ahead];
    let mut it = cloud.iter();
    assert_eq!(
        should_replan(&plan, 0.3, Some(&mut it), &[], lib, rel, &params, &mut rng),
        Some(ReplanReason::Obstacle)
    );

    // A hovering peer on the path.
    let peer = PeerTrajectory {
        agent: 1,
        start_time: 0.0,
        frame: VelocityFrame::identity_at(ahead),
        motion: PeerMotion::Hover,
    };
    assert_eq!(
        should_replan(&plan, 0.3, None, &[peer], lib, rel, &params, &mut rng),
        Some(ReplanReason::Agent)
    );
}

fn random_cloud() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((0.5..3.5f64, -2.5..2.5f64, -2.5..2.5f64), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, z)| Vector3::new(x, y, z))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn argmin_invariant_under_weight_scaling(cloud in random_cloud(), scale in 0.1..10.0f64, speed in 0.0..1.0f64) {
        let (lib, rel) = fixture();
        let req = request(moving(speed), Vector3::new(15.0, 3.0, 0.0));
        let base = PlannerParams::default();
        let mut scaled = base;
        scaled.weights.lambda_g *= scale;
        scaled.weights.lambda_b *= scale;
        let a = replan(&req, &cloud, lib, rel, &base, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = replan(&req, &cloud, lib, rel, &scaled, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        match (a.outcome, b.outcome) {
            (PlanOutcome::Planned(p), PlanOutcome::Planned(q)) => prop_assert_eq!(p.primitive, q.primitive),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn selection_is_the_cheapest_unflagged(cloud in random_cloud(), speed in 0.0..1.0f64) {
        let (lib, rel) = fixture();
        let goal = Vector3::new(15.0, -4.0, 1.0);
        let req = request(moving(speed), goal);
        let params = PlannerParams::default();
        let res = replan(&req, &cloud, lib, rel, &params, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        prop_assume!(res.diagnostics.exact_rescues == 0);
        let frame = velocity_frame(Vector3::zeros(), req.state.velocity, Vector3::new(goal.x, goal.y, 0.0).normalize(), params.eps_v);
        let k = select_start_speed(speed, 0.1, 1.0);
        let mut mask = UnsafeMask::new(lib.group(k));
        let local = prepare_cloud(&cloud, &frame, rel, params.n_pc, &mut ChaCha8Rng::seed_from_u64(3));
        mark_obstacle_conflicts(&local, rel, &mut mask);
        let best = mask
            .safe_ids()
            .map(|id| (score_primitive(&frame.to_world(&lib.primitives()[id].end_position), &Vector3::zeros(), &goal, &params.weights), id))
            .fold(None, |acc: Option<(f64, usize)>, c| match acc { Some(a) if a.0 <= c.0 => Some(a), _ => Some(c) });
        match (res.outcome, best) {
            (PlanOutcome::Planned(p), Some((cost, id))) => {
                prop_assert_eq!(p.primitive, id);
                prop_assert!((p.cost - cost).abs() < 1e-12);
            }
            (PlanOutcome::EmergencyStop, None) => {}
            (x, y) => prop_assert!(false, "outcome {:?} vs oracle {:?}", x, y),
        }
    }
}
