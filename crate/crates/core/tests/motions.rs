use std::time::Instant;

use hyexo::actuation::map_to_actuation;
use hyexo::actuation::Trajectory;
use hyexo::modelio::{build_synthetic_recupera, BuiltModel, MotionKind, RecipeDocument, ValidationReport};
use hyexo::motions::{
    build_sit_stand, build_static_walk, solution_trajectory, solve_plan, solver_settings, validate_trajectory, Direction, MotionModel,
    MotionPlan,
};

fn models() -> (BuiltModel, MotionModel) {
    let built = build_synthetic_recupera().unwrap();
    let mm = MotionModel::new(&built).unwrap();
    (built, mm)
}

fn run(built: &BuiltModel, mm: &MotionModel, plan: &MotionPlan, r: &RecipeDocument) -> (Trajectory, ValidationReport) {
    let t0 = Instant::now();
    let sol = solve_plan(plan, &solver_settings(r)).unwrap();
    eprintln!(
        "{} nodes: {} iterations, cost {:.6e}, gap {:.1e}, {:?}",
        plan.problem.horizon(),
        sol.iterations,
        sol.cost,
        sol.max_gap(),
        t0.elapsed()
    );
    assert!(sol.converged);
    assert!(sol.max_gap() <= 1e-9);
    let traj = solution_trajectory(mm, plan, &sol).unwrap();
    let act = map_to_actuation(built, &traj).unwrap();
    let report = validate_trajectory(mm, &traj, Some(&act), &plan.validation_limits(r));
    for e in &report.entries {
        eprintln!("{:?} {} {} {}", e.severity, e.location, e.message, e.value);
    }
    (traj, report)
}

#[test]
fn standing_still_costs_nothing() {
    let (_, mm) = models();
    let mut r = RecipeDocument::new(MotionKind::Sit);
    r.delta_z = 0.0;
    r.duration = 0.5;
    let plan = build_sit_stand(&mm, Direction::Sit, &r, None).unwrap();
    let sol = solve_plan(&plan, &solver_settings(&r)).unwrap();
    assert!(sol.converged);
    assert!(sol.cost <= 1e-8, "{}", sol.cost);
}

#[test]
fn sit_then_stand_round_trip() {
    let (built, mm) = models();
    let r = RecipeDocument::new(MotionKind::Sit);
    let plan = build_sit_stand(&mm, Direction::Sit, &r, None).unwrap();
    let (sit, report) = run(&built, &mm, &plan, &r);
    assert!(!report.has_violations());
    let last = sit.knots.last().unwrap();
    let q_end = mm.configuration(&last.base_q, &last.y);
    let target = mm.com(&mm.standing).unwrap().z - r.delta_z;
    assert!((mm.com(&q_end).unwrap().z - target).abs() < 1e-2);
    let knee = mm.independent.iter().position(|c| c.name == "knee_l").unwrap();
    assert!(last.y[knee] > 0.01, "knee should shorten, got {}", last.y[knee]);

    let r = RecipeDocument::new(MotionKind::Stand);
    let plan = build_sit_stand(&mm, Direction::Stand, &r, Some(&q_end)).unwrap();
    let (stand, report) = run(&built, &mm, &plan, &r);
    assert!(!report.has_violations());
    let back = &stand.knots.last().unwrap().y;
    let start = &sit.knots[0].y;
    assert!((back - start).amax() <= 1e-2, "{}", (back - start).amax());
}

#[test]
fn four_step_walk_is_balanced() {
    let (built, mm) = models();
    let r = RecipeDocument::new(MotionKind::Walk);
    let plan = build_static_walk(&mm, &r).unwrap();
    let (traj, report) = run(&built, &mm, &plan, &r);
    assert!(!report.has_violations());
    let last = traj.knots.last().unwrap();
    let q = mm.configuration(&last.base_q, &last.y);
    for f in 0..2 {
        let moved = mm.sole(&q, f).unwrap().translation.x - mm.sole(&mm.standing, f).unwrap().translation.x;
        assert!((moved - 2.0 * r.stride_length).abs() < 5e-3, "foot {f} moved {moved}");
    }
}

#[test]
fn zero_stride_keeps_feet_in_place() {
    let (built, mm) = models();
    let mut r = RecipeDocument::new(MotionKind::Walk);
    r.stride_length = 0.0;
    r.steps = 2;
    r.dt = 0.05;
    let plan = build_static_walk(&mm, &r).unwrap();
    let (traj, _) = run(&built, &mm, &plan, &r);
    for k in &traj.knots {
        let q = mm.configuration(&k.base_q, &k.y);
        for f in 0..2 {
            let d = mm.sole(&q, f).unwrap().translation - mm.sole(&mm.standing, f).unwrap().translation;
            assert!(d.norm() <= 1e-3, "{}", d.norm());
        }
    }
}
