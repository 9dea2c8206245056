//! Shared fixtures for the criterion benchmarks: seeded masks, a blocked
//! planar planning problem, and a whole-body re-plan cycle.

use std::sync::Arc;

use nalgebra::{DVector, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fieldplan::replan::{estimate_parameters, refit_trajectory};
use fieldplan::trajectory::TrajState;
use fieldplan::{
    build_graph, builtin, solve, BinaryMask, Cuboid, DistanceField, FactorGraph, FieldKind,
    GridSpec, LmParams, OptimizeResult, PlannerParams, RobotModel, Trajectory,
};

/// Random mask with `fill` fraction of voxels occupied.
pub fn random_mask(dims: [usize; 3], fill: f64, seed: u64) -> BinaryMask {
    let spec = GridSpec::new([0.0, 0.0, 0.0], 0.05, dims).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims[0] * dims[1] * dims[2];
    let bits = (0..n).map(|_| rng.random::<f64>() < fill).collect();
    BinaryMask::new(spec, bits).unwrap()
}

pub struct PlanFixture {
    pub model: Arc<RobotModel>,
    pub field: Arc<DistanceField>,
    pub graph: FactorGraph,
    pub init: Trajectory,
    pub lm: LmParams,
}

/// Planar robot vs a column blocking the straight line.
pub fn nav_blocked_fixture() -> PlanFixture {
    let model = Arc::new(builtin("nav2d").unwrap());
    let spec = GridSpec::new([-1.5, -1.5, 0.0], 0.05, [60, 60, 8]).unwrap();
    let cuboid = Cuboid {
        center: [0.0, 0.0, 0.2],
        half_extents: [0.25, 0.25, 0.25],
    };
    let mask = fieldplan::experiments::rasterize_mask(&spec, std::slice::from_ref(&cuboid)).unwrap();
    let (field, _) = DistanceField::build(&mask, FieldKind::Signed);
    let field = Arc::new(field);
    let params = PlannerParams::default();
    let start = DVector::from_vec(vec![-1.0, 0.05]);
    let goal = DVector::from_vec(vec![1.0, 0.1]);
    let est = estimate_parameters(&start, &goal, &model, params.dt, 1.0).unwrap();
    let init = Trajectory::straight_line(&start, &goal, est.n_states, params.dt, 0.0).unwrap();
    let graph = build_graph(
        &model,
        &field,
        &params,
        &TrajState::at_rest(start),
        &TrajState::at_rest(goal),
        est.n_states,
    )
    .unwrap();
    PlanFixture {
        model,
        field,
        graph,
        init,
        lm: params.lm,
    }
}

pub fn solve_fixture(f: &PlanFixture) -> OptimizeResult {
    solve(&f.graph, &f.init, &f.lm).unwrap()
}

pub struct ReplanCycleFixture {
    pub model: Arc<RobotModel>,
    pub mask: BinaryMask,
    pub executed: Trajectory,
    pub xc: TrajState,
    pub t_now: f64,
    pub goal: DVector<f64>,
    pub params: PlannerParams,
}

/// Whole-body fixture shaped like the bundled pickup scenario at the moment
/// an obstacle invalidates the active trajectory.
pub fn replan_cycle_fixture() -> ReplanCycleFixture {
    let model = Arc::new(builtin("wholebody8").unwrap());
    let spec = GridSpec::new([-0.8, -0.8, 0.0], 0.025, [64, 64, 64]).unwrap();
    let mut params = PlannerParams::default();
    params.dt = 0.5;
    params.lm = LmParams::replan();
    let start = DVector::from_vec(vec![-0.5, -0.5, 0.0, 0.0, -0.3, 1.8, 0.6, 0.0]);
    let goal = DVector::from_vec(vec![0.4, 0.4, 0.785, 0.0, 1.1, -0.4, 0.6, 0.0]);
    let free = fieldplan::experiments::rasterize_mask(&spec, &[]).unwrap();
    let (field0, _) = DistanceField::build(&free, FieldKind::Unsigned);
    let field0 = Arc::new(field0);
    let est = estimate_parameters(&start, &goal, &model, params.dt, 0.5).unwrap();
    let init = Trajectory::straight_line(&start, &goal, est.n_states, params.dt, 0.0).unwrap();
    let graph = build_graph(
        &model,
        &field0,
        &params,
        &TrajState::at_rest(start.clone()),
        &TrajState::at_rest(goal.clone()),
        est.n_states,
    )
    .unwrap();
    let executed = solve(&graph, &init, &LmParams::study()).unwrap().trajectory;
    let t_now = 0.3 * executed.duration();
    let xc = executed.interpolate_clamped(t_now);
    // The obstacle that shows up mid-run, blocking the remaining path.
    let blocker = Cuboid {
        center: [0.1, 0.1, 0.5],
        half_extents: [0.12, 0.12, 0.5],
    };
    let mask = fieldplan::experiments::rasterize_mask(&spec, std::slice::from_ref(&blocker)).unwrap();
    ReplanCycleFixture {
        model,
        mask,
        executed,
        xc,
        t_now,
        goal,
        params,
    }
}

/// One full re-plan: field rebuild, horizon refit, graph assembly, solve.
pub fn run_replan_cycle(f: &ReplanCycleFixture) -> OptimizeResult {
    let (field, _) = DistanceField::build(&f.mask, FieldKind::Unsigned);
    let field = Arc::new(field);
    let est = estimate_parameters(&f.xc.position, &f.goal, &f.model, f.params.dt, 0.5).unwrap();
    let init = refit_trajectory(&f.executed, &f.xc, f.t_now, est.n_states, f.params.dt).unwrap();
    let graph = build_graph(
        &f.model,
        &field,
        &f.params,
        &f.xc,
        &TrajState::at_rest(f.goal.clone()),
        est.n_states,
    )
    .unwrap();
    solve(&graph, &init, &f.params.lm).unwrap()
}

/// Query points spread through a grid's interior.
pub fn query_points(spec: &GridSpec, n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.min_corner(), spec.max_corner());
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            )
        })
        .collect()
}
