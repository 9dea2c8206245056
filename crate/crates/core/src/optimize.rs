//! Damped Gauss-Newton (Levenberg-Marquardt) solver over the flattened
//! trajectory. Iteration count below means *accepted* steps; rejected
//! trials only raise the damping.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorGraph;
use crate::trajectory::Trajectory;

/// Costs at or below this are treated as solved outright, so one exact
/// linear step counts as a single converged iteration.
const COST_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LmParams {
    /// Relative cost-decrease threshold declaring convergence.
    pub tol: f64,
    /// Cap on accepted steps.
    pub max_iterations: usize,
    pub lambda0: f64,
    /// Multiplier applied on rejection; divisor on acceptance.
    pub lambda_factor: f64,
    pub lambda_max: f64,
}

impl LmParams {
    /// Offline profile: tight tolerance, generous iteration budget.
    pub fn study() -> Self {
        Self {
            tol: 1e-5,
            max_iterations: 100,
            lambda0: 0.01,
            lambda_factor: 10.0,
            lambda_max: 1e7,
        }
    }

    /// Online profile: loose tolerance, few iterations.
    pub fn replan() -> Self {
        Self {
            tol: 0.01,
            max_iterations: 50,
            ..Self::study()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("lm.tol must be positive".into()));
        }
        if !(self.lambda0 > 0.0) || !(self.lambda_factor > 1.0) || !(self.lambda_max > self.lambda0)
        {
            return Err(Error::InvalidParameter(
                "lm damping schedule requires lambda0 > 0, factor > 1, lambda_max > lambda0"
                    .into(),
            ));
        }
        Ok(())
    }
}

impl Default for LmParams {
    fn default() -> Self {
        Self::study()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// Relative decrease below tolerance or cost at the floor.
    Converged,
    MaxIterations,
    /// Every trial step was rejected up to the damping cap; the best
    /// trajectory so far is returned.
    DampingOverflow,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub stop: StopReason,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Minimizes the graph cost starting from `initial`.
pub fn solve(graph: &FactorGraph, initial: &Trajectory, params: &LmParams) -> Result<OptimizeResult> {
    params.validate()?;
    let dim = 2 * graph.dof() * graph.n_states();
    let mut traj = initial.clone();
    let mut x = traj.flatten();
    let (mut h, mut g, mut cost) = graph.normal_equations(&traj)?;
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = params.lambda0;
    let mut iterations = 0;
    let mut stop = if cost <= COST_FLOOR {
        StopReason::Converged
    } else {
        StopReason::MaxIterations
    };

    while stop == StopReason::MaxIterations && iterations < params.max_iterations {
        let mut accepted = false;
        let mut factored_any = false;
        while lambda <= params.lambda_max {
            let mut damped = h.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= params.lambda_factor;
                continue;
            };
            factored_any = true;
            let delta: DVector<f64> = chol.solve(&(-&g));
            let candidate_x = &x + &delta;
            let candidate =
                Trajectory::from_flat(traj.t0, traj.dt, graph.dof(), &candidate_x)?;
            let candidate_cost = graph.error(&candidate)?;
            if candidate_cost < cost {
                let prev = cost;
                traj = candidate;
                x = candidate_x;
                cost = candidate_cost;
                iterations += 1;
                history.push(cost);
                lambda = (lambda / params.lambda_factor).max(1e-12);
                if cost <= COST_FLOOR || prev - cost <= params.tol * prev {
                    stop = StopReason::Converged;
                } else {
                    let (nh, ng, _) = graph.normal_equations(&traj)?;
                    h = nh;
                    g = ng;
                }
                accepted = true;
                break;
            }
            lambda *= params.lambda_factor;
        }
        if !accepted {
            if !factored_any {
                return Err(Error::Optimization(
                    "normal equations singular at maximum damping".into(),
                ));
            }
            stop = StopReason::DampingOverflow;
        }
    }

    Ok(OptimizeResult {
        trajectory: traj,
        initial_cost,
        final_cost: cost,
        iterations,
        stop,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{build_graph, Factor, PlannerParams};
    use crate::field::{DistanceField, FieldKind};
    use crate::grid::{BinaryMask, GridSpec};
    use crate::occupancy::{LogOddsParams, OccupancyGrid, RasterMode};
    use crate::robot;
    use crate::shapes::{Cuboid, Shape};
    use crate::trajectory::TrajState;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn planar_spec(res: f64, nxy: usize) -> GridSpec {
        let half = nxy as f64 * res / 2.0;
        GridSpec::new([-half, -half, -0.2], res, [nxy, nxy, 8]).unwrap()
    }

    fn empty_field(res: f64, nxy: usize) -> Arc<DistanceField> {
        let mask = BinaryMask::filled(planar_spec(res, nxy), false);
        Arc::new(DistanceField::build(&mask, FieldKind::Signed).0)
    }

    fn field_with(res: f64, nxy: usize, shape: &Shape) -> Arc<DistanceField> {
        let mut grid = OccupancyGrid::new(planar_spec(res, nxy), LogOddsParams::default()).unwrap();
        grid.reset_free();
        grid.rasterize_shape(shape, RasterMode::Occupy);
        Arc::new(DistanceField::build(&grid.snapshot(), FieldKind::Signed).0)
    }

    #[test]
    fn priors_only_problem_solves_in_one_iteration() {
        let model = Arc::new(robot::nav2d());
        let field = empty_field(0.1, 32);
        let params = PlannerParams::default();
        let m0 = TrajState::at_rest(dvector![0.1, -0.05]);
        let m1 = TrajState::at_rest(dvector![0.25, 0.15]);
        let factors = vec![
            Factor::StatePrior {
                idx: 0,
                mean: m0.clone(),
                sigma: params.prior_sigma,
            },
            Factor::StatePrior {
                idx: 1,
                mean: m1.clone(),
                sigma: params.prior_sigma,
            },
        ];
        let graph = FactorGraph::assemble(&model, &field, &params, 2, factors).unwrap();
        let initial =
            Trajectory::straight_line(&dvector![0.0, 0.0], &dvector![0.05, 0.05], 2, params.dt, 0.0)
                .unwrap();
        let res = solve(&graph, &initial, &LmParams::study()).unwrap();
        assert_eq!(res.stop, StopReason::Converged);
        assert_eq!(res.iterations, 1, "linear problem takes one accepted step");
        assert!((&res.trajectory.states[0].position - &m0.position).norm() < 1e-6);
        assert!((&res.trajectory.states[1].position - &m1.position).norm() < 1e-6);
        assert!(res.trajectory.states[0].velocity.norm() < 1e-6);
    }

    #[test]
    fn straight_line_in_free_space_is_already_optimal() {
        let model = Arc::new(robot::nav2d());
        let field = empty_field(0.1, 32);
        let params = PlannerParams::default();
        let start = TrajState::at_rest(dvector![-1.0, 0.0]);
        let goal = TrajState::at_rest(dvector![1.0, 0.0]);
        let graph = build_graph(&model, &field, &params, &start, &goal, 8).unwrap();
        let initial =
            Trajectory::straight_line(&start.position, &goal.position, 8, params.dt, 0.0).unwrap();
        let res = solve(&graph, &initial, &LmParams::study()).unwrap();
        // Start/goal priors of a rest-to-rest straight line are violated by
        // the endpoint velocities, so a couple of accepted steps are fine,
        // but the solution must stay essentially the initial line.
        assert_eq!(res.stop, StopReason::Converged);
        assert!(res.iterations <= 5);
        assert!(res.final_cost <= res.initial_cost);
    }

    #[test]
    fn blocked_problem_ends_collision_free() {
        // Asymmetric instance: a perfectly symmetric blockade can leave the
        // optimizer grazing the obstacle, which is a measured failure mode
        // rather than a solver defect.
        let model = Arc::new(robot::nav2d());
        let obstacle = Shape::Cuboid(Cuboid {
            center: [0.0, 0.05, 0.0],
            half_extents: [0.15, 0.15, 0.2],
        });
        let field = field_with(0.05, 60, &obstacle);
        let params = PlannerParams::default();
        let start = TrajState::at_rest(dvector![-1.0, -0.2]);
        let goal = TrajState::at_rest(dvector![1.0, 0.15]);
        let n = 9;
        let graph = build_graph(&model, &field, &params, &start, &goal, n).unwrap();
        let initial =
            Trajectory::straight_line(&start.position, &goal.position, n, params.dt, 0.0).unwrap();
        assert!(graph.error(&initial).unwrap() > 0.0, "line must start blocked");
        let res = solve(&graph, &initial, &LmParams::study()).unwrap();
        assert!(res.final_cost < res.initial_cost);

        // Exact-shape oracle: every sphere stays clear along the dense path.
        let mut t = res.trajectory.t0;
        while t <= res.trajectory.end_time() + 1e-12 {
            let s = res.trajectory.interpolate_clamped(t);
            let centers = model.sphere_centers(&s.position).unwrap();
            for (i, c) in centers.iter().enumerate() {
                let clearance = obstacle.distance(c) - model.spheres[i].radius;
                assert!(
                    clearance > 0.0,
                    "sphere {i} collides at t={t}: clearance {clearance}"
                );
            }
            t += 0.01;
        }
    }

    #[test]
    fn cost_never_increases_over_random_problems() {
        let model = Arc::new(robot::nav2d());
        let obstacle = Shape::Cuboid(Cuboid {
            center: [0.1, -0.05, 0.0],
            half_extents: [0.2, 0.1, 0.2],
        });
        let field = field_with(0.05, 60, &obstacle);
        let params = PlannerParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let start = TrajState::at_rest(dvector![
                rng.random_range(-1.3..-0.8),
                rng.random_range(-1.0..1.0)
            ]);
            let goal = TrajState::at_rest(dvector![
                rng.random_range(0.8..1.3),
                rng.random_range(-1.0..1.0)
            ]);
            let graph = build_graph(&model, &field, &params, &start, &goal, 7).unwrap();
            let initial =
                Trajectory::straight_line(&start.position, &goal.position, 7, params.dt, 0.0)
                    .unwrap();
            let res = solve(&graph, &initial, &LmParams::replan()).unwrap();
            assert!(res.final_cost <= res.initial_cost + 1e-12);
            assert_eq!(res.cost_history.len(), res.iterations + 1);
        }
    }

    #[test]
    fn iteration_budget_is_respected() {
        let model = Arc::new(robot::nav2d());
        let obstacle = Shape::Cuboid(Cuboid {
            center: [0.0, 0.0, 0.0],
            half_extents: [0.15, 0.15, 0.2],
        });
        let field = field_with(0.05, 60, &obstacle);
        let params = PlannerParams::default();
        let start = TrajState::at_rest(dvector![-1.0, 0.0]);
        let goal = TrajState::at_rest(dvector![1.0, 0.0]);
        let graph = build_graph(&model, &field, &params, &start, &goal, 9).unwrap();
        let initial =
            Trajectory::straight_line(&start.position, &goal.position, 9, params.dt, 0.0).unwrap();
        let lm = LmParams {
            max_iterations: 1,
            ..LmParams::study()
        };
        let res = solve(&graph, &initial, &lm).unwrap();
        assert!(res.iterations <= 1);
    }

    #[test]
    fn stationary_point_with_nonzero_cost_overflows_damping() {
        // Two priors pulling the same state to different means: the midpoint
        // is the exact minimum with residual cost, so every step is rejected.
        let model = Arc::new(robot::nav2d());
        let field = empty_field(0.1, 16);
        let params = PlannerParams::default();
        let mk = |x: f64| TrajState::at_rest(dvector![x, 0.0]);
        let factors = vec![
            Factor::StatePrior {
                idx: 0,
                mean: mk(-0.1),
                sigma: params.prior_sigma,
            },
            Factor::StatePrior {
                idx: 0,
                mean: mk(0.1),
                sigma: params.prior_sigma,
            },
            Factor::StatePrior {
                idx: 1,
                mean: mk(0.5),
                sigma: params.prior_sigma,
            },
            Factor::StatePrior {
                idx: 1,
                mean: mk(0.5),
                sigma: params.prior_sigma,
            },
        ];
        let graph = FactorGraph::assemble(&model, &field, &params, 2, factors).unwrap();
        let initial = Trajectory::new(
            0.0,
            params.dt,
            vec![mk(0.0), mk(0.5)],
        )
        .unwrap();
        let res = solve(&graph, &initial, &LmParams::study()).unwrap();
        assert_eq!(res.stop, StopReason::DampingOverflow);
        assert_eq!(res.iterations, 0);
        assert!(res.final_cost > 0.0);
    }

    #[test]
    fn interpolated_sites_contribute_to_avoidance() {
        // A thin obstacle fitting between supports is only seen through
        // interpolated obstacle factors.
        let model = Arc::new(robot::nav2d());
        let obstacle = Shape::Cuboid(Cuboid {
            center: [0.0, 0.0, 0.0],
            half_extents: [0.05, 0.4, 0.2],
        });
        let field = field_with(0.05, 60, &obstacle);
        let start = TrajState::at_rest(dvector![-1.2, 0.0]);
        let goal = TrajState::at_rest(dvector![1.2, 0.0]);
        let with = PlannerParams {
            n_interp: 3,
            ..Default::default()
        };
        let without = PlannerParams {
            n_interp: 0,
            ..Default::default()
        };
        // Supports straddle the obstacle: segment midpoints pass through it.
        let n = 5;
        let mk = |p: &PlannerParams| {
            let graph = build_graph(&model, &field, p, &start, &goal, n).unwrap();
            let initial =
                Trajectory::straight_line(&start.position, &goal.position, n, p.dt, 0.0).unwrap();
            graph.error(&initial).unwrap()
        };
        let e_with = mk(&with);
        let e_without = mk(&without);
        assert!(
            e_with > e_without,
            "interpolated hinge sites must add cost ({e_with} vs {e_without})"
        );
    }

    #[test]
    fn invalid_lm_params_rejected() {
        let bad = LmParams {
            lambda_factor: 1.0,
            ..LmParams::study()
        };
        assert!(bad.validate().is_err());
    }
}
