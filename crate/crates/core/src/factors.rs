//! Factor graph over trajectory support states: start/goal priors, GP
//! smoothness factors between neighbours, and hinge-loss obstacle factors
//! at support and interpolated states.
//!
//! All residuals are whitened, and the graph cost is the sum of
//! `0.5 * ||r||^2` over factors. Obstacle factors see the robot only
//! through its collision spheres: per sphere the residual is
//! `max(eps - (d - radius), 0) / obs_sigma` with `d` the interpolated field
//! distance at the sphere center.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::gp;
use crate::optimize::LmParams;
use crate::robot::RobotModel;
use crate::trajectory::{TrajState, Trajectory};

/// Planner weights and discretization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Support spacing in seconds.
    pub dt: f64,
    /// Scalar process-noise scale of the GP prior (Qc = qc * I).
    pub qc: f64,
    /// Standard deviation of the start/goal state priors.
    pub prior_sigma: f64,
    /// Hinge-loss safety margin in metres.
    pub eps: f64,
    /// Standard deviation whitening the obstacle residuals.
    pub obs_sigma: f64,
    /// Interpolated obstacle-check states per support segment.
    pub n_interp: usize,
    pub lm: LmParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            dt: 0.25,
            qc: 1.0,
            prior_sigma: 1e-3,
            eps: 0.2,
            obs_sigma: 0.05,
            n_interp: 3,
            lm: LmParams::study(),
        }
    }
}

/// Largest supported hinge margin, matching the modelled penalty envelope.
pub const EPS_MAX: f64 = 0.5;

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(self.qc > 0.0) {
            return Err(Error::InvalidParameter("qc must be positive".into()));
        }
        if !(self.prior_sigma > 0.0) || !(self.obs_sigma > 0.0) {
            return Err(Error::InvalidParameter(
                "prior_sigma and obs_sigma must be positive".into(),
            ));
        }
        if !(0.0..=EPS_MAX).contains(&self.eps) {
            return Err(Error::InvalidParameter(format!(
                "eps must lie in [0, {EPS_MAX}], got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Where an obstacle factor evaluates the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Site {
    Support(usize),
    /// Offset seconds into segment `seg` (0 < offset < dt).
    Interp { seg: usize, offset: f64 },
}

#[derive(Debug, Clone)]
pub(crate) enum Factor {
    StatePrior {
        idx: usize,
        mean: TrajState,
        sigma: f64,
    },
    GpPrior {
        first: usize,
    },
    Obstacle {
        site: Site,
    },
}

/// Whitened residual of one factor plus its Jacobian blocks with respect to
/// the involved states (columns ordered `[dq | dv]` per state).
pub(crate) struct FactorBlocks {
    pub r: DVector<f64>,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    model: Arc<RobotModel>,
    field: Arc<DistanceField>,
    n_states: usize,
    dof: usize,
    dt: f64,
    eps: f64,
    obs_sigma: f64,
    factors: Vec<Factor>,
    /// Inverse lower Cholesky factor of Q(dt); whitens GP residuals.
    gp_whiten: DMatrix<f64>,
    /// Dense state transition over one segment.
    phi_full: DMatrix<f64>,
}

/// Builds the standard graph: full-state priors on the first and last
/// support (weighted by `prior_sigma`), one GP factor per segment, and
/// obstacle factors at every support plus `n_interp` interpolated sites per
/// segment.
pub fn build_graph(
    model: &Arc<RobotModel>,
    field: &Arc<DistanceField>,
    params: &PlannerParams,
    start: &TrajState,
    goal: &TrajState,
    n_states: usize,
) -> Result<FactorGraph> {
    params.validate()?;
    let dof = model.dof();
    if start.dof() != dof || goal.dof() != dof {
        return Err(Error::DimensionMismatch(format!(
            "start/goal have {}/{} DoF, robot {} has {dof}",
            start.dof(),
            goal.dof(),
            model.name
        )));
    }
    if n_states < 2 {
        return Err(Error::InvalidParameter(format!(
            "graph needs at least 2 support states, got {n_states}"
        )));
    }
    let mut factors = Vec::new();
    factors.push(Factor::StatePrior {
        idx: 0,
        mean: start.clone(),
        sigma: params.prior_sigma,
    });
    factors.push(Factor::StatePrior {
        idx: n_states - 1,
        mean: goal.clone(),
        sigma: params.prior_sigma,
    });
    for i in 0..n_states - 1 {
        factors.push(Factor::GpPrior { first: i });
    }
    for i in 0..n_states {
        factors.push(Factor::Obstacle {
            site: Site::Support(i),
        });
    }
    for seg in 0..n_states - 1 {
        for k in 1..=params.n_interp {
            let offset = params.dt * k as f64 / (params.n_interp + 1) as f64;
            factors.push(Factor::Obstacle {
                site: Site::Interp { seg, offset },
            });
        }
    }
    FactorGraph::assemble(model, field, params, n_states, factors)
}

impl FactorGraph {
    pub(crate) fn assemble(
        model: &Arc<RobotModel>,
        field: &Arc<DistanceField>,
        params: &PlannerParams,
        n_states: usize,
        factors: Vec<Factor>,
    ) -> Result<Self> {
        let dof = model.dof();
        // Dense Q(dt): 2x2 scalar blocks scaled by Qc = qc * I.
        let b = gp::q_cov(params.dt);
        let mut q = DMatrix::zeros(2 * dof, 2 * dof);
        for r in 0..2 {
            for c in 0..2 {
                for d in 0..dof {
                    q[(r * dof + d, c * dof + d)] = b[(r, c)] * params.qc;
                }
            }
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("GP covariance not positive definite".into()))?;
        let gp_whiten = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(2 * dof, 2 * dof))
            .ok_or_else(|| Error::InvalidParameter("GP covariance is singular".into()))?;

        let p = gp::phi(params.dt);
        let mut phi_full = DMatrix::zeros(2 * dof, 2 * dof);
        for r in 0..2 {
            for c in 0..2 {
                for d in 0..dof {
                    phi_full[(r * dof + d, c * dof + d)] = p[(r, c)];
                }
            }
        }
        Ok(Self {
            model: model.clone(),
            field: field.clone(),
            n_states,
            dof,
            dt: params.dt,
            eps: params.eps,
            obs_sigma: params.obs_sigma,
            factors,
            gp_whiten,
            phi_full,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &Arc<RobotModel> {
        &self.model
    }

    pub fn field(&self) -> &Arc<DistanceField> {
        &self.field
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn n_obstacle_sites(&self) -> usize {
        self.factors
            .iter()
            .filter(|f| matches!(f, Factor::Obstacle { .. }))
            .count()
    }

    /// Number of stacked residual rows.
    pub fn residual_dim(&self) -> usize {
        self.factors
            .iter()
            .map(|f| match f {
                Factor::StatePrior { .. } | Factor::GpPrior { .. } => 2 * self.dof,
                Factor::Obstacle { .. } => self.model.n_spheres(),
            })
            .sum()
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        if traj.n_states() != self.n_states || traj.dof() != self.dof {
            return Err(Error::DimensionMismatch(format!(
                "trajectory is {} states x {} DoF, graph expects {} x {}",
                traj.n_states(),
                traj.dof(),
                self.n_states,
                self.dof
            )));
        }
        Ok(())
    }

    /// Total cost `sum_f 0.5 ||r_f||^2` against the graph's own field.
    pub fn error(&self, traj: &Trajectory) -> Result<f64> {
        self.error_with_field(traj, &self.field)
    }

    /// Total cost with obstacle factors evaluated against `field` instead
    /// of the field captured at build time (used by validity monitoring).
    pub fn error_with_field(&self, traj: &Trajectory, field: &DistanceField) -> Result<f64> {
        Ok(self.factor_errors_with_field(traj, field)?.iter().sum())
    }

    /// Per-factor costs, in factor order.
    pub fn factor_errors(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.factor_errors_with_field(traj, &self.field)
    }

    fn factor_errors_with_field(
        &self,
        traj: &Trajectory,
        field: &DistanceField,
    ) -> Result<Vec<f64>> {
        self.check_traj(traj)?;
        self.factors
            .iter()
            .map(|f| Ok(0.5 * self.residual(f, traj, field)?.norm_squared()))
            .collect()
    }

    /// Whitened residual of one factor (no Jacobian).
    fn residual(&self, f: &Factor, traj: &Trajectory, field: &DistanceField) -> Result<DVector<f64>> {
        match f {
            Factor::StatePrior { idx, mean, sigma } => {
                let s = &traj.states[*idx];
                let mut r = DVector::zeros(2 * self.dof);
                r.rows_mut(0, self.dof)
                    .copy_from(&((&s.position - &mean.position) / *sigma));
                r.rows_mut(self.dof, self.dof)
                    .copy_from(&((&s.velocity - &mean.velocity) / *sigma));
                Ok(r)
            }
            Factor::GpPrior { first } => {
                let raw = self.gp_raw(traj, *first);
                Ok(&self.gp_whiten * raw)
            }
            Factor::Obstacle { site } => {
                let q = self.site_position(traj, site);
                let centers = self.model.sphere_centers(&q)?;
                let mut r = DVector::zeros(centers.len());
                for (s, c) in centers.iter().enumerate() {
                    let d = field.query(c).distance - self.model.spheres[s].radius;
                    if d < self.eps {
                        r[s] = (self.eps - d) / self.obs_sigma;
                    }
                }
                Ok(r)
            }
        }
    }

    fn gp_raw(&self, traj: &Trajectory, first: usize) -> DVector<f64> {
        let a = &traj.states[first];
        let b = &traj.states[first + 1];
        let dof = self.dof;
        let mut raw = DVector::zeros(2 * dof);
        // phi(dt) x_i - x_{i+1} written out blockwise.
        raw.rows_mut(0, dof)
            .copy_from(&(&a.position + &a.velocity * self.dt - &b.position));
        raw.rows_mut(dof, dof)
            .copy_from(&(&a.velocity - &b.velocity));
        raw
    }

    fn site_position(&self, traj: &Trajectory, site: &Site) -> DVector<f64> {
        match site {
            Site::Support(i) => traj.states[*i].position.clone(),
            Site::Interp { seg, offset } => {
                let (lam, psi) = gp::interp_coeffs(*offset, self.dt);
                let a = &traj.states[*seg];
                let b = &traj.states[*seg + 1];
                &a.position * lam[(0, 0)]
                    + &a.velocity * lam[(0, 1)]
                    + &b.position * psi[(0, 0)]
                    + &b.velocity * psi[(0, 1)]
            }
        }
    }

    /// Residual plus Jacobian blocks for one factor.
    pub(crate) fn linearize_factor(&self, f: &Factor, traj: &Trajectory) -> Result<FactorBlocks> {
        let dof = self.dof;
        match f {
            Factor::StatePrior { idx, sigma, .. } => {
                let r = self.residual(f, traj, &self.field)?;
                let jac = DMatrix::identity(2 * dof, 2 * dof) / *sigma;
                Ok(FactorBlocks {
                    r,
                    blocks: vec![(*idx, jac)],
                })
            }
            Factor::GpPrior { first } => {
                let r = self.residual(f, traj, &self.field)?;
                let j_first = &self.gp_whiten * &self.phi_full;
                let j_second = -&self.gp_whiten;
                Ok(FactorBlocks {
                    r,
                    blocks: vec![(*first, j_first), (*first + 1, j_second)],
                })
            }
            Factor::Obstacle { site } => {
                let q = self.site_position(traj, site);
                let (centers, jacs) = self.model.sphere_jacobians(&q)?;
                let n = centers.len();
                let mut r = DVector::zeros(n);
                // Rows of d r / d q at the evaluated configuration.
                let mut base = DMatrix::zeros(n, dof);
                for s in 0..n {
                    let query = self.field.query(&centers[s]);
                    let d = query.distance - self.model.spheres[s].radius;
                    if d < self.eps {
                        r[s] = (self.eps - d) / self.obs_sigma;
                        let row = -(query.gradient.transpose() * &jacs[s]) / self.obs_sigma;
                        base.row_mut(s).copy_from(&row);
                    }
                }
                let expand = |scale_q: f64, scale_v: f64| -> DMatrix<f64> {
                    let mut j = DMatrix::zeros(n, 2 * dof);
                    j.view_mut((0, 0), (n, dof)).copy_from(&(&base * scale_q));
                    j.view_mut((0, dof), (n, dof)).copy_from(&(&base * scale_v));
                    j
                };
                match site {
                    Site::Support(i) => Ok(FactorBlocks {
                        r,
                        blocks: vec![(*i, expand(1.0, 0.0))],
                    }),
                    Site::Interp { seg, offset } => {
                        let (lam, psi) = gp::interp_coeffs(*offset, self.dt);
                        Ok(FactorBlocks {
                            r,
                            blocks: vec![
                                (*seg, expand(lam[(0, 0)], lam[(0, 1)])),
                                (*seg + 1, expand(psi[(0, 0)], psi[(0, 1)])),
                            ],
                        })
                    }
                }
            }
        }
    }

    /// Stacked whitened residual and dense Jacobian over the flattened
    /// trajectory (rows in factor order). Assembled from the same per-factor
    /// blocks the solver uses.
    pub fn stacked(&self, traj: &Trajectory) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_traj(traj)?;
        let cols = 2 * self.dof * self.n_states;
        let rows = self.residual_dim();
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, cols);
        let mut row = 0;
        for f in &self.factors {
            let fb = self.linearize_factor(f, traj)?;
            let dim = fb.r.len();
            r.rows_mut(row, dim).copy_from(&fb.r);
            for (idx, block) in &fb.blocks {
                jac.view_mut((row, 2 * self.dof * idx), (dim, 2 * self.dof))
                    .copy_from(block);
            }
            row += dim;
        }
        Ok((r, jac))
    }

    /// Smallest margin (meters) separating any obstacle-site sphere surface
    /// from a hinge kink (`d == eps`) or a trilinear cell face, over the
    /// whole graph. The stacked residual is differentiable only where this
    /// is positive; finite-difference probes need it well above the step.
    pub fn kink_margin(&self, traj: &Trajectory) -> Result<f64> {
        self.check_traj(traj)?;
        let spec = self.field.spec();
        let mut margin = f64::INFINITY;
        for f in &self.factors {
            let Factor::Obstacle { site } = f else {
                continue;
            };
            let q = self.site_position(traj, site);
            let centers = self.model.sphere_centers(&q)?;
            for (s, c) in centers.iter().enumerate() {
                let d = self.field.query(c).distance - self.model.spheres[s].radius;
                margin = margin.min((d - self.eps).abs());
                for a in 0..3 {
                    if spec.dims[a] == 1 {
                        continue;
                    }
                    let u = (c[a] - spec.origin[a]) / spec.resolution - 0.5;
                    let fr = u - u.floor();
                    margin = margin.min(fr.min(1.0 - fr) * spec.resolution);
                }
            }
        }
        Ok(margin)
    }

    /// Gauss-Newton normal equations by block accumulation:
    /// `H = J^T J`, `g = J^T r`, and the current cost.
    pub(crate) fn normal_equations(
        &self,
        traj: &Trajectory,
    ) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        self.check_traj(traj)?;
        let bs = 2 * self.dof;
        let n = bs * self.n_states;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut cost = 0.0;
        for f in &self.factors {
            let fb = self.linearize_factor(f, traj)?;
            cost += 0.5 * fb.r.norm_squared();
            for (ai, ablock) in &fb.blocks {
                g.rows_mut(bs * ai, bs)
                    .add_assign(&(ablock.transpose() * &fb.r));
                for (bi, bblock) in &fb.blocks {
                    let contrib = ablock.transpose() * bblock;
                    h.view_mut((bs * ai, bs * bi), (bs, bs)).add_assign(&contrib);
                }
            }
        }
        Ok((h, g, cost))
    }
}

use std::ops::AddAssign;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldKind;
    use crate::grid::{BinaryMask, GridSpec};
    use crate::robot;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_field(res: f64, dims: [usize; 3]) -> Arc<DistanceField> {
        let spec = GridSpec::new([-(dims[0] as f64) * res / 2.0, -(dims[1] as f64) * res / 2.0, -(dims[2] as f64) * res / 2.0], res, dims).unwrap();
        let mask = BinaryMask::filled(spec, false);
        Arc::new(DistanceField::build(&mask, FieldKind::Signed).0)
    }

    fn blocked_field(res: f64, dims: [usize; 3], center: [f64; 3], half: f64) -> Arc<DistanceField> {
        let spec = GridSpec::new([-(dims[0] as f64) * res / 2.0, -(dims[1] as f64) * res / 2.0, -(dims[2] as f64) * res / 2.0], res, dims).unwrap();
        let mut grid =
            crate::occupancy::OccupancyGrid::new(spec, crate::occupancy::LogOddsParams::default())
                .unwrap();
        grid.reset_free();
        grid.rasterize_cuboid(
            &crate::shapes::Cuboid {
                center,
                half_extents: [half; 3],
            },
            crate::occupancy::RasterMode::Occupy,
        );
        Arc::new(DistanceField::build(&grid.snapshot(), FieldKind::Signed).0)
    }

    fn nav_graph(
        field: &Arc<DistanceField>,
        params: &PlannerParams,
        n: usize,
    ) -> (FactorGraph, Trajectory) {
        let model = Arc::new(robot::nav2d());
        let start = TrajState::at_rest(dvector![-1.0, 0.0]);
        let goal = TrajState::at_rest(dvector![1.0, 0.0]);
        let graph = build_graph(&model, field, params, &start, &goal, n).unwrap();
        let traj =
            Trajectory::straight_line(&start.position, &goal.position, n, params.dt, 0.0).unwrap();
        (graph, traj)
    }

    #[test]
    fn factor_counting_matches_contract() {
        let field = empty_field(0.1, [32, 32, 8]);
        let mut params = PlannerParams {
            n_interp: 0,
            ..Default::default()
        };
        let (graph, _) = nav_graph(&field, &params, 5);
        assert_eq!(graph.n_factors(), 2 + 4 + 5);
        assert_eq!(graph.n_obstacle_sites(), 5);
        params.n_interp = 2;
        let (graph, _) = nav_graph(&field, &params, 5);
        assert_eq!(graph.n_obstacle_sites(), 5 + 4 * 2);
    }

    #[test]
    fn straight_line_in_empty_field_has_zero_obstacle_cost() {
        let field = empty_field(0.1, [32, 32, 8]);
        let params = PlannerParams::default();
        let (graph, traj) = nav_graph(&field, &params, 8);
        let errors = graph.factor_errors(&traj).unwrap();
        // Factors 2.. are GP priors then obstacles; obstacle factors start
        // after 2 priors + 7 GP factors.
        for (i, e) in errors.iter().enumerate().skip(2 + 7) {
            assert_eq!(*e, 0.0, "obstacle factor {i}");
        }
        // GP factors of an exact constant-velocity line are zero too.
        for e in errors.iter().take(2 + 7).skip(2) {
            assert!(e.abs() < 1e-18);
        }
    }

    #[test]
    fn gp_error_matches_dense_covariance_oracle() {
        let field = empty_field(0.1, [16, 16, 8]);
        let params = PlannerParams::default();
        let model = Arc::new(robot::arm7());
        let dof = model.dof();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = TrajState::at_rest(DVector::zeros(dof));
        let goal = TrajState::at_rest(DVector::from_element(dof, 0.5));
        let graph = build_graph(&model, &field, &params, &start, &goal, 6).unwrap();
        let states = (0..6)
            .map(|_| {
                TrajState::new(
                    DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0)),
                    DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let traj = Trajectory::new(0.0, params.dt, states).unwrap();

        // Dense oracle: 0.5 * raw^T Q^{-1} raw with Q assembled and inverted
        // independently.
        let b = gp::q_cov(params.dt);
        let mut q = DMatrix::zeros(2 * dof, 2 * dof);
        for r in 0..2 {
            for c in 0..2 {
                for d in 0..dof {
                    q[(r * dof + d, c * dof + d)] = b[(r, c)] * params.qc;
                }
            }
        }
        let q_inv = q.try_inverse().unwrap();
        let errors = graph.factor_errors(&traj).unwrap();
        for first in 0..5 {
            let raw = graph.gp_raw(&traj, first);
            let oracle = 0.5 * (raw.transpose() * &q_inv * &raw)[(0, 0)];
            let got = errors[2 + first];
            assert!(
                (got - oracle).abs() <= 1e-10 * oracle.max(1.0),
                "segment {first}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn obstacle_factor_inactive_beyond_margin() {
        // Obstacle far from the trajectory: all hinge residuals vanish.
        let field = blocked_field(0.1, [40, 40, 8], [1.5, 1.5, 0.0], 0.2);
        let params = PlannerParams::default();
        let model = Arc::new(robot::nav2d());
        let start = TrajState::at_rest(dvector![-1.0, -1.0]);
        let goal = TrajState::at_rest(dvector![-0.2, -1.0]);
        let graph = build_graph(&model, &field, &params, &start, &goal, 5).unwrap();
        let traj =
            Trajectory::straight_line(&start.position, &goal.position, 5, params.dt, 0.0).unwrap();
        let (r, jac) = graph.stacked(&traj).unwrap();
        let obs_rows: usize = graph.n_obstacle_sites() * model.n_spheres();
        let prior_gp_rows = r.len() - obs_rows;
        assert_eq!(r.rows(prior_gp_rows, obs_rows).norm(), 0.0);
        assert_eq!(
            jac.rows(prior_gp_rows, obs_rows).norm(),
            0.0,
            "inactive hinge must have zero Jacobian"
        );
    }

    #[test]
    fn obstacle_residual_positive_inside_margin() {
        let field = blocked_field(0.05, [40, 40, 8], [0.0, 0.0, 0.0], 0.3);
        let params = PlannerParams::default();
        let (graph, traj) = nav_graph(&field, &params, 5);
        let errors = graph.factor_errors(&traj).unwrap();
        let obs_total: f64 = errors.iter().skip(2 + 4).sum();
        assert!(obs_total > 0.0);
    }

    #[test]
    fn kink_margin_flags_cell_boundaries() {
        let field = blocked_field(0.05, [48, 48, 8], [0.0, 0.0, 0.0], 0.3);
        let params = PlannerParams::default();
        let model = Arc::new(robot::nav2d());
        // Center lattice sits at -1.2 + 0.05 * (i + 0.5), so x = -0.975
        // lies exactly on an interpolation-cell face.
        let on_face = TrajState::at_rest(dvector![-0.975, 0.012]);
        let goal = TrajState::at_rest(dvector![-0.975, 0.812]);
        let graph = build_graph(&model, &field, &params, &on_face, &goal, 2).unwrap();
        let traj = Trajectory::straight_line(
            &on_face.position,
            &goal.position,
            2,
            params.dt,
            0.0,
        )
        .unwrap();
        let m = graph.kink_margin(&traj).unwrap();
        assert!(m < 1e-9, "support on a cell face must report ~0, got {m}");
        // Mid-cell in x, far from the hinge: a finite margin.
        let start = TrajState::at_rest(dvector![-1.0, 0.012]);
        let goal = TrajState::at_rest(dvector![-1.0, 0.812]);
        let graph2 = build_graph(&model, &field, &params, &start, &goal, 2).unwrap();
        let traj2 =
            Trajectory::straight_line(&start.position, &goal.position, 2, params.dt, 0.0)
                .unwrap();
        let m2 = graph2.kink_margin(&traj2).unwrap();
        assert!(m2 > 1e-4, "off-lattice sites should clear the faces, got {m2}");
    }

    #[test]
    fn stacked_jacobian_matches_finite_differences() {
        let field = blocked_field(0.05, [48, 48, 8], [0.1, 0.05, 0.0], 0.35);
        let params = PlannerParams {
            n_interp: 2,
            ..Default::default()
        };
        let model = Arc::new(robot::nav2d());
        let start = TrajState::at_rest(dvector![-1.0, -0.3]);
        let goal = TrajState::at_rest(dvector![1.0, 0.4]);
        let graph = build_graph(&model, &field, &params, &start, &goal, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-7;
        let mut tested = 0;
        'outer: while tested < 40 {
            let states = (0..5)
                .map(|_| {
                    TrajState::new(
                        DVector::from_fn(2, |_, _| rng.random_range(-1.2..1.2)),
                        DVector::from_fn(2, |_, _| rng.random_range(-0.6..0.6)),
                    )
                })
                .collect();
            let traj = Trajectory::new(0.0, params.dt, states).unwrap();
            // Skip samples near hinge kinks or interpolation-cell boundaries,
            // where the residual is not differentiable.
            for f in &graph.factors {
                if let Factor::Obstacle { site } = f {
                    let q = graph.site_position(&traj, site);
                    let centers = graph.model.sphere_centers(&q).unwrap();
                    for (s, c) in centers.iter().enumerate() {
                        let d =
                            graph.field.query(c).distance - graph.model.spheres[s].radius;
                        if (d - graph.eps).abs() < 1e-3 {
                            continue 'outer;
                        }
                        let spec = graph.field.spec();
                        for a in 0..3 {
                            if spec.dims[a] == 1 {
                                continue;
                            }
                            let u = (c[a] - spec.origin[a]) / spec.resolution - 0.5;
                            let fr = u - u.floor();
                            if fr < 1e-3 || fr > 1.0 - 1e-3 {
                                continue 'outer;
                            }
                        }
                    }
                }
            }
            let (r0, jac) = graph.stacked(&traj).unwrap();
            let x = traj.flatten();
            for col in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                let tp = Trajectory::from_flat(0.0, params.dt, 2, &xp).unwrap();
                let tm = Trajectory::from_flat(0.0, params.dt, 2, &xm).unwrap();
                let (rp, _) = graph.stacked(&tp).unwrap();
                let (rm, _) = graph.stacked(&tm).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                let diff = (&fd - jac.column(col)).norm();
                let denom = jac.column(col).norm().max(1.0);
                assert!(
                    diff / denom < 1e-4,
                    "column {col}: fd deviates by {}",
                    diff / denom
                );
            }
            let _ = r0;
            tested += 1;
        }
    }

    #[test]
    fn normal_equations_match_stacked_jacobian() {
        let field = blocked_field(0.05, [40, 40, 8], [0.0, 0.0, 0.0], 0.3);
        let params = PlannerParams {
            n_interp: 1,
            ..Default::default()
        };
        let (graph, traj) = nav_graph(&field, &params, 6);
        let (r, jac) = graph.stacked(&traj).unwrap();
        let (h, g, cost) = graph.normal_equations(&traj).unwrap();
        let h_ref = jac.transpose() * &jac;
        let g_ref = jac.transpose() * &r;
        assert!((h - h_ref).norm() < 1e-9);
        assert!((g - g_ref).norm() < 1e-9);
        assert!((cost - 0.5 * r.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn error_with_other_field_differs() {
        let empty = empty_field(0.05, [40, 40, 8]);
        let blocked = blocked_field(0.05, [40, 40, 8], [0.0, 0.0, 0.0], 0.3);
        let params = PlannerParams::default();
        let (graph, traj) = nav_graph(&empty, &params, 5);
        let e_empty = graph.error(&traj).unwrap();
        let e_blocked = graph.error_with_field(&traj, &blocked).unwrap();
        assert!(e_blocked > e_empty);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let params = PlannerParams {
            eps: 0.6,
            ..Default::default()
        };
        assert!(params.validate().is_err());
        let params = PlannerParams {
            dt: 0.0,
            ..Default::default()
        };
        assert!(params.validate().is_err());
        let ok = PlannerParams::default();
        ok.validate().unwrap();
    }
}
