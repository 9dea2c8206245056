//! Receding-horizon execution: plan, track, monitor validity against the
//! live field, and re-optimize with a refit of the previous trajectory.
//!
//! Lockstep mode advances the world, the monitor, and the planner on one
//! simulated clock (tick = 1/monitor_rate) and is bit-reproducible.
//! Free-running mode spawns a map thread and a planner thread and tracks
//! wall time; it exists for realism demos, not for measurements.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{build_graph, FactorGraph, PlannerParams};
use crate::field::DistanceField;
use crate::optimize::{solve, LmParams, StopReason};
use crate::robot::RobotModel;
use crate::trajectory::{TrajState, Trajectory};
use crate::world::WorldSim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanMode {
    Lockstep,
    FreeRunning,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReplanConfig {
    pub monitor_rate: f64,
    pub replan_rate_cap: f64,
    pub cost_tolerance_factor: f64,
    pub cost_slack: f64,
    /// Per-DoF goal tolerance.
    pub goal_tol: f64,
    pub exec_interp_dt: f64,
    pub timeout: f64,
    /// Fraction of each joint's vmax used when estimating horizons, leaving
    /// headroom so tracked velocities stay within limits.
    pub speed_scale: f64,
    pub lm: LmParams,
    pub mode: ReplanMode,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        Self {
            monitor_rate: 250.0,
            replan_rate_cap: 10.0,
            cost_tolerance_factor: 1.5,
            cost_slack: 1e-3,
            goal_tol: 0.05,
            exec_interp_dt: 0.01,
            timeout: 30.0,
            speed_scale: 0.5,
            lm: LmParams::replan(),
            mode: ReplanMode::Lockstep,
        }
    }
}

impl ReplanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.monitor_rate > 0.0) || !(self.replan_rate_cap > 0.0) {
            return Err(Error::InvalidParameter("rates must be positive".into()));
        }
        if !(self.cost_tolerance_factor > 1.0) {
            return Err(Error::InvalidParameter(
                "cost_tolerance_factor must exceed 1".into(),
            ));
        }
        if !(self.goal_tol > 0.0) || !(self.exec_interp_dt > 0.0) || !(self.timeout > 0.0) {
            return Err(Error::InvalidParameter(
                "goal_tol, exec_interp_dt, timeout must be positive".into(),
            ));
        }
        if !(self.speed_scale > 0.0 && self.speed_scale <= 1.0) {
            return Err(Error::InvalidParameter(
                "speed_scale must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Horizon sizing for a plan between two configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonEstimate {
    pub total_time: f64,
    pub n_states: usize,
}

/// Velocity-limited duration: the slowest DoF sets the time, rounded up to
/// a whole number of support intervals with a floor of two.
pub fn estimate_parameters(
    xc: &DVector<f64>,
    xg: &DVector<f64>,
    model: &RobotModel,
    dt: f64,
    speed_scale: f64,
) -> Result<HorizonEstimate> {
    if xc.len() != model.dof() || xg.len() != model.dof() {
        return Err(Error::DimensionMismatch(format!(
            "configurations have {}/{} DoF, robot has {}",
            xc.len(),
            xg.len(),
            model.dof()
        )));
    }
    if !(dt > 0.0) || !(speed_scale > 0.0 && speed_scale <= 1.0) {
        return Err(Error::InvalidParameter(
            "estimate needs dt > 0 and speed_scale in (0, 1]".into(),
        ));
    }
    let vmax = model.vmax();
    let mut t_min: f64 = 0.0;
    for j in 0..model.dof() {
        t_min = t_min.max((xg[j] - xc[j]).abs() / (vmax[j] * speed_scale));
    }
    let intervals = ((t_min / dt - 1e-9).ceil() as usize).max(2);
    Ok(HorizonEstimate {
        total_time: intervals as f64 * dt,
        n_states: intervals + 1,
    })
}

/// Maps the remaining portion of `old` (from `t_now` to its end)
/// proportionally onto a fresh support grid of `new_n` states starting at
/// `t_now`, anchoring state 0 exactly at `xc`. Interpolated velocities are
/// carried over unscaled; the optimizer re-shapes them.
pub fn refit_trajectory(
    old: &Trajectory,
    xc: &TrajState,
    t_now: f64,
    new_n: usize,
    dt: f64,
) -> Result<Trajectory> {
    if new_n < 2 {
        return Err(Error::InvalidParameter(format!(
            "refit needs at least 2 states, got {new_n}"
        )));
    }
    let from = t_now.clamp(old.t0, old.end_time());
    let remaining = old.end_time() - from;
    let mut states = Vec::with_capacity(new_n);
    states.push(xc.clone());
    for i in 1..new_n {
        let frac = i as f64 / (new_n - 1) as f64;
        let tau = from + remaining * frac;
        states.push(old.interpolate_clamped(tau));
    }
    Trajectory::new(t_now, dt, states)
}

/// Why a trajectory stopped being valid.
#[derive(Debug, Clone, PartialEq)]
pub enum Invalidity {
    Collision { t: f64, sphere: usize },
    Cost { cost: f64, limit: f64 },
}

impl std::fmt::Display for Invalidity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Invalidity::Collision { t, sphere } => {
                write!(f, "collision: sphere {sphere} at t={t:.3}")
            }
            Invalidity::Cost { cost, limit } => {
                write!(f, "cost {cost:.4} exceeds limit {limit:.4}")
            }
        }
    }
}

/// Checks the remaining trajectory against the current field: every
/// interpolated state must keep strictly positive sphere clearance, and the
/// graph cost under the current field must stay within tolerance of the
/// cost recorded when the plan was accepted. `None` means still valid.
pub fn still_valid(
    graph: &FactorGraph,
    traj: &Trajectory,
    t_now: f64,
    field: &DistanceField,
    initial_cost: f64,
    cfg: &ReplanConfig,
) -> Option<Invalidity> {
    let model = graph.model();
    let end = traj.end_time();
    let mut t = t_now.clamp(traj.t0, end);
    loop {
        let state = traj.interpolate_clamped(t);
        let centers = model.sphere_centers(&state.position).ok()?;
        for (s, c) in centers.iter().enumerate() {
            if field.query(c).distance - model.spheres[s].radius <= 0.0 {
                return Some(Invalidity::Collision { t, sphere: s });
            }
        }
        if t >= end {
            break;
        }
        t = (t + cfg.exec_interp_dt).min(end);
    }
    let cost = graph.error_with_field(traj, field).ok()?;
    let limit = initial_cost * cfg.cost_tolerance_factor + cfg.cost_slack;
    if cost > limit {
        return Some(Invalidity::Cost { cost, limit });
    }
    None
}

/// One accepted plan (initial or re-plan).
#[derive(Debug, Clone, Serialize)]
pub struct PlanRecord {
    /// Simulation time the plan was swapped in.
    pub t: f64,
    /// "initial" or the invalidity that triggered the re-plan.
    pub reason: String,
    pub n_states: usize,
    pub total_time: f64,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub refit_init: bool,
}

/// One executed tick (written to the CSV series, not the JSON log).
#[derive(Debug, Clone)]
pub struct ExecSample {
    pub t: f64,
    pub position: Vec<f64>,
    /// Exact-shape clearance of the worst sphere; infinite without obstacles.
    pub clearance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Reached,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecutionLog {
    pub status: RunStatus,
    pub fail_reason: Option<String>,
    pub t_final: f64,
    pub n_replans: usize,
    /// Worst exact-shape clearance along the executed path (null if the
    /// world had no obstacles).
    pub min_clearance: Option<f64>,
    pub field_rebuilds: usize,
    pub plans: Vec<PlanRecord>,
    /// Wall-clock stage timings; excluded from the canonical log so
    /// identical runs serialize identically.
    #[serde(skip)]
    pub monitor_us: Vec<f64>,
    #[serde(skip)]
    pub replan_us: Vec<f64>,
    #[serde(skip)]
    pub samples: Vec<ExecSample>,
}

impl ExecutionLog {
    /// Deterministic JSON (timings and the dense series are side files).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }

    pub fn write_series_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let dof = self.samples.first().map_or(0, |s| s.position.len());
        write!(w, "t")?;
        for j in 0..dof {
            write!(w, ",q{j}")?;
        }
        writeln!(w, ",clearance")?;
        for s in &self.samples {
            write!(w, "{}", s.t)?;
            for v in &s.position {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", s.clearance)?;
        }
        Ok(())
    }
}

struct PlanOutcome {
    traj: Trajectory,
    graph: FactorGraph,
    cost: f64,
    record: PlanRecord,
}

fn plan_once(
    model: &Arc<RobotModel>,
    field: &Arc<DistanceField>,
    params: &PlannerParams,
    lm: &LmParams,
    xc: &TrajState,
    xg: &DVector<f64>,
    t_now: f64,
    refit_from: Option<&Trajectory>,
    reason: String,
    speed_scale: f64,
) -> Result<PlanOutcome> {
    let est = estimate_parameters(&xc.position, xg, model, params.dt, speed_scale)?;
    let goal = TrajState::at_rest(xg.clone());
    let graph = build_graph(model, field, params, xc, &goal, est.n_states)?;
    let (init, refit_init) = match refit_from {
        Some(old) => (
            refit_trajectory(old, xc, t_now, est.n_states, params.dt)?,
            true,
        ),
        None => (
            Trajectory::straight_line(&xc.position, xg, est.n_states, params.dt, t_now)?,
            false,
        ),
    };
    let res = solve(&graph, &init, lm)?;
    let record = PlanRecord {
        t: t_now,
        reason,
        n_states: est.n_states,
        total_time: est.total_time,
        iterations: res.iterations,
        initial_cost: res.initial_cost,
        final_cost: res.final_cost,
        converged: res.stop != StopReason::MaxIterations,
        refit_init,
    };
    Ok(PlanOutcome {
        traj: res.trajectory,
        graph,
        cost: res.final_cost,
        record,
    })
}

/// Worst exact-shape clearance of the robot at `q` against true obstacles.
fn true_clearance(model: &RobotModel, q: &DVector<f64>, shapes: &[crate::shapes::Shape]) -> f64 {
    if shapes.is_empty() {
        return f64::INFINITY;
    }
    let centers = match model.sphere_centers(q) {
        Ok(c) => c,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut worst = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        for s in shapes {
            worst = worst.min(s.distance(c) - model.spheres[i].radius);
        }
    }
    worst
}

/// Runs the full pipeline to termination. Lockstep mode is deterministic;
/// free-running mode uses wall time and background threads.
pub fn run_replanning(
    model: &Arc<RobotModel>,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
    world: WorldSim,
    params: &PlannerParams,
    cfg: &ReplanConfig,
) -> Result<ExecutionLog> {
    cfg.validate()?;
    params.validate()?;
    match cfg.mode {
        ReplanMode::Lockstep => run_lockstep(model, x0, xg, world, params, cfg),
        ReplanMode::FreeRunning => run_free_running(model, x0, xg, world, params, cfg),
    }
}

fn run_lockstep(
    model: &Arc<RobotModel>,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
    mut world: WorldSim,
    params: &PlannerParams,
    cfg: &ReplanConfig,
) -> Result<ExecutionLog> {
    let tick = 1.0 / cfg.monitor_rate;
    let replan_period = 1.0 / cfg.replan_rate_cap;
    let mut t = 0.0;
    let mut field = world.field();

    let start = TrajState::at_rest(x0.clone());
    let initial = plan_once(
        model,
        &field,
        params,
        &params.lm,
        &start,
        xg,
        t,
        None,
        "initial".into(),
        cfg.speed_scale,
    )?;
    let mut active = initial.traj;
    let mut graph = initial.graph;
    let mut accepted_cost = initial.cost;
    let mut planned_field = field.clone();
    let mut plans = vec![initial.record];

    let mut last_replan_t = t;
    let mut monitor_us = Vec::new();
    let mut replan_us = Vec::new();
    let mut samples = Vec::new();
    let mut min_clearance = f64::INFINITY;
    let mut last_verdict_valid = true;

    let (status, fail_reason, t_final) = loop {
        let xc = active.interpolate_clamped(t);
        let shapes = world.obstacles_at(t);
        let clearance = true_clearance(model, &xc.position, &shapes);
        min_clearance = min_clearance.min(clearance);
        samples.push(ExecSample {
            t,
            position: xc.position.iter().copied().collect(),
            clearance,
        });
        if clearance <= 0.0 {
            break (
                RunStatus::Failed,
                Some(format!("collision of executed state at t={t:.3}")),
                t,
            );
        }
        if (&xc.position - xg).amax() <= cfg.goal_tol {
            break (RunStatus::Reached, None, t);
        }
        if t >= cfg.timeout {
            break (RunStatus::Failed, Some("timeout".into()), t);
        }

        t += tick;
        world.step_to(t);
        let new_field = world.field();
        let field_changed = !Arc::ptr_eq(&new_field, &field);
        field = new_field;

        // A valid verdict holds while the field is unchanged (the remaining
        // horizon only shrinks); anything else is re-checked.
        let verdict = if !field_changed && Arc::ptr_eq(&field, &planned_field) && last_verdict_valid
        {
            None
        } else {
            let t_check = Instant::now();
            let v = still_valid(&graph, &active, t, &field, accepted_cost, cfg);
            monitor_us.push(t_check.elapsed().as_secs_f64() * 1e6);
            v
        };
        last_verdict_valid = verdict.is_none();

        if let Some(inv) = verdict {
            if t - last_replan_t + 1e-12 >= replan_period {
                let t_replan = Instant::now();
                let xc_now = active.interpolate_clamped(t);
                let outcome = plan_once(
                    model,
                    &field,
                    params,
                    &cfg.lm,
                    &xc_now,
                    xg,
                    t,
                    Some(&active),
                    inv.to_string(),
                    cfg.speed_scale,
                )?;
                replan_us.push(t_replan.elapsed().as_secs_f64() * 1e6);
                active = outcome.traj;
                graph = outcome.graph;
                accepted_cost = outcome.cost;
                planned_field = field.clone();
                plans.push(outcome.record);
                last_replan_t = t;
                last_verdict_valid = true;
            }
        }
    };

    Ok(ExecutionLog {
        status,
        fail_reason,
        t_final,
        n_replans: plans.len() - 1,
        min_clearance: min_clearance.is_finite().then_some(min_clearance),
        field_rebuilds: world.stats().rebuilds,
        plans,
        monitor_us,
        replan_us,
        samples,
    })
}

struct PlanRequest {
    t: f64,
    xc: TrajState,
    active: Trajectory,
    field: Arc<DistanceField>,
    reason: String,
}

fn run_free_running(
    model: &Arc<RobotModel>,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
    world: WorldSim,
    params: &PlannerParams,
    cfg: &ReplanConfig,
) -> Result<ExecutionLog> {
    let field0 = world.field();
    let start = TrajState::at_rest(x0.clone());
    let initial = plan_once(
        model,
        &field0,
        params,
        &params.lm,
        &start,
        xg,
        0.0,
        None,
        "initial".into(),
        cfg.speed_scale,
    )?;
    let mut active = initial.traj;
    let mut graph = initial.graph;
    let mut accepted_cost = initial.cost;
    let mut planned_field = field0.clone();
    let mut plans = vec![initial.record];

    let world = Arc::new(Mutex::new(world));
    let publisher = crate::field::FieldPublisher::new(field0);
    let stop = AtomicBool::new(false);
    let tick = std::time::Duration::from_secs_f64(1.0 / cfg.monitor_rate);
    let replan_period = 1.0 / cfg.replan_rate_cap;
    let epoch = Instant::now();

    let mut monitor_us = Vec::new();
    let mut replan_us = Vec::new();
    let mut samples = Vec::new();
    let mut min_clearance = f64::INFINITY;
    let mut last_replan_t = 0.0;
    let mut pending_since: Option<Instant> = None;

    let (req_tx, req_rx) = mpsc::channel::<PlanRequest>();
    let (res_tx, res_rx) = mpsc::channel::<Result<PlanOutcome>>();

    let outcome = std::thread::scope(|scope| -> Result<(RunStatus, Option<String>, f64)> {
        // Map thread: steps the world on wall time, publishes snapshots.
        scope.spawn(|| {
            while !stop.load(Ordering::Relaxed) {
                {
                    let mut w = world.lock().unwrap();
                    w.step_to(epoch.elapsed().as_secs_f64());
                    publisher.publish(w.field());
                }
                std::thread::sleep(tick);
            }
        });
        // Planner thread: serves re-plan requests while execution continues.
        scope.spawn(move || {
            while let Ok(req) = req_rx.recv() {
                let out = plan_once(
                    model,
                    &req.field,
                    params,
                    &cfg.lm,
                    &req.xc,
                    xg,
                    req.t,
                    Some(&req.active),
                    req.reason,
                    cfg.speed_scale,
                );
                if res_tx.send(out).is_err() {
                    break;
                }
            }
        });

        let result = loop {
            let t = epoch.elapsed().as_secs_f64();
            let xc = active.interpolate_clamped(t);
            let shapes = world.lock().unwrap().obstacles_at(t);
            let clearance = true_clearance(model, &xc.position, &shapes);
            min_clearance = min_clearance.min(clearance);
            samples.push(ExecSample {
                t,
                position: xc.position.iter().copied().collect(),
                clearance,
            });
            if clearance <= 0.0 {
                break (
                    RunStatus::Failed,
                    Some(format!("collision of executed state at t={t:.3}")),
                    t,
                );
            }
            if (&xc.position - xg).amax() <= cfg.goal_tol {
                break (RunStatus::Reached, None, t);
            }
            if t >= cfg.timeout {
                break (RunStatus::Failed, Some("timeout".into()), t);
            }

            // Swap in a finished plan, if any.
            if let Ok(out) = res_rx.try_recv() {
                let out = out?;
                if let Some(since) = pending_since.take() {
                    replan_us.push(since.elapsed().as_secs_f64() * 1e6);
                }
                active = out.traj;
                graph = out.graph;
                accepted_cost = out.cost;
                plans.push(out.record);
            }

            let field = publisher.latest();
            let t_check = Instant::now();
            let verdict = if Arc::ptr_eq(&field, &planned_field) {
                None
            } else {
                let v = still_valid(&graph, &active, t, &field, accepted_cost, cfg);
                monitor_us.push(t_check.elapsed().as_secs_f64() * 1e6);
                v
            };
            if let Some(inv) = verdict {
                if pending_since.is_none() && t - last_replan_t >= replan_period {
                    planned_field = field.clone();
                    pending_since = Some(Instant::now());
                    last_replan_t = t;
                    let _ = req_tx.send(PlanRequest {
                        t,
                        xc: active.interpolate_clamped(t),
                        active: active.clone(),
                        field,
                        reason: inv.to_string(),
                    });
                }
            } else if !Arc::ptr_eq(&field, &planned_field) && pending_since.is_none() {
                // Field changed but the plan still holds.
                planned_field = field.clone();
            }
            std::thread::sleep(tick);
        };
        stop.store(true, Ordering::Relaxed);
        drop(req_tx);
        Ok(result)
    });
    let (status, fail_reason, t_final) = outcome?;

    let rebuilds = world.lock().unwrap().stats().rebuilds;
    Ok(ExecutionLog {
        status,
        fail_reason,
        t_final,
        n_replans: plans.len() - 1,
        min_clearance: min_clearance.is_finite().then_some(min_clearance),
        field_rebuilds: rebuilds,
        plans,
        monitor_us,
        replan_us,
        samples,
    })
}
