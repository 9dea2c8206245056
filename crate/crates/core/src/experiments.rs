//! Batch drivers: the signed-vs-unsigned planning study, the field build
//! benchmark, and the warm-start comparison for re-planning.
//!
//! All drivers are seeded and deterministic; per-problem records carry no
//! wall-clock data so repeated runs emit identical CSVs.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{build_graph, PlannerParams};
use crate::field::{DistanceField, FieldKind};
use crate::grid::{BinaryMask, GridSpec};
use crate::occupancy::{LogOddsParams, OccupancyGrid, RasterMode};
use crate::optimize::{solve, LmParams};
use crate::replan::{estimate_parameters, refit_trajectory};
use crate::robot::{builtin, RobotModel};
use crate::shapes::Cuboid;
use crate::trajectory::{TrajState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyCase {
    Nav2d,
    Arm7,
    Wholebody8,
}

impl StudyCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyCase::Nav2d => "nav2d",
            StudyCase::Arm7 => "arm7",
            StudyCase::Wholebody8 => "wholebody8",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "nav2d" => Ok(StudyCase::Nav2d),
            "arm7" => Ok(StudyCase::Arm7),
            "wholebody8" => Ok(StudyCase::Wholebody8),
            other => Err(Error::Config(format!(
                "unknown study case {other:?} (expected nav2d, arm7, or wholebody8)"
            ))),
        }
    }
}

/// Study configuration. `desk` builds the default desk-scale design for a
/// case; larger campaigns (more sampled states, more environments) are
/// reached by overriding `n_states`/`n_envs`.
#[derive(Debug, Clone, Serialize)]
pub struct StudyDesign {
    pub case: StudyCase,
    pub n_states: usize,
    pub n_envs: usize,
    /// Full-extent range of each cuboid dimension, metres.
    pub size_range: [f64; 2],
    pub seed: u64,
    pub params: PlannerParams,
}

impl StudyDesign {
    pub fn desk(case: StudyCase) -> Self {
        let mut params = PlannerParams::default();
        params.lm = LmParams::study();
        // Support spacing per case keeps horizons short enough for the
        // serial desk budget without starving obstacle checks.
        params.dt = match case {
            StudyCase::Nav2d => 0.25,
            StudyCase::Arm7 => 0.4,
            StudyCase::Wholebody8 => 0.5,
        };
        let size_range = match case {
            StudyCase::Nav2d => [0.15, 0.6],
            StudyCase::Arm7 => [0.08, 0.4],
            StudyCase::Wholebody8 => [0.1, 0.45],
        };
        Self {
            case,
            n_states: 10,
            n_envs: 50,
            size_range,
            seed: 0,
            params,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * (self.n_states - 1) / 2
    }
}

/// Per-case geometry: grid, state-sampling bounds, and cuboid placement.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub model: Arc<RobotModel>,
    pub spec: GridSpec,
    /// Per-DoF uniform sampling range for study states.
    pub sample_lo: Vec<f64>,
    pub sample_hi: Vec<f64>,
    /// Sphere centers of sampled states must stay inside this box.
    pub center_lo: [f64; 3],
    pub center_hi: [f64; 3],
    /// Uniform range for cuboid centers.
    pub cuboid_lo: [f64; 3],
    pub cuboid_hi: [f64; 3],
    /// Planar case: cuboids become full-height columns with this fixed
    /// (center_z, half_z) instead of sampled z geometry.
    pub column_z: Option<(f64, f64)>,
}

pub fn case_setup(case: StudyCase) -> CaseSetup {
    match case {
        StudyCase::Nav2d => {
            let model = Arc::new(builtin("nav2d").unwrap());
            CaseSetup {
                model,
                spec: GridSpec::new([-1.5, -1.5, 0.0], 0.05, [60, 60, 8]).unwrap(),
                sample_lo: vec![-1.3, -1.3],
                sample_hi: vec![1.3, 1.3],
                center_lo: [-1.4, -1.4, -0.5],
                center_hi: [1.4, 1.4, 0.5],
                cuboid_lo: [-1.3, -1.3, 0.0],
                cuboid_hi: [1.3, 1.3, 0.0],
                column_z: Some((0.2, 0.25)),
            }
        }
        StudyCase::Arm7 => {
            let model = Arc::new(builtin("arm7").unwrap());
            let limits = model.limits();
            let sample_lo = limits.iter().map(|l| 0.9 * l[0]).collect();
            let sample_hi = limits.iter().map(|l| 0.9 * l[1]).collect();
            CaseSetup {
                model,
                spec: GridSpec::new([-1.0, -1.0, -0.1], 0.025, [80, 80, 64]).unwrap(),
                sample_lo,
                sample_hi,
                center_lo: [-0.92, -0.92, 0.05],
                center_hi: [0.92, 0.92, 1.45],
                cuboid_lo: [-0.75, -0.75, 0.15],
                cuboid_hi: [0.75, 0.75, 1.1],
                column_z: None,
            }
        }
        StudyCase::Wholebody8 => {
            let model = Arc::new(builtin("wholebody8").unwrap());
            let limits = model.limits();
            let mut sample_lo: Vec<f64> = limits.iter().map(|l| 0.9 * l[0]).collect();
            let mut sample_hi: Vec<f64> = limits.iter().map(|l| 0.9 * l[1]).collect();
            // Keep the base well inside the grid so the arm cannot leave it.
            for a in 0..2 {
                sample_lo[a] = -0.8;
                sample_hi[a] = 0.8;
            }
            CaseSetup {
                model,
                spec: GridSpec::new([-1.85, -1.85, 0.0], 0.05, [74, 74, 28]).unwrap(),
                sample_lo,
                sample_hi,
                center_lo: [-1.8, -1.8, 0.0],
                center_hi: [1.8, 1.8, 1.38],
                cuboid_lo: [-1.1, -1.1, 0.15],
                cuboid_hi: [1.1, 1.1, 1.0],
                column_z: None,
            }
        }
    }
}

impl CaseSetup {
    /// Workspace containment: every collision-sphere center inside the box.
    fn state_ok(&self, q: &DVector<f64>) -> bool {
        match self.model.sphere_centers(q) {
            Ok(centers) => centers.iter().all(|c| {
                (0..3).all(|a| c[a] >= self.center_lo[a] && c[a] <= self.center_hi[a])
            }),
            Err(_) => false,
        }
    }
}

const SAMPLE_RETRIES: usize = 20_000;

/// Deterministic problem set: states, all unordered pairs, one cuboid per
/// environment.
#[derive(Debug, Clone)]
pub struct ProblemSet {
    pub states: Vec<DVector<f64>>,
    pub pairs: Vec<(usize, usize)>,
    pub envs: Vec<Cuboid>,
}

pub fn generate_problems(design: &StudyDesign) -> Result<ProblemSet> {
    let setup = case_setup(design.case);
    if design.n_states < 2 {
        return Err(Error::InvalidParameter(
            "study needs at least 2 states".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let dof = setup.model.dof();
    let mut states = Vec::with_capacity(design.n_states);
    'outer: for _ in 0..design.n_states {
        for _ in 0..SAMPLE_RETRIES {
            let q = DVector::from_fn(dof, |j, _| {
                rng.random_range(setup.sample_lo[j]..=setup.sample_hi[j])
            });
            if setup.state_ok(&q) {
                states.push(q);
                continue 'outer;
            }
        }
        return Err(Error::Sampling(format!(
            "no workspace-contained state for {} after {SAMPLE_RETRIES} tries",
            setup.model.name
        )));
    }
    let mut pairs = Vec::with_capacity(design.n_states * (design.n_states - 1) / 2);
    for i in 0..design.n_states {
        for j in (i + 1)..design.n_states {
            pairs.push((i, j));
        }
    }
    let mut envs = Vec::with_capacity(design.n_envs);
    for _ in 0..design.n_envs {
        let mut center = [0.0; 3];
        let mut half = [0.0; 3];
        for a in 0..3 {
            half[a] = rng.random_range(design.size_range[0]..=design.size_range[1]) / 2.0;
            center[a] = rng.random_range(setup.cuboid_lo[a]..=setup.cuboid_hi[a]);
        }
        if let Some((cz, hz)) = setup.column_z {
            center[2] = cz;
            half[2] = hz;
        }
        envs.push(Cuboid {
            center,
            half_extents: half,
        });
    }
    Ok(ProblemSet {
        states,
        pairs,
        envs,
    })
}

/// Result of one planning attempt under one field kind.
#[derive(Debug, Clone, Serialize)]
pub struct KindOutcome {
    pub solved: bool,
    pub collision_free: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub min_clearance: f64,
}

impl KindOutcome {
    pub fn failed(&self) -> bool {
        !self.solved || !self.collision_free
    }
}

/// One (environment, pair) problem solved under both field kinds.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemRecord {
    pub env: usize,
    pub pair: usize,
    pub sdf: KindOutcome,
    pub usdf: KindOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct KindStats {
    pub kind: FieldKind,
    /// Failures / problems over everything attempted.
    pub raw_failure_rate: f64,
    /// Failures / problems excluding those both kinds failed.
    pub failure_rate: f64,
    pub iter_mean: f64,
    pub iter_std: f64,
    /// Over problems collision-free under both kinds.
    pub cost_mean: f64,
    pub cost_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub case: StudyCase,
    pub n_problems: usize,
    /// Problems excluded from failure rates because both kinds failed.
    pub n_both_failed: usize,
    /// Problems collision-free under both kinds (cost inclusion set).
    pub n_jointly_valid: usize,
    pub sdf: KindStats,
    pub usdf: KindStats,
    /// USDF mean / SDF mean.
    pub failure_ratio: f64,
    pub iteration_ratio: f64,
    pub cost_ratio: f64,
    #[serde(skip)]
    pub records: Vec<ProblemRecord>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Exact-shape clearance of a trajectory against one cuboid: minimum over
/// densely sampled times and spheres of (surface distance - radius).
fn exact_clearance(model: &RobotModel, traj: &Trajectory, cuboid: &Cuboid) -> f64 {
    const STEP: f64 = 0.01;
    let mut min = f64::INFINITY;
    let mut t = traj.t0;
    let end = traj.end_time();
    loop {
        let state = traj.interpolate_clamped(t);
        if let Ok(centers) = model.sphere_centers(&state.position) {
            for (c, s) in centers.iter().zip(model.spheres.iter()) {
                min = min.min(cuboid.distance(c) - s.radius);
            }
        }
        if t >= end {
            break;
        }
        t = (t + STEP).min(end);
    }
    min
}

fn solve_problem(
    model: &Arc<RobotModel>,
    field: &Arc<DistanceField>,
    params: &PlannerParams,
    start: &DVector<f64>,
    goal: &DVector<f64>,
    cuboid: &Cuboid,
) -> KindOutcome {
    let failed = KindOutcome {
        solved: false,
        collision_free: false,
        iterations: 0,
        initial_cost: f64::NAN,
        final_cost: f64::NAN,
        converged: false,
        min_clearance: f64::NAN,
    };
    let Ok(est) = estimate_parameters(start, goal, model, params.dt, 1.0) else {
        return failed;
    };
    let Ok(init) = Trajectory::straight_line(start, goal, est.n_states, params.dt, 0.0) else {
        return failed;
    };
    let graph = match build_graph(
        model,
        field,
        params,
        &TrajState::at_rest(start.clone()),
        &TrajState::at_rest(goal.clone()),
        est.n_states,
    ) {
        Ok(g) => g,
        Err(_) => return failed,
    };
    match solve(&graph, &init, &params.lm) {
        Ok(res) => {
            let clearance = exact_clearance(model, &res.trajectory, cuboid);
            KindOutcome {
                solved: true,
                collision_free: clearance > 0.0,
                iterations: res.iterations,
                initial_cost: res.initial_cost,
                final_cost: res.final_cost,
                converged: res.stop == crate::optimize::StopReason::Converged,
                min_clearance: clearance,
            }
        }
        Err(_) => failed,
    }
}

/// Runs the full comparison: every problem solved under a signed and an
/// unsigned field built from the same occupancy mask.
pub fn run_study(design: &StudyDesign) -> Result<StudyResult> {
    design.params.validate()?;
    let setup = case_setup(design.case);
    let set = generate_problems(design)?;
    let mut records = Vec::with_capacity(set.envs.len() * set.pairs.len());
    for (env_idx, cuboid) in set.envs.iter().enumerate() {
        let mask = rasterize_mask(&setup.spec, std::slice::from_ref(cuboid))?;
        let (sdf, _) = DistanceField::build(&mask, FieldKind::Signed);
        let (usdf, _) = DistanceField::build(&mask, FieldKind::Unsigned);
        let sdf = Arc::new(sdf);
        let usdf = Arc::new(usdf);
        for (pair_idx, &(i, j)) in set.pairs.iter().enumerate() {
            let (start, goal) = (&set.states[i], &set.states[j]);
            records.push(ProblemRecord {
                env: env_idx,
                pair: pair_idx,
                sdf: solve_problem(&setup.model, &sdf, &design.params, start, goal, cuboid),
                usdf: solve_problem(&setup.model, &usdf, &design.params, start, goal, cuboid),
            });
        }
    }
    Ok(aggregate(design.case, records))
}

/// Voxelizes cuboids into a fresh free grid and snapshots the mask.
pub fn rasterize_mask(spec: &GridSpec, cuboids: &[Cuboid]) -> Result<BinaryMask> {
    let mut grid = OccupancyGrid::new(spec.clone(), LogOddsParams::default())?;
    grid.reset_free();
    for c in cuboids {
        grid.rasterize_cuboid(c, RasterMode::Occupy);
    }
    Ok(grid.snapshot())
}

fn aggregate(case: StudyCase, records: Vec<ProblemRecord>) -> StudyResult {
    let n = records.len();
    let both_failed = |r: &ProblemRecord| r.sdf.failed() && r.usdf.failed();
    let n_both_failed = records.iter().filter(|r| both_failed(r)).count();
    let n_counted = n - n_both_failed;
    let jointly_valid: Vec<&ProblemRecord> = records
        .iter()
        .filter(|r| r.sdf.collision_free && r.usdf.collision_free)
        .collect();

    let stats = |kind: FieldKind| {
        let pick = |r: &ProblemRecord| match kind {
            FieldKind::Signed => r.sdf.clone(),
            FieldKind::Unsigned => r.usdf.clone(),
        };
        let failures = records.iter().filter(|r| pick(r).failed()).count();
        let counted_failures = records
            .iter()
            .filter(|r| !both_failed(r) && pick(r).failed())
            .count();
        let (iter_mean, iter_std) =
            mean_std(records.iter().map(|r| pick(r).iterations as f64));
        let (cost_mean, cost_std) =
            mean_std(jointly_valid.iter().map(|r| pick(r).final_cost));
        KindStats {
            kind,
            raw_failure_rate: failures as f64 / n.max(1) as f64,
            failure_rate: counted_failures as f64 / n_counted.max(1) as f64,
            iter_mean,
            iter_std,
            cost_mean,
            cost_std,
        }
    };
    let sdf = stats(FieldKind::Signed);
    let usdf = stats(FieldKind::Unsigned);
    StudyResult {
        case,
        n_problems: n,
        n_both_failed,
        n_jointly_valid: jointly_valid.len(),
        failure_ratio: usdf.failure_rate / sdf.failure_rate,
        iteration_ratio: usdf.iter_mean / sdf.iter_mean,
        cost_ratio: usdf.cost_mean / sdf.cost_mean,
        sdf,
        usdf,
        records,
    }
}

impl StudyResult {
    /// Per-problem CSV, two rows per problem (one per field kind); the
    /// aggregates are recomputable from these rows alone.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "env,pair,kind,solved,collision_free,iterations,initial_cost,final_cost,converged,min_clearance\n",
        );
        for r in &self.records {
            for (kind, o) in [("signed", &r.sdf), ("unsigned", &r.usdf)] {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.env,
                    r.pair,
                    kind,
                    o.solved,
                    o.collision_free,
                    o.iterations,
                    o.initial_cost,
                    o.final_cost,
                    o.converged,
                    o.min_clearance
                )
                .expect("string write");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "case: {}   problems: {} per kind ({} excluded as failed under both, {} jointly valid)",
            self.case.as_str(),
            self.n_problems,
            self.n_both_failed,
            self.n_jointly_valid
        )
        .unwrap();
        writeln!(
            s,
            "{:<26}{:>14}{:>14}{:>12}",
            "metric", "SDF", "USDF", "USDF/SDF"
        )
        .unwrap();
        writeln!(
            s,
            "{:<26}{:>14.4}{:>14.4}{:>12.3}",
            "failure rate", self.sdf.failure_rate, self.usdf.failure_rate, self.failure_ratio
        )
        .unwrap();
        writeln!(
            s,
            "{:<26}{:>14.4}{:>14.4}{:>12.3}",
            "raw failure rate",
            self.sdf.raw_failure_rate,
            self.usdf.raw_failure_rate,
            self.usdf.raw_failure_rate / self.sdf.raw_failure_rate
        )
        .unwrap();
        writeln!(
            s,
            "{:<26}{:>7.2} ±{:>5.2}{:>7.2} ±{:>5.2}{:>12.3}",
            "iterations",
            self.sdf.iter_mean,
            self.sdf.iter_std,
            self.usdf.iter_mean,
            self.usdf.iter_std,
            self.iteration_ratio
        )
        .unwrap();
        writeln!(
            s,
            "{:<26}{:>7.3} ±{:>5.3}{:>7.3} ±{:>5.3}{:>12.3}",
            "valid cost",
            self.sdf.cost_mean,
            self.sdf.cost_std,
            self.usdf.cost_mean,
            self.usdf.cost_std,
            self.cost_ratio
        )
        .unwrap();
        s
    }
}

/// One benchmark cell: a (resolution, kind) pair timed over `reps` builds.
#[derive(Debug, Clone, Serialize)]
pub struct BenchCell {
    pub resolution: f64,
    pub dims: [usize; 3],
    pub voxels: usize,
    pub kind: FieldKind,
    pub reps: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchDesign {
    /// Physical workspace extent (metres), fixed across resolutions.
    pub extent: [f64; 3],
    pub origin: [f64; 3],
    pub resolutions: Vec<f64>,
    pub reps: usize,
    pub n_cuboids: usize,
    pub seed: u64,
}

impl Default for BenchDesign {
    fn default() -> Self {
        Self {
            extent: [3.2, 3.2, 3.2],
            origin: [-1.6, -1.6, -1.6],
            resolutions: vec![0.1, 0.05, 0.025],
            reps: 10,
            n_cuboids: 12,
            seed: 1,
        }
    }
}

impl BenchDesign {
    fn dims_for(&self, resolution: f64) -> [usize; 3] {
        let mut dims = [0; 3];
        for a in 0..3 {
            dims[a] = (self.extent[a] / resolution).round() as usize;
        }
        dims
    }

    /// Seeded random cuboids spanning 5-20% of the extent per dimension.
    fn cuboids(&self, rep: usize) -> Vec<Cuboid> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(rep as u64));
        (0..self.n_cuboids)
            .map(|_| {
                let mut center = [0.0; 3];
                let mut half = [0.0; 3];
                for a in 0..3 {
                    let lo = self.origin[a];
                    let hi = self.origin[a] + self.extent[a];
                    center[a] = rng.random_range(lo..=hi);
                    half[a] = rng.random_range(0.025..=0.1) * self.extent[a];
                }
                Cuboid {
                    center,
                    half_extents: half,
                }
            })
            .collect()
    }
}

/// Times field construction per (resolution, kind) cell; the same masks are
/// reused across kinds so cells differ only in the transform.
pub fn run_field_bench(design: &BenchDesign) -> Result<BenchReport> {
    if design.reps < 10 {
        return Err(Error::InvalidParameter(
            "benchmark needs at least 10 repetitions per cell".into(),
        ));
    }
    let mut cells = Vec::new();
    for &res in &design.resolutions {
        let dims = design.dims_for(res);
        let spec = GridSpec::new(design.origin, res, dims)?;
        let masks: Vec<BinaryMask> = (0..design.reps)
            .map(|rep| rasterize_mask(&spec, &design.cuboids(rep)))
            .collect::<Result<_>>()?;
        for kind in [FieldKind::Unsigned, FieldKind::Signed] {
            let mut times = Vec::with_capacity(design.reps);
            for mask in &masks {
                let t = Instant::now();
                let (field, _) = DistanceField::build(mask, kind);
                let elapsed = t.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(&field);
                times.push(elapsed);
            }
            let (mean_ms, std_ms) = mean_std(times.iter().copied());
            cells.push(BenchCell {
                resolution: res,
                dims,
                voxels: dims[0] * dims[1] * dims[2],
                kind,
                reps: design.reps,
                mean_ms,
                std_ms,
            });
        }
    }
    Ok(BenchReport { cells })
}

impl BenchReport {
    /// Signed mean / unsigned mean at one resolution.
    pub fn ratio(&self, resolution: f64) -> Option<f64> {
        let find = |kind| {
            self.cells
                .iter()
                .find(|c| c.resolution == resolution && c.kind == kind)
                .map(|c| c.mean_ms)
        };
        Some(find(FieldKind::Signed)? / find(FieldKind::Unsigned)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("resolution,nx,ny,nz,voxels,kind,reps,mean_ms,std_ms\n");
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.resolution,
                c.dims[0],
                c.dims[1],
                c.dims[2],
                c.voxels,
                c.kind.as_str(),
                c.reps,
                c.mean_ms,
                c.std_ms
            )
            .expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<12}{:<14}{:>10}{:>14}{:>12}{:>14}",
            "resolution", "dims", "kind", "mean (ms)", "std (ms)", "signed/unsig"
        )
        .unwrap();
        for c in &self.cells {
            let ratio = if c.kind == FieldKind::Signed {
                self.ratio(c.resolution)
                    .map(|r| format!("{r:.2}"))
                    .unwrap_or_default()
            } else {
                String::new()
            };
            writeln!(
                s,
                "{:<12}{:<14}{:>10}{:>14.3}{:>12.3}{:>14}",
                c.resolution,
                format!("{}x{}x{}", c.dims[0], c.dims[1], c.dims[2]),
                c.kind.as_str(),
                c.mean_ms,
                c.std_ms,
                ratio
            )
            .unwrap();
        }
        s
    }
}

/// Warm-start comparison: after a mid-execution obstacle shift, solve the
/// same re-plan graph from a refit of the old trajectory and from a cold
/// straight line, and compare iteration counts.
#[derive(Debug, Clone, Serialize)]
pub struct RefitComparison {
    pub n_problems: usize,
    pub refit_mean_iters: f64,
    pub straight_mean_iters: f64,
    /// refit mean / straight mean.
    pub ratio: f64,
    pub per_problem: Vec<(usize, usize)>,
}

pub fn run_refit_comparison(seed: u64, n_problems: usize) -> Result<RefitComparison> {
    let setup = case_setup(StudyCase::Nav2d);
    let mut params = PlannerParams::default();
    params.lm = LmParams::study();
    let replan_lm = LmParams::replan();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_problem = Vec::with_capacity(n_problems);
    let mut attempts = 0;
    while per_problem.len() < n_problems {
        attempts += 1;
        if attempts > 50 * n_problems {
            return Err(Error::Sampling(
                "could not assemble enough valid re-plan problems".into(),
            ));
        }
        // Crossing problem: start on the left, goal on the right, one
        // column obstacle near the straight line's midsection.
        let start = DVector::from_vec(vec![
            rng.random_range(-1.3..=-0.9),
            rng.random_range(-1.0..=1.0),
        ]);
        let goal = DVector::from_vec(vec![
            rng.random_range(0.9..=1.3),
            rng.random_range(-1.0..=1.0),
        ]);
        let mid_y = (start[1] + goal[1]) / 2.0;
        let cuboid = Cuboid {
            center: [
                rng.random_range(-0.3..=0.3),
                mid_y + rng.random_range(-0.2..=0.2),
                0.2,
            ],
            half_extents: [
                rng.random_range(0.125..=0.25),
                rng.random_range(0.125..=0.25),
                0.25,
            ],
        };
        // The perturbation is drawn before the validity checks so the RNG
        // stream stays aligned across accepted and rejected instances.
        let shift = [
            rng.random_range(-0.15..=0.15),
            rng.random_range(-0.15..=0.15),
        ];
        let t_frac = rng.random_range(0.25..=0.55);

        let mask = rasterize_mask(&setup.spec, std::slice::from_ref(&cuboid))?;
        let (field, _) = DistanceField::build(&mask, FieldKind::Signed);
        let field = Arc::new(field);
        let base = solve_problem(&setup.model, &field, &params, &start, &goal, &cuboid);
        if base.failed() {
            continue;
        }
        // Re-derive the base trajectory (solve_problem only keeps stats).
        let est = estimate_parameters(&start, &goal, &setup.model, params.dt, 1.0)?;
        let init = Trajectory::straight_line(&start, &goal, est.n_states, params.dt, 0.0)?;
        let graph = build_graph(
            &setup.model,
            &field,
            &params,
            &TrajState::at_rest(start.clone()),
            &TrajState::at_rest(goal.clone()),
            est.n_states,
        )?;
        let base_traj = solve(&graph, &init, &params.lm)?.trajectory;

        let t_mid = t_frac * base_traj.duration();
        let xc = base_traj.interpolate_clamped(t_mid);
        let mut shifted = cuboid;
        shifted.center[0] += shift[0];
        shifted.center[1] += shift[1];
        let mask2 = rasterize_mask(&setup.spec, std::slice::from_ref(&shifted))?;
        let (field2, _) = DistanceField::build(&mask2, FieldKind::Signed);
        let field2 = Arc::new(field2);

        let est2 = estimate_parameters(&xc.position, &goal, &setup.model, params.dt, 1.0)?;
        let graph2 = build_graph(
            &setup.model,
            &field2,
            &params,
            &xc,
            &TrajState::at_rest(goal.clone()),
            est2.n_states,
        )?;
        let init_refit = refit_trajectory(&base_traj, &xc, t_mid, est2.n_states, params.dt)?;
        let mut init_straight =
            Trajectory::straight_line(&xc.position, &goal, est2.n_states, params.dt, t_mid)?;
        init_straight.states[0] = xc.clone();
        let refit_iters = solve(&graph2, &init_refit, &replan_lm)?.iterations;
        let straight_iters = solve(&graph2, &init_straight, &replan_lm)?.iterations;
        per_problem.push((refit_iters, straight_iters));
    }
    let refit_mean_iters =
        per_problem.iter().map(|p| p.0 as f64).sum::<f64>() / n_problems as f64;
    let straight_mean_iters =
        per_problem.iter().map(|p| p.1 as f64).sum::<f64>() / n_problems as f64;
    Ok(RefitComparison {
        n_problems,
        refit_mean_iters,
        straight_mean_iters,
        ratio: refit_mean_iters / straight_mean_iters,
        per_problem,
    })
}
