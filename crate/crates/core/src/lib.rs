//! Desk-scale mapping and planning stack: log-odds occupancy grids, exact
//! Euclidean distance fields (signed and unsigned), factor-graph trajectory
//! optimization with a constant-velocity Gaussian-process prior, and a
//! receding-horizon re-planner driven by a scripted world simulator.

pub mod config;
pub mod error;
pub mod experiments;
pub mod factors;
pub mod field;
pub mod gp;
pub mod grid;
pub mod occupancy;
pub mod optimize;
pub mod replan;
pub mod robot;
pub mod shapes;
pub mod timing;
pub mod trajectory;
pub mod world;

pub use config::{load_scenario, parse_scenario, Scenario, ScenarioConfig};
pub use error::{Error, Result};
pub use experiments::{
    case_setup, generate_problems, run_field_bench, run_refit_comparison, run_study,
    BenchDesign, BenchReport, StudyCase, StudyDesign, StudyResult,
};
pub use factors::{build_graph, FactorGraph, PlannerParams};
pub use field::{usdf_squared, DistanceField, FieldKind, FieldPublisher, FieldQuery};
pub use grid::{BinaryMask, GridSpec};
pub use occupancy::{
    IntegrationReport, LogOddsParams, OccupancyGrid, PointCloudFrame, RasterMode,
};
pub use optimize::{solve, LmParams, OptimizeResult, StopReason};
pub use replan::{
    estimate_parameters, refit_trajectory, run_replanning, still_valid, ExecutionLog,
    ReplanConfig, ReplanMode, RunStatus,
};
pub use robot::{builtin, CollisionSphere, Joint, JointKind, RobotModel};
pub use shapes::{Cuboid, Cylinder, Shape};
pub use timing::StageTimings;
pub use trajectory::{TrajState, Trajectory};
pub use world::{MovingObstacle, RaycastSensor, SensingMode, WorldSim};
