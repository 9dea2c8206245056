//! TOML scenario schema: robot, grid, field kind, sensing, start/goal,
//! obstacles, planner weights, and execution settings in one file.
//!
//! Parsing is strict: unknown keys are rejected and syntax/type errors carry
//! the line and column reported by the TOML parser. Robot descriptions use a
//! plain data form (xyz + rpy origins, axis triples) that converts into
//! [`RobotModel`] on load; `builtin = "name"` pulls in a bundled model
//! instead.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DVector, Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::PlannerParams;
use crate::field::FieldKind;
use crate::grid::GridSpec;
use crate::replan::ReplanConfig;
use crate::robot::{
    builtin, BaseKind, CollisionSphere, Joint, JointKind, PlanarBase, RobotModel,
};
use crate::shapes::Shape;
use crate::world::{MovingObstacle, RaycastSensor, SensingMode, WorldSim};

pub const SCHEMA_VERSION: u32 = 1;

/// Joint in data form: `origin = translation(xyz) * rotation(rpy)` with
/// intrinsic roll-pitch-yaw angles, axis in the joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDesc {
    pub name: String,
    pub kind: JointKind,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereDesc {
    pub frame: usize,
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDesc {
    Fixed,
    Planar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarDesc {
    pub limits_x: [f64; 2],
    pub limits_y: [f64; 2],
    pub vmax_linear: f64,
    pub vmax_yaw: f64,
}

/// Either `builtin = "nav2d" | "arm7" | "wholebody8"` or a full description
/// (name, base, joints, spheres); mixing the two is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar: Option<PlanarDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<JointDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spheres: Vec<SphereDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub kind: FieldKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingModeDesc {
    Omniscient,
    Raycast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub mode: SensingModeDesc,
    /// Sensor geometry; only meaningful for `mode = "raycast"` (defaulted
    /// there when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<RaycastSensor>,
}

impl Default for SensingSection {
    fn default() -> Self {
        Self {
            mode: SensingModeDesc::Omniscient,
            sensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

/// Whole scenario file. `PartialEq` backs round-trip checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub robot: RobotSection,
    pub grid: GridSpec,
    pub field: FieldSection,
    #[serde(default)]
    pub sensing: SensingSection,
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub static_obstacles: Vec<Shape>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moving_obstacles: Vec<MovingObstacle>,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub replan: ReplanConfig,
}

/// Validated, ready-to-run form of a scenario file.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Arc<RobotModel>,
    pub spec: GridSpec,
    pub field_kind: FieldKind,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub planner: PlannerParams,
    pub replan: ReplanConfig,
    pub seed: u64,
}

fn build_robot(section: &RobotSection) -> Result<RobotModel> {
    if let Some(name) = &section.builtin {
        if section.name.is_some()
            || section.base.is_some()
            || section.planar.is_some()
            || !section.joints.is_empty()
            || !section.spheres.is_empty()
        {
            return Err(Error::Config(
                "robot: builtin cannot be combined with a custom description".into(),
            ));
        }
        return builtin(name);
    }
    let name = section
        .name
        .clone()
        .ok_or_else(|| Error::Config("robot: missing `name` (or use `builtin`)".into()))?;
    let base = match section.base.unwrap_or(BaseDesc::Fixed) {
        BaseDesc::Fixed => {
            if section.planar.is_some() {
                return Err(Error::Config(
                    "robot: `planar` table given but base is fixed".into(),
                ));
            }
            BaseKind::Fixed
        }
        BaseDesc::Planar => {
            let p = section.planar.as_ref().ok_or_else(|| {
                Error::Config("robot: planar base needs a `planar` table".into())
            })?;
            BaseKind::Planar(PlanarBase {
                limits_x: p.limits_x,
                limits_y: p.limits_y,
                vmax_linear: p.vmax_linear,
                vmax_yaw: p.vmax_yaw,
            })
        }
    };
    let joints = section
        .joints
        .iter()
        .map(|j| {
            let axis = Vector3::new(j.axis[0], j.axis[1], j.axis[2]);
            if axis.norm() < 1e-12 {
                return Err(Error::Config(format!(
                    "robot: joint `{}` has a zero axis",
                    j.name
                )));
            }
            let rot = UnitQuaternion::from_euler_angles(j.rpy[0], j.rpy[1], j.rpy[2]);
            Ok(Joint {
                name: j.name.clone(),
                kind: j.kind,
                origin: Isometry3::from_parts(
                    Translation3::new(j.xyz[0], j.xyz[1], j.xyz[2]),
                    rot,
                ),
                axis: Unit::new_normalize(axis),
                limits: j.limits,
                vmax: j.vmax,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spheres = section
        .spheres
        .iter()
        .map(|s| CollisionSphere {
            frame: s.frame,
            offset: Point3::new(s.offset[0], s.offset[1], s.offset[2]),
            radius: s.radius,
        })
        .collect();
    let model = RobotModel {
        name,
        base,
        joints,
        spheres,
    };
    model.validate()?;
    Ok(model)
}

impl ScenarioConfig {
    pub fn build(self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let model = build_robot(&self.robot)?;
        let spec = GridSpec::new(self.grid.origin, self.grid.resolution, self.grid.dims)?;
        if self.problem.start.len() != model.dof() || self.problem.goal.len() != model.dof() {
            return Err(Error::Config(format!(
                "problem: start/goal have {}/{} values, robot `{}` has {} DoF",
                self.problem.start.len(),
                self.problem.goal.len(),
                model.name,
                model.dof()
            )));
        }
        for m in &self.moving_obstacles {
            m.validate()?;
        }
        self.planner.validate()?;
        self.replan.validate()?;
        let start = DVector::from_column_slice(&self.problem.start);
        let goal = DVector::from_column_slice(&self.problem.goal);
        Ok(Scenario {
            model: Arc::new(model),
            spec,
            field_kind: self.field.kind,
            start,
            goal,
            planner: self.planner.clone(),
            replan: self.replan.clone(),
            seed: self.seed,
            config: self,
        })
    }
}

impl Scenario {
    fn sensing_mode(&self) -> SensingMode {
        match self.config.sensing.mode {
            SensingModeDesc::Omniscient => SensingMode::Omniscient,
            SensingModeDesc::Raycast => SensingMode::Raycast(
                self.config.sensing.sensor.clone().unwrap_or_default(),
            ),
        }
    }

    /// Fresh world at t = 0 with this scenario's obstacles and sensing.
    pub fn world(&self) -> Result<WorldSim> {
        WorldSim::new(
            self.spec.clone(),
            self.config.static_obstacles.clone(),
            self.config.moving_obstacles.clone(),
            self.sensing_mode(),
            self.field_kind,
        )
    }
}

/// Parses a scenario from TOML text. Syntax and schema violations surface
/// the parser's line/column diagnostics.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.build()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 7

[robot]
builtin = "nav2d"

[grid]
origin = [-1.5, -1.5, 0.0]
resolution = 0.05
dims = [60, 60, 8]

[field]
kind = "signed"

[problem]
start = [-1.0, 0.0]
goal = [1.0, 0.0]

[[static_obstacles]]
kind = "cuboid"
center = [0.0, 0.0, 0.2]
half_extents = [0.15, 0.15, 0.2]
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.model.name, "nav2d");
        assert_eq!(s.model.dof(), 2);
        assert_eq!(s.field_kind, FieldKind::Signed);
        assert_eq!(s.seed, 7);
        assert_eq!(s.start.as_slice(), &[-1.0, 0.0]);
        assert_eq!(s.config.static_obstacles.len(), 1);
        // Defaults fill the omitted planner/replan/sensing sections.
        assert_eq!(s.planner, PlannerParams::default());
        assert_eq!(s.replan, ReplanConfig::default());
        let world = s.world().unwrap();
        assert!(world.field().query(&Point3::new(0.0, 0.0, 0.2)).distance < 0.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = parse_scenario(MINIMAL).unwrap();
        let text = toml::to_string_pretty(&s.config).unwrap();
        let again = parse_scenario(&text).unwrap();
        assert_eq!(s.config, again.config);
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\nturbo = true");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("turbo"), "{err}");
        assert!(err.contains("line"), "diagnostic should cite a line: {err}");
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("kind = \"signed\"", "");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("kind"), "{err}");
    }

    #[test]
    fn type_error_cites_line() {
        let text = MINIMAL.replace("resolution = 0.05", "resolution = \"fine\"");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn wrong_dof_rejected() {
        let text = MINIMAL.replace("start = [-1.0, 0.0]", "start = [-1.0, 0.0, 0.3]");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("DoF"), "{err}");
    }

    #[test]
    fn bad_schema_version_rejected() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 3");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn custom_robot_description() {
        let text = r#"
schema_version = 1

[robot]
name = "stick2"
base = "fixed"

[[robot.joints]]
name = "pan"
kind = "revolute"
xyz = [0.0, 0.0, 0.2]
axis = [0.0, 0.0, 1.0]
limits = [-2.5, 2.5]
vmax = 1.5

[[robot.joints]]
name = "lift"
kind = "revolute"
xyz = [0.0, 0.0, 0.1]
rpy = [0.0, 0.0, 0.0]
axis = [0.0, 1.0, 0.0]
limits = [-2.0, 2.0]
vmax = 1.5

[[robot.spheres]]
frame = 2
offset = [0.15, 0.0, 0.0]
radius = 0.06

[grid]
origin = [-0.6, -0.6, -0.1]
resolution = 0.05
dims = [24, 24, 16]

[field]
kind = "unsigned"

[problem]
start = [0.0, 0.5]
goal = [1.0, -0.5]
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.model.dof(), 2);
        assert_eq!(s.model.n_spheres(), 1);
        // FK sanity: at q = 0 the sphere sits on the second link, which
        // stacks 0.2 + 0.1 up then reaches 0.15 along x.
        let q = DVector::zeros(2);
        let centers = s.model.sphere_centers(&q).unwrap();
        let c = centers[0];
        assert!((c.x - 0.15).abs() < 1e-12 && (c.z - 0.3).abs() < 1e-12);
    }

    #[test]
    fn builtin_mixed_with_custom_rejected() {
        let text = MINIMAL.replace("builtin = \"nav2d\"", "builtin = \"nav2d\"\nname = \"x\"");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("builtin"), "{err}");
    }

    #[test]
    fn raycast_sensing_section() {
        let text = MINIMAL.replace(
            "[problem]",
            "[sensing]\nmode = \"raycast\"\n\n[sensing.sensor]\norigin = [0.0, 0.0, 0.3]\nn_az = 90\nn_el = 20\naz_range = [-3.141592653589793, 3.141592653589793]\nel_range = [-1.2, 0.4]\nmax_range = 8.0\nfloor_z = 0.0\nfloor_band = 0.03\n\n[problem]",
        );
        let s = parse_scenario(&text).unwrap();
        let world = s.world().unwrap();
        // Raycast worlds keep persistent occupancy; just check construction
        // sensed something near the obstacle.
        assert!(world.occupancy().snapshot().occupied_count() > 0);
    }
}
