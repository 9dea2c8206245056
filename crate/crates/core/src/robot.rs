//! Kinematic chains with sphere collision geometry.
//!
//! A model is an optional planar (x, y, yaw) base followed by a serial chain
//! of revolute or prismatic joints. Collision spheres attach to frames:
//! frame 0 is the base link, frame j (j >= 1) is the link after joint j.
//! Sphere centers and their analytic configuration-space Jacobians are the
//! only geometry the planner sees.

use nalgebra::{DVector, Isometry3, Matrix3xX, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One chain joint. `origin` is the fixed transform from the previous frame
/// to this joint's frame; `axis` is expressed in the joint frame.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub limits: [f64; 2],
    pub vmax: f64,
}

/// Planar base: configuration (x, y, yaw), motion in the z = 0 plane.
#[derive(Debug, Clone)]
pub struct PlanarBase {
    pub limits_x: [f64; 2],
    pub limits_y: [f64; 2],
    pub vmax_linear: f64,
    pub vmax_yaw: f64,
}

#[derive(Debug, Clone)]
pub enum BaseKind {
    Fixed,
    Planar(PlanarBase),
}

#[derive(Debug, Clone)]
pub struct CollisionSphere {
    /// Frame index: 0 = base link, j = link after joint j.
    pub frame: usize,
    pub offset: Point3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub base: BaseKind,
    pub joints: Vec<Joint>,
    pub spheres: Vec<CollisionSphere>,
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        let n_frames = self.joints.len() + 1;
        for (i, s) in self.spheres.iter().enumerate() {
            if s.frame >= n_frames {
                return Err(Error::InvalidParameter(format!(
                    "sphere {i} attaches to frame {} but the chain has {n_frames} frames",
                    s.frame
                )));
            }
            if !(s.radius > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "sphere {i} has non-positive radius {}",
                    s.radius
                )));
            }
        }
        if self.spheres.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "robot {} has no collision spheres",
                self.name
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limits[0] <= j.limits[1]) {
                return Err(Error::InvalidParameter(format!(
                    "joint {i} ({}) has inverted limits",
                    j.name
                )));
            }
            if !(j.vmax > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "joint {i} ({}) has non-positive vmax",
                    j.name
                )));
            }
        }
        Ok(())
    }

    pub fn base_dof(&self) -> usize {
        match self.base {
            BaseKind::Fixed => 0,
            BaseKind::Planar(_) => 3,
        }
    }

    pub fn dof(&self) -> usize {
        self.base_dof() + self.joints.len()
    }

    pub fn n_spheres(&self) -> usize {
        self.spheres.len()
    }

    pub fn max_sphere_radius(&self) -> f64 {
        self.spheres.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    /// Per-DoF velocity limits in configuration order.
    pub fn vmax(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dof());
        if let BaseKind::Planar(b) = &self.base {
            v.push(b.vmax_linear);
            v.push(b.vmax_linear);
            v.push(b.vmax_yaw);
        }
        v.extend(self.joints.iter().map(|j| j.vmax));
        DVector::from_vec(v)
    }

    /// Per-DoF position limits in configuration order. The yaw component of
    /// a planar base is unbounded and reported as plus/minus pi.
    pub fn limits(&self) -> Vec<[f64; 2]> {
        let mut l = Vec::with_capacity(self.dof());
        if let BaseKind::Planar(b) = &self.base {
            l.push(b.limits_x);
            l.push(b.limits_y);
            l.push([-std::f64::consts::PI, std::f64::consts::PI]);
        }
        l.extend(self.joints.iter().map(|j| j.limits));
        l
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch(format!(
                "configuration has {} values, robot {} has {} DoF",
                q.len(),
                self.name,
                self.dof()
            )));
        }
        Ok(())
    }

    /// Forward kinematics: world pose of every frame (base link first).
    pub fn frames(&self, q: &DVector<f64>) -> Result<Vec<Isometry3<f64>>> {
        self.check_q(q)?;
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let base_dof = self.base_dof();
        let base = match &self.base {
            BaseKind::Fixed => Isometry3::identity(),
            BaseKind::Planar(_) => Isometry3::from_parts(
                Translation3::new(q[0], q[1], 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[2]),
            ),
        };
        frames.push(base);
        for (j, joint) in self.joints.iter().enumerate() {
            let qj = q[base_dof + j];
            let motion = match joint.kind {
                JointKind::Revolute => Isometry3::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_axis_angle(&joint.axis, qj),
                ),
                JointKind::Prismatic => Isometry3::from_parts(
                    Translation3::from(joint.axis.into_inner() * qj),
                    UnitQuaternion::identity(),
                ),
            };
            let prev = *frames.last().unwrap();
            frames.push(prev * joint.origin * motion);
        }
        Ok(frames)
    }

    /// World-space sphere centers at configuration `q`.
    pub fn sphere_centers(&self, q: &DVector<f64>) -> Result<Vec<Point3<f64>>> {
        let frames = self.frames(q)?;
        Ok(self
            .spheres
            .iter()
            .map(|s| frames[s.frame] * s.offset)
            .collect())
    }

    /// Sphere centers plus one 3 x dof Jacobian per sphere: column d is the
    /// world velocity of the center under unit velocity of DoF d.
    pub fn sphere_jacobians(&self, q: &DVector<f64>) -> Result<(Vec<Point3<f64>>, Vec<Matrix3xX<f64>>)> {
        let frames = self.frames(q)?;
        let centers: Vec<Point3<f64>> = self
            .spheres
            .iter()
            .map(|s| frames[s.frame] * s.offset)
            .collect();
        let dof = self.dof();
        let base_dof = self.base_dof();

        // World axis and origin of each joint before its own motion. The
        // motion of joint j (rotation about its own axis or translation
        // along it) leaves both unchanged.
        let mut joint_axis = Vec::with_capacity(self.joints.len());
        let mut joint_origin = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            let pre = frames[j] * joint.origin;
            joint_axis.push(pre.rotation * joint.axis.into_inner());
            joint_origin.push(Point3::from(pre.translation.vector));
        }

        let mut jacobians = Vec::with_capacity(self.spheres.len());
        for (s, center) in self.spheres.iter().zip(centers.iter()) {
            let mut jac = Matrix3xX::zeros(dof);
            if base_dof == 3 {
                let base_origin = Point3::from(frames[0].translation.vector);
                jac.set_column(0, &Vector3::x());
                jac.set_column(1, &Vector3::y());
                jac.set_column(2, &Vector3::z().cross(&(center - base_origin)));
            }
            // Joint j moves the sphere only when the sphere's frame comes
            // after the joint in the chain.
            for j in 0..self.joints.len() {
                if s.frame < j + 1 {
                    continue;
                }
                let col = match self.joints[j].kind {
                    JointKind::Revolute => joint_axis[j].cross(&(center - joint_origin[j])),
                    JointKind::Prismatic => joint_axis[j],
                };
                jac.set_column(base_dof + j, &col);
            }
            jacobians.push(jac);
        }
        Ok((centers, jacobians))
    }
}

/// 2-DoF holonomic point robot: two prismatic joints (x, then y) carrying a
/// single disc sphere at a fixed height.
pub fn nav2d() -> RobotModel {
    let lim = 1.4;
    RobotModel {
        name: "nav2d".into(),
        base: BaseKind::Fixed,
        joints: vec![
            Joint {
                name: "slide_x".into(),
                kind: JointKind::Prismatic,
                origin: Isometry3::identity(),
                axis: Vector3::x_axis(),
                limits: [-lim, lim],
                vmax: 0.5,
            },
            Joint {
                name: "slide_y".into(),
                kind: JointKind::Prismatic,
                origin: Isometry3::identity(),
                axis: Vector3::y_axis(),
                limits: [-lim, lim],
                vmax: 0.5,
            },
        ],
        spheres: vec![CollisionSphere {
            frame: 2,
            offset: Point3::new(0.0, 0.0, 0.0),
            radius: 0.1,
        }],
    }
}

/// 7-DoF fixed-base arm with alternating z/y axes and link lengths in the
/// 0.15-0.35 m range; spheres cover the column and every link.
pub fn arm7() -> RobotModel {
    let zl = |dz: f64| Isometry3::translation(0.0, 0.0, dz);
    let joints = vec![
        ("j1", JointKind::Revolute, zl(0.15), Vector3::z_axis(), 2.9, 1.5),
        ("j2", JointKind::Revolute, zl(0.20), Vector3::y_axis(), 2.0, 1.5),
        ("j3", JointKind::Revolute, zl(0.20), Vector3::z_axis(), 2.9, 1.5),
        ("j4", JointKind::Revolute, zl(0.25), Vector3::y_axis(), 2.2, 1.5),
        ("j5", JointKind::Revolute, zl(0.20), Vector3::z_axis(), 2.9, 1.8),
        ("j6", JointKind::Revolute, zl(0.15), Vector3::y_axis(), 2.2, 1.8),
        ("j7", JointKind::Revolute, zl(0.15), Vector3::z_axis(), 2.9, 1.8),
    ]
    .into_iter()
    .map(|(name, kind, origin, axis, lim, vmax)| Joint {
        name: name.into(),
        kind,
        origin,
        axis,
        limits: [-lim, lim],
        vmax,
    })
    .collect();

    let sph = |frame: usize, z: f64, radius: f64| CollisionSphere {
        frame,
        offset: Point3::new(0.0, 0.0, z),
        radius,
    };
    RobotModel {
        name: "arm7".into(),
        base: BaseKind::Fixed,
        joints,
        spheres: vec![
            sph(0, 0.08, 0.09),
            sph(1, 0.10, 0.08),
            sph(2, 0.10, 0.08),
            sph(3, 0.08, 0.07),
            sph(3, 0.18, 0.07),
            sph(4, 0.10, 0.07),
            sph(5, 0.08, 0.06),
            sph(6, 0.08, 0.06),
            sph(7, 0.05, 0.06),
            sph(7, 0.12, 0.05),
        ],
    }
}

/// 8-DoF mobile manipulator: planar holonomic base plus a 5-joint arm
/// mounted on a torso column. The base sphere uses the maximum modelled
/// radius of 0.3 m.
pub fn wholebody8() -> RobotModel {
    let joints = vec![
        Joint {
            name: "shoulder_yaw".into(),
            kind: JointKind::Revolute,
            origin: Isometry3::translation(0.12, 0.0, 0.55),
            axis: Vector3::z_axis(),
            limits: [-2.8, 2.8],
            vmax: 1.2,
        },
        Joint {
            name: "shoulder_pitch".into(),
            kind: JointKind::Revolute,
            origin: Isometry3::translation(0.0, 0.0, 0.10),
            axis: Vector3::y_axis(),
            limits: [-1.8, 1.8],
            vmax: 1.2,
        },
        Joint {
            name: "elbow".into(),
            kind: JointKind::Revolute,
            origin: Isometry3::translation(0.22, 0.0, 0.0),
            axis: Vector3::y_axis(),
            limits: [-2.2, 2.2],
            vmax: 1.5,
        },
        Joint {
            name: "wrist_pitch".into(),
            kind: JointKind::Revolute,
            origin: Isometry3::translation(0.22, 0.0, 0.0),
            axis: Vector3::y_axis(),
            limits: [-1.9, 1.9],
            vmax: 1.5,
        },
        Joint {
            name: "wrist_roll".into(),
            kind: JointKind::Revolute,
            origin: Isometry3::translation(0.12, 0.0, 0.0),
            axis: Vector3::x_axis(),
            limits: [-2.9, 2.9],
            vmax: 1.8,
        },
    ];
    let sph = |frame: usize, x: f64, z: f64, radius: f64| CollisionSphere {
        frame,
        offset: Point3::new(x, 0.0, z),
        radius,
    };
    RobotModel {
        name: "wholebody8".into(),
        base: BaseKind::Planar(PlanarBase {
            limits_x: [-1.4, 1.4],
            limits_y: [-1.4, 1.4],
            vmax_linear: 0.4,
            vmax_yaw: 1.0,
        }),
        joints,
        spheres: vec![
            sph(0, 0.0, 0.22, 0.30),
            sph(0, 0.0, 0.55, 0.22),
            sph(1, 0.0, 0.05, 0.10),
            sph(2, 0.11, 0.0, 0.07),
            sph(3, 0.11, 0.0, 0.07),
            sph(4, 0.06, 0.0, 0.06),
            sph(5, 0.05, 0.0, 0.05),
        ],
    }
}

/// Looks a builtin model up by name.
pub fn builtin(name: &str) -> Result<RobotModel> {
    match name {
        "nav2d" => Ok(nav2d()),
        "arm7" => Ok(arm7()),
        "wholebody8" => Ok(wholebody8()),
        other => Err(Error::Config(format!(
            "unknown builtin robot {other:?} (expected nav2d, arm7, or wholebody8)"
        ))),
    }
}
