//! Scripted world simulator: static shapes plus waypoint-driven moving
//! obstacles, observed either omnisciently (shapes rasterized directly)
//! or through a simulated range sensor feeding the log-odds grid.
//!
//! Each step re-derives the occupancy mask; the distance field is rebuilt
//! only when the mask actually changed, so consumers holding the returned
//! `Arc` can detect "same field" by pointer identity.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{DistanceField, FieldKind};
use crate::grid::{BinaryMask, GridSpec};
use crate::occupancy::{LogOddsParams, OccupancyGrid, PointCloudFrame, RasterMode};
use crate::shapes::Shape;

/// A shape whose center follows piecewise-linear waypoints; the schedule
/// clamps before the first and after the last waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingObstacle {
    pub shape: Shape,
    /// `(time, center)` pairs with strictly increasing times.
    pub waypoints: Vec<(f64, [f64; 3])>,
}

impl MovingObstacle {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidParameter(
                "moving obstacle needs at least one waypoint".into(),
            ));
        }
        for w in self.waypoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!(
                    "waypoint times must increase strictly: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(())
    }

    pub fn center_at(&self, t: f64) -> [f64; 3] {
        let first = &self.waypoints[0];
        let last = self.waypoints.last().unwrap();
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        for w in self.waypoints.windows(2) {
            let (t0, c0) = w[0];
            let (t1, c1) = w[1];
            if t <= t1 {
                let a = (t - t0) / (t1 - t0);
                return [
                    c0[0] + a * (c1[0] - c0[0]),
                    c0[1] + a * (c1[1] - c0[1]),
                    c0[2] + a * (c1[2] - c0[2]),
                ];
            }
        }
        last.1
    }

    pub fn shape_at(&self, t: f64) -> Shape {
        self.shape.with_center(self.center_at(t))
    }
}

/// Simulated lat-long range sensor at a fixed position.
///
/// Azimuths sample `[az0, az1)` with `n_az` equal steps (a full sweep uses
/// `[-pi, pi)` without duplicating the seam); elevations sample `[el0, el1]`
/// inclusively. Rays that return nothing within `max_range` still clear the
/// voxels they traverse, which requires `max_range` to push their endpoints
/// outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaycastSensor {
    pub origin: [f64; 3],
    pub n_az: usize,
    pub n_el: usize,
    pub az_range: [f64; 2],
    pub el_range: [f64; 2],
    pub max_range: f64,
    /// Ground plane height; downward rays return there.
    pub floor_z: Option<f64>,
    /// Endpoints at or below this height clear the ray but are not marked.
    pub floor_band: f64,
}

impl Default for RaycastSensor {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0, 0.8],
            n_az: 180,
            n_el: 40,
            az_range: [-std::f64::consts::PI, std::f64::consts::PI],
            el_range: [-1.2, 0.4],
            max_range: 10.0,
            floor_z: Some(0.0),
            floor_band: 0.03,
        }
    }
}

impl RaycastSensor {
    fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.n_az == 0 || self.n_el == 0 {
            return Err(Error::InvalidParameter("sensor needs n_az, n_el >= 1".into()));
        }
        let o = Point3::from(self.origin);
        let lo = spec.min_corner();
        let hi = spec.max_corner();
        let mut farthest: f64 = 0.0;
        for i in 0..8 {
            let corner = Point3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            );
            farthest = farthest.max((corner - o).norm());
        }
        if self.max_range <= farthest {
            return Err(Error::InvalidParameter(format!(
                "sensor max_range {} must exceed the farthest grid corner ({farthest:.3}) so \
                 no-return rays clear through the grid",
                self.max_range
            )));
        }
        Ok(())
    }

    fn directions(&self) -> Vec<Vector3<f64>> {
        let mut dirs = Vec::with_capacity(self.n_az * self.n_el);
        for ei in 0..self.n_el {
            let el = if self.n_el == 1 {
                self.el_range[0]
            } else {
                self.el_range[0]
                    + (self.el_range[1] - self.el_range[0]) * ei as f64 / (self.n_el - 1) as f64
            };
            for ai in 0..self.n_az {
                let az = self.az_range[0]
                    + (self.az_range[1] - self.az_range[0]) * ai as f64 / self.n_az as f64;
                dirs.push(Vector3::new(
                    el.cos() * az.cos(),
                    el.cos() * az.sin(),
                    el.sin(),
                ));
            }
        }
        dirs
    }
}

#[derive(Debug, Clone)]
pub enum SensingMode {
    /// Rasterize the true shapes into a free grid every step.
    Omniscient,
    /// Accumulate simulated range returns in a persistent log-odds grid.
    Raycast(RaycastSensor),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WorldStats {
    pub steps: usize,
    /// Distance-field rebuilds (mask changed).
    pub rebuilds: usize,
}

pub struct WorldSim {
    statics: Vec<Shape>,
    moving: Vec<MovingObstacle>,
    mode: SensingMode,
    kind: FieldKind,
    occ: OccupancyGrid,
    mask: BinaryMask,
    field: Arc<DistanceField>,
    time: f64,
    stats: WorldStats,
}

impl WorldSim {
    pub fn new(
        spec: GridSpec,
        statics: Vec<Shape>,
        moving: Vec<MovingObstacle>,
        mode: SensingMode,
        kind: FieldKind,
    ) -> Result<Self> {
        for m in &moving {
            m.validate()?;
        }
        if let SensingMode::Raycast(s) = &mode {
            s.validate(&spec)?;
        }
        let occ = OccupancyGrid::new(spec.clone(), LogOddsParams::default())?;
        let mask = BinaryMask::filled(spec, true);
        let field = Arc::new(DistanceField::build(&mask, kind).0);
        let mut sim = Self {
            statics,
            moving,
            mode,
            kind,
            occ,
            mask,
            field,
            time: 0.0,
            stats: WorldStats::default(),
        };
        sim.sense(0.0);
        // Construction always senses once; stats report post-construction
        // activity only.
        sim.stats = WorldStats::default();
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn stats(&self) -> WorldStats {
        self.stats
    }

    pub fn field(&self) -> Arc<DistanceField> {
        self.field.clone()
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occ
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    /// True shapes at time `t`, for exact collision checks.
    pub fn obstacles_at(&self, t: f64) -> Vec<Shape> {
        let mut all = self.statics.clone();
        all.extend(self.moving.iter().map(|m| m.shape_at(t)));
        all
    }

    /// Advances the clock and refreshes the observed field. Returns true if
    /// the distance field was rebuilt.
    pub fn step_to(&mut self, t: f64) -> bool {
        self.sense(t)
    }

    fn sense(&mut self, t: f64) -> bool {
        self.time = t;
        self.stats.steps += 1;
        match &self.mode {
            SensingMode::Omniscient => {
                self.occ.reset_free();
                for s in &self.statics {
                    self.occ.rasterize_shape(s, RasterMode::Occupy);
                }
                let shapes: Vec<Shape> = self.moving.iter().map(|m| m.shape_at(t)).collect();
                for s in &shapes {
                    self.occ.rasterize_shape(s, RasterMode::Occupy);
                }
            }
            SensingMode::Raycast(sensor) => {
                let shapes = self.obstacles_at(t);
                let origin = Point3::from(sensor.origin);
                let mut points = Vec::new();
                for dir in sensor.directions() {
                    let mut nearest = f64::INFINITY;
                    for s in &shapes {
                        if let Some(h) = s.ray_hit(&origin, &dir) {
                            nearest = nearest.min(h);
                        }
                    }
                    if let Some(fz) = sensor.floor_z {
                        if dir.z < -1e-12 {
                            let h = (fz - origin.z) / dir.z;
                            if h > 0.0 {
                                nearest = nearest.min(h);
                            }
                        }
                    }
                    // No return: extend past max_range so the endpoint lies
                    // outside the grid and the ray only clears.
                    let reach = if nearest <= sensor.max_range {
                        nearest
                    } else {
                        sensor.max_range
                    };
                    points.push(origin + dir * reach);
                }
                let frame = PointCloudFrame {
                    sensor_origin: origin,
                    points,
                    stamp: t,
                };
                let band = match sensor.floor_z {
                    Some(fz) => fz + sensor.floor_band,
                    None => f64::NEG_INFINITY,
                };
                self.occ.integrate_cloud(&frame, band);
            }
        }
        let mask = self.occ.snapshot();
        if mask.bits() == self.mask.bits() {
            return false;
        }
        self.field = Arc::new(DistanceField::build(&mask, self.kind).0);
        self.mask = mask;
        self.stats.rebuilds += 1;
        true
    }

    /// Hex SHA-256 over the grid geometry and current occupancy bits.
    pub fn occupancy_hash(&self) -> String {
        let spec = self.mask.spec();
        let mut h = Sha256::new();
        for v in spec.origin {
            h.update(v.to_le_bytes());
        }
        h.update(spec.resolution.to_le_bytes());
        for d in spec.dims {
            h.update((d as u64).to_le_bytes());
        }
        let bytes: Vec<u8> = self.mask.bits().iter().map(|b| *b as u8).collect();
        h.update(&bytes);
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::Cuboid;

    fn desk_spec() -> GridSpec {
        GridSpec::new([-0.8, -0.8, 0.0], 0.05, [32, 32, 16]).unwrap()
    }

    fn box_at(center: [f64; 3]) -> Shape {
        Shape::Cuboid(Cuboid {
            center,
            half_extents: [0.1, 0.1, 0.1],
        })
    }

    #[test]
    fn moving_obstacle_interpolates_and_clamps() {
        let m = MovingObstacle {
            shape: box_at([0.0; 3]),
            waypoints: vec![(1.0, [0.0, 0.0, 0.0]), (2.0, [1.0, 0.0, 0.0])],
        };
        m.validate().unwrap();
        assert_eq!(m.center_at(0.5), [0.0, 0.0, 0.0]);
        assert_eq!(m.center_at(1.5), [0.5, 0.0, 0.0]);
        assert_eq!(m.center_at(3.0), [1.0, 0.0, 0.0]);
        let bad = MovingObstacle {
            shape: box_at([0.0; 3]),
            waypoints: vec![(1.0, [0.0; 3]), (1.0, [1.0, 0.0, 0.0])],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_world_reuses_field_across_steps() {
        let mut sim = WorldSim::new(
            desk_spec(),
            vec![box_at([0.2, 0.0, 0.1])],
            vec![],
            SensingMode::Omniscient,
            FieldKind::Signed,
        )
        .unwrap();
        let f0 = sim.field();
        for k in 1..=10 {
            let rebuilt = sim.step_to(k as f64 * 0.004);
            assert!(!rebuilt);
            assert!(Arc::ptr_eq(&f0, &sim.field()), "cached field must keep identity");
        }
        assert_eq!(sim.stats().rebuilds, 0);
    }

    #[test]
    fn moving_obstacle_rebuilds_only_on_voxel_crossings() {
        let m = MovingObstacle {
            shape: box_at([0.0; 3]),
            waypoints: vec![(0.0, [-0.5, 0.0, 0.1]), (2.0, [0.5, 0.0, 0.1])],
        };
        let mut sim = WorldSim::new(
            desk_spec(),
            vec![],
            vec![m],
            SensingMode::Omniscient,
            FieldKind::Signed,
        )
        .unwrap();
        let h0 = sim.occupancy_hash();
        let mut rebuilds = 0;
        let steps = 200;
        for k in 1..=steps {
            if sim.step_to(2.0 * k as f64 / steps as f64) {
                rebuilds += 1;
            }
        }
        // 1 m of travel at 0.05 m resolution: 20 crossings, far fewer than
        // 200 steps.
        assert!(rebuilds >= 10, "rebuilds {rebuilds}");
        assert!(rebuilds < 40, "rebuilds {rebuilds}");
        assert_ne!(sim.occupancy_hash(), h0);
    }

    #[test]
    fn omniscient_field_sees_true_shape() {
        let sim = WorldSim::new(
            desk_spec(),
            vec![box_at([0.2, 0.0, 0.1])],
            vec![],
            SensingMode::Omniscient,
            FieldKind::Signed,
        )
        .unwrap();
        let inside = sim.field().query(&Point3::new(0.2, 0.0, 0.1));
        assert!(inside.distance < 0.0);
        let outside = sim.field().query(&Point3::new(-0.5, -0.5, 0.4));
        assert!(outside.distance > 0.2);
    }

    #[test]
    fn raycast_clears_visible_space_and_keeps_occlusions_unknown() {
        let sensor = RaycastSensor {
            origin: [-0.7, 0.0, 0.4],
            n_az: 240,
            n_el: 60,
            el_range: [-0.9, 0.3],
            ..Default::default()
        };
        // Box faces off the voxel lattice so hit endpoints land strictly
        // inside a voxel.
        let mut sim = WorldSim::new(
            desk_spec(),
            vec![box_at([0.01, 0.0, 0.35])],
            vec![],
            SensingMode::Raycast(sensor),
            FieldKind::Unsigned,
        )
        .unwrap();
        sim.step_to(0.0);
        let mask = sim.mask();
        let spec = mask.spec().clone();
        // Between sensor and box: observed free.
        let front = spec.world_to_voxel(&Point3::new(-0.4, 0.0, 0.375)).unwrap();
        assert!(!mask.get(front), "visible free space must be cleared");
        // Box surface facing the sensor (face plane x = -0.09): occupied.
        let face = spec.world_to_voxel(&Point3::new(-0.07, 0.0, 0.375)).unwrap();
        assert!(mask.get(face), "hit surface must be occupied");
        assert!(sim.occupancy().log_odds(face) > 0.0);
        // Shadow behind the box at the same height: never observed.
        let shadow = spec.world_to_voxel(&Point3::new(0.4, 0.0, 0.375)).unwrap();
        assert!(mask.get(shadow), "occluded space stays unknown (occupied)");
        assert_eq!(sim.occupancy().log_odds(shadow), 0.0);
    }

    #[test]
    fn floor_returns_clear_space_without_marking_the_floor() {
        let mk = |floor_band: f64| {
            let sensor = RaycastSensor {
                origin: [0.0, 0.0, 0.6],
                n_az: 360,
                n_el: 40,
                el_range: [-1.3, -0.2],
                floor_band,
                ..Default::default()
            };
            let mut sim = WorldSim::new(
                desk_spec(),
                vec![],
                vec![],
                SensingMode::Raycast(sensor),
                FieldKind::Unsigned,
            )
            .unwrap();
            sim.step_to(0.0);
            sim
        };
        let sim = mk(0.03);
        let spec = sim.mask().spec().clone();
        let mid = spec.world_to_voxel(&Point3::new(0.2, 0.0, 0.325)).unwrap();
        assert!(!sim.mask().get(mid), "air above the floor must be cleared");
        // Suppressed floor returns never push any bottom-layer voxel towards
        // occupied; neighbouring rays may still clear it.
        for i in 0..spec.dims[0] {
            for j in 0..spec.dims[1] {
                assert!(sim.occupancy().log_odds([i, j, 0]) <= 0.0);
            }
        }
        // Without the suppression band the same returns mark the floor.
        let raw = mk(-0.01);
        let marked = raw
            .mask()
            .spec()
            .iter_voxels()
            .filter(|v| v[2] == 0 && raw.occupancy().log_odds(*v) > 0.0)
            .count();
        assert!(marked > 0, "control case must mark floor hits");
    }

    #[test]
    fn short_max_range_is_rejected() {
        let sensor = RaycastSensor {
            max_range: 0.5,
            ..Default::default()
        };
        let err = WorldSim::new(
            desk_spec(),
            vec![],
            vec![],
            SensingMode::Raycast(sensor),
            FieldKind::Unsigned,
        );
        assert!(err.is_err());
    }

    #[test]
    fn occupancy_hash_is_deterministic() {
        let build = || {
            let m = MovingObstacle {
                shape: box_at([0.0; 3]),
                waypoints: vec![(0.0, [-0.5, 0.0, 0.1]), (2.0, [0.5, 0.0, 0.1])],
            };
            let mut sim = WorldSim::new(
                desk_spec(),
                vec![box_at([0.3, 0.3, 0.1])],
                vec![m],
                SensingMode::Omniscient,
                FieldKind::Signed,
            )
            .unwrap();
            sim.step_to(0.73);
            sim.occupancy_hash()
        };
        assert_eq!(build(), build());
    }
}
