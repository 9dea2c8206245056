//! Log-odds occupancy grid with ray-cast integration of point clouds and
//! direct rasterization of analytic shapes.
//!
//! Voxels start at log-odds 0 (unknown). The snapshot rule treats log-odds
//! greater than or equal to `occupied_threshold` as occupied, so unknown
//! space is conservatively occupied until observed.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridSpec};
use crate::shapes::Shape;
use crate::timing::StageTimings;

/// Log-odds update model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddsParams {
    /// Added to the endpoint voxel of a returned point.
    pub hit_delta: f64,
    /// Added to every voxel a ray traverses before its endpoint.
    pub miss_delta: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Log-odds >= this value marks a voxel occupied (closed comparison).
    pub occupied_threshold: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        Self {
            hit_delta: 0.85,
            miss_delta: -0.4,
            clamp_min: -2.0,
            clamp_max: 3.5,
            occupied_threshold: 0.0,
        }
    }
}

impl LogOddsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_min < self.clamp_max) {
            return Err(Error::InvalidParameter(format!(
                "clamp_min {} must be < clamp_max {}",
                self.clamp_min, self.clamp_max
            )));
        }
        if !(self.hit_delta > 0.0) {
            return Err(Error::InvalidParameter(
                "hit_delta must be positive".into(),
            ));
        }
        if !(self.miss_delta < 0.0) {
            return Err(Error::InvalidParameter(
                "miss_delta must be negative".into(),
            ));
        }
        Ok(())
    }
}

/// One sensor frame: ray origin plus returned points, all in world frame.
#[derive(Debug, Clone)]
pub struct PointCloudFrame {
    pub sensor_origin: Point3<f64>,
    pub points: Vec<Point3<f64>>,
    pub stamp: f64,
}

/// Counters and stage timings from one integration pass.
#[derive(Debug, Clone, Default)]
pub struct IntegrationReport {
    pub rays: usize,
    pub skipped_zero_length: usize,
    pub clipped: usize,
    pub hits_applied: usize,
    pub floor_suppressed: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterMode {
    Occupy,
    Clear,
}

/// Dense log-odds voxel map.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    spec: GridSpec,
    params: LogOddsParams,
    logodds: Vec<f64>,
}

/// Rays shorter than this are counted as zero-length and skipped.
const MIN_RAY_LENGTH: f64 = 1e-9;

impl OccupancyGrid {
    pub fn new(spec: GridSpec, params: LogOddsParams) -> Result<Self> {
        params.validate()?;
        let logodds = vec![0.0; spec.len()];
        Ok(Self {
            spec,
            params,
            logodds,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn params(&self) -> &LogOddsParams {
        &self.params
    }

    pub fn log_odds(&self, v: [usize; 3]) -> f64 {
        self.logodds[self.spec.linear(v)]
    }

    /// Sets every voxel to the free clamp (used by the omniscient world
    /// rebuild, which rasterizes obstacles from scratch each step).
    pub fn reset_free(&mut self) {
        self.logodds.fill(self.params.clamp_min);
    }

    /// Sets every voxel back to unknown (log-odds 0).
    pub fn reset_unknown(&mut self) {
        self.logodds.fill(0.0);
    }

    #[inline]
    fn apply(&mut self, idx: usize, delta: f64) {
        let v = self.logodds[idx] + delta;
        self.logodds[idx] = v.clamp(self.params.clamp_min, self.params.clamp_max);
    }

    /// Integrates one sensor frame. Every voxel traversed by a ray before
    /// its endpoint receives `miss_delta`; the endpoint voxel receives
    /// `hit_delta` unless the point lies at or below `floor_band` (world z,
    /// metres), in which case the ray clears but the endpoint is untouched.
    /// Rays and endpoints outside the grid are clipped at the boundary.
    pub fn integrate_cloud(
        &mut self,
        frame: &PointCloudFrame,
        floor_band: f64,
    ) -> IntegrationReport {
        let mut report = IntegrationReport::default();
        let mut timings = StageTimings::new();

        // Stage 1: transform points into clipped grid segments.
        let segments: Vec<ClippedRay> = timings.record("cloud_transform", || {
            frame
                .points
                .iter()
                .filter_map(|p| {
                    report.rays += 1;
                    match self.clip_ray(&frame.sensor_origin, p) {
                        ClipOutcome::ZeroLength => {
                            report.skipped_zero_length += 1;
                            None
                        }
                        ClipOutcome::Outside => None,
                        ClipOutcome::Segment(seg) => {
                            if seg.clipped {
                                report.clipped += 1;
                            }
                            Some(seg)
                        }
                    }
                })
                .collect()
        });

        // Stage 2: ray traversal and log-odds updates.
        timings.record("raycast_integration", || {
            for seg in &segments {
                self.traverse_and_update(seg);
                if let Some(end) = seg.endpoint_voxel {
                    if seg.endpoint_z <= floor_band {
                        report.floor_suppressed += 1;
                    } else {
                        let idx = self.spec.linear(end);
                        self.apply(idx, self.params.hit_delta);
                        report.hits_applied += 1;
                    }
                }
            }
        });

        report.timings = timings;
        report
    }

    fn clip_ray(&self, origin: &Point3<f64>, point: &Point3<f64>) -> ClipOutcome {
        let d = point - origin;
        if d.norm() < MIN_RAY_LENGTH {
            return ClipOutcome::ZeroLength;
        }
        let lo = self.spec.min_corner();
        let hi = self.spec.max_corner();
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    return ClipOutcome::Outside;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return ClipOutcome::Outside;
            }
        }
        let endpoint_voxel = self.spec.world_to_voxel(point);
        ClipOutcome::Segment(ClippedRay {
            origin: *origin,
            dir: d,
            t0,
            t1,
            endpoint_voxel,
            endpoint_z: point.z,
            clipped: t0 > 0.0 || t1 < 1.0,
        })
    }

    /// Amanatides-Woo integer traversal over the clipped segment, applying
    /// `miss_delta` to each visited voxel except the endpoint voxel.
    fn traverse_and_update(&mut self, seg: &ClippedRay) {
        let spec = self.spec.clone();
        let res = spec.resolution;
        let start = seg.origin + seg.dir * seg.t0;
        let end = seg.origin + seg.dir * seg.t1;

        let clamp_into = |p: &Point3<f64>| -> [i64; 3] {
            let mut v = spec.voxel_of(p);
            for a in 0..3 {
                v[a] = v[a].clamp(0, spec.dims[a] as i64 - 1);
            }
            v
        };
        let mut cur = clamp_into(&start);
        let last = clamp_into(&end);

        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if seg.dir[a] > 1e-15 {
                step[a] = 1;
                let boundary = spec.origin[a] + (cur[a] + 1) as f64 * res;
                t_max[a] = (boundary - seg.origin[a]) / seg.dir[a];
                t_delta[a] = res / seg.dir[a];
            } else if seg.dir[a] < -1e-15 {
                step[a] = -1;
                let boundary = spec.origin[a] + cur[a] as f64 * res;
                t_max[a] = (boundary - seg.origin[a]) / seg.dir[a];
                t_delta[a] = res / -seg.dir[a];
            }
        }

        let max_steps = spec.dims.iter().sum::<usize>() + 3;
        for _ in 0..max_steps {
            let cur_u = [cur[0] as usize, cur[1] as usize, cur[2] as usize];
            let at_endpoint = seg.endpoint_voxel == Some(cur_u);
            if !at_endpoint {
                let idx = spec.linear(cur_u);
                self.apply(idx, self.params.miss_delta);
            }
            if cur == last || at_endpoint {
                break;
            }
            let axis = (0..3)
                .min_by(|&a, &b| t_max[a].partial_cmp(&t_max[b]).unwrap())
                .unwrap();
            if t_max[axis] > seg.t1 + 1e-12 {
                break;
            }
            cur[axis] += step[axis];
            if !spec.contains_voxel(cur) {
                break;
            }
            t_max[axis] += t_delta[axis];
        }
    }

    /// Sets every voxel whose center lies inside the shape (closed test) to
    /// the occupied or free clamp. Returns the number of voxels written.
    /// Idempotent: repeating the call does not change the grid further.
    pub fn rasterize_shape(&mut self, shape: &Shape, mode: RasterMode) -> usize {
        let (lo, hi) = shape.aabb();
        let spec = self.spec.clone();
        let res = spec.resolution;
        let mut range = [[0usize; 2]; 3];
        for a in 0..3 {
            // Conservative index range containing every center that could
            // satisfy the closed containment test.
            let lo_i = ((lo[a] - spec.origin[a]) / res - 0.5).floor().max(0.0) as usize;
            let hi_f = ((hi[a] - spec.origin[a]) / res - 0.5).ceil();
            if hi_f < 0.0 {
                return 0;
            }
            let hi_i = (hi_f as usize).min(spec.dims[a] - 1);
            if lo_i > hi_i {
                return 0;
            }
            range[a] = [lo_i, hi_i];
        }
        let value = match mode {
            RasterMode::Occupy => self.params.clamp_max,
            RasterMode::Clear => self.params.clamp_min,
        };
        let mut written = 0;
        for k in range[2][0]..=range[2][1] {
            for j in range[1][0]..=range[1][1] {
                for i in range[0][0]..=range[0][1] {
                    let c = spec.voxel_center([i, j, k]);
                    if shape.contains(&c) {
                        self.logodds[spec.linear([i, j, k])] = value;
                        written += 1;
                    }
                }
            }
        }
        written
    }

    pub fn rasterize_cuboid(&mut self, cuboid: &crate::shapes::Cuboid, mode: RasterMode) -> usize {
        self.rasterize_shape(&Shape::Cuboid(*cuboid), mode)
    }

    /// Immutable occupancy snapshot under the closed threshold rule.
    pub fn snapshot(&self) -> BinaryMask {
        let bits = self
            .logodds
            .iter()
            .map(|&l| l >= self.params.occupied_threshold)
            .collect();
        BinaryMask::new(self.spec.clone(), bits).expect("log-odds array matches spec")
    }
}

enum ClipOutcome {
    ZeroLength,
    Outside,
    Segment(ClippedRay),
}

struct ClippedRay {
    origin: Point3<f64>,
    dir: Vector3<f64>,
    t0: f64,
    t1: f64,
    /// Voxel holding the returned point, when it lies inside the grid.
    endpoint_voxel: Option<[usize; 3]>,
    endpoint_z: f64,
    clipped: bool,
}
