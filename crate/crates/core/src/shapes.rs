//! Analytic obstacle shapes: axis-aligned cuboids and vertical cylinders.
//!
//! Shapes serve three roles: rasterization into the occupancy grid,
//! exact-distance collision oracles, and ray casting for the synthetic
//! depth sensor. Containment tests are closed (boundary points count as
//! inside), matching the voxel-center rasterization rule.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

/// Axis-aligned box given by center and half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

/// Vertical (z-axis) cylinder given by centroid, radius, and full height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Cuboid(Cuboid),
    Cylinder(Cylinder),
}

impl Cuboid {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.half_extents[a])
    }

    /// Exact Euclidean distance from `p` to the box surface; negative inside.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let mut q = [0.0; 3];
        for a in 0..3 {
            q[a] = (p[a] - self.center[a]).abs() - self.half_extents[a];
        }
        let outside = Vector3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0));
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside.norm() + inside
    }

    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let lo = Point3::new(
            self.center[0] - self.half_extents[0],
            self.center[1] - self.half_extents[1],
            self.center[2] - self.half_extents[2],
        );
        let hi = Point3::new(
            self.center[0] + self.half_extents[0],
            self.center[1] + self.half_extents[1],
            self.center[2] + self.half_extents[2],
        );
        (lo, hi)
    }

    /// Nearest entry parameter of the ray `o + t d` (t >= 0), slab method.
    pub fn ray_hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (lo, hi) = self.aabb();
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

impl Cylinder {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        let dz = (p.z - self.center[2]).abs();
        dx * dx + dy * dy <= self.radius * self.radius && dz <= 0.5 * self.height
    }

    /// Exact Euclidean distance from `p` to the cylinder surface; negative inside.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        let dr = (dx * dx + dy * dy).sqrt() - self.radius;
        let dz = (p.z - self.center[2]).abs() - 0.5 * self.height;
        let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
        let inside = dr.max(dz).min(0.0);
        outside + inside
    }

    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let lo = Point3::new(
            self.center[0] - self.radius,
            self.center[1] - self.radius,
            self.center[2] - 0.5 * self.height,
        );
        let hi = Point3::new(
            self.center[0] + self.radius,
            self.center[1] + self.radius,
            self.center[2] + 0.5 * self.height,
        );
        (lo, hi)
    }

    pub fn ray_hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let zc = self.center[2];
        let hh = 0.5 * self.height;
        let mut best = f64::INFINITY;
        // Lateral surface: quadratic in the xy plane.
        let ox = o.x - self.center[0];
        let oy = o.y - self.center[1];
        let a = d.x * d.x + d.y * d.y;
        if a > 1e-12 {
            let b = 2.0 * (ox * d.x + oy * d.y);
            let c = ox * ox + oy * oy - self.radius * self.radius;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t >= 0.0 && t < best {
                        let z = o.z + t * d.z;
                        if (z - zc).abs() <= hh {
                            best = t;
                        }
                    }
                }
            }
        }
        // Caps.
        if d.z.abs() > 1e-12 {
            for zcap in [zc - hh, zc + hh] {
                let t = (zcap - o.z) / d.z;
                if t >= 0.0 && t < best {
                    let x = o.x + t * d.x - self.center[0];
                    let y = o.y + t * d.y - self.center[1];
                    if x * x + y * y <= self.radius * self.radius {
                        best = t;
                    }
                }
            }
        }
        if best.is_finite() {
            Some(best)
        } else {
            None
        }
    }
}

impl Shape {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Shape::Cuboid(c) => c.contains(p),
            Shape::Cylinder(c) => c.contains(p),
        }
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Shape::Cuboid(c) => c.distance(p),
            Shape::Cylinder(c) => c.distance(p),
        }
    }

    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        match self {
            Shape::Cuboid(c) => c.aabb(),
            Shape::Cylinder(c) => c.aabb(),
        }
    }

    pub fn ray_hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Cuboid(c) => c.ray_hit(o, d),
            Shape::Cylinder(c) => c.ray_hit(o, d),
        }
    }

    pub fn center(&self) -> [f64; 3] {
        match self {
            Shape::Cuboid(c) => c.center,
            Shape::Cylinder(c) => c.center,
        }
    }

    pub fn with_center(&self, center: [f64; 3]) -> Shape {
        match *self {
            Shape::Cuboid(c) => Shape::Cuboid(Cuboid { center, ..c }),
            Shape::Cylinder(c) => Shape::Cylinder(Cylinder { center, ..c }),
        }
    }
}
