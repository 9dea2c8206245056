//! Voxel grid geometry shared by the occupancy map and the distance fields.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned voxel grid. `origin` is the minimum corner of voxel
/// `(0, 0, 0)`; the center of voxel `(i, j, k)` sits at
/// `origin + resolution * (i + 0.5, j + 0.5, k + 0.5)`.
///
/// Linear storage order is x-fastest: `index = i + nx * (j + ny * k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], resolution: f64, dims: [usize; 3]) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be positive and finite, got {resolution}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid dims must all be >= 1, got {dims:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid origin must be finite, got {origin:?}"
            )));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, v: [usize; 3]) -> usize {
        debug_assert!(v[0] < self.dims[0] && v[1] < self.dims[1] && v[2] < self.dims[2]);
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> Point3<f64> {
        Point3::new(
            self.origin[0] + self.resolution * (v[0] as f64 + 0.5),
            self.origin[1] + self.resolution * (v[1] as f64 + 0.5),
            self.origin[2] + self.resolution * (v[2] as f64 + 0.5),
        )
    }

    /// Signed voxel coordinates of the point (floor division); may lie
    /// outside the grid.
    #[inline]
    pub fn voxel_of(&self, p: &Point3<f64>) -> [i64; 3] {
        let mut out = [0i64; 3];
        for a in 0..3 {
            out[a] = ((p[a] - self.origin[a]) / self.resolution).floor() as i64;
        }
        out
    }

    #[inline]
    pub fn contains_voxel(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    /// Voxel index of a point, or `None` when the point lies outside the grid.
    pub fn world_to_voxel(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let v = self.voxel_of(p);
        if self.contains_voxel(v) {
            Some([v[0] as usize, v[1] as usize, v[2] as usize])
        } else {
            None
        }
    }

    pub fn min_corner(&self) -> Point3<f64> {
        Point3::new(self.origin[0], self.origin[1], self.origin[2])
    }

    pub fn max_corner(&self) -> Point3<f64> {
        Point3::new(
            self.origin[0] + self.resolution * self.dims[0] as f64,
            self.origin[1] + self.resolution * self.dims[1] as f64,
            self.origin[2] + self.resolution * self.dims[2] as f64,
        )
    }

    /// Length of the grid diagonal in metres; used as the sentinel distance
    /// when a transform has no sites.
    pub fn diagonal(&self) -> f64 {
        let d = Vector3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        );
        self.resolution * d.norm()
    }

    /// Iterates voxel indices in linear storage order.
    pub fn iter_voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |k| (0..ny).flat_map(move |j| (0..nx).map(move |i| [i, j, k])))
    }
}

/// Immutable binary occupancy snapshot: `true` marks an occupied voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    spec: GridSpec,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(spec: GridSpec, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != spec.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} bits for a grid of {} voxels",
                bits.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, bits })
    }

    pub fn filled(spec: GridSpec, value: bool) -> Self {
        let bits = vec![value; spec.len()];
        Self { spec, bits }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, v: [usize; 3]) -> bool {
        self.bits[self.spec.linear(v)]
    }

    pub fn set(&mut self, v: [usize; 3], value: bool) {
        let idx = self.spec.linear(v);
        self.bits[idx] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}
