//! Exact Euclidean distance fields over voxel grids.
//!
//! The transform runs one lower-envelope pass per axis over squared
//! distances, which is exact for integer voxel offsets: after the three
//! passes each voxel holds `min over occupied u of ||v - u||^2` in voxel
//! units. The signed field is the unsigned transform of the mask minus the
//! unsigned transform of its complement, so occupied voxels carry negative
//! values measuring depth to the nearest free voxel center.

use std::io::{Read, Write};
use std::sync::{Arc, RwLock};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridSpec};
use crate::timing::StageTimings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Unsigned,
    Signed,
}

impl FieldKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldKind::Unsigned => "unsigned",
            FieldKind::Signed => "signed",
        }
    }
}

/// Sampled distance field: one value per voxel center, metres.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    spec: GridSpec,
    kind: FieldKind,
    values: Vec<f64>,
    truncation: Option<f64>,
}

/// Interpolated field sample.
#[derive(Debug, Clone, Copy)]
pub struct FieldQuery {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// True when the query point was clamped onto the voxel-center hull.
    pub clamped: bool,
}

/// Squared distance transform in integer voxel units. Voxels with no
/// occupied site anywhere remain `f64::INFINITY`.
pub fn usdf_squared(mask: &BinaryMask) -> Vec<f64> {
    let spec = mask.spec();
    let [nx, ny, nz] = spec.dims;
    let mut sq: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let mut f = vec![0.0f64; nx.max(ny).max(nz)];
    let mut d = vec![0.0f64; f.len()];
    let mut v = vec![0usize; f.len()];
    let mut z = vec![0.0f64; f.len() + 1];

    // Pass along x: lines are contiguous.
    if nx > 1 {
        for line in sq.chunks_mut(nx) {
            f[..nx].copy_from_slice(line);
            envelope_1d(&f[..nx], &mut d[..nx], &mut v, &mut z);
            line.copy_from_slice(&d[..nx]);
        }
    }
    // Pass along y.
    if ny > 1 {
        for k in 0..nz {
            for i in 0..nx {
                let base = i + nx * ny * k;
                for j in 0..ny {
                    f[j] = sq[base + nx * j];
                }
                envelope_1d(&f[..ny], &mut d[..ny], &mut v, &mut z);
                for j in 0..ny {
                    sq[base + nx * j] = d[j];
                }
            }
        }
    }
    // Pass along z.
    if nz > 1 {
        let stride = nx * ny;
        for j in 0..ny {
            for i in 0..nx {
                let base = i + nx * j;
                for k in 0..nz {
                    f[k] = sq[base + stride * k];
                }
                envelope_1d(&f[..nz], &mut d[..nz], &mut v, &mut z);
                for k in 0..nz {
                    sq[base + stride * k] = d[k];
                }
            }
        }
    }
    sq
}

/// One-dimensional squared-distance transform by lower envelope of
/// parabolas. `f` holds per-cell source costs (may be infinite); `d`
/// receives `min_p (q - p)^2 + f[p]`.
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut any = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !any {
            any = true;
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        // Intersection of the parabola at q with the current rightmost one.
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !any {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

impl DistanceField {
    /// Builds a field of the requested kind, returning per-stage timings.
    pub fn build(mask: &BinaryMask, kind: FieldKind) -> (Self, StageTimings) {
        let mut t = StageTimings::new();
        let spec = mask.spec().clone();
        let res = spec.resolution;
        let sentinel = spec.diagonal();
        let values = match kind {
            FieldKind::Unsigned => {
                let sq = t.record("transform", || usdf_squared(mask));
                t.record("scale", || {
                    sq.iter()
                        .map(|&s| if s.is_finite() { res * s.sqrt() } else { sentinel })
                        .collect()
                })
            }
            FieldKind::Signed => {
                let sq_occ = t.record("transform", || usdf_squared(mask));
                let complement = t.record("complement", || mask.complement());
                let sq_free = t.record("inverse_transform", || usdf_squared(&complement));
                t.record("subtraction", || {
                    sq_occ
                        .iter()
                        .zip(sq_free.iter())
                        .map(|(&o, &f)| {
                            let d_occ = if o.is_finite() { res * o.sqrt() } else { sentinel };
                            let d_free = if f.is_finite() { res * f.sqrt() } else { sentinel };
                            d_occ - d_free
                        })
                        .collect()
                })
            }
        };
        (
            Self {
                spec,
                kind,
                values,
                truncation: None,
            },
            t,
        )
    }

    pub fn unsigned(mask: &BinaryMask) -> Self {
        Self::build(mask, FieldKind::Unsigned).0
    }

    pub fn signed(mask: &BinaryMask) -> Self {
        Self::build(mask, FieldKind::Signed).0
    }

    /// Clamps all values into `[-radius, radius]`, mirroring truncated
    /// field products used for benchmark parity.
    pub fn truncated(mut self, radius: f64) -> Self {
        for v in &mut self.values {
            *v = v.clamp(-radius, radius);
        }
        self.truncation = Some(radius);
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, v: [usize; 3]) -> f64 {
        self.values[self.spec.linear(v)]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trilinear interpolation on the voxel-center lattice with the analytic
    /// gradient of the interpolant. Points outside the center hull are
    /// clamped onto it; the gradient component along a clamped axis is zero.
    pub fn query(&self, p: &Point3<f64>) -> FieldQuery {
        let [nx, ny, nz] = self.spec.dims;
        let res = self.spec.resolution;
        let mut u = [0.0f64; 3];
        let mut clamped_axis = [false; 3];
        for a in 0..3 {
            let raw = (p[a] - self.spec.origin[a]) / res - 0.5;
            let max = (self.spec.dims[a] - 1) as f64;
            let c = raw.clamp(0.0, max);
            clamped_axis[a] = (c - raw).abs() > 0.0;
            u[a] = c;
        }
        let cell = |a: usize, dim: usize| -> (usize, f64) {
            if dim == 1 {
                return (0, 0.0);
            }
            let i = (u[a].floor() as usize).min(dim - 2);
            (i, u[a] - i as f64)
        };
        let (i0, fx) = cell(0, nx);
        let (j0, fy) = cell(1, ny);
        let (k0, fz) = cell(2, nz);

        let at = |di: usize, dj: usize, dk: usize| -> f64 {
            let i = (i0 + di).min(nx - 1);
            let j = (j0 + dj).min(ny - 1);
            let k = (k0 + dk).min(nz - 1);
            self.values[self.spec.linear([i, j, k])]
        };
        let c000 = at(0, 0, 0);
        let c100 = at(1, 0, 0);
        let c010 = at(0, 1, 0);
        let c110 = at(1, 1, 0);
        let c001 = at(0, 0, 1);
        let c101 = at(1, 0, 1);
        let c011 = at(0, 1, 1);
        let c111 = at(1, 1, 1);

        let gx = fx;
        let gy = fy;
        let gz = fz;
        let distance = c000 * (1.0 - gx) * (1.0 - gy) * (1.0 - gz)
            + c100 * gx * (1.0 - gy) * (1.0 - gz)
            + c010 * (1.0 - gx) * gy * (1.0 - gz)
            + c110 * gx * gy * (1.0 - gz)
            + c001 * (1.0 - gx) * (1.0 - gy) * gz
            + c101 * gx * (1.0 - gy) * gz
            + c011 * (1.0 - gx) * gy * gz
            + c111 * gx * gy * gz;

        let ddx = ((c100 - c000) * (1.0 - gy) * (1.0 - gz)
            + (c110 - c010) * gy * (1.0 - gz)
            + (c101 - c001) * (1.0 - gy) * gz
            + (c111 - c011) * gy * gz)
            / res;
        let ddy = ((c010 - c000) * (1.0 - gx) * (1.0 - gz)
            + (c110 - c100) * gx * (1.0 - gz)
            + (c011 - c001) * (1.0 - gx) * gz
            + (c111 - c101) * gx * gz)
            / res;
        let ddz = ((c001 - c000) * (1.0 - gx) * (1.0 - gy)
            + (c101 - c100) * gx * (1.0 - gy)
            + (c011 - c010) * (1.0 - gx) * gy
            + (c111 - c110) * gx * gy)
            / res;

        let mut gradient = Vector3::new(ddx, ddy, ddz);
        for a in 0..3 {
            if clamped_axis[a] || self.spec.dims[a] == 1 {
                gradient[a] = 0.0;
            }
        }
        FieldQuery {
            distance,
            gradient,
            clamped: clamped_axis.iter().any(|&c| c),
        }
    }

    /// Writes the self-describing dump: one JSON header line, then values as
    /// little-endian f64 in linear storage order.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = DumpHeader {
            magic: MAGIC.into(),
            version: 1,
            kind: self.kind,
            spec: self.spec.clone(),
            truncation: self.truncation,
        };
        let mut line = serde_json::to_string(&header)
            .map_err(|e| Error::FieldDump(format!("header encode: {e}")))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = r.read(&mut byte)?;
            if n == 0 {
                return Err(Error::FieldDump("truncated header".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
            if header_bytes.len() > 4096 {
                return Err(Error::FieldDump("header too long".into()));
            }
        }
        let header: DumpHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::FieldDump(format!("header decode: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::FieldDump(format!("bad magic {:?}", header.magic)));
        }
        if header.version != 1 {
            return Err(Error::FieldDump(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let n = header.spec.len();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)
            .map_err(|_| Error::FieldDump("truncated payload".into()))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            spec: header.spec,
            kind: header.kind,
            values,
            truncation: header.truncation,
        })
    }
}

const MAGIC: &str = "fieldplan.dfield";

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    magic: String,
    version: u32,
    kind: FieldKind,
    spec: GridSpec,
    truncation: Option<f64>,
}

/// Atomic snapshot publisher: readers always see a complete field.
#[derive(Debug)]
pub struct FieldPublisher {
    current: RwLock<Arc<DistanceField>>,
}

impl FieldPublisher {
    pub fn new(field: Arc<DistanceField>) -> Self {
        Self {
            current: RwLock::new(field),
        }
    }

    pub fn publish(&self, field: Arc<DistanceField>) {
        *self.current.write().expect("publisher lock poisoned") = field;
    }

    pub fn latest(&self) -> Arc<DistanceField> {
        self.current.read().expect("publisher lock poisoned").clone()
    }
}
