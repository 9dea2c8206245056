//! Support-state trajectories with Gaussian-process interpolation.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gp;

/// Full state of one support point: joint positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl TrajState {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>) -> Self {
        assert_eq!(position.len(), velocity.len());
        Self { position, velocity }
    }

    pub fn at_rest(position: DVector<f64>) -> Self {
        let velocity = DVector::zeros(position.len());
        Self { position, velocity }
    }

    pub fn dof(&self) -> usize {
        self.position.len()
    }
}

/// Uniformly spaced support states starting at `t0` with spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<TrajState>,
}

/// Offsets within `dt * SNAP_REL` of a support time return the support
/// state itself, keeping endpoint interpolation exact.
const SNAP_REL: f64 = 1e-9;

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<TrajState>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "support spacing must be positive, got {dt}"
            )));
        }
        if states.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "trajectory needs at least 2 support states, got {}",
                states.len()
            )));
        }
        let dof = states[0].dof();
        if states.iter().any(|s| s.dof() != dof) {
            return Err(Error::DimensionMismatch(
                "support states have mixed DoF".into(),
            ));
        }
        Ok(Self { t0, dt, states })
    }

    /// Linear interpolation of positions from `start` to `goal` with the
    /// constant velocity `(goal - start) / ((n - 1) dt)` at every state.
    pub fn straight_line(
        start: &DVector<f64>,
        goal: &DVector<f64>,
        n: usize,
        dt: f64,
        t0: f64,
    ) -> Result<Self> {
        if start.len() != goal.len() {
            return Err(Error::DimensionMismatch(format!(
                "start has {} DoF, goal has {}",
                start.len(),
                goal.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "straight-line init needs n >= 2, got {n}"
            )));
        }
        let total = (n - 1) as f64 * dt;
        let velocity = (goal - start) / total;
        let states = (0..n)
            .map(|i| {
                let alpha = i as f64 / (n - 1) as f64;
                TrajState::new(start + (goal - start) * alpha, velocity.clone())
            })
            .collect();
        Self::new(t0, dt, states)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dof(&self) -> usize {
        self.states[0].dof()
    }

    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn support_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// GP interpolation of the full state at time `tau`; errors when `tau`
    /// falls outside the trajectory span.
    pub fn interpolate(&self, tau: f64) -> Result<TrajState> {
        let span = self.duration();
        let rel = tau - self.t0;
        let slack = self.dt * SNAP_REL;
        if rel < -slack || rel > span + slack {
            return Err(Error::TimeOutOfRange {
                tau,
                t0: self.t0,
                t1: self.end_time(),
            });
        }
        Ok(self.interpolate_unchecked(rel.clamp(0.0, span)))
    }

    /// GP interpolation with `tau` clamped into the trajectory span.
    pub fn interpolate_clamped(&self, tau: f64) -> TrajState {
        let rel = (tau - self.t0).clamp(0.0, self.duration());
        self.interpolate_unchecked(rel)
    }

    fn interpolate_unchecked(&self, rel: f64) -> TrajState {
        let n = self.states.len();
        let i = ((rel / self.dt).floor() as usize).min(n - 2);
        let s = rel - i as f64 * self.dt;
        let snap = self.dt * SNAP_REL;
        if s.abs() <= snap {
            return self.states[i].clone();
        }
        if (s - self.dt).abs() <= snap {
            return self.states[i + 1].clone();
        }
        let (lam, psi) = gp::interp_coeffs(s, self.dt);
        let a = &self.states[i];
        let b = &self.states[i + 1];
        let position = &a.position * lam[(0, 0)]
            + &a.velocity * lam[(0, 1)]
            + &b.position * psi[(0, 0)]
            + &b.velocity * psi[(0, 1)];
        let velocity = &a.position * lam[(1, 0)]
            + &a.velocity * lam[(1, 1)]
            + &b.position * psi[(1, 0)]
            + &b.velocity * psi[(1, 1)];
        TrajState::new(position, velocity)
    }

    /// Stacks all states into one vector ordered
    /// `[q_0; v_0; q_1; v_1; ...]` for the optimizer.
    pub fn flatten(&self) -> DVector<f64> {
        let dof = self.dof();
        let mut x = DVector::zeros(2 * dof * self.states.len());
        for (i, s) in self.states.iter().enumerate() {
            x.rows_mut(2 * dof * i, dof).copy_from(&s.position);
            x.rows_mut(2 * dof * i + dof, dof).copy_from(&s.velocity);
        }
        x
    }

    pub fn from_flat(t0: f64, dt: f64, dof: usize, x: &DVector<f64>) -> Result<Self> {
        if dof == 0 || x.len() % (2 * dof) != 0 {
            return Err(Error::DimensionMismatch(format!(
                "flat vector of length {} does not hold 2*{dof} blocks",
                x.len()
            )));
        }
        let n = x.len() / (2 * dof);
        let states = (0..n)
            .map(|i| {
                TrajState::new(
                    x.rows(2 * dof * i, dof).into_owned(),
                    x.rows(2 * dof * i + dof, dof).into_owned(),
                )
            })
            .collect();
        Self::new(t0, dt, states)
    }

    /// Writes `t, q_0.., qd_0..` rows sampled every `sample_dt` seconds
    /// (supports and interpolated states; the final row is the terminal state).
    pub fn write_csv<W: Write>(&self, w: &mut W, sample_dt: f64) -> Result<()> {
        if !(sample_dt > 0.0) {
            return Err(Error::InvalidParameter(
                "csv sample step must be positive".into(),
            ));
        }
        let dof = self.dof();
        write!(w, "t")?;
        for d in 0..dof {
            write!(w, ",q{d}")?;
        }
        for d in 0..dof {
            write!(w, ",qd{d}")?;
        }
        writeln!(w)?;
        let mut tau = self.t0;
        let end = self.end_time();
        loop {
            let state = self.interpolate_clamped(tau);
            write!(w, "{tau}")?;
            for d in 0..dof {
                write!(w, ",{}", state.position[d])?;
            }
            for d in 0..dof {
                write!(w, ",{}", state.velocity[d])?;
            }
            writeln!(w)?;
            if tau >= end {
                break;
            }
            tau = (tau + sample_dt).min(end);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, dof: usize, n: usize, dt: f64) -> Trajectory {
        let states = (0..n)
            .map(|_| {
                TrajState::new(
                    DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0)),
                    DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        Trajectory::new(0.25, dt, states).unwrap()
    }

    #[test]
    fn straight_line_matches_closed_form() {
        let t = Trajectory::straight_line(&dvector![0.0], &dvector![1.0], 3, 0.5, 0.0).unwrap();
        assert_eq!(t.states[0].position[0], 0.0);
        assert_eq!(t.states[1].position[0], 0.5);
        assert_eq!(t.states[2].position[0], 1.0);
        for s in &t.states {
            assert_eq!(s.velocity[0], 1.0);
        }
        assert_eq!(t.end_time(), 1.0);
    }

    #[test]
    fn interpolation_at_supports_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_traj(&mut rng, 3, 6, 0.3);
        for i in 0..t.n_states() {
            let s = t.interpolate(t.support_time(i)).unwrap();
            assert_eq!(s, t.states[i], "support {i}");
        }
    }

    #[test]
    fn constant_velocity_interpolates_linearly() {
        let t =
            Trajectory::straight_line(&dvector![0.0, 2.0], &dvector![1.0, -2.0], 5, 0.25, 0.0)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let tau = rng.random_range(0.0..t.end_time());
            let s = t.interpolate(tau).unwrap();
            assert!((s.position[0] - tau).abs() < 1e-12);
            assert!((s.position[1] - (2.0 - 4.0 * tau)).abs() < 1e-12);
            assert!((s.velocity[0] - 1.0).abs() < 1e-12);
        }
    }

    /// Dense-matrix oracle: build the full interpolation operator
    /// `[lam | psi]` from the block formulas with an arbitrary SPD noise
    /// scale and check the scalar shortcut against it. The noise scale must
    /// cancel.
    #[test]
    fn interpolation_matches_dense_operator_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dof = 3;
        let t = random_traj(&mut rng, dof, 4, 0.4);
        // Random SPD Qc.
        let a = DMatrix::from_fn(dof, dof, |_, _| rng.random_range(-1.0..1.0));
        let qc = &a * a.transpose() + DMatrix::identity(dof, dof);
        let qc_inv = qc.clone().try_inverse().unwrap();
        let eye = DMatrix::<f64>::identity(dof, dof);

        let kron2 = |m: &nalgebra::Matrix2<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
            let mut out = DMatrix::zeros(2 * dof, 2 * dof);
            for r in 0..2 {
                for c in 0..2 {
                    out.view_mut((r * dof, c * dof), (dof, dof))
                        .copy_from(&(b * m[(r, c)]));
                }
            }
            out
        };

        let dt = t.dt;
        for k in 1..8 {
            let s = dt * k as f64 / 8.0;
            let phi_s = kron2(&crate::gp::phi(s), &eye);
            let phi_dt = kron2(&crate::gp::phi(dt), &eye);
            let phi_rest_t = kron2(&crate::gp::phi(dt - s).transpose(), &eye);
            let q_s = kron2(&crate::gp::q_cov(s), &qc);
            let q_dt_inv = {
                let b = crate::gp::q_cov(dt);
                let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
                let b_inv =
                    nalgebra::Matrix2::new(b[(1, 1)], -b[(0, 1)], -b[(1, 0)], b[(0, 0)]) / det;
                kron2(&b_inv, &qc_inv)
            };
            let psi = &q_s * &phi_rest_t * &q_dt_inv;
            let lam = &phi_s - &psi * &phi_dt;

            let seg = 1usize;
            let xi = {
                let mut v = DVector::zeros(2 * dof);
                v.rows_mut(0, dof).copy_from(&t.states[seg].position);
                v.rows_mut(dof, dof).copy_from(&t.states[seg].velocity);
                v
            };
            let xn = {
                let mut v = DVector::zeros(2 * dof);
                v.rows_mut(0, dof).copy_from(&t.states[seg + 1].position);
                v.rows_mut(dof, dof).copy_from(&t.states[seg + 1].velocity);
                v
            };
            let dense = &lam * &xi + &psi * &xn;
            let fast = t.interpolate(t.support_time(seg) + s).unwrap();
            for d in 0..dof {
                assert!((dense[d] - fast.position[d]).abs() < 1e-10);
                assert!((dense[dof + d] - fast.velocity[d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn out_of_range_times_error() {
        let t = Trajectory::straight_line(&dvector![0.0], &dvector![1.0], 3, 0.5, 1.0).unwrap();
        assert!(t.interpolate(0.9).is_err());
        assert!(t.interpolate(2.1).is_err());
        assert!(t.interpolate(1.0).is_ok());
        assert!(t.interpolate(2.0).is_ok());
        // Clamped variant saturates at the ends.
        let s = t.interpolate_clamped(5.0);
        assert_eq!(s, t.states[2]);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let t = random_traj(&mut rng, 4, 5, 0.2);
        let x = t.flatten();
        assert_eq!(x.len(), 2 * 4 * 5);
        let u = Trajectory::from_flat(t.t0, t.dt, 4, &x).unwrap();
        assert_eq!(t, u);
        assert!(Trajectory::from_flat(0.0, 0.1, 3, &x).is_err());
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let t =
            Trajectory::straight_line(&dvector![0.0, 1.0], &dvector![1.0, 0.0], 4, 0.5, 0.0)
                .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, 0.25).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,q0,q1,qd0,qd1");
        // 0.0 .. 1.5 in steps of 0.25 inclusive.
        assert_eq!(lines.len(), 1 + 7);
        let last: Vec<f64> = lines[7].split(',').map(|v| v.parse().unwrap()).collect();
        assert!((last[0] - 1.5).abs() < 1e-12);
        assert!((last[1] - 1.0).abs() < 1e-12);
    }
}
