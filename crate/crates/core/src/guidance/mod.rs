//! Densities, currents and velocity fields of the guidance law, plus
//! trajectory integration through a sequence of wavefunction snapshots.
//!
//! All three model families share one form of the law,
//!
//! ```text
//! v_d = c_d * sum_f Im(conj(Psi_f) dPsi_f/dx_d) / sum_f |Psi_f|^2 + drift_d
//! ```
//!
//! with `c_d = hbar / m_d` (unit for field quadratures) and a drift that is
//! only nonzero for a Pauli spinor in a uniform vector potential.

mod trajectory;

pub use trajectory::{
    integrate_ensemble, integrate_trajectory, rk4_step, DriverConfig, Evolver, ExitReason, NodeEvent, SolverError, StepReport,
    Trajectory, TrajectoryState,
};

use crate::model::GuidanceLaw;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("coordinate {coordinate} = {value} lies outside the domain [{min}, {max})")]
    OutOfDomain { coordinate: usize, value: f64, min: f64, max: f64 },
    #[error("coordinate {coordinate} = {value} exceeds the reliable Hermite range {limit}")]
    Range { coordinate: usize, value: f64, limit: f64 },
    #[error("configuration has {got} coordinates, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Wavefunction values and gradients at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PointValue {
    pub dim: usize,
    /// `Psi_f`.
    pub values: Vec<Complex64>,
    /// `dPsi_f / dx_d` at `f * dim + d`.
    pub gradients: Vec<Complex64>,
}

impl PointValue {
    pub fn zeros(internal_dim: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![Complex64::new(0.0, 0.0); internal_dim],
            gradients: vec![Complex64::new(0.0, 0.0); internal_dim * dim],
        }
    }

    pub fn density(&self) -> f64 {
        density(&self.values)
    }

    /// `sum_f Im(conj(Psi_f) dPsi_f/dx_d)` for each `d`.
    pub fn current(&self) -> Vec<f64> {
        let mut j = vec![0.0; self.dim];
        for (f, v) in self.values.iter().enumerate() {
            for (d, jd) in j.iter_mut().enumerate() {
                *jd += (v.conj() * self.gradients[f * self.dim + d]).im;
            }
        }
        j
    }
}

/// A wavefunction frozen at one time that can be evaluated anywhere inside
/// its domain. Implementations are immutable and shared across threads.
pub trait PilotWave: Send + Sync {
    fn dim(&self) -> usize;
    fn internal_dim(&self) -> usize;
    fn time(&self) -> f64;
    fn evaluate_into(&self, x: &[f64], out: &mut PointValue) -> Result<(), EvalError>;
    /// Reference density for the relative node floor.
    fn density_scale(&self) -> f64;
    /// A box holding all but a negligible part of the probability.
    fn support_box(&self) -> Vec<(f64, f64)>;

    fn evaluate(&self, x: &[f64]) -> Result<PointValue, EvalError> {
        let mut out = PointValue::zeros(self.internal_dim(), self.dim());
        self.evaluate_into(x, &mut out)?;
        Ok(out)
    }

    fn density_at(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(self.evaluate(x)?.density())
    }
}

/// `sum_f |Psi_f|^2`.
pub fn density(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm_sqr()).sum()
}

/// Velocity from a point value; `None` where the density vanishes exactly.
pub fn velocity_from(law: &GuidanceLaw, pv: &PointValue) -> Option<Vec<f64>> {
    let rho = pv.density();
    if !(rho > 0.0) {
        return None;
    }
    let j = pv.current();
    Some(
        j.iter()
            .zip(&law.coefficients)
            .zip(&law.drift)
            .map(|((jd, c), drift)| c * jd / rho + drift)
            .collect(),
    )
}

/// Guidance velocity for a scalar many-particle wavefunction with masses
/// encoded in `law`.
pub fn velocity_particles(psi: &dyn PilotWave, law: &GuidanceLaw, x: &[f64]) -> Result<Option<Vec<f64>>, EvalError> {
    debug_assert_eq!(psi.internal_dim(), 1);
    Ok(velocity_from(law, &psi.evaluate(x)?))
}

/// Spin-summed guidance velocity of a two-component spinor.
pub fn velocity_pauli(psi: &dyn PilotWave, law: &GuidanceLaw, x: &[f64]) -> Result<Option<Vec<f64>>, EvalError> {
    debug_assert_eq!(psi.internal_dim(), 2);
    Ok(velocity_from(law, &psi.evaluate(x)?))
}

/// Velocity of the field quadratures, summed over the fermionic label.
pub fn velocity_field_beables(psi: &dyn PilotWave, q: &[f64]) -> Result<Option<Vec<f64>>, EvalError> {
    let law = GuidanceLaw { coefficients: vec![1.0; psi.dim()], drift: vec![0.0; psi.dim()] };
    Ok(velocity_from(&law, &psi.evaluate(q)?))
}

/// Cap-and-record rule applied where the density drops below
/// `epsilon * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeGuard {
    pub epsilon: f64,
    pub v_max: f64,
}

impl NodeGuard {
    /// Returns the velocity to use and whether the policy fired.
    pub fn apply(&self, velocity: Option<Vec<f64>>, rho: f64, scale: f64, dim: usize) -> (Vec<f64>, bool) {
        let node = rho < self.epsilon * scale;
        let mut v = match velocity {
            Some(v) if v.iter().all(|c| c.is_finite()) => v,
            _ => return (vec![0.0; dim], true),
        };
        if node {
            let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if speed > self.v_max {
                let s = self.v_max / speed;
                v.iter_mut().for_each(|c| *c *= s);
            }
        }
        (v, node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Closed-form wavefunction used as a test double.
    pub(crate) struct Analytic<F: Fn(f64) -> Vec<Complex64> + Send + Sync> {
        pub f: F,
        pub internal: usize,
    }

    impl<F: Fn(f64) -> Vec<Complex64> + Send + Sync> PilotWave for Analytic<F> {
        fn dim(&self) -> usize {
            1
        }
        fn internal_dim(&self) -> usize {
            self.internal
        }
        fn time(&self) -> f64 {
            0.0
        }
        fn evaluate_into(&self, x: &[f64], out: &mut PointValue) -> Result<(), EvalError> {
            let h = 1e-5;
            let v = (self.f)(x[0]);
            let p = (self.f)(x[0] + h);
            let m = (self.f)(x[0] - h);
            for f in 0..self.internal {
                out.values[f] = v[f];
                out.gradients[f] = (p[f] - m[f]) / (2.0 * h);
            }
            Ok(())
        }
        fn density_scale(&self) -> f64 {
            1.0
        }
        fn support_box(&self) -> Vec<(f64, f64)> {
            vec![(-10.0, 10.0)]
        }
    }

    fn gaussian(x: f64, s: f64) -> f64 {
        (2.0 * PI * s * s).powf(-0.25) * (-x * x / (4.0 * s * s)).exp()
    }

    fn law(m: f64) -> GuidanceLaw {
        GuidanceLaw { coefficients: vec![1.0 / m], drift: vec![0.0] }
    }

    #[test]
    fn gaussian_peak_density() {
        let s = 0.7;
        let psi = Analytic { f: |x| vec![Complex64::new(gaussian(x, 0.7), 0.0)], internal: 1 };
        let rho = psi.density_at(&[0.0]).unwrap();
        assert!((rho - 1.0 / (2.0 * PI * s * s).sqrt()).abs() < 1e-14);
        // equal spin-up/down weights give the same spin-summed density
        let spinor = Analytic {
            f: |x| {
                let g = gaussian(x, 0.7) / 2f64.sqrt();
                vec![Complex64::new(g, 0.0), Complex64::new(g, 0.0)]
            },
            internal: 2,
        };
        assert!((spinor.density_at(&[0.0]).unwrap() - rho).abs() < 1e-14);
    }

    #[test]
    fn real_states_have_zero_velocity_and_plane_phases_give_p_over_m() {
        let real = Analytic { f: |x| vec![Complex64::new((-x * x / 2.0).exp(), 0.0)], internal: 1 };
        let v = velocity_particles(&real, &law(1.0), &[0.8]).unwrap().unwrap();
        assert_eq!(v, vec![0.0]);
        let plane = Analytic { f: |x| vec![Complex64::new(0.0, 1.3 * x).exp() * gaussian(x, 5.0)], internal: 1 };
        let v = velocity_particles(&plane, &law(2.0), &[0.4]).unwrap().unwrap();
        assert!((v[0] - 0.65).abs() < 1e-9);
        let up = Analytic {
            f: |x| vec![Complex64::new(0.0, 1.3 * x).exp() * gaussian(x, 5.0), Complex64::new(0.0, 0.0)],
            internal: 2,
        };
        let v = velocity_pauli(&up, &law(2.0), &[0.4]).unwrap().unwrap();
        assert!((v[0] - 0.65).abs() < 1e-9);
    }

    #[test]
    fn vector_potential_shifts_velocity() {
        let packet = Analytic {
            f: |x| vec![Complex64::new(0.0, 0.9 * x).exp() * gaussian(x, 1.0), Complex64::new(0.0, 0.0)],
            internal: 2,
        };
        let (m, e, a) = (1.5, 0.4, 2.0);
        let shifted = GuidanceLaw { coefficients: vec![1.0 / m], drift: vec![-e * a / m] };
        for x in [-1.0, 0.0, 2.0] {
            let v0 = velocity_pauli(&packet, &law(m), &[x]).unwrap().unwrap()[0];
            let v1 = velocity_pauli(&packet, &shifted, &[x]).unwrap().unwrap()[0];
            assert!((v1 - v0 + e * a / m).abs() < 1e-14);
        }
    }

    #[test]
    fn node_guard_caps_and_records() {
        let guard = NodeGuard { epsilon: 1e-12, v_max: 2.0 };
        let (v, hit) = guard.apply(Some(vec![30.0, 40.0]), 1e-20, 1.0, 2);
        assert!(hit);
        assert!((v[0] - 1.2).abs() < 1e-15 && (v[1] - 1.6).abs() < 1e-15);
        let (v, hit) = guard.apply(Some(vec![30.0]), 0.5, 1.0, 1);
        assert!(!hit);
        assert_eq!(v, vec![30.0]);
        let (v, hit) = guard.apply(None, 0.0, 1.0, 1);
        assert!(hit && v == vec![0.0]);
    }
}
