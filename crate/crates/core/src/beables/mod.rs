//! Physical-space beables built from mode beables, local expectation values
//! for fermionic operators, and branch analysis.
//!
//! With `c = (2 pi)^(-3/2)` and real quadratures `a, b` of each retained pair,
//!
//! ```text
//! A(x) = c sum_{pairs, l} sqrt(2) e_l (a cos(k.x) - b sin(k.x))
//! B(x) = c sum_{pairs, l} sqrt(2) (k x e_l) (-a sin(k.x) - b cos(k.x))
//! E(x) = -dA/dt, with da/dt and db/dt from centered differences of a trajectory
//! ```
//!
//! which is the real form of a sum over `k` and `-k` with `q_l(-k) = q_l(k)*`.

mod branches;
mod local;

pub use branches::{branch_analysis, membership, superlevel_analysis, BranchAnalysis, BranchState, QuadratureLattice};
pub use local::{local_expectation, LocalExpectation};

use crate::grid::{wavenumbers, FftNd};
use crate::guidance::{EvalError, Trajectory};
use crate::model::{FieldModel, ModeBasis};
use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeableError {
    #[error("mode {mode} has k_{axis} = {k} at or beyond the lattice Nyquist wavenumber {nyquist}")]
    Aliasing { mode: usize, axis: usize, k: f64, nyquist: f64 },
    #[error("configuration has {got} quadratures, the basis has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("time {t} is outside the usable range of samples on [{first}, {last}]")]
    Range { t: f64, first: f64, last: f64 },
    #[error("density {density} is below the node floor")]
    Node { density: f64 },
    #[error("operator block is not Hermitian (defect {defect})")]
    NonHermitian { defect: f64 },
    #[error("operator block is {rows}x{cols}, expected {expected}x{expected}")]
    BlockShape { rows: usize, cols: usize, expected: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Periodic evaluation lattice in physical space. An axis with a single point
/// is sampled only at `min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub points: [usize; 3],
}

impl Lattice {
    pub fn cube(half: f64, n: usize) -> Self {
        Self { min: [-half; 3], max: [half; 3], points: [n; 3] }
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.max[d] - self.min[d]) / self.points[d] as f64
    }

    /// Lattice points in row-major order, `z` fastest.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = self.points;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    out.push([
                        self.min[0] + i as f64 * self.spacing(0),
                        self.min[1] + j as f64 * self.spacing(1),
                        self.min[2] + k as f64 * self.spacing(2),
                    ]);
                }
            }
        }
        out
    }

    /// Rejects modes the lattice cannot resolve.
    pub fn check(&self, basis: &ModeBasis) -> Result<(), BeableError> {
        for (mode, p) in basis.pairs().iter().enumerate() {
            for axis in 0..3 {
                if self.points[axis] < 2 {
                    continue;
                }
                let nyquist = PI / self.spacing(axis);
                let k = p.wavevector[axis];
                if k.abs() >= nyquist * (1.0 - 1e-12) {
                    return Err(BeableError::Aliasing { mode, axis, k, nyquist });
                }
            }
        }
        Ok(())
    }

    /// True when every wavevector is periodic on the lattice box, which makes
    /// spectral derivatives exact.
    pub fn is_commensurate(&self, basis: &ModeBasis) -> bool {
        basis.pairs().iter().all(|p| {
            (0..3).all(|d| {
                let k = p.wavevector[d];
                if self.points[d] < 2 {
                    return k == 0.0;
                }
                let turns = k * (self.max[d] - self.min[d]) / (2.0 * PI);
                (turns - turns.round()).abs() < 1e-9
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    #[serde(rename = "A_T")]
    VectorPotential,
    #[serde(rename = "B")]
    Magnetic,
    #[serde(rename = "E_T")]
    Electric,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::VectorPotential => "A_T",
            FieldKind::Magnetic => "B",
            FieldKind::Electric => "E_T",
        }
    }
}

/// A vector field sampled on a lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub kind: FieldKind,
    pub time: f64,
    pub lattice: Lattice,
    pub basis_digest: String,
    pub values: Vec<[f64; 3]>,
}

impl FieldSnapshot {
    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    pub fn max_difference(&self, other: &FieldSnapshot) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (0..3).map(|d| (a[d] - b[d]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Rows `x,y,z,Vx,Vy,Vz` after a metadata comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# field {} time {} basis {}", self.kind.name(), self.time, self.basis_digest)?;
        writeln!(w, "x,y,z,Vx,Vy,Vz")?;
        for (x, v) in self.lattice.positions().iter().zip(&self.values) {
            writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e}", x[0], x[1], x[2], v[0], v[1], v[2])?;
        }
        w.flush()
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }
}

const NORM: f64 = 0.063_493_635_934_240_97; // (2 pi)^(-3/2)

/// `c sqrt(2) sum v_l (alpha cos(k.x) - beta sin(k.x))` over the basis.
fn mode_sum(
    basis: &ModeBasis,
    coefficients: &[f64],
    lattice: &Lattice,
    vector: impl Fn(&Vector3<f64>, &Vector3<f64>) -> Vector3<f64>,
    rotate: bool,
) -> Vec<[f64; 3]> {
    let s = NORM * std::f64::consts::SQRT_2;
    lattice
        .positions()
        .iter()
        .map(|x| {
            let x = Vector3::from(*x);
            let mut acc = Vector3::zeros();
            for (m, pair) in basis.pairs().iter().enumerate() {
                let phase = pair.wavevector.dot(&x);
                let (sin, cos) = phase.sin_cos();
                for l in 0..2 {
                    let (a, b) = (coefficients[4 * m + 2 * l], coefficients[4 * m + 2 * l + 1]);
                    // multiplying q by i maps (a, b) to (-b, a)
                    let (alpha, beta) = if rotate { (-b, a) } else { (a, b) };
                    acc += vector(&pair.wavevector, &pair.polarizations[l]) * (alpha * cos - beta * sin);
                }
            }
            (acc * s).into()
        })
        .collect()
}

fn check_len(basis: &ModeBasis, q: &[f64]) -> Result<(), BeableError> {
    if q.len() != basis.quadrature_count() {
        return Err(BeableError::Dimension { got: q.len(), expected: basis.quadrature_count() });
    }
    Ok(())
}

/// Transverse vector potential of a full quadrature configuration.
pub fn reconstruct_a(basis: &ModeBasis, q: &[f64], lattice: &Lattice, time: f64) -> Result<FieldSnapshot, BeableError> {
    check_len(basis, q)?;
    lattice.check(basis)?;
    Ok(FieldSnapshot {
        kind: FieldKind::VectorPotential,
        time,
        lattice: *lattice,
        basis_digest: basis.digest(),
        values: mode_sum(basis, q, lattice, |_, e| *e, false),
    })
}

/// Magnetic field, the curl of [`reconstruct_a`] evaluated mode by mode.
pub fn reconstruct_b(basis: &ModeBasis, q: &[f64], lattice: &Lattice, time: f64) -> Result<FieldSnapshot, BeableError> {
    check_len(basis, q)?;
    lattice.check(basis)?;
    Ok(FieldSnapshot {
        kind: FieldKind::Magnetic,
        time,
        lattice: *lattice,
        basis_digest: basis.digest(),
        values: mode_sum(basis, q, lattice, |k, e| k.cross(e), true),
    })
}

/// Centered difference of the sampled coordinates at `t`. At a sample time
/// the neighbouring samples are used; between samples the centered
/// derivatives of the bracketing samples are blended linearly.
pub fn centered_derivative(traj: &Trajectory, t: f64) -> Result<Vec<f64>, BeableError> {
    let n = traj.times.len();
    let (first, last) = (traj.times.first().copied().unwrap_or(0.0), traj.times.last().copied().unwrap_or(0.0));
    let range = BeableError::Range { t, first, last };
    if n < 3 {
        return Err(range);
    }
    let at = |i: usize| -> Vec<f64> {
        let dt = traj.times[i + 1] - traj.times[i - 1];
        traj.points[i + 1].iter().zip(&traj.points[i - 1]).map(|(a, b)| (a - b) / dt).collect()
    };
    let tol = 1e-9 * (traj.times[1] - traj.times[0]).abs();
    let i = traj.times.partition_point(|&s| s < t - tol);
    if i < n && (traj.times[i] - t).abs() <= tol {
        return if i == 0 || i == n - 1 { Err(range) } else { Ok(at(i)) };
    }
    // t lies strictly between samples i - 1 and i
    if i < 2 || i > n - 2 {
        return Err(range);
    }
    let w = (t - traj.times[i - 1]) / (traj.times[i] - traj.times[i - 1]);
    Ok(at(i - 1).iter().zip(at(i)).map(|(a, b)| a * (1.0 - w) + b * w).collect())
}

/// Coordinates at `t`: the sample itself at a sample time, linear
/// interpolation in between.
pub fn position_at(traj: &Trajectory, t: f64) -> Result<Vec<f64>, BeableError> {
    let n = traj.times.len();
    let (first, last) = (traj.times.first().copied().unwrap_or(0.0), traj.times.last().copied().unwrap_or(0.0));
    if n == 0 {
        return Err(BeableError::Range { t, first, last });
    }
    let tol = if n > 1 { 1e-9 * (traj.times[1] - traj.times[0]).abs() } else { 1e-12 };
    if !(t >= first - tol && t <= last + tol) {
        return Err(BeableError::Range { t, first, last });
    }
    let i = traj.times.partition_point(|&s| s < t - tol);
    if i == n || (traj.times[i] - t).abs() <= tol {
        return Ok(traj.points[i.min(n - 1)].clone());
    }
    let w = (t - traj.times[i - 1]) / (traj.times[i] - traj.times[i - 1]);
    Ok(traj.points[i - 1].iter().zip(&traj.points[i]).map(|(a, b)| a * (1.0 - w) + b * w).collect())
}

/// One physical field of a field-beable trajectory at `t`.
pub fn reconstruct(
    field: &FieldModel,
    kind: FieldKind,
    traj: &Trajectory,
    t: f64,
    lattice: &Lattice,
) -> Result<FieldSnapshot, BeableError> {
    match kind {
        FieldKind::VectorPotential => reconstruct_a(&field.basis, &field.embed(&position_at(traj, t)?), lattice, t),
        FieldKind::Magnetic => reconstruct_b(&field.basis, &field.embed(&position_at(traj, t)?), lattice, t),
        FieldKind::Electric => reconstruct_e_t(field, traj, t, lattice),
    }
}

/// Transverse electric field `-dA/dt` from a field-beable trajectory over the
/// active coordinates of `field`.
pub fn reconstruct_e_t(field: &FieldModel, traj: &Trajectory, t: f64, lattice: &Lattice) -> Result<FieldSnapshot, BeableError> {
    let rate = field.embed(&centered_derivative(traj, t)?);
    lattice.check(&field.basis)?;
    let mut values = mode_sum(&field.basis, &rate, lattice, |_, e| *e, false);
    values.iter_mut().for_each(|v| v.iter_mut().for_each(|c| *c = -*c));
    Ok(FieldSnapshot { kind: FieldKind::Electric, time: t, lattice: *lattice, basis_digest: field.basis.digest(), values })
}

/// Spectral derivatives of each component along each axis, `[component][axis]`.
fn spectral_gradients(field: &FieldSnapshot) -> Vec<[[f64; 3]; 3]> {
    let l = &field.lattice;
    let shape = l.points.to_vec();
    let fft = FftNd::new(&shape);
    let ks: Vec<Vec<f64>> = (0..3)
        .map(|d| {
            let n = l.points[d];
            let mut k = wavenumbers(n, l.max[d] - l.min[d]);
            if n % 2 == 0 {
                k[n / 2] = 0.0;
            }
            if n == 1 {
                k[0] = 0.0;
            }
            k
        })
        .collect();
    let total = l.len();
    let mut out = vec![[[0.0; 3]; 3]; total];
    let strides = [l.points[1] * l.points[2], l.points[2], 1];
    for c in 0..3 {
        let mut spec: Vec<Complex64> = field.values.iter().map(|v| Complex64::new(v[c], 0.0)).collect();
        fft.forward(&mut spec);
        for d in 0..3 {
            let mut buf: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(p, s)| s * Complex64::new(0.0, ks[d][(p / strides[d]) % l.points[d]]))
                .collect();
            fft.inverse(&mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                o[c][d] = b.re;
            }
        }
    }
    out
}

/// Curl by FFT on the lattice; exact for commensurate band-limited fields.
pub fn spectral_curl(field: &FieldSnapshot) -> Vec<[f64; 3]> {
    spectral_gradients(field)
        .iter()
        .map(|g| [g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]])
        .collect()
}

pub fn spectral_divergence(field: &FieldSnapshot) -> Vec<f64> {
    spectral_gradients(field).iter().map(|g| g[0][0] + g[1][1] + g[2][2]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HamiltonianSpec;
    use rand::{Rng, SeedableRng};

    fn basis(ks: &[[f64; 3]]) -> ModeBasis {
        ModeBasis::new(&ks.iter().map(|k| Vector3::from(*k)).collect::<Vec<_>>()).unwrap()
    }

    fn random_q(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn norm_constant() {
        assert!((NORM - (2.0 * PI).powf(-1.5)).abs() < 1e-17);
    }

    #[test]
    fn zero_configuration_gives_zero_fields() {
        let b = basis(&[[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]]);
        let l = Lattice::cube(PI, 8);
        let q = vec![0.0; b.quadrature_count()];
        assert_eq!(reconstruct_a(&b, &q, &l, 0.0).unwrap().max_norm(), 0.0);
        assert_eq!(reconstruct_b(&b, &q, &l, 0.0).unwrap().max_norm(), 0.0);
    }

    #[test]
    fn single_mode_along_z_is_a_cosine_along_e1() {
        let k = 3.0;
        let b = basis(&[[0.0, 0.0, k]]);
        let l = Lattice { min: [0.0; 3], max: [1.0, 1.0, 2.0 * PI], points: [1, 1, 32] };
        let mut q = vec![0.0; 4];
        q[0] = 1.0;
        let a = reconstruct_a(&b, &q, &l, 0.0).unwrap();
        // direct evaluation of the k and -k terms with q(k) = q(-k) = 1/sqrt(2)
        for (x, v) in l.positions().iter().zip(&a.values) {
            let term = Complex64::new(0.0, k * x[2]).exp() / 2f64.sqrt();
            let want = NORM * 2.0 * term.re;
            assert!((v[0] - want).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0);
        }
    }

    #[test]
    fn reconstruction_is_linear() {
        let b = basis(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        let l = Lattice::cube(PI, 6);
        let (q1, q2) = (random_q(8, 1), random_q(8, 2));
        let sum: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let (a1, a2, a3) =
            (reconstruct_a(&b, &q1, &l, 0.0).unwrap(), reconstruct_a(&b, &q2, &l, 0.0).unwrap(), reconstruct_a(&b, &sum, &l, 0.0).unwrap());
        for ((x, y), z) in a1.values.iter().zip(&a2.values).zip(&a3.values) {
            for d in 0..3 {
                assert!((2.0 * x[d] - 0.5 * y[d] - z[d]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn magnetic_field_is_orthogonal_to_k_and_polarization() {
        let b = basis(&[[1.0, 2.0, -1.0]]);
        let pair = &b.pairs()[0];
        let l = Lattice::cube(2.0, 5);
        for l_index in 0..2 {
            let mut q = random_q(4, 5);
            q[2 - 2 * l_index] = 0.0;
            q[3 - 2 * l_index] = 0.0;
            let field = reconstruct_b(&b, &q, &l, 0.0).unwrap();
            let e = pair.polarizations[l_index];
            for v in &field.values {
                let v = Vector3::from(*v);
                assert!(v.dot(&pair.wavevector).abs() < 1e-15 && v.dot(&e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn b_matches_spectral_curl_and_a_is_divergence_free() {
        let b = basis(&[[1.0, 0.0, 0.0], [0.0, 2.0, 1.0], [1.0, -1.0, 3.0]]);
        let l = Lattice::cube(PI, 16);
        assert!(l.is_commensurate(&b));
        for seed in 0..3 {
            let q = random_q(b.quadrature_count(), seed);
            let a = reconstruct_a(&b, &q, &l, 0.0).unwrap();
            let bf = reconstruct_b(&b, &q, &l, 0.0).unwrap();
            let curl = spectral_curl(&a);
            let err = curl.iter().zip(&bf.values).map(|(c, v)| (0..3).map(|d| (c[d] - v[d]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
            let div = spectral_divergence(&a).iter().map(|d| d.abs()).fold(0.0, f64::max);
            assert!(div < 1e-10, "{div}");
        }
    }

    #[test]
    fn aliased_modes_are_rejected() {
        let b = basis(&[[9.0, 0.0, 0.0]]);
        let l = Lattice::cube(PI, 8);
        assert!(matches!(reconstruct_a(&b, &[0.0; 4], &l, 0.0), Err(BeableError::Aliasing { axis: 0, .. })));
    }

    fn one_mode_field(w: f64) -> FieldModel {
        toml::from_str::<HamiltonianSpec>(&format!(
            "kind = \"field_mode\"\nwavevectors = [[0.0, 0.0, {w}]]\nactive = [{{ mode = 0, polarization = 1, quadrature = \"re\" }}]"
        ))
        .unwrap()
        .resolve()
        .unwrap()
        .field
        .unwrap()
    }

    fn sampled(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> Trajectory {
        let n = (t_end / dt).round() as usize;
        let mut traj = Trajectory::default();
        for i in 0..=n {
            let t = i as f64 * dt;
            traj.times.push(t);
            traj.points.push(vec![f(t)]);
            traj.node_flags.push(false);
        }
        traj
    }

    #[test]
    fn electric_field_of_constant_trajectory_vanishes_and_endpoints_are_refused() {
        let field = one_mode_field(1.0);
        let l = Lattice { min: [0.0; 3], max: [1.0, 1.0, 2.0 * PI], points: [1, 1, 16] };
        let traj = sampled(|_| 0.7, 1.0, 0.1);
        assert_eq!(reconstruct_e_t(&field, &traj, 0.5, &l).unwrap().max_norm(), 0.0);
        assert!(matches!(reconstruct_e_t(&field, &traj, 1.0, &l), Err(BeableError::Range { .. })));
        assert!(matches!(reconstruct_e_t(&field, &traj, 0.0, &l), Err(BeableError::Range { .. })));
    }

    #[test]
    fn electric_field_of_oscillating_mode_converges_at_second_order() {
        let (w, amp) = (2.0, 0.8);
        let field = one_mode_field(w);
        let l = Lattice { min: [0.0; 3], max: [1.0, 1.0, PI], points: [1, 1, 8] };
        let t = 0.9;
        // q = amp cos(wt): E = -c sqrt(2) e1 dq/dt cos(kz) = c sqrt(2) e1 amp w sin(wt) cos(kz)
        let exact: Vec<f64> = l.positions().iter().map(|x| NORM * 2f64.sqrt() * amp * w * (w * t).sin() * (w * x[2]).cos()).collect();
        let error = |dt: f64| {
            let e = reconstruct_e_t(&field, &sampled(|s| amp * (w * s).cos(), 2.0, dt), t, &l).unwrap();
            e.values.iter().zip(&exact).map(|(v, x)| (v[0] - x).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (error(0.01), error(0.005));
        assert!(coarse / (NORM * 2f64.sqrt() * amp * w) < 1e-4);
        assert!(coarse / fine >= 3.5, "{coarse} / {fine}");
    }

    #[test]
    fn positions_interpolate_between_samples_and_refuse_outside() {
        let traj = sampled(|s| 2.0 * s, 1.0, 0.1);
        assert_eq!(position_at(&traj, 0.0).unwrap(), vec![0.0]);
        assert!((position_at(&traj, 0.35).unwrap()[0] - 0.7).abs() < 1e-14);
        assert!((position_at(&traj, 1.0).unwrap()[0] - 2.0).abs() < 1e-14);
        assert!(matches!(position_at(&traj, 1.01), Err(BeableError::Range { .. })));
        assert!(matches!(position_at(&traj, -0.01), Err(BeableError::Range { .. })));
        let field = one_mode_field(1.0);
        let l = Lattice { min: [0.0; 3], max: [1.0, 1.0, 2.0 * PI], points: [1, 1, 8] };
        let a = reconstruct(&field, FieldKind::VectorPotential, &traj, 0.5, &l).unwrap();
        assert_eq!(a, reconstruct_a(&field.basis, &field.embed(&[1.0]), &l, 0.5).unwrap());
        assert!(reconstruct(&field, FieldKind::Electric, &traj, 1.0, &l).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let b = basis(&[[0.0, 0.0, 1.0]]);
        let l = Lattice { min: [0.0; 3], max: [1.0, 1.0, 2.0 * PI], points: [1, 1, 4] };
        let f = reconstruct_a(&b, &[1.0, 0.0, 0.0, 0.0], &l, 0.5).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# field A_T time 0.5 basis "));
        assert_eq!(lines[1], "x,y,z,Vx,Vy,Vz");
        assert_eq!(lines.len(), 6);
        let mut json = Vec::new();
        f.write_json(&mut json).unwrap();
        let back: FieldSnapshot = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, f);
    }
}
