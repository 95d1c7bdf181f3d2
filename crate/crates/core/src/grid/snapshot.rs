use super::{FftNd, Grid, GridWavefunction};
use crate::guidance::{EvalError, PilotWave, PointValue};
use crate::model::GuidanceLaw;
use num_complex::Complex64;
use std::sync::Arc;

/// Points per axis in the interpolation stencil (degree seven).
pub const STENCIL: usize = 8;
const OFFSET: isize = 3;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A frozen grid wavefunction with spectral gradients, evaluated off-grid by
/// tensor-product Lagrange interpolation.
#[derive(Clone, Debug)]
pub struct GridSnapshot {
    pub grid: Arc<Grid>,
    pub internal_dim: usize,
    pub time: f64,
    /// `Psi_f` planes.
    pub values: Vec<Complex64>,
    /// `dPsi_f/dx_d` planes at `(f * dim + d) * points`.
    pub gradients: Vec<Complex64>,
    scale: f64,
}

fn lagrange_weights(t: f64) -> [f64; STENCIL] {
    let nodes: [f64; STENCIL] = std::array::from_fn(|j| j as f64 - OFFSET as f64);
    std::array::from_fn(|j| {
        let mut w = 1.0;
        for (k, xk) in nodes.iter().enumerate() {
            if k != j {
                w *= (t - xk) / (nodes[j] - xk);
            }
        }
        w
    })
}

impl GridSnapshot {
    pub fn new(state: &GridWavefunction, fft: &FftNd) -> Self {
        let grid = state.grid.clone();
        let n = grid.points();
        let dim = grid.dim();
        let fd = state.internal_dim;
        let ks: Vec<Vec<f64>> = grid
            .axes
            .iter()
            .map(|a| {
                let mut k = super::wavenumbers(a.n, a.length());
                // the Nyquist mode has no odd partner, so its derivative is dropped
                if a.n % 2 == 0 {
                    k[a.n / 2] = 0.0;
                }
                k
            })
            .collect();
        let mut gradients = vec![ZERO; n * fd * dim];
        let mut spectrum = vec![ZERO; n];
        let mut buf = vec![ZERO; n];
        for f in 0..fd {
            spectrum.copy_from_slice(state.plane(f));
            fft.forward(&mut spectrum);
            for d in 0..dim {
                let stride = grid.stride(d);
                let len = grid.axes[d].n;
                for (p, (b, s)) in buf.iter_mut().zip(&spectrum).enumerate() {
                    let i = (p / stride) % len;
                    *b = s * Complex64::new(0.0, ks[d][i]);
                }
                fft.inverse(&mut buf);
                gradients[(f * dim + d) * n..(f * dim + d + 1) * n].copy_from_slice(&buf);
            }
        }
        let scale = state.nodal_density().into_iter().fold(0.0, f64::max);
        Self { grid, internal_dim: fd, time: state.time, values: state.data.clone(), gradients, scale }
    }

    pub fn nodal_density(&self) -> Vec<f64> {
        let n = self.grid.points();
        let mut rho = vec![0.0; n];
        for f in 0..self.internal_dim {
            for (r, z) in rho.iter_mut().zip(&self.values[f * n..(f + 1) * n]) {
                *r += z.norm_sqr();
            }
        }
        rho
    }

    /// Guidance current `J_d = c_d sum_f Im(conj(Psi_f) dPsi_f) + drift_d rho`
    /// at every node, as planes indexed `d * points + p`.
    pub fn nodal_current(&self, law: &GuidanceLaw) -> Vec<f64> {
        let n = self.grid.points();
        let dim = self.grid.dim();
        let rho = self.nodal_density();
        let mut j = vec![0.0; n * dim];
        for d in 0..dim {
            for p in 0..n {
                let mut s = 0.0;
                for f in 0..self.internal_dim {
                    s += (self.values[f * n + p].conj() * self.gradients[(f * dim + d) * n + p]).im;
                }
                j[d * n + p] = law.coefficients[d] * s + law.drift[d] * rho[p];
            }
        }
        j
    }
}

impl PilotWave for GridSnapshot {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn internal_dim(&self) -> usize {
        self.internal_dim
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn evaluate_into(&self, x: &[f64], out: &mut PointValue) -> Result<(), EvalError> {
        let g = &self.grid;
        let dim = g.dim();
        if x.len() != dim {
            return Err(EvalError::Dimension { got: x.len(), expected: dim });
        }
        let mut weights = Vec::with_capacity(dim);
        let mut base = Vec::with_capacity(dim);
        for (d, (&xd, a)) in x.iter().zip(&g.axes).enumerate() {
            if !(xd >= a.min && xd < a.max) {
                return Err(EvalError::OutOfDomain { coordinate: d, value: xd, min: a.min, max: a.max });
            }
            let u = (xd - a.min) / a.dx();
            let i0 = u.floor();
            weights.push(lagrange_weights(u - i0));
            base.push(i0 as isize - OFFSET);
        }
        let n = g.points();
        let fd = self.internal_dim;
        out.values.iter_mut().for_each(|v| *v = ZERO);
        out.gradients.iter_mut().for_each(|v| *v = ZERO);
        let mut k = vec![0usize; dim];
        loop {
            let mut p = 0;
            let mut w = 1.0;
            for d in 0..dim {
                let len = g.axes[d].n as isize;
                let i = (base[d] + k[d] as isize).rem_euclid(len) as usize;
                p += i * g.stride(d);
                w *= weights[d][k[d]];
            }
            for f in 0..fd {
                out.values[f] += w * self.values[f * n + p];
                for d in 0..dim {
                    out.gradients[f * dim + d] += w * self.gradients[(f * dim + d) * n + p];
                }
            }
            let mut d = dim;
            loop {
                if d == 0 {
                    return Ok(());
                }
                d -= 1;
                k[d] += 1;
                if k[d] < STENCIL {
                    break;
                }
                k[d] = 0;
            }
        }
    }

    fn density_scale(&self) -> f64 {
        self.scale
    }

    /// Per axis, the node range whose marginal exceeds `1e-16` of its peak,
    /// widened by one node.
    fn support_box(&self) -> Vec<(f64, f64)> {
        let g = &self.grid;
        let rho = self.nodal_density();
        (0..g.dim())
            .map(|d| {
                let a = g.axes[d];
                let stride = g.stride(d);
                let mut marginal = vec![0.0; a.n];
                for (p, r) in rho.iter().enumerate() {
                    marginal[(p / stride) % a.n] += r;
                }
                let peak = marginal.iter().cloned().fold(0.0, f64::max);
                let first = marginal.iter().position(|&v| v > 1e-16 * peak).unwrap_or(0);
                let last = marginal.iter().rposition(|&v| v > 1e-16 * peak).unwrap_or(a.n - 1);
                (a.coord(first.saturating_sub(1)), a.coord((last + 1).min(a.n - 1)))
            })
            .collect()
    }
}

/// L2 norm of `d rho/dt + div J` at the middle of three snapshots spaced `dt`
/// apart, with second-order central differences in time and space.
pub fn continuity_residual(snaps: [&GridSnapshot; 3], dt: f64, law: &GuidanceLaw) -> f64 {
    let g = &snaps[1].grid;
    let n = g.points();
    let dim = g.dim();
    let before = snaps[0].nodal_density();
    let after = snaps[2].nodal_density();
    let j = snaps[1].nodal_current(law);
    let mut sum = 0.0;
    for p in 0..n {
        let idx = g.multi_index(p);
        let mut r = (after[p] - before[p]) / (2.0 * dt);
        for d in 0..dim {
            let a = g.axes[d];
            let mut up = idx.clone();
            let mut down = idx.clone();
            up[d] = (idx[d] + 1) % a.n;
            down[d] = (idx[d] + a.n - 1) % a.n;
            r += (j[d * n + g.flat_index(&up)] - j[d * n + g.flat_index(&down)]) / (2.0 * a.dx());
        }
        sum += r * r;
    }
    (sum * g.cell_volume()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::{Axis, GridEvolver, GridScheme};
    use super::*;
    use crate::guidance::{velocity_particles, velocity_pauli, Evolver};
    use crate::model::{HamiltonianSpec, InitialState, Model};
    use std::f64::consts::PI;

    fn model(src: &str) -> Model {
        toml::from_str::<HamiltonianSpec>(src).unwrap().resolve().unwrap()
    }

    fn packet(m: &Model, axes: &[Axis], src: &str) -> GridWavefunction {
        GridWavefunction::from_initial_state(&toml::from_str::<InitialState>(src).unwrap(), m, axes).unwrap()
    }

    #[test]
    fn interpolation_reproduces_a_gaussian_and_its_gradient() {
        let m = model("kind = \"particle_schrodinger\"\nmasses = [1.0, 1.0]");
        let psi = packet(
            &m,
            &[Axis::new(-10.0, 10.0, 128), Axis::new(-12.0, 12.0, 160)],
            "family = \"gaussian_packet\"\ncenter = [0.5, -1.0]\nwidth = [1.0, 1.2]\nmomentum = [1.0, -0.5]",
        );
        let fft = FftNd::new(&psi.grid.shape());
        let snap = GridSnapshot::new(&psi, &fft);
        let ctx = crate::model::StateContext::from_model(&m);
        let state: InitialState =
            toml::from_str("family = \"gaussian_packet\"\ncenter = [0.5, -1.0]\nwidth = [1.0, 1.2]\nmomentum = [1.0, -0.5]").unwrap();
        for x in [[0.13, -0.77], [1.91, 0.4], [-2.2, -3.05]] {
            let pv = snap.evaluate(&x).unwrap();
            let want = state.evaluate(&x, &ctx)[0];
            assert!((pv.values[0] - want).norm() < 1e-6 * want.norm().max(1e-3), "{x:?} {} vs {}", pv.values[0], want);
            // a real envelope times a plane wave moves at p / m everywhere
            let v = velocity_particles(&snap, &m.guidance_law(), &x).unwrap().unwrap();
            assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] + 0.5).abs() < 1e-6, "{v:?}");
        }
        assert!(matches!(snap.evaluate(&[10.0, 0.0]), Err(EvalError::OutOfDomain { .. })));
    }

    #[test]
    fn spreading_gaussian_velocity_matches_phase_gradient() {
        let m = model("kind = \"particle_schrodinger\"\nmasses = [1.0]");
        let psi = packet(&m, &[Axis::new(-30.0, 30.0, 1024)], "family = \"gaussian_packet\"\ncenter = [0.0]\nwidth = [1.0]");
        let mut ev = GridEvolver::new(&m, psi, GridScheme::Strang).unwrap();
        for _ in 0..50 {
            ev.advance(0.02).unwrap();
        }
        let snap = ev.snapshot();
        let t = ev.time();
        // closed-form phase of the free packet: S(x) = x^2 t / (8 sigma0^4 + 2 t^2) + f(t)
        let phase_grad = |x: f64| x * t / (4.0 + t * t);
        let h = 1e-4;
        for x in [-3.0, -0.7, 0.4, 2.5] {
            let v = velocity_particles(snap.as_ref(), &m.guidance_law(), &[x]).unwrap().unwrap()[0];
            let fd = {
                let a = snap.evaluate(&[x + h]).unwrap().values[0];
                let b = snap.evaluate(&[x - h]).unwrap().values[0];
                (a / b).arg() / (2.0 * h)
            };
            assert!((v - fd).abs() < 1e-6, "{v} vs {fd}");
            assert!((v - phase_grad(x)).abs() < 1e-6, "{v} vs {}", phase_grad(x));
        }
    }

    #[test]
    fn zero_vector_potential_pauli_velocity_equals_scalar_velocity() {
        let scalar = model("kind = \"particle_schrodinger\"\nmasses = [1.5]");
        let pauli = model("kind = \"pauli\"\nmass = 1.5\nmagnetic_moment = 1.0\naxes = [\"x\"]");
        let axes = [Axis::new(-15.0, 15.0, 256)];
        let a = packet(&scalar, &axes, "family = \"gaussian_packet\"\ncenter = [0.3]\nwidth = [0.9]\nmomentum = [0.7]");
        let b = packet(
            &pauli,
            &axes,
            "family = \"spinor\"\ncomponents = [1.0, 0.0]\nspatial = { family = \"gaussian_packet\", center = [0.3], width = [0.9], momentum = [0.7] }",
        );
        let fft = FftNd::new(&[256]);
        let (sa, sb) = (GridSnapshot::new(&a, &fft), GridSnapshot::new(&b, &fft));
        for x in [-2.0, 0.0, 1.7] {
            let va = velocity_particles(&sa, &scalar.guidance_law(), &[x]).unwrap().unwrap()[0];
            let vb = velocity_pauli(&sb, &pauli.guidance_law(), &[x]).unwrap().unwrap()[0];
            assert!((va - vb).abs() <= 1e-12, "{va} vs {vb}");
        }
    }

    #[test]
    fn continuity_residual_is_second_order() {
        let m = model("kind = \"particle_schrodinger\"\nmasses = [1.0]\npotential = { type = \"harmonic\", frequency = [0.5] }");
        let residual = |n: usize, dt: f64| {
            let psi = packet(&m, &[Axis::new(-16.0, 16.0, n)], "family = \"gaussian_packet\"\ncenter = [1.0]\nwidth = [1.0]\nmomentum = [0.5]");
            let mut ev = GridEvolver::new(&m, psi, GridScheme::Yoshida4).unwrap();
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                ev.advance(dt).unwrap();
            }
            let fft = FftNd::new(&[n]);
            let s0 = GridSnapshot::new(&ev.state, &fft);
            ev.advance(dt).unwrap();
            let s1 = GridSnapshot::new(&ev.state, &fft);
            ev.advance(dt).unwrap();
            let s2 = GridSnapshot::new(&ev.state, &fft);
            continuity_residual([&s0, &s1, &s2], dt, &m.guidance_law())
        };
        let coarse = residual(128, 0.04);
        let fine = residual(256, 0.02);
        assert!(coarse / fine >= 3.5, "{coarse} / {fine}");
    }

    #[test]
    fn density_scale_and_support() {
        let m = model("kind = \"particle_schrodinger\"\nmasses = [1.0]");
        let psi = packet(&m, &[Axis::new(-20.0, 20.0, 400)], "family = \"gaussian_packet\"\ncenter = [2.0]\nwidth = [0.5]");
        let snap = GridSnapshot::new(&psi, &FftNd::new(&[400]));
        assert!((snap.density_scale() - 1.0 / (2.0 * PI * 0.25f64).sqrt()).abs() < 1e-10);
        let (lo, hi) = snap.support_box()[0];
        assert!(lo < 2.0 - 4.0 && lo > 2.0 - 6.0 && hi > 2.0 + 4.0 && hi < 2.0 + 6.0, "{lo} {hi}");
    }
}
