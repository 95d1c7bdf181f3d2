//! Field-mode wavefunctions in a truncated number basis.
//!
//! Amplitudes are stored per occupation tuple `(n_0, .., n_{M-1})` in
//! lexicographic order (last coordinate fastest) with the fermionic label
//! fastest of all. Each coordinate is a unit-mass oscillator, so
//! `q_j = (a_j + a_j^dagger) / sqrt(2 w_j)` and
//!
//! ```text
//! H = sum_j w_j (n_j + 1/2) + H_F + V_C + sum_j q_j g_j .
//! ```
//!
//! The position representation uses `psi_n(q) = w^(1/4) phi_n(sqrt(w) q)`
//! with the normalized Hermite functions of [`hermite`].

pub mod hermite;

use crate::guidance::{EvalError, Evolver, PilotWave, PointValue, SolverError};
use crate::linalg::{lanczos_propagate, norm_sqr, CMatrix, HermitianEigen};
use crate::model::{FieldModel, InitialState, Model, StateContext, StateError};
use hermite::{hermite_functions, hermite_with_derivatives, reliable_range};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

/// Above this dimension evolution switches from dense exponentials to Lanczos.
pub const DENSE_LIMIT: usize = 600;
/// Largest top-shell probability for a certified run.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Index arithmetic for occupation tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FockBasis {
    pub n_max: Vec<usize>,
    strides: Vec<usize>,
    tuples: usize,
}

impl FockBasis {
    pub fn new(n_max: &[usize]) -> Self {
        let mut strides = vec![1; n_max.len()];
        for j in (0..n_max.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * (n_max[j + 1] + 1);
        }
        let tuples = n_max.iter().map(|n| n + 1).product();
        Self { n_max: n_max.to_vec(), strides, tuples }
    }

    pub fn modes(&self) -> usize {
        self.n_max.len()
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples
    }

    pub fn index(&self, n: &[usize]) -> usize {
        n.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn tuple(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let n = index / s;
                index %= s;
                n
            })
            .collect()
    }

    pub fn stride(&self, j: usize) -> usize {
        self.strides[j]
    }
}

/// Number-basis wavefunction `Psi_f` over the active coordinates of a field
/// model.
#[derive(Clone, Debug)]
pub struct FockWavefunction {
    pub basis: FockBasis,
    pub fermion_dim: usize,
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

fn coherent_amplitudes(alpha: Complex64, n_max: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut c = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    out.push(c);
    for n in 1..=n_max {
        c *= alpha / (n as f64).sqrt();
        out.push(c);
    }
    out
}

/// `<n|g>` for a one-dimensional Gaussian packet by trapezoid quadrature,
/// spectrally accurate for integrands that decay inside the window.
fn packet_amplitudes(center: f64, width: f64, momentum: f64, w: f64, n_max: usize) -> Vec<Complex64> {
    let lo = center - 12.0 * width;
    let hi = center + 12.0 * width;
    let scale = width
        .min(1.0 / (w * (2.0 * n_max as f64 + 1.0)).sqrt())
        .min(if momentum != 0.0 { 1.0 / momentum.abs() } else { f64::INFINITY });
    let h = scale / 8.0;
    let steps = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / steps as f64;
    let norm = (2.0 * PI * width * width).powf(-0.25);
    let mut out = vec![ZERO; n_max + 1];
    for i in 0..=steps {
        let q = lo + i as f64 * h;
        let g = norm * Complex64::new(-(q - center).powi(2) / (4.0 * width * width), momentum * q).exp();
        let weight = if i == 0 || i == steps { 0.5 * h } else { h };
        let phi = hermite_functions(n_max, w.sqrt() * q);
        for (o, p) in out.iter_mut().zip(&phi) {
            *o += weight * w.powf(0.25) * p * g;
        }
    }
    out
}

fn product_state(factors: &[Vec<Complex64>], basis: &FockBasis) -> Vec<Complex64> {
    (0..basis.tuple_count())
        .map(|t| basis.tuple(t).iter().zip(factors).map(|(&n, f)| f[n]).product())
        .collect()
}

fn pick(values: &[f64], j: usize, default: f64) -> f64 {
    match values.len() {
        0 => default,
        1 => values[0],
        _ => values[j],
    }
}

impl FockWavefunction {
    pub fn vacuum(frequencies: &[f64], n_max: &[usize], fermion_dim: usize) -> Self {
        let basis = FockBasis::new(n_max);
        let mut amplitudes = vec![ZERO; basis.tuple_count() * fermion_dim];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { basis, fermion_dim, frequencies: frequencies.to_vec(), amplitudes, time: 0.0 }
    }

    /// Realizes a declarative initial state and normalizes it.
    pub fn from_initial_state(state: &InitialState, model: &Model, n_max: &[usize]) -> Result<Self, StateError> {
        let ctx = StateContext::from_model(model);
        state.check(&ctx)?;
        let field = model.field.as_ref().ok_or(StateError::NeedsFrequencies("number basis"))?;
        let basis = FockBasis::new(n_max);
        let mut amplitudes = vec![ZERO; basis.tuple_count() * field.fermion_dim];
        Self::accumulate(state, field, &basis, Complex64::new(1.0, 0.0), None, &mut amplitudes)?;
        let norm = norm_sqr(&amplitudes).sqrt();
        if norm == 0.0 {
            return Err(StateError::ZeroNorm);
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self {
            basis,
            fermion_dim: field.fermion_dim,
            frequencies: field.frequencies.clone(),
            amplitudes,
            time: 0.0,
        })
    }

    fn accumulate(
        state: &InitialState,
        field: &FieldModel,
        basis: &FockBasis,
        coeff: Complex64,
        spinor: Option<&[Complex64]>,
        out: &mut [Complex64],
    ) -> Result<(), StateError> {
        let fd = field.fermion_dim;
        let w = &field.frequencies;
        let factors: Vec<Vec<Complex64>> = match state {
            InitialState::Superposition { terms } => {
                for t in terms {
                    Self::accumulate(&t.state, field, basis, coeff * Complex64::from(t.coeff), spinor, out)?;
                }
                return Ok(());
            }
            InitialState::Spinor { components, spatial } => {
                let chi: Vec<Complex64> = components.iter().map(|&c| c.into()).collect();
                let n = norm_sqr(&chi).sqrt();
                let chi: Vec<Complex64> = chi.iter().map(|c| c / n).collect();
                return Self::accumulate(spatial, field, basis, coeff, Some(&chi), out);
            }
            InitialState::NumberState { n } => n
                .iter()
                .zip(&basis.n_max)
                .map(|(&k, &top)| {
                    if k > top {
                        return Err(StateError::NotInNumberBasis(format!("occupation {k} exceeds n_max {top}")));
                    }
                    let mut v = vec![ZERO; top + 1];
                    v[k] = Complex64::new(1.0, 0.0);
                    Ok(v)
                })
                .collect::<Result<_, _>>()?,
            InitialState::HoGround { frequency } => (0..basis.modes())
                .map(|j| {
                    let f = pick(frequency, j, w[j]);
                    if (f - w[j]).abs() > 1e-12 * w[j] {
                        return Err(StateError::NotInNumberBasis(format!(
                            "ho_ground frequency {f} differs from mode frequency {}",
                            w[j]
                        )));
                    }
                    let mut v = vec![ZERO; basis.n_max[j] + 1];
                    v[0] = Complex64::new(1.0, 0.0);
                    Ok(v)
                })
                .collect::<Result<_, _>>()?,
            InitialState::Coherent { alpha } => alpha
                .iter()
                .zip(&basis.n_max)
                .map(|(&a, &top)| coherent_amplitudes(a.into(), top))
                .collect(),
            InitialState::GaussianPacket { center, width, momentum } => (0..basis.modes())
                .map(|j| packet_amplitudes(center[j], pick(width, j, 1.0), pick(momentum, j, 0.0), w[j], basis.n_max[j]))
                .collect(),
        };
        let spatial = product_state(&factors, basis);
        for (t, a) in spatial.iter().enumerate() {
            for f in 0..fd {
                let chi = match spinor {
                    Some(c) => c[f],
                    None if f == 0 => Complex64::new(1.0, 0.0),
                    None => ZERO,
                };
                out[t * fd + f] += coeff * chi * a;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// Probability on tuples with some `n_j = n_max_j`.
    pub fn leakage(&self) -> f64 {
        let fd = self.fermion_dim;
        (0..self.basis.tuple_count())
            .filter(|&t| self.basis.tuple(t).iter().zip(&self.basis.n_max).any(|(n, top)| n == top))
            .map(|t| norm_sqr(&self.amplitudes[t * fd..(t + 1) * fd]))
            .sum()
    }

    /// `<q_j>` from ladder operators: `<..n..| q |..n-1..> = sqrt(n / 2w)`.
    pub fn mean_position(&self, j: usize) -> f64 {
        let fd = self.fermion_dim;
        let stride = self.basis.stride(j);
        let mut sum = 0.0;
        for t in 0..self.basis.tuple_count() {
            let n = self.basis.tuple(t)[j];
            if n == 0 {
                continue;
            }
            let lower = t - stride;
            for f in 0..fd {
                sum += 2.0 * (self.amplitudes[t * fd + f].conj() * self.amplitudes[lower * fd + f]).re * (n as f64).sqrt();
            }
        }
        sum / (2.0 * self.frequencies[j]).sqrt()
    }

    /// `sum_j <p_j^2>` with `p = i sqrt(w/2) (a^dagger - a)`.
    pub fn momentum_square(&self) -> f64 {
        let fd = self.fermion_dim;
        let mut total = 0.0;
        for j in 0..self.basis.modes() {
            let stride = self.basis.stride(j);
            let scale = (self.frequencies[j] / 2.0).sqrt();
            let mut p = vec![ZERO; self.amplitudes.len()];
            for t in 0..self.basis.tuple_count() {
                let n = self.basis.tuple(t)[j];
                for f in 0..fd {
                    let mut v = ZERO;
                    if n < self.basis.n_max[j] {
                        v -= (n as f64 + 1.0).sqrt() * self.amplitudes[(t + stride) * fd + f];
                    }
                    if n > 0 {
                        v += (n as f64).sqrt() * self.amplitudes[(t - stride) * fd + f];
                    }
                    p[t * fd + f] = Complex64::new(0.0, scale) * v;
                }
            }
            total += norm_sqr(&p);
        }
        total
    }

    /// Reduced density matrix of coordinate `j` over `n_j`, traced over the
    /// other coordinates and the fermionic label.
    pub fn reduced_density(&self, j: usize) -> CMatrix {
        let fd = self.fermion_dim;
        let top = self.basis.n_max[j];
        let stride = self.basis.stride(j);
        let mut rho = CMatrix::zeros(top + 1, top + 1);
        for t in 0..self.basis.tuple_count() {
            let n = self.basis.tuple(t)[j];
            if n != 0 {
                continue;
            }
            for a in 0..=top {
                for b in 0..=top {
                    let (ta, tb) = (t + a * stride, t + b * stride);
                    let mut s = ZERO;
                    for f in 0..fd {
                        s += self.amplitudes[ta * fd + f] * self.amplitudes[tb * fd + f].conj();
                    }
                    rho[(a, b)] += s;
                }
            }
        }
        rho
    }

    /// Marginal density of coordinate `j` at `q`.
    pub fn marginal_density(&self, reduced: &CMatrix, j: usize, q: f64) -> f64 {
        let w = self.frequencies[j];
        let phi = hermite_functions(self.basis.n_max[j], w.sqrt() * q);
        let mut s = 0.0;
        for a in 0..phi.len() {
            for b in 0..phi.len() {
                s += reduced[(a, b)].re * phi[a] * phi[b];
            }
        }
        s * w.sqrt()
    }

    /// Largest `|q_j|` for which Hermite evaluation is trusted.
    pub fn range_limit(&self, j: usize) -> f64 {
        reliable_range(self.basis.n_max[j]) / self.frequencies[j].sqrt()
    }

    /// `Psi_f(q)` and `dPsi_f/dq_j` by direct summation over tuples.
    pub fn evaluate_position(&self, q: &[f64], out: &mut PointValue) -> Result<(), EvalError> {
        let m = self.basis.modes();
        if q.len() != m {
            return Err(EvalError::Dimension { got: q.len(), expected: m });
        }
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut ders: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (j, &qj) in q.iter().enumerate() {
            let limit = self.range_limit(j);
            if !(qj.abs() <= limit) {
                return Err(EvalError::Range { coordinate: j, value: qj, limit });
            }
            let w = self.frequencies[j];
            let n = self.basis.n_max[j] + 1;
            let (mut v, mut d) = (vec![0.0; n], vec![0.0; n]);
            hermite_with_derivatives(&mut v, &mut d, w.sqrt() * qj);
            let (a, b) = (w.powf(0.25), w.powf(0.75));
            v.iter_mut().for_each(|x| *x *= a);
            d.iter_mut().for_each(|x| *x *= b);
            vals.push(v);
            ders.push(d);
        }
        let fd = self.fermion_dim;
        out.values.iter_mut().for_each(|v| *v = ZERO);
        out.gradients.iter_mut().for_each(|v| *v = ZERO);
        let mut n = vec![0usize; m];
        let mut partial = vec![0.0; m];
        for t in 0..self.basis.tuple_count() {
            let amps = &self.amplitudes[t * fd..(t + 1) * fd];
            let value: f64 = (0..m).map(|j| vals[j][n[j]]).product();
            for j in 0..m {
                partial[j] = (0..m).map(|i| if i == j { ders[i][n[i]] } else { vals[i][n[i]] }).product();
            }
            for (f, a) in amps.iter().enumerate() {
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                out.values[f] += a * value;
                for j in 0..m {
                    out.gradients[f * m + j] += a * partial[j];
                }
            }
            for j in (0..m).rev() {
                n[j] += 1;
                if n[j] <= self.basis.n_max[j] {
                    break;
                }
                n[j] = 0;
            }
        }
        Ok(())
    }
}

/// The field-mode Hamiltonian acting on number-basis amplitudes.
#[derive(Clone, Debug)]
pub struct FockHamiltonian {
    basis: FockBasis,
    fermion_dim: usize,
    frequencies: Vec<f64>,
    static_block: CMatrix,
    couplings: Vec<CMatrix>,
}

impl FockHamiltonian {
    pub fn new(field: &FieldModel, n_max: &[usize]) -> Self {
        Self {
            basis: FockBasis::new(n_max),
            fermion_dim: field.fermion_dim,
            frequencies: field.frequencies.clone(),
            static_block: field.static_block.clone(),
            couplings: field.couplings.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.tuple_count() * self.fermion_dim
    }

    pub fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let fd = self.fermion_dim;
        let m = self.basis.modes();
        let active: Vec<bool> = self.couplings.iter().map(|g| g.iter().any(|z| z.norm() > 0.0)).collect();
        let mut n = vec![0usize; m];
        for t in 0..self.basis.tuple_count() {
            let diag: f64 = (0..m).map(|j| self.frequencies[j] * (n[j] as f64 + 0.5)).sum();
            for f in 0..fd {
                let mut acc = diag * psi[t * fd + f];
                for g in 0..fd {
                    acc += self.static_block[(f, g)] * psi[t * fd + g];
                }
                out[t * fd + f] = acc;
            }
            for j in 0..m {
                if !active[j] {
                    continue;
                }
                let stride = self.basis.stride(j);
                let scale = 1.0 / (2.0 * self.frequencies[j]).sqrt();
                let coupling = &self.couplings[j];
                for f in 0..fd {
                    let mut acc = ZERO;
                    for g in 0..fd {
                        let c = coupling[(f, g)];
                        if c.re == 0.0 && c.im == 0.0 {
                            continue;
                        }
                        let mut ladder = ZERO;
                        if n[j] < self.basis.n_max[j] {
                            ladder += (n[j] as f64 + 1.0).sqrt() * psi[(t + stride) * fd + g];
                        }
                        if n[j] > 0 {
                            ladder += (n[j] as f64).sqrt() * psi[(t - stride) * fd + g];
                        }
                        acc += c * ladder;
                    }
                    out[t * fd + f] += scale * acc;
                }
            }
            for j in (0..m).rev() {
                n[j] += 1;
                if n[j] <= self.basis.n_max[j] {
                    break;
                }
                n[j] = 0;
            }
        }
    }

    pub fn dense(&self) -> CMatrix {
        let d = self.dim();
        let mut h = CMatrix::zeros(d, d);
        let mut e = vec![ZERO; d];
        let mut col = vec![ZERO; d];
        for i in 0..d {
            e[i] = Complex64::new(1.0, 0.0);
            self.apply(&e, &mut col);
            for (r, v) in col.iter().enumerate() {
                h[(r, i)] = *v;
            }
            e[i] = ZERO;
        }
        h
    }

    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut hpsi = vec![ZERO; psi.len()];
        self.apply(psi, &mut hpsi);
        crate::linalg::inner(psi, &hpsi).re / norm_sqr(psi)
    }
}

/// Number-basis evolver: exact dense exponentials for small bases and
/// Lanczos otherwise.
#[derive(Clone, Debug)]
pub struct FockEvolver {
    pub state: FockWavefunction,
    hamiltonian: Arc<FockHamiltonian>,
    eigen: Option<Arc<HermitianEigen>>,
    propagators: Arc<Mutex<Vec<(u64, Arc<CMatrix>)>>>,
}

impl FockEvolver {
    pub fn new(model: &Model, state: FockWavefunction) -> Result<Self, SolverError> {
        let field = model
            .field
            .as_ref()
            .ok_or_else(|| SolverError::Incompatible("the number basis needs a field_mode model".into()))?;
        if field.frequencies.len() != state.basis.modes() || field.fermion_dim != state.fermion_dim {
            return Err(SolverError::Incompatible("state and model shapes differ".into()));
        }
        let hamiltonian = Arc::new(FockHamiltonian::new(field, &state.basis.n_max));
        let eigen = (hamiltonian.dim() <= DENSE_LIMIT).then(|| Arc::new(HermitianEigen::new(&hamiltonian.dense())));
        Ok(Self { state, hamiltonian, eigen, propagators: Arc::new(Mutex::new(Vec::new())) })
    }

    pub fn hamiltonian(&self) -> &FockHamiltonian {
        &self.hamiltonian
    }

    fn propagator(&self, eigen: &HermitianEigen, dt: f64) -> Arc<CMatrix> {
        let key = dt.to_bits();
        let mut cache = self.propagators.lock().expect("propagator cache");
        if let Some((_, u)) = cache.iter().find(|(k, _)| *k == key) {
            return u.clone();
        }
        let u = Arc::new(eigen.propagator(dt));
        cache.push((key, u.clone()));
        u
    }
}

impl Evolver for FockEvolver {
    fn time(&self) -> f64 {
        self.state.time
    }

    fn advance(&mut self, dt: f64) -> Result<(), SolverError> {
        let psi = &self.state.amplitudes;
        let next = match &self.eigen {
            Some(eigen) => {
                let u = self.propagator(eigen, dt);
                let v = nalgebra::DVector::from_column_slice(psi);
                (u.as_ref() * v).as_slice().to_vec()
            }
            None => {
                let h = self.hamiltonian.clone();
                lanczos_propagate(&|x: &[Complex64], y: &mut [Complex64]| h.apply(x, y), psi, dt, 1e-13)
            }
        };
        self.state.amplitudes = next;
        self.state.time += dt;
        Ok(())
    }

    fn snapshot(&self) -> Arc<dyn PilotWave> {
        Arc::new(FockSnapshot::new(self.state.clone()))
    }

    fn norm_sqr(&self) -> f64 {
        self.state.norm_sqr()
    }

    fn energy(&self) -> f64 {
        self.hamiltonian.expectation(&self.state.amplitudes)
    }

    fn project(&self, p: &CMatrix) -> Self {
        let mut out = self.clone();
        let fd = self.state.fermion_dim;
        for chunk in out.state.amplitudes.chunks_mut(fd) {
            let v: Vec<Complex64> = (0..fd).map(|f| (0..fd).map(|g| p[(f, g)] * chunk[g]).sum()).collect();
            chunk.copy_from_slice(&v);
        }
        out
    }

    fn characteristic_velocity(&self) -> f64 {
        (self.state.momentum_square() / self.state.norm_sqr().max(f64::MIN_POSITIVE)).sqrt()
    }

    fn edge_probability(&self) -> f64 {
        self.state.leakage()
    }
}

/// Immutable number-basis snapshot used for pointwise guidance.
#[derive(Clone, Debug)]
pub struct FockSnapshot {
    pub state: FockWavefunction,
    scale: f64,
}

impl FockSnapshot {
    pub fn new(state: FockWavefunction) -> Self {
        // Vacuum peak density: a fixed, state-independent reference.
        let scale = state.frequencies.iter().map(|w| (w / PI).sqrt()).product();
        Self { state, scale }
    }
}

impl PilotWave for FockSnapshot {
    fn dim(&self) -> usize {
        self.state.basis.modes()
    }

    fn internal_dim(&self) -> usize {
        self.state.fermion_dim
    }

    fn time(&self) -> f64 {
        self.state.time
    }

    fn evaluate_into(&self, x: &[f64], out: &mut PointValue) -> Result<(), EvalError> {
        self.state.evaluate_position(x, out)
    }

    fn density_scale(&self) -> f64 {
        self.scale
    }

    /// Per coordinate, the interval where the marginal exceeds `1e-16` of its
    /// peak, found on the Hermite range.
    fn support_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|j| {
                let reduced = self.state.reduced_density(j);
                let limit = self.state.range_limit(j);
                let n = 2001;
                let qs: Vec<f64> = (0..n).map(|i| -limit + 2.0 * limit * i as f64 / (n - 1) as f64).collect();
                let p: Vec<f64> = qs.iter().map(|&q| self.state.marginal_density(&reduced, j, q)).collect();
                let peak = p.iter().cloned().fold(0.0, f64::max);
                let first = p.iter().position(|&v| v > 1e-16 * peak).unwrap_or(0);
                let last = p.iter().rposition(|&v| v > 1e-16 * peak).unwrap_or(n - 1);
                (qs[first.saturating_sub(1)], qs[(last + 1).min(n - 1)])
            })
            .collect()
    }
}
