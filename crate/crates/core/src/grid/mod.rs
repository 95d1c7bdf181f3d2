//! Wavefunctions on periodic tensor-product grids.
//!
//! Values are stored as one plane per internal index (`f * points + p`), each
//! plane row-major with the last axis fastest. Node `i` of an axis sits at
//! `min + i * dx` with `dx = (max - min) / n`, so `max` itself is the periodic
//! image of `min`.
//!
//! Propagation splits `H = T + W(x)` where `T` is diagonal in Fourier space
//! and `W` is a pointwise Hermitian matrix on the internal index. Small
//! problems can instead be exponentiated exactly.

mod fft;
pub mod io;
mod snapshot;

pub use fft::{wavenumbers, FftNd};
pub use snapshot::{continuity_residual, GridSnapshot, STENCIL};

use crate::guidance::{Evolver, PilotWave, SolverError};
use crate::linalg::{norm_sqr, CMatrix, HermitianEigen};
use crate::model::{InitialState, Model, Scheme, StateContext, StateError, EXACT_SCHEME_MAX_DIM};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// One periodic axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Self { min, max, n }
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.dx()
    }
}

/// Shape and index arithmetic of a tensor-product grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub axes: Vec<Axis>,
    strides: Vec<usize>,
    points: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Self {
        let mut strides = vec![1; axes.len()];
        for d in (0..axes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].n;
        }
        let points = axes.iter().map(|a| a.n).product();
        Self { axes, strides, points }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn stride(&self, d: usize) -> usize {
        self.strides[d]
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::dx).product()
    }

    pub fn multi_index(&self, mut p: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let i = p / s;
                p %= s;
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn position(&self, p: usize) -> Vec<f64> {
        self.multi_index(p).iter().zip(&self.axes).map(|(&i, a)| a.coord(i)).collect()
    }

    /// Wavenumber vector of Fourier bin `p` (FFT order on every axis).
    pub fn wavevector_table(&self) -> Vec<Vec<f64>> {
        let ks: Vec<Vec<f64>> = self.axes.iter().map(|a| wavenumbers(a.n, a.length())).collect();
        (0..self.points).map(|p| self.multi_index(p).iter().enumerate().map(|(d, &i)| ks[d][i]).collect()).collect()
    }
}

/// Grid wavefunction `Psi_f(x)` normalized so that `sum |Psi|^2 dV = 1`.
#[derive(Clone, Debug)]
pub struct GridWavefunction {
    pub grid: Arc<Grid>,
    pub internal_dim: usize,
    pub data: Vec<Complex64>,
    pub time: f64,
}

impl GridWavefunction {
    pub fn zeros(grid: Arc<Grid>, internal_dim: usize) -> Self {
        let len = grid.points() * internal_dim;
        Self { grid, internal_dim, data: vec![ZERO; len], time: 0.0 }
    }

    /// Samples a declarative initial state on the grid and normalizes it.
    pub fn from_initial_state(state: &InitialState, model: &Model, axes: &[Axis]) -> Result<Self, StateError> {
        let ctx = StateContext::from_model(model);
        state.check(&ctx)?;
        let grid = Arc::new(Grid::new(axes.to_vec()));
        let mut psi = Self::zeros(grid.clone(), model.internal_dim);
        let n = grid.points();
        for p in 0..n {
            let v = state.evaluate(&grid.position(p), &ctx);
            for (f, z) in v.into_iter().enumerate() {
                psi.data[f * n + p] = z;
            }
        }
        let norm = psi.norm_sqr();
        if !(norm > 0.0) {
            return Err(StateError::ZeroNorm);
        }
        psi.scale(1.0 / norm.sqrt());
        Ok(psi)
    }

    pub fn plane(&self, f: usize) -> &[Complex64] {
        let n = self.grid.points();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.data) * self.grid.cell_volume()
    }

    /// `sum_f |Psi_f|^2` at every node.
    pub fn nodal_density(&self) -> Vec<f64> {
        let n = self.grid.points();
        let mut rho = vec![0.0; n];
        for f in 0..self.internal_dim {
            for (r, z) in rho.iter_mut().zip(self.plane(f)) {
                *r += z.norm_sqr();
            }
        }
        rho
    }

    /// `<phi|psi> = sum conj(phi) psi dV`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        crate::linalg::inner(&self.data, &other.data) * self.grid.cell_volume()
    }

    /// Values with the internal index fastest, as used by exports.
    pub fn interleaved(&self) -> Vec<Complex64> {
        let n = self.grid.points();
        let fd = self.internal_dim;
        let mut out = vec![ZERO; n * fd];
        for f in 0..fd {
            for p in 0..n {
                out[p * fd + f] = self.data[f * n + p];
            }
        }
        out
    }

    pub fn from_interleaved(grid: Arc<Grid>, internal_dim: usize, values: &[Complex64], time: f64) -> Self {
        let n = grid.points();
        let mut psi = Self::zeros(grid, internal_dim);
        for p in 0..n {
            for f in 0..internal_dim {
                psi.data[f * n + p] = values[p * internal_dim + f];
            }
        }
        psi.time = time;
        psi
    }

    /// Probability within 5% of the axis length from any boundary.
    pub fn edge_probability(&self) -> f64 {
        let rho = self.nodal_density();
        let g = &self.grid;
        let mut total = 0.0;
        for (p, r) in rho.iter().enumerate() {
            let idx = g.multi_index(p);
            let near = idx.iter().zip(&g.axes).any(|(&i, a)| {
                let band = ((a.n as f64) * 0.05).ceil() as usize;
                i < band || i + band >= a.n
            });
            if near {
                total += r;
            }
        }
        total * g.cell_volume()
    }
}

/// Pointwise part of the Hamiltonian, tabulated once per grid.
#[derive(Clone, Debug)]
enum Internal {
    /// `W_ff(x)` at `f * points + p`.
    Diagonal(Vec<f64>),
    Full(Vec<CMatrix>),
}

/// The Hamiltonian discretized on a grid.
#[derive(Debug)]
pub struct GridHamiltonian {
    pub grid: Arc<Grid>,
    pub internal_dim: usize,
    pub hbar: f64,
    /// Kinetic energy per Fourier bin.
    kinetic: Vec<f64>,
    /// `(hbar k_d - s_d) / m_d` per Fourier bin, for velocity moments.
    kinetic_velocity: Vec<Vec<f64>>,
    internal: Internal,
    fft: FftNd,
}

impl GridHamiltonian {
    pub fn new(model: &Model, grid: Arc<Grid>) -> Result<Self, SolverError> {
        if grid.dim() != model.beable_dim() {
            return Err(SolverError::Incompatible(format!(
                "grid has {} axes but the model has {} coordinates",
                grid.dim(),
                model.beable_dim()
            )));
        }
        let n = grid.points();
        let table = grid.wavevector_table();
        let kinetic = table.iter().map(|k| model.kinetic_energy(k)).collect();
        let kinetic_velocity = table
            .iter()
            .map(|k| {
                k.iter()
                    .enumerate()
                    .map(|(d, kd)| (model.hbar * kd - model.kinetic_shift[d]) / model.masses[d])
                    .collect()
            })
            .collect();
        let fd = model.internal_dim;
        let internal = if model.internal_is_diagonal() {
            let mut diag = vec![0.0; n * fd];
            for p in 0..n {
                let w = model.internal_matrix(&grid.position(p));
                for f in 0..fd {
                    diag[f * n + p] = w[(f, f)].re;
                }
            }
            Internal::Diagonal(diag)
        } else {
            Internal::Full((0..n).map(|p| model.internal_matrix(&grid.position(p))).collect())
        };
        let fft = FftNd::new(&grid.shape());
        Ok(Self { grid, internal_dim: fd, hbar: model.hbar, kinetic, kinetic_velocity, internal, fft })
    }

    pub fn dim(&self) -> usize {
        self.grid.points() * self.internal_dim
    }

    /// `out = H psi` on plane-ordered data.
    pub fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let n = self.grid.points();
        let fd = self.internal_dim;
        let mut buf = vec![ZERO; n];
        for f in 0..fd {
            buf.copy_from_slice(&psi[f * n..(f + 1) * n]);
            self.fft.forward(&mut buf);
            for (b, e) in buf.iter_mut().zip(&self.kinetic) {
                *b *= e;
            }
            self.fft.inverse(&mut buf);
            out[f * n..(f + 1) * n].copy_from_slice(&buf);
        }
        match &self.internal {
            Internal::Diagonal(w) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w[i] * psi[i];
                }
            }
            Internal::Full(ms) => {
                for (p, m) in ms.iter().enumerate() {
                    for f in 0..fd {
                        let mut acc = ZERO;
                        for g in 0..fd {
                            acc += m[(f, g)] * psi[g * n + p];
                        }
                        out[f * n + p] += acc;
                    }
                }
            }
        }
    }

    /// Dense matrix of [`Self::apply`], for small grids only.
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

    /// `<psi|H|psi> / <psi|psi>`.
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut hpsi = vec![ZERO; psi.len()];
        self.apply(psi, &mut hpsi);
        crate::linalg::inner(psi, &hpsi).re / norm_sqr(psi)
    }

    /// `sqrt(sum_d <((hbar k_d - s_d) / m_d)^2>)`.
    pub fn velocity_spread(&self, psi: &[Complex64]) -> f64 {
        let n = self.grid.points();
        let mut buf = vec![ZERO; n];
        let (mut num, mut den) = (0.0, 0.0);
        for f in 0..self.internal_dim {
            buf.copy_from_slice(&psi[f * n..(f + 1) * n]);
            self.fft.forward(&mut buf);
            for (b, v) in buf.iter().zip(&self.kinetic_velocity) {
                let w = b.norm_sqr();
                den += w;
                num += w * v.iter().map(|c| c * c).sum::<f64>();
            }
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            0.0
        }
    }
}

/// Precomputed factors of one Strang step of length `dt`.
#[derive(Debug)]
struct StrangFactors {
    kinetic: Vec<Complex64>,
    half_internal: HalfInternal,
}

#[derive(Debug)]
enum HalfInternal {
    Diagonal(Vec<Complex64>),
    Full(Vec<CMatrix>),
}

#[derive(Debug)]
enum Propagation {
    Split { yoshida: bool, eigen: Option<Vec<HermitianEigen>> },
    Exact(HermitianEigen),
}

/// Resolved time-stepping scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridScheme {
    Strang,
    Yoshida4,
    Exact,
}

impl GridScheme {
    pub fn from_scheme(s: Scheme) -> Self {
        match s {
            Scheme::Auto | Scheme::Strang => GridScheme::Strang,
            Scheme::Yoshida4 => GridScheme::Yoshida4,
            Scheme::Exact => GridScheme::Exact,
        }
    }
}

type Cache<T> = Arc<Mutex<Vec<(u64, Arc<T>)>>>;

fn cached<T>(cache: &Cache<T>, dt: f64, build: impl FnOnce() -> T) -> Arc<T> {
    let key = dt.to_bits();
    let mut c = cache.lock().expect("propagator cache");
    if let Some((_, v)) = c.iter().find(|(k, _)| *k == key) {
        return v.clone();
    }
    let v = Arc::new(build());
    c.push((key, v.clone()));
    v
}

/// Grid evolver: Strang splitting, its fourth-order Yoshida composition, or
/// dense exponentiation of the discretized Hamiltonian.
#[derive(Clone, Debug)]
pub struct GridEvolver {
    pub state: GridWavefunction,
    hamiltonian: Arc<GridHamiltonian>,
    propagation: Arc<Propagation>,
    strang: Cache<StrangFactors>,
    exact: Cache<CMatrix>,
}

impl GridEvolver {
    pub fn new(model: &Model, state: GridWavefunction, scheme: GridScheme) -> Result<Self, SolverError> {
        if state.internal_dim != model.internal_dim {
            return Err(SolverError::Incompatible("state and model internal dimensions differ".into()));
        }
        let hamiltonian = Arc::new(GridHamiltonian::new(model, state.grid.clone())?);
        let propagation = match scheme {
            GridScheme::Exact => {
                if hamiltonian.dim() > EXACT_SCHEME_MAX_DIM {
                    return Err(SolverError::Incompatible(format!(
                        "exact scheme limited to {EXACT_SCHEME_MAX_DIM} unknowns, grid has {}",
                        hamiltonian.dim()
                    )));
                }
                Propagation::Exact(HermitianEigen::new(&hamiltonian.dense()))
            }
            _ => {
                let eigen = match &hamiltonian.internal {
                    Internal::Diagonal(_) => None,
                    Internal::Full(ms) => Some(ms.iter().map(HermitianEigen::new).collect()),
                };
                Propagation::Split { yoshida: scheme == GridScheme::Yoshida4, eigen }
            }
        };
        Ok(Self {
            state,
            hamiltonian,
            propagation: Arc::new(propagation),
            strang: Arc::new(Mutex::new(Vec::new())),
            exact: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn hamiltonian(&self) -> &GridHamiltonian {
        &self.hamiltonian
    }

    fn strang_factors(&self, dt: f64) -> Arc<StrangFactors> {
        let h = &self.hamiltonian;
        let hbar = h.hbar;
        cached(&self.strang, dt, || {
            let kinetic = h.kinetic.iter().map(|e| (-I * e * dt / hbar).exp()).collect();
            let half_internal = match (&h.internal, self.propagation.as_ref()) {
                (Internal::Diagonal(w), _) => HalfInternal::Diagonal(w.iter().map(|v| (-I * v * 0.5 * dt / hbar).exp()).collect()),
                (Internal::Full(_), Propagation::Split { eigen: Some(eigen), .. }) => {
                    HalfInternal::Full(eigen.iter().map(|e| e.propagator(0.5 * dt / hbar)).collect())
                }
                _ => unreachable!("split factors requested for a non-split scheme"),
            };
            StrangFactors { kinetic, half_internal }
        })
    }

    fn half_internal(&mut self, f: &StrangFactors) {
        let n = self.state.grid.points();
        let fd = self.state.internal_dim;
        let data = &mut self.state.data;
        match &f.half_internal {
            HalfInternal::Diagonal(ph) => data.iter_mut().zip(ph).for_each(|(z, p)| *z *= p),
            HalfInternal::Full(us) => {
                let mut v = vec![ZERO; fd];
                for (p, u) in us.iter().enumerate() {
                    for (a, slot) in v.iter_mut().enumerate() {
                        *slot = (0..fd).map(|b| u[(a, b)] * data[b * n + p]).sum();
                    }
                    for (a, val) in v.iter().enumerate() {
                        data[a * n + p] = *val;
                    }
                }
            }
        }
    }

    fn strang_step(&mut self, dt: f64) {
        let f = self.strang_factors(dt);
        self.half_internal(&f);
        let n = self.state.grid.points();
        for plane in self.state.data.chunks_mut(n) {
            self.hamiltonian.fft.forward(plane);
            plane.iter_mut().zip(&f.kinetic).for_each(|(z, p)| *z *= p);
            self.hamiltonian.fft.inverse(plane);
        }
        self.half_internal(&f);
    }

    fn exact_step(&mut self, eigen: &HermitianEigen, dt: f64) {
        let hbar = self.hamiltonian.hbar;
        let u = cached(&self.exact, dt, || eigen.propagator(dt / hbar));
        let v = nalgebra::DVector::from_column_slice(&self.state.data);
        self.state.data = (u.as_ref() * v).as_slice().to_vec();
    }
}

/// Yoshida weights `w1 = 1 / (2 - 2^(1/3))` and `w0 = 1 - 2 w1`.
pub fn yoshida_weights() -> (f64, f64) {
    let c = 2f64.powf(1.0 / 3.0);
    let w1 = 1.0 / (2.0 - c);
    (w1, -c / (2.0 - c))
}

impl Evolver for GridEvolver {
    fn time(&self) -> f64 {
        self.state.time
    }

    fn advance(&mut self, dt: f64) -> Result<(), SolverError> {
        let prop = self.propagation.clone();
        match prop.as_ref() {
            Propagation::Exact(eigen) => self.exact_step(eigen, dt),
            Propagation::Split { yoshida: false, .. } => self.strang_step(dt),
            Propagation::Split { yoshida: true, .. } => {
                let (w1, w0) = yoshida_weights();
                self.strang_step(w1 * dt);
                self.strang_step(w0 * dt);
                self.strang_step(w1 * dt);
            }
        }
        self.state.time += dt;
        if !self.state.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(SolverError::Stability(format!("non-finite amplitude at t = {}", self.state.time)));
        }
        Ok(())
    }

    fn snapshot(&self) -> Arc<dyn PilotWave> {
        Arc::new(GridSnapshot::new(&self.state, &self.hamiltonian.fft))
    }

    fn norm_sqr(&self) -> f64 {
        self.state.norm_sqr()
    }

    fn energy(&self) -> f64 {
        self.hamiltonian.expectation(&self.state.data)
    }

    fn project(&self, p: &CMatrix) -> Self {
        let mut out = self.clone();
        let n = self.state.grid.points();
        let fd = self.state.internal_dim;
        for q in 0..n {
            let v: Vec<Complex64> =
                (0..fd).map(|f| (0..fd).map(|g| p[(f, g)] * self.state.data[g * n + q]).sum()).collect();
            for (f, val) in v.into_iter().enumerate() {
                out.state.data[f * n + q] = val;
            }
        }
        out
    }

    fn characteristic_velocity(&self) -> f64 {
        self.hamiltonian.velocity_spread(&self.state.data)
    }

    fn edge_probability(&self) -> f64 {
        self.state.edge_probability()
    }
}

/// Labels the connected components of `{rho > level}` over grid nodes
/// (nearest neighbours, periodic). Nodes below the level get `None`.
pub fn superlevel_components(grid: &Grid, rho: &[f64], level: f64) -> (Vec<Option<usize>>, usize) {
    let n = grid.points();
    let mut label = vec![None; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start].is_some() || !(rho[start] > level) {
            continue;
        }
        label[start] = Some(count);
        stack.push(start);
        while let Some(p) = stack.pop() {
            let idx = grid.multi_index(p);
            for d in 0..grid.dim() {
                let len = grid.axes[d].n;
                for step in [1, len - 1] {
                    let mut j = idx.clone();
                    j[d] = (j[d] + step) % len;
                    let q = grid.flat_index(&j);
                    if label[q].is_none() && rho[q] > level {
                        label[q] = Some(count);
                        stack.push(q);
                    }
                }
            }
        }
        count += 1;
    }
    (label, count)
}
