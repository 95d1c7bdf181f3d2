//! Hamiltonian descriptions for the three model families and their
//! evaluation-ready form.

use super::modes::{ModeBasis, ModeBasisError, QuadratureLabel};
use crate::linalg::{hermitian_defect, CMatrix};
use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking supplied fermionic blocks for Hermiticity.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    ModeBasis(#[from] ModeBasisError),
    #[error("{name} block is not Hermitian (max |H - H^dagger| = {defect:.3e})")]
    NonHermitian { name: String, defect: f64 },
    #[error("{name} has shape {rows}x{cols}, expected {expected}x{expected}")]
    BlockShape { name: String, rows: usize, cols: usize, expected: usize },
    #[error("active quadrature {0} is not part of the mode basis")]
    UnknownQuadrature(QuadratureLabel),
    #[error("coupling refers to coordinate {coordinate} but only {count} are active")]
    CouplingCoordinate { coordinate: usize, count: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ParticleSchrodinger,
    Pauli,
    FieldMode,
}

/// Complex matrix as written in scenario files: rows of entries that are
/// either a real number or a `[re, im]` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(pub CMatrix);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Entry>> = (0..self.0.nrows())
            .map(|i| {
                (0..self.0.ncols())
                    .map(|j| {
                        let z = self.0[(i, j)];
                        if z.im == 0.0 {
                            Entry::Real(z.re)
                        } else {
                            Entry::Complex([z.re, z.im])
                        }
                    })
                    .collect()
            })
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<Entry>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("matrix rows have unequal lengths"));
        }
        let m = CMatrix::from_fn(nrows, ncols, |i, j| match rows[i][j] {
            Entry::Real(x) => Complex64::new(x, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        });
        Ok(Self(m))
    }
}

/// Scalar potential families.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    #[default]
    Zero,
    /// `sum_d m_d w_d^2 (x_d - c_d)^2 / 2`.
    Harmonic {
        frequency: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `g . x`.
    Linear { gradient: Vec<f64> },
    /// Piecewise-linear table along one coordinate, held constant outside.
    Tabulated { axis: usize, x: Vec<f64>, v: Vec<f64> },
}

impl Potential {
    pub fn value(&self, x: &[f64], masses: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic { frequency, center } => x
                .iter()
                .enumerate()
                .map(|(d, &xd)| {
                    let w = broadcast(frequency, d);
                    let c = center.get(d).copied().unwrap_or(0.0);
                    0.5 * masses[d] * w * w * (xd - c).powi(2)
                })
                .sum(),
            Potential::Linear { gradient } => x.iter().zip(gradient).map(|(a, b)| a * b).sum(),
            Potential::Tabulated { axis, x: xs, v } => {
                let at = x[*axis];
                if xs.is_empty() {
                    return 0.0;
                }
                if at <= xs[0] {
                    return v[0];
                }
                if at >= xs[xs.len() - 1] {
                    return v[v.len() - 1];
                }
                let i = xs.partition_point(|&p| p <= at) - 1;
                let t = (at - xs[i]) / (xs[i + 1] - xs[i]);
                v[i] * (1.0 - t) + v[i + 1] * t
            }
        }
    }

    fn check(&self, dim: usize) -> Option<String> {
        match self {
            Potential::Zero => None,
            Potential::Harmonic { frequency, center } => {
                if frequency.is_empty() || (frequency.len() != 1 && frequency.len() != dim) {
                    Some(format!("harmonic potential needs 1 or {dim} frequencies"))
                } else if !center.is_empty() && center.len() != dim {
                    Some(format!("harmonic potential center needs {dim} entries"))
                } else {
                    None
                }
            }
            Potential::Linear { gradient } => {
                (gradient.len() != dim).then(|| format!("linear potential gradient needs {dim} entries"))
            }
            Potential::Tabulated { axis, x, v } => {
                if *axis >= dim {
                    Some(format!("tabulated potential axis {axis} out of range"))
                } else if x.len() != v.len() || x.len() < 2 {
                    Some("tabulated potential needs matching x and v with at least two points".into())
                } else if x.windows(2).any(|w| w[1] <= w[0]) {
                    Some("tabulated potential x must be strictly increasing".into())
                } else {
                    None
                }
            }
        }
    }
}

fn broadcast(values: &[f64], d: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[d]
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    #[serde(default = "one")]
    pub hbar: f64,
    /// Mass attached to each grid coordinate.
    pub masses: Vec<f64>,
    #[serde(default)]
    pub potential: Potential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialAxis {
    X,
    Y,
    Z,
}

impl SpatialAxis {
    pub fn index(self) -> usize {
        match self {
            SpatialAxis::X => 0,
            SpatialAxis::Y => 1,
            SpatialAxis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpatialAxis::X => "x",
            SpatialAxis::Y => "y",
            SpatialAxis::Z => "z",
        }
    }
}

/// `B(x) = uniform + gradient . x`, with `x` the 3-vector built from the grid
/// coordinates (absent axes at zero).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticField {
    #[serde(default)]
    pub uniform: [f64; 3],
    #[serde(default)]
    pub gradient: [[f64; 3]; 3],
}

impl MagneticField {
    pub fn at(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut b = Vector3::from(self.uniform);
        for i in 0..3 {
            for j in 0..3 {
                b[i] += self.gradient[i][j] * x[j];
            }
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliSpec {
    #[serde(default = "one")]
    pub hbar: f64,
    pub mass: f64,
    #[serde(default)]
    pub charge: f64,
    pub magnetic_moment: f64,
    /// Uniform vector potential.
    #[serde(default)]
    pub vector_potential: [f64; 3],
    #[serde(default)]
    pub magnetic_field: MagneticField,
    #[serde(default)]
    pub potential: Potential,
    /// Physical axis represented by each grid coordinate.
    pub axes: Vec<SpatialAxis>,
}

impl PauliSpec {
    fn embed(&self, x: &[f64]) -> Vector3<f64> {
        let mut r = Vector3::zeros();
        for (a, &xd) in self.axes.iter().zip(x) {
            r[a.index()] = xd;
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    /// Index into the active coordinates.
    pub coordinate: usize,
    pub matrix: ComplexMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModeSpec {
    pub wavevectors: Vec<[f64; 3]>,
    /// Quadratures carried by the solver; every other quadrature stays in its
    /// vacuum and is frozen at zero in reconstructions. Defaults to all.
    #[serde(default)]
    pub active: Option<Vec<QuadratureLabel>>,
    #[serde(default = "one_usize")]
    pub fermion_dim: usize,
    #[serde(default)]
    pub h_f: Option<ComplexMatrix>,
    #[serde(default)]
    pub coulomb: Option<ComplexMatrix>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
}

fn one_usize() -> usize {
    1
}

impl FieldModeSpec {
    pub fn basis(&self) -> Result<ModeBasis, ModeBasisError> {
        let ks: Vec<Vector3<f64>> = self.wavevectors.iter().map(|k| Vector3::from(*k)).collect();
        ModeBasis::new(&ks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianSpec {
    ParticleSchrodinger(ParticleSpec),
    Pauli(PauliSpec),
    FieldMode(FieldModeSpec),
}

/// Field-mode Hamiltonian with the basis resolved and blocks assembled:
///
/// ```text
/// H = sum_j (-d^2/dq_j^2 + w_j^2 q_j^2) / 2  +  H_F + V_C  +  sum_j q_j g_j
/// ```
#[derive(Clone, Debug)]
pub struct FieldModel {
    pub basis: ModeBasis,
    /// Basis quadrature index of each active coordinate.
    pub active: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub fermion_dim: usize,
    /// `H_F + V_C`.
    pub static_block: CMatrix,
    /// One coupling matrix per active coordinate (zero if uncoupled).
    pub couplings: Vec<CMatrix>,
}

impl FieldModel {
    pub fn mode_count(&self) -> usize {
        self.active.len()
    }

    pub fn labels(&self) -> Vec<QuadratureLabel> {
        self.active.iter().map(|&i| self.basis.label(i)).collect()
    }

    /// Full basis quadrature vector with inactive coordinates at zero.
    pub fn embed(&self, q: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.basis.quadrature_count()];
        for (&i, &v) in self.active.iter().zip(q) {
            full[i] = v;
        }
        full
    }

    pub fn is_coupled(&self) -> bool {
        self.couplings.iter().any(|g| g.iter().any(|z| z.norm() > 0.0))
    }
}

/// Per-coordinate factors of the guidance law
/// `v_d = coefficient_d * Im(psi* d_d psi) / rho + drift_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceLaw {
    pub coefficients: Vec<f64>,
    pub drift: Vec<f64>,
}

/// Evaluation-ready Hamiltonian: the kinetic part is
/// `sum_d (hbar k_d - shift_d)^2 / (2 m_d)` in Fourier space and the rest is a
/// pointwise Hermitian matrix on the internal index.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: HamiltonianSpec,
    pub hbar: f64,
    pub masses: Vec<f64>,
    pub kinetic_shift: Vec<f64>,
    pub internal_dim: usize,
    pub field: Option<FieldModel>,
}

impl HamiltonianSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            HamiltonianSpec::ParticleSchrodinger(_) => ModelKind::ParticleSchrodinger,
            HamiltonianSpec::Pauli(_) => ModelKind::Pauli,
            HamiltonianSpec::FieldMode(_) => ModelKind::FieldMode,
        }
    }

    pub fn internal_dim(&self) -> usize {
        match self {
            HamiltonianSpec::ParticleSchrodinger(_) => 1,
            HamiltonianSpec::Pauli(_) => 2,
            HamiltonianSpec::FieldMode(f) => f.fermion_dim,
        }
    }

    /// Checks structural and physical invariants and assembles the
    /// evaluation-ready model.
    pub fn resolve(&self) -> Result<Model, ModelError> {
        match self {
            HamiltonianSpec::ParticleSchrodinger(p) => {
                let dim = p.masses.len();
                if dim == 0 {
                    return Err(ModelError::Invalid("particle model needs at least one mass".into()));
                }
                check_positive("mass", &p.masses)?;
                check_positive("hbar", &[p.hbar])?;
                if let Some(msg) = p.potential.check(dim) {
                    return Err(ModelError::Invalid(msg));
                }
                Ok(Model {
                    spec: self.clone(),
                    hbar: p.hbar,
                    masses: p.masses.clone(),
                    kinetic_shift: vec![0.0; dim],
                    internal_dim: 1,
                    field: None,
                })
            }
            HamiltonianSpec::Pauli(p) => {
                let dim = p.axes.len();
                if dim == 0 {
                    return Err(ModelError::Invalid("pauli model needs at least one axis".into()));
                }
                for (i, a) in p.axes.iter().enumerate() {
                    if p.axes[..i].contains(a) {
                        return Err(ModelError::Invalid(format!("axis {} listed twice", a.name())));
                    }
                }
                check_positive("mass", &[p.mass])?;
                check_positive("hbar", &[p.hbar])?;
                if let Some(msg) = p.potential.check(dim) {
                    return Err(ModelError::Invalid(msg));
                }
                let shift = p.axes.iter().map(|a| p.charge * p.vector_potential[a.index()]).collect();
                Ok(Model {
                    spec: self.clone(),
                    hbar: p.hbar,
                    masses: vec![p.mass; dim],
                    kinetic_shift: shift,
                    internal_dim: 2,
                    field: None,
                })
            }
            HamiltonianSpec::FieldMode(f) => {
                let basis = f.basis()?;
                let active: Vec<usize> = match &f.active {
                    Some(labels) => labels
                        .iter()
                        .map(|l| basis.index_of(l).ok_or(ModelError::UnknownQuadrature(*l)))
                        .collect::<Result<_, _>>()?,
                    None => (0..basis.quadrature_count()).collect(),
                };
                if active.is_empty() {
                    return Err(ModelError::Invalid("field model has no active quadratures".into()));
                }
                let fd = f.fermion_dim;
                if fd == 0 {
                    return Err(ModelError::Invalid("fermion_dim must be at least 1".into()));
                }
                let mut static_block = CMatrix::zeros(fd, fd);
                for (name, block) in [("h_f", &f.h_f), ("coulomb", &f.coulomb)] {
                    if let Some(ComplexMatrix(m)) = block {
                        check_block(name, m, fd)?;
                        static_block += m;
                    }
                }
                let mut couplings = vec![CMatrix::zeros(fd, fd); active.len()];
                for c in &f.couplings {
                    if c.coordinate >= active.len() {
                        return Err(ModelError::CouplingCoordinate { coordinate: c.coordinate, count: active.len() });
                    }
                    check_block(&format!("coupling[{}]", c.coordinate), &c.matrix.0, fd)?;
                    couplings[c.coordinate] += &c.matrix.0;
                }
                let frequencies = active.iter().map(|&i| basis.frequency(i)).collect();
                let dim = active.len();
                Ok(Model {
                    spec: self.clone(),
                    hbar: 1.0,
                    masses: vec![1.0; dim],
                    kinetic_shift: vec![0.0; dim],
                    internal_dim: fd,
                    field: Some(FieldModel { basis, active, frequencies, fermion_dim: fd, static_block, couplings }),
                })
            }
        }
    }
}

fn check_positive(name: &str, values: &[f64]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(ModelError::Invalid(format!("{name} must be positive")))
    }
}

fn check_block(name: &str, m: &CMatrix, expected: usize) -> Result<(), ModelError> {
    if m.nrows() != expected || m.ncols() != expected {
        return Err(ModelError::BlockShape { name: name.into(), rows: m.nrows(), cols: m.ncols(), expected });
    }
    let defect = hermitian_defect(m);
    if defect > HERMITIAN_TOL {
        return Err(ModelError::NonHermitian { name: name.into(), defect });
    }
    Ok(())
}

fn pauli_matrices() -> [CMatrix; 3] {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    [
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]),
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]),
        CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]),
    ]
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn beable_dim(&self) -> usize {
        self.masses.len()
    }

    /// Column names for the beable coordinates.
    pub fn coordinate_labels(&self) -> Vec<String> {
        match &self.spec {
            HamiltonianSpec::ParticleSchrodinger(p) => {
                if p.masses.len() == 1 {
                    vec!["x".into()]
                } else {
                    (0..p.masses.len()).map(|d| format!("x{d}")).collect()
                }
            }
            HamiltonianSpec::Pauli(p) => p.axes.iter().map(|a| a.name().to_string()).collect(),
            HamiltonianSpec::FieldMode(_) => {
                let field = self.field.as_ref().expect("resolved field model");
                field
                    .active
                    .iter()
                    .map(|&i| {
                        let label = field.basis.label(i);
                        let k = field.basis.pairs()[label.mode].wavevector;
                        let part = match label.quadrature {
                            super::Quadrature::Re => "re",
                            super::Quadrature::Im => "im",
                        };
                        format!("q[{};{};{}]_l{}_{}", k[0], k[1], k[2], label.polarization, part)
                    })
                    .collect()
            }
        }
    }

    pub fn guidance_law(&self) -> GuidanceLaw {
        GuidanceLaw {
            coefficients: self.masses.iter().map(|m| self.hbar / m).collect(),
            drift: self.kinetic_shift.iter().zip(&self.masses).map(|(s, m)| -s / m).collect(),
        }
    }

    /// Kinetic energy of the plane wave with wavenumbers `k`.
    pub fn kinetic_energy(&self, k: &[f64]) -> f64 {
        k.iter()
            .zip(&self.masses)
            .zip(&self.kinetic_shift)
            .map(|((kd, m), s)| (self.hbar * kd - s).powi(2) / (2.0 * m))
            .sum()
    }

    /// True when the pointwise matrix is diagonal everywhere.
    pub fn internal_is_diagonal(&self) -> bool {
        match &self.spec {
            HamiltonianSpec::ParticleSchrodinger(_) => true,
            HamiltonianSpec::Pauli(p) => {
                let b = &p.magnetic_field;
                b.uniform[0] == 0.0
                    && b.uniform[1] == 0.0
                    && b.gradient[0].iter().chain(b.gradient[1].iter()).all(|g| *g == 0.0)
            }
            HamiltonianSpec::FieldMode(_) => {
                let f = self.field.as_ref().expect("resolved field model");
                let off = |m: &CMatrix| {
                    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)].norm() == 0.0))
                };
                off(&f.static_block) && f.couplings.iter().all(off)
            }
        }
    }

    /// The non-kinetic part of the Hamiltonian at configuration `x`, a
    /// Hermitian matrix on the internal index.
    pub fn internal_matrix(&self, x: &[f64]) -> CMatrix {
        match &self.spec {
            HamiltonianSpec::ParticleSchrodinger(p) => {
                CMatrix::from_element(1, 1, Complex64::new(p.potential.value(x, &self.masses), 0.0))
            }
            HamiltonianSpec::Pauli(p) => {
                let b = p.magnetic_field.at(&p.embed(x));
                let v = p.potential.value(x, &self.masses);
                let sigma = pauli_matrices();
                let mut m = CMatrix::identity(2, 2) * Complex64::new(v, 0.0);
                for (s, bi) in sigma.iter().zip(b.iter()) {
                    m += s * Complex64::new(p.magnetic_moment * bi, 0.0);
                }
                m
            }
            HamiltonianSpec::FieldMode(_) => {
                let f = self.field.as_ref().expect("resolved field model");
                let oscillator: f64 =
                    x.iter().zip(&f.frequencies).map(|(q, w)| 0.5 * w * w * q * q).sum();
                let mut m = f.static_block.clone();
                for i in 0..f.fermion_dim {
                    m[(i, i)] += oscillator;
                }
                for (g, &q) in f.couplings.iter().zip(x) {
                    if q != 0.0 {
                        m += g * Complex64::new(q, 0.0);
                    }
                }
                m
            }
        }
    }

    /// Characteristic frequency scale per coordinate, used only for default
    /// resolutions. Field modes return `w_j`.
    pub fn frequencies(&self) -> Option<&[f64]> {
        self.field.as_ref().map(|f| f.frequencies.as_slice())
    }
}
