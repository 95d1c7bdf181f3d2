//! Declarative initial states and their closed-form position representation.

use crate::fock::hermite::hermite_functions;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("{family}: {message}")]
    Shape { family: &'static str, message: String },
    #[error("{0} requires field-mode frequencies")]
    NeedsFrequencies(&'static str),
    #[error("state has one component but the model has internal dimension {0}; use a spinor")]
    InternalComponentsRequired(usize),
    #[error("{0} cannot be represented in the number basis")]
    NotInNumberBasis(String),
    #[error("state has zero norm")]
    ZeroNorm,
}

/// A complex number written either as a real scalar or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexNumber {
    Real(f64),
    Pair([f64; 2]),
}

impl From<ComplexNumber> for Complex64 {
    fn from(c: ComplexNumber) -> Self {
        match c {
            ComplexNumber::Real(x) => Complex64::new(x, 0.0),
            ComplexNumber::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpositionTerm {
    pub coeff: ComplexNumber,
    pub state: InitialState,
}

/// Initial wavefunction families. Superpositions are renormalized after they
/// are realized on a grid or in the number basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// `prod_d (2 pi s_d^2)^(-1/4) exp(-(x_d - c_d)^2 / (4 s_d^2) + i p_d x_d / hbar)`.
    GaussianPacket {
        center: Vec<f64>,
        width: Vec<f64>,
        #[serde(default)]
        momentum: Vec<f64>,
    },
    /// Oscillator ground state; for field modes the frequency defaults to `|k|`.
    HoGround {
        #[serde(default)]
        frequency: Vec<f64>,
    },
    /// Field-mode coherent state, one `alpha` per active coordinate.
    Coherent { alpha: Vec<ComplexNumber> },
    /// Oscillator eigenstate with the given occupation per coordinate.
    NumberState { n: Vec<usize> },
    Superposition { terms: Vec<SuperpositionTerm> },
    /// Internal-index vector times a scalar spatial state.
    Spinor {
        components: Vec<ComplexNumber>,
        spatial: Box<InitialState>,
    },
}

/// What a state needs to know about the model to be evaluated.
#[derive(Clone, Debug)]
pub struct StateContext {
    pub dim: usize,
    pub internal_dim: usize,
    pub hbar: f64,
    pub masses: Vec<f64>,
    /// Oscillator frequencies of field coordinates; `None` for particles.
    pub frequencies: Option<Vec<f64>>,
}

impl StateContext {
    pub fn from_model(model: &crate::model::Model) -> Self {
        Self {
            dim: model.beable_dim(),
            internal_dim: model.internal_dim,
            hbar: model.hbar,
            masses: model.masses.clone(),
            frequencies: model.frequencies().map(<[f64]>::to_vec),
        }
    }

    fn scalar(&self) -> Self {
        Self { internal_dim: 1, ..self.clone() }
    }
}

fn per_coordinate(family: &'static str, name: &str, values: &[f64], dim: usize, allow_empty: bool) -> Result<(), StateError> {
    let ok = values.len() == dim || values.len() == 1 || (allow_empty && values.is_empty());
    if ok {
        Ok(())
    } else {
        Err(StateError::Shape { family, message: format!("{name} needs {dim} entries") })
    }
}

fn pick(values: &[f64], d: usize, default: f64) -> f64 {
    match values.len() {
        0 => default,
        1 => values[0],
        _ => values[d],
    }
}

/// Coherent-state wavefunction of a unit-mass oscillator:
/// `(w/pi)^(1/4) exp(-w (q - qbar)^2 / 2 + i pbar q - i pbar qbar / 2)` with
/// `qbar = sqrt(2/w) Re(alpha)` and `pbar = sqrt(2w) Im(alpha)`.
pub fn coherent_wavefunction(alpha: Complex64, omega: f64, q: f64) -> Complex64 {
    let qbar = (2.0 / omega).sqrt() * alpha.re;
    let pbar = (2.0 * omega).sqrt() * alpha.im;
    let re = -0.5 * omega * (q - qbar).powi(2);
    let im = pbar * q - 0.5 * pbar * qbar;
    (omega / PI).powf(0.25) * Complex64::new(re, im).exp()
}

impl InitialState {
    pub fn family(&self) -> &'static str {
        match self {
            InitialState::GaussianPacket { .. } => "gaussian_packet",
            InitialState::HoGround { .. } => "ho_ground",
            InitialState::Coherent { .. } => "coherent",
            InitialState::NumberState { .. } => "number_state",
            InitialState::Superposition { .. } => "superposition",
            InitialState::Spinor { .. } => "spinor",
        }
    }

    /// Checks parameter shapes against the model without evaluating.
    pub fn check(&self, ctx: &StateContext) -> Result<(), StateError> {
        let dim = ctx.dim;
        match self {
            InitialState::GaussianPacket { center, width, momentum } => {
                if center.len() != dim {
                    return Err(StateError::Shape { family: "gaussian_packet", message: format!("center needs {dim} entries") });
                }
                per_coordinate("gaussian_packet", "width", width, dim, false)?;
                per_coordinate("gaussian_packet", "momentum", momentum, dim, true)?;
                if width.iter().any(|w| !(*w > 0.0)) {
                    return Err(StateError::Shape { family: "gaussian_packet", message: "width must be positive".into() });
                }
            }
            InitialState::HoGround { frequency } => {
                per_coordinate("ho_ground", "frequency", frequency, dim, ctx.frequencies.is_some())?;
                if frequency.iter().any(|w| !(*w > 0.0)) {
                    return Err(StateError::Shape { family: "ho_ground", message: "frequency must be positive".into() });
                }
            }
            InitialState::Coherent { alpha } => {
                if ctx.frequencies.is_none() {
                    return Err(StateError::NeedsFrequencies("coherent"));
                }
                if alpha.len() != dim {
                    return Err(StateError::Shape { family: "coherent", message: format!("alpha needs {dim} entries") });
                }
            }
            InitialState::NumberState { n } => {
                if n.len() != dim {
                    return Err(StateError::Shape { family: "number_state", message: format!("n needs {dim} entries") });
                }
                if ctx.frequencies.is_none() {
                    return Err(StateError::NeedsFrequencies("number_state"));
                }
            }
            InitialState::Superposition { terms } => {
                if terms.is_empty() {
                    return Err(StateError::Shape { family: "superposition", message: "needs at least one term".into() });
                }
                for t in terms {
                    t.state.check(ctx)?;
                }
            }
            InitialState::Spinor { components, spatial } => {
                if components.len() != ctx.internal_dim {
                    return Err(StateError::Shape {
                        family: "spinor",
                        message: format!("components needs {} entries", ctx.internal_dim),
                    });
                }
                if components.iter().all(|c| Complex64::from(*c).norm() == 0.0) {
                    return Err(StateError::ZeroNorm);
                }
                spatial.check(&ctx.scalar())?;
            }
        }
        if ctx.internal_dim > 1 && !self.has_components() {
            return Err(StateError::InternalComponentsRequired(ctx.internal_dim));
        }
        Ok(())
    }

    fn has_components(&self) -> bool {
        match self {
            InitialState::Spinor { .. } => true,
            InitialState::Superposition { terms } => terms.iter().all(|t| t.state.has_components()),
            _ => false,
        }
    }

    /// Values per internal index at configuration `x` (before global
    /// renormalization). Callers must have run [`Self::check`].
    pub fn evaluate(&self, x: &[f64], ctx: &StateContext) -> Vec<Complex64> {
        match self {
            InitialState::Superposition { terms } => {
                let mut out = vec![Complex64::new(0.0, 0.0); ctx.internal_dim];
                for t in terms {
                    let c = Complex64::from(t.coeff);
                    for (o, v) in out.iter_mut().zip(t.state.evaluate(x, ctx)) {
                        *o += c * v;
                    }
                }
                out
            }
            InitialState::Spinor { components, spatial } => {
                let chi: Vec<Complex64> = components.iter().map(|&c| c.into()).collect();
                let norm = chi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                let v = spatial.evaluate(x, &ctx.scalar())[0];
                chi.iter().map(|c| c / norm * v).collect()
            }
            scalar => {
                let mut out = vec![Complex64::new(0.0, 0.0); ctx.internal_dim];
                out[0] = scalar.scalar_value(x, ctx);
                out
            }
        }
    }

    fn scalar_value(&self, x: &[f64], ctx: &StateContext) -> Complex64 {
        match self {
            InitialState::GaussianPacket { center, width, momentum } => {
                let mut value = Complex64::new(1.0, 0.0);
                for (d, &xd) in x.iter().enumerate() {
                    let s = pick(width, d, 1.0);
                    let p = pick(momentum, d, 0.0);
                    let norm = (2.0 * PI * s * s).powf(-0.25);
                    let arg = Complex64::new(-(xd - center[d]).powi(2) / (4.0 * s * s), p * xd / ctx.hbar);
                    value *= norm * arg.exp();
                }
                value
            }
            InitialState::HoGround { frequency } => {
                let mut value = 1.0;
                for (d, &xd) in x.iter().enumerate() {
                    let w = match &ctx.frequencies {
                        Some(f) => pick(frequency, d, f[d]),
                        None => pick(frequency, d, 1.0),
                    };
                    let a = ctx.masses[d] * w / ctx.hbar;
                    value *= (a / PI).powf(0.25) * (-0.5 * a * xd * xd).exp();
                }
                Complex64::new(value, 0.0)
            }
            InitialState::Coherent { alpha } => {
                let freqs = ctx.frequencies.as_ref().expect("checked");
                x.iter()
                    .zip(alpha)
                    .zip(freqs)
                    .map(|((&q, &a), &w)| coherent_wavefunction(a.into(), w, q))
                    .product()
            }
            InitialState::NumberState { n } => {
                let freqs = ctx.frequencies.as_ref().expect("checked");
                let mut value = 1.0;
                for ((&q, &nj), &w) in x.iter().zip(n).zip(freqs) {
                    let h = hermite_functions(nj, w.sqrt() * q);
                    value *= w.powf(0.25) * h[nj];
                }
                Complex64::new(value, 0.0)
            }
            InitialState::Superposition { .. } | InitialState::Spinor { .. } => {
                self.evaluate(x, ctx)[0]
            }
        }
    }
}
